"""Parametrized 2D domains, exact SDFs, and boundary-clustered sampling.

Two families: a lid-driven cavity whose bottom corners are trimmed by
triangular cutouts, and a rectangular channel populated by circular
rods. Signed distances are positive inside the fluid region, negative
in solid or outside the domain, zero on the boundary.

The point sampler draws from an explicit candidate set with weights
P ∝ 1 / (1 + 100 * max(SDF, 1e-8)^lambda); lambda > 0 clusters points
near the boundary, lambda = 0 preserves the candidate distribution,
lambda < 0 pushes points toward the interior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, ValidationError

SDF_FLOOR = 1e-8
WEIGHT_SCALE = 100.0


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counterclockwise order."""
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def make_cavity(depth: float, d_l: float, d_r: float) -> np.ndarray:
    """Counterclockwise cavity polygon with the lid on y = 0.

    The unit-width lid spans (0,0) to (1,0) and the interior lies below
    it. Corner cutouts slant from the lid endpoints to the bottom at
    depth ``depth``; when d_l + d_r >= 1 the cutouts swallow the bottom
    edge and the domain degenerates to a triangle whose apex sits where
    the two slanted walls cross.
    """
    if not (0.5 <= depth <= 2.0):
        raise ValidationError(f"cavity depth must lie in [0.5, 2], got {depth}")
    if not (0.0 <= d_l <= 1.0) or not (0.0 <= d_r <= 1.0):
        raise ValidationError(f"cutout parameters must lie in [0, 1], got d_l={d_l} d_r={d_r}")
    if d_l + d_r >= 1.0:
        t = 1.0 / (d_l + d_r)
        apex = (d_l * t, -depth * t)
        return np.array([(0.0, 0.0), apex, (1.0, 0.0)], dtype=np.float64)
    return np.array(
        [(0.0, 0.0), (d_l, -depth), (1.0 - d_r, -depth), (1.0, 0.0)], dtype=np.float64
    )


@dataclass(frozen=True)
class CavityGeometry:
    depth: float = 1.0
    d_l: float = 0.0
    d_r: float = 0.0

    def __post_init__(self):
        make_cavity(self.depth, self.d_l, self.d_r)  # runs range validation

    @property
    def vertices(self) -> np.ndarray:
        return make_cavity(self.depth, self.d_l, self.d_r)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def descriptor(self) -> str:
        return f"cavity depth={self.depth!r} d_l={self.d_l!r} d_r={self.d_r!r}"


@dataclass(frozen=True)
class RodGeometry:
    """Channel of fixed cross-section with non-overlapping circular rods.

    Coordinates are nondimensional channel units: x in [0, width],
    y in [0, height]. Rod count follows the benchmark family (1, 3, 5).
    """

    centers: tuple[tuple[float, float], ...]
    width: float = 100.0
    height: float = 120.0
    radius: float = 7.0
    min_gap: float = 2.0

    def __post_init__(self):
        object.__setattr__(
            self, "centers", tuple((float(x), float(y)) for x, y in self.centers)
        )
        n = len(self.centers)
        if n not in (1, 3, 5):
            raise ValidationError(f"rod count must be 1, 3 or 5, got {n}")
        r = self.radius
        for cx, cy in self.centers:
            if not (cx - r > 0 and cx + r < self.width and cy - r > 0 and cy + r < self.height):
                raise ValidationError(f"rod at ({cx}, {cy}) is not strictly inside the channel")
        c = np.asarray(self.centers)
        for i in range(n):
            for j in range(i + 1, n):
                d = float(np.hypot(*(c[i] - c[j])))
                if d < 2.0 * r + self.min_gap:
                    raise ValidationError(
                        f"rods {i} and {j} are {d:.3f} apart; need {2 * r + self.min_gap:.3f}"
                    )

    def descriptor(self) -> str:
        rods = ";".join(f"{x!r},{y!r}" for x, y in self.centers)
        return (
            f"rods width={self.width!r} height={self.height!r} "
            f"radius={self.radius!r} centers={rods}"
        )


def parse_descriptor(text: str):
    """Inverse of the ``descriptor`` methods."""
    parts = text.strip().split()
    if not parts:
        raise ValidationError("empty geometry descriptor")
    kind, fields = parts[0], dict(p.split("=", 1) for p in parts[1:])
    try:
        if kind == "cavity":
            return CavityGeometry(
                depth=float(fields["depth"]), d_l=float(fields["d_l"]), d_r=float(fields["d_r"])
            )
        if kind == "rods":
            centers = tuple(
                tuple(float(v) for v in item.split(","))
                for item in fields["centers"].split(";")
            )
            return RodGeometry(
                centers=centers,
                width=float(fields["width"]),
                height=float(fields["height"]),
                radius=float(fields["radius"]),
            )
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed geometry descriptor {text!r}: {exc}") from exc
    raise ValidationError(f"unknown geometry kind {kind!r}")


# ------------------------------------------------------------------- SDFs


def _point_shape(points):
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    if scalar:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"points must be [n x 2], got shape {np.shape(points)}")
    return pts, scalar


def sdf_polygon(poly, points):
    """Exact signed distance to a simple polygon, positive inside.

    Distance is the minimum over edge segments; the sign comes from
    even-odd crossing parity of a horizontal ray.
    """
    poly = np.asarray(poly, dtype=np.float64)
    pts, scalar = _point_shape(points)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a  # [V x 2]

    # distance to each edge segment, broadcast points x edges
    ap = pts[:, None, :] - a[None, :, :]
    denom = np.maximum((ab * ab).sum(axis=1), 1e-300)
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    dist = np.sqrt(((pts[:, None, :] - proj) ** 2).sum(axis=2)).min(axis=1)

    # even-odd rule with the usual half-open vertex convention
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for (ax, ay), (bx, by) in zip(a, b):
        crosses = (ay > y) != (by > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = ax + (y - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (x < xcross)

    out = np.where(inside, dist, -dist)
    out = np.where(dist == 0.0, 0.0, out)
    return float(out[0]) if scalar else out


def sdf_rod_domain(geom: RodGeometry, points):
    """Signed distance for the rod channel: positive in the electrolyte,
    negative inside rods or outside the channel walls."""
    pts, scalar = _point_shape(points)
    # box with corners (0,0) and (width,height), positive inside
    half = np.array([geom.width / 2.0, geom.height / 2.0])
    q = np.abs(pts - half[None, :]) - half[None, :]
    outside = np.sqrt((np.maximum(q, 0.0) ** 2).sum(axis=1))
    inside = np.minimum(np.maximum(q[:, 0], q[:, 1]), 0.0)
    box = -(outside + inside)

    out = box
    for cx, cy in geom.centers:
        rod = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - geom.radius
        out = np.minimum(out, rod)
    return float(out[0]) if scalar else out


def sdf_of(geom, points):
    """Dispatch on geometry kind; also accepts a raw polygon array."""
    if isinstance(geom, CavityGeometry):
        return sdf_polygon(geom.vertices, points)
    if isinstance(geom, RodGeometry):
        return sdf_rod_domain(geom, points)
    return sdf_polygon(geom, points)


def bounding_box(geom) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(geom, RodGeometry):
        return np.zeros(2), np.array([geom.width, geom.height])
    poly = geom.vertices if isinstance(geom, CavityGeometry) else np.asarray(geom, dtype=np.float64)
    return poly.min(axis=0), poly.max(axis=0)


# --------------------------------------------------------------- sampling


def lambda_weights(sdf, lam: float) -> np.ndarray:
    d = np.maximum(np.asarray(sdf, dtype=np.float64), SDF_FLOOR)
    return 1.0 / (1.0 + WEIGHT_SCALE * d**lam)


def sample_lambda(sdf, lam: float, count: int, rng: np.random.Generator,
                  replace: bool = False) -> np.ndarray:
    """Pick ``count`` candidate indices with boundary-clustering weights.

    Returns indices into the candidate set so callers can slice
    coordinates, SDF values, and any other per-point payload. Sampling
    is without replacement unless asked otherwise.
    """
    sdf = np.asarray(sdf, dtype=np.float64)
    n = sdf.shape[0]
    if n == 0:
        raise ValidationError("sample_lambda: empty candidate set")
    if count < 1:
        raise ValidationError(f"sample_lambda: count must be positive, got {count}")
    if not replace and count > n:
        raise ValidationError(
            f"sample_lambda: cannot draw {count} of {n} candidates without replacement"
        )
    w = lambda_weights(sdf, lam)
    return rng.choice(n, size=count, replace=replace, p=w / w.sum())


def sample_in_domain(geom, count: int, rng: np.random.Generator,
                     max_attempts: int = 2_000_000):
    """Rejection-sample ``count`` points with SDF > 0 from the bounding box.

    Returns (points [count x 2], sdf [count]). Raises when the observed
    acceptance rate falls below 1e-4, which marks the geometry as
    degenerate for sampling purposes.
    """
    if count < 1:
        raise ValidationError(f"sample_in_domain: count must be positive, got {count}")
    lo, hi = bounding_box(geom)
    pts_out = np.empty((count, 2))
    sdf_out = np.empty(count)
    got = 0
    attempted = 0
    batch = max(4 * count, 1024)
    while got < count:
        if attempted >= max_attempts or (attempted >= 100_000 and got / attempted < 1e-4):
            raise DegenerateGeometryError(
                f"sample_in_domain: accepted {got} of {attempted} proposals"
            )
        cand = rng.uniform(lo, hi, size=(batch, 2))
        attempted += batch
        s = sdf_of(geom, cand)
        keep = s > 0.0
        k = min(int(keep.sum()), count - got)
        if k:
            idx = np.flatnonzero(keep)[:k]
            pts_out[got : got + k] = cand[idx]
            sdf_out[got : got + k] = s[idx]
            got += k
    return pts_out, sdf_out


def random_rod_geometry(rng: np.random.Generator, n_rods: int, width: float = 100.0,
                        height: float = 120.0, radius: float = 7.0,
                        min_gap: float = 2.0, max_tries: int = 10_000) -> RodGeometry:
    """Draw non-overlapping rod centers with wall clearance min_gap."""
    margin = radius + min_gap
    centers: list[tuple[float, float]] = []
    for _ in range(max_tries):
        c = (rng.uniform(margin, width - margin), rng.uniform(margin, height - margin))
        if all(np.hypot(c[0] - x, c[1] - y) >= 2 * radius + min_gap for x, y in centers):
            centers.append(c)
            if len(centers) == n_rods:
                return RodGeometry(centers=tuple(centers), width=width, height=height,
                                   radius=radius, min_gap=min_gap)
    raise DegenerateGeometryError(
        f"could not place {n_rods} rods after {max_tries} tries"
    )
