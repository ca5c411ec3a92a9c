"""Synthetic geometry-conditioned datasets.

A dataset is a shared geometry point cloud (sampled once over the
family's covering box) plus a list of cases. Each case draws geometry
parameters and a source vector mu, solves -laplace(u) = f_mu with the
FDM oracle (or evaluates the instant analytic field), and keeps a
query subset of the oracle's interior grid nodes so the lambda-sampler
semantics match a simulation mesh.

Targets and coordinates are stored raw (domain units); NormSpec holds
the z-score statistics (train split only) and a per-axis coordinate
scale applied when cases are turned into model inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OracleError, ValidationError
from .geometry import (
    CavityGeometry,
    bounding_box,
    parse_descriptor,
    random_rod_geometry,
    sample_lambda,
    sdf_of,
)
from .poisson import analytic_field, poisson_oracle
from .records import read_manifest, read_record, write_manifest, write_record
from .trunks import GeometryCloud, QueryBatch

SCHEMA_VERSION = 1
FAMILIES = ("cavity", "rods")

# covering boxes for cloud sampling: the full parameter family fits inside
_CAVITY_BOX = (np.array([0.0, -2.0]), np.array([1.0, 0.0]))
_ROD_BOX = (np.array([0.0, 0.0]), np.array([100.0, 120.0]))


def zscore(values, mean: float, std: float, direction: str = "normalize"):
    if std <= 0.0:
        raise ValidationError(f"z-score std must be positive, got {std}")
    v = np.asarray(values, dtype=np.float64)
    if direction == "normalize":
        return (v - mean) / std
    if direction == "denormalize":
        return v * std + mean
    raise ValidationError(f"unknown z-score direction {direction!r}")


@dataclass
class NormSpec:
    """Per-variable z-score statistics plus the coordinate length scale."""

    means: dict[str, float]
    stds: dict[str, float]
    coord_scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if set(self.means) != set(self.stds):
            raise ValidationError("NormSpec means and stds must cover the same variables")
        for k, s in self.stds.items():
            if s <= 0.0:
                raise ValidationError(f"NormSpec std for {k!r} must be positive, got {s}")
        if any(s <= 0.0 for s in self.coord_scale):
            raise ValidationError("coordinate scale must be positive")
        self.coord_scale = tuple(float(s) for s in self.coord_scale)

    def normalize(self, name: str, values):
        return zscore(values, self.means[name], self.stds[name], "normalize")

    def denormalize(self, name: str, values):
        return zscore(values, self.means[name], self.stds[name], "denormalize")

    def scale_points(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) / np.asarray(self.coord_scale)

    def scale_sdf(self, sdf: np.ndarray) -> np.ndarray:
        return np.asarray(sdf, dtype=np.float64) / self.coord_scale[0]

    def to_dict(self) -> dict:
        return {"means": dict(self.means), "stds": dict(self.stds),
                "coord_scale": list(self.coord_scale)}

    @staticmethod
    def from_dict(d: dict) -> "NormSpec":
        return NormSpec(means=dict(d["means"]), stds=dict(d["stds"]),
                        coord_scale=tuple(d["coord_scale"]))


@dataclass
class GeometryCase:
    name: str
    descriptor: str
    mu: np.ndarray
    query_coords: np.ndarray  # [N x 2], domain units
    query_sdf: np.ndarray  # [N], all positive
    geom_sdf: np.ndarray  # [M] at the shared cloud coords
    targets: dict[str, np.ndarray]  # variable -> [N]
    seed: int = 0
    oracle_n: int = 0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.query_coords = np.asarray(self.query_coords, dtype=np.float64)
        self.query_sdf = np.asarray(self.query_sdf, dtype=np.float64)
        self.geom_sdf = np.asarray(self.geom_sdf, dtype=np.float64)
        n = self.query_coords.shape[0]
        if self.query_sdf.shape != (n,):
            raise ValidationError(f"case {self.name}: query sdf shape mismatch")
        if not (self.query_sdf > 0.0).all():
            raise ValidationError(f"case {self.name}: query points must have SDF > 0")
        for var, t in self.targets.items():
            t = np.asarray(t, dtype=np.float64)
            if t.shape != (n,):
                raise ValidationError(f"case {self.name}: target {var!r} shape mismatch")
            if not np.isfinite(t).all():
                raise ValidationError(f"case {self.name}: target {var!r} has non-finite values")
            self.targets[var] = t

    @property
    def n(self) -> int:
        return self.query_coords.shape[0]


@dataclass
class Dataset:
    family: str
    cloud_coords: np.ndarray  # [M x 2], shared across cases
    train: list[GeometryCase]
    test: list[GeometryCase]
    norm: NormSpec
    meta: dict = field(default_factory=dict)

    @property
    def variables(self) -> list[str]:
        return sorted(self.norm.means)


def source_term(mu):
    """f_mu(x) = mu1 sin(pi x1) sin(pi x2) + mu2."""
    m1, m2 = float(mu[0]), float(mu[1])

    def f(pts):
        p = np.asarray(pts, dtype=np.float64)
        return m1 * np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) + m2

    return f


def _draw_geometry(family: str, rng: np.random.Generator):
    if family == "cavity":
        return CavityGeometry(
            depth=float(rng.uniform(0.5, 2.0)),
            d_l=float(rng.uniform(0.0, 1.0)),
            d_r=float(rng.uniform(0.0, 1.0)),
        )
    return random_rod_geometry(rng, n_rods=int(rng.choice([1, 3, 5])))


def _grid_candidates(geom, n: int):
    """Interior nodes of the oracle grid: the mesh-like candidate set."""
    lo, hi = bounding_box(geom)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    nodes = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    sdf = sdf_of(geom, nodes)
    keep = sdf > 0.0
    return nodes[keep], sdf[keep]


def build_case(name: str, family: str, seed_seq: np.random.SeedSequence, cloud: np.ndarray,
               oracle: str, oracle_n: int, per_case_queries: int,
               case_index: int = 0) -> GeometryCase:
    rng = np.random.default_rng(seed_seq)
    geom = _draw_geometry(family, rng)
    mu = np.array([rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0)])

    coords, sdf = _grid_candidates(geom, oracle_n)
    if oracle == "poisson":
        fld = poisson_oracle(geom, source_term(mu), n=oracle_n)
        values = fld(coords)
    elif oracle == "analytic":
        values = analytic_field(geom, mu, coords)
    else:
        raise ValidationError(f"unknown oracle {oracle!r}")

    count = min(per_case_queries, coords.shape[0])
    pick = np.sort(sample_lambda(sdf, 0.0, count, rng))
    return GeometryCase(
        name=name,
        descriptor=geom.descriptor(),
        mu=mu,
        query_coords=coords[pick],
        query_sdf=sdf[pick],
        geom_sdf=sdf_of(geom, cloud),
        targets={"u": values[pick]},
        seed=case_index,
        oracle_n=oracle_n,
    )


def build_dataset(family: str = "cavity", count: int = 10, split: float = 0.8,
                  oracle: str = "poisson", seed: int = 0, oracle_n: int = 64,
                  cloud_size: int = 600, per_case_queries: int = 1024) -> Dataset:
    """Deterministic dataset assembly; oracle failures skip the case."""
    if family not in FAMILIES:
        raise ValidationError(f"unknown family {family!r}; pick one of {FAMILIES}")
    if count < 2:
        raise ValidationError(f"need at least 2 cases, got {count}")
    if not (0.0 < split < 1.0):
        raise ValidationError(f"split fraction must be in (0, 1), got {split}")

    root = np.random.SeedSequence(seed)
    cloud_seq, case_root = root.spawn(2)
    lo, hi = _CAVITY_BOX if family == "cavity" else _ROD_BOX
    cloud = np.random.default_rng(cloud_seq).uniform(lo, hi, size=(cloud_size, 2))

    cases: list[GeometryCase] = []
    skipped: list[dict] = []
    for i, seq in enumerate(case_root.spawn(count)):
        name = f"case{i:04d}"
        try:
            cases.append(build_case(name, family, seq, cloud, oracle, oracle_n,
                                    per_case_queries, case_index=i))
        except OracleError as exc:
            skipped.append({"name": name, "reason": str(exc)})

    if len(cases) < 2:
        raise ValidationError(f"only {len(cases)} cases survived oracle generation")
    n_train = int(len(cases) * split)
    n_train = min(max(n_train, 1), len(cases) - 1)
    train, test = cases[:n_train], cases[n_train:]

    scale = (1.0, 1.0) if family == "cavity" else (100.0, 100.0)
    all_train = {
        var: np.concatenate([c.targets[var] for c in train]) for var in train[0].targets
    }
    norm = NormSpec(
        means={k: float(v.mean()) for k, v in all_train.items()},
        stds={k: float(v.std()) for k, v in all_train.items()},
        coord_scale=scale,
    )
    meta = {
        "schema_version": SCHEMA_VERSION,
        "family": family,
        "seed": seed,
        "oracle": oracle,
        "oracle_n": oracle_n,
        "cloud_size": cloud_size,
        "per_case_queries": per_case_queries,
        "split": split,
        "skipped": skipped,
    }
    return Dataset(family=family, cloud_coords=cloud, train=train, test=test,
                   norm=norm, meta=meta)


# ------------------------------------------------------------- persistence


def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_record(out / "cloud.bin", {"coords": ds.cloud_coords})
    case_index = {}
    for split_name, cases in (("train", ds.train), ("test", ds.test)):
        for c in cases:
            arrays = {
                "mu": c.mu,
                "query_coords": c.query_coords,
                "query_sdf": c.query_sdf,
                "geom_sdf": c.geom_sdf,
            }
            for var, t in c.targets.items():
                arrays[f"target.{var}"] = t
            write_record(out / f"{c.name}.bin", arrays)
            case_index[c.name] = {
                "split": split_name,
                "descriptor": c.descriptor,
                "seed": c.seed,
                "oracle_n": c.oracle_n,
            }
    manifest = dict(ds.meta)
    manifest["cases"] = case_index
    manifest["norm"] = ds.norm.to_dict()
    write_manifest(out / "manifest.json", manifest)


def load_dataset(in_dir) -> Dataset:
    root = Path(in_dir)
    manifest = read_manifest(root / "manifest.json")
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(
            f"dataset schema {manifest.get('schema_version')} unsupported"
        )
    cloud = read_record(root / "cloud.bin")["coords"]
    train: list[GeometryCase] = []
    test: list[GeometryCase] = []
    for name in sorted(manifest["cases"]):
        entry = manifest["cases"][name]
        arrays = read_record(root / f"{name}.bin")
        parse_descriptor(entry["descriptor"])  # validates the text
        targets = {
            k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("target.")
        }
        case = GeometryCase(
            name=name,
            descriptor=entry["descriptor"],
            mu=arrays["mu"],
            query_coords=arrays["query_coords"],
            query_sdf=arrays["query_sdf"],
            geom_sdf=arrays["geom_sdf"],
            targets=targets,
            seed=int(entry["seed"]),
            oracle_n=int(entry["oracle_n"]),
        )
        (train if entry["split"] == "train" else test).append(case)
    norm = NormSpec.from_dict(manifest["norm"])
    meta = {k: v for k, v in manifest.items() if k not in ("cases", "norm")}
    return Dataset(family=manifest["family"], cloud_coords=cloud, train=train,
                   test=test, norm=norm, meta=meta)


# ----------------------------------------------------------- model inputs


def case_to_batch(case: GeometryCase, ds: Dataset) -> tuple[QueryBatch, GeometryCloud]:
    """Model-space inputs: scaled coordinates and SDF channels."""
    qb = QueryBatch(
        coords=ds.norm.scale_points(case.query_coords),
        sdf=ds.norm.scale_sdf(case.query_sdf),
    )
    gc = GeometryCloud(
        coords=ds.norm.scale_points(ds.cloud_coords),
        sdf=ds.norm.scale_sdf(case.geom_sdf),
    )
    return qb, gc


def rope_wavelengths_for(ds: Dataset) -> tuple[float, float]:
    """Side lengths of the scaled covering box, one per axis."""
    lo, hi = _CAVITY_BOX if ds.family == "cavity" else _ROD_BOX
    ext = (hi - lo) / np.asarray(ds.norm.coord_scale)
    return (float(ext[0]), float(ext[1]))


def pad_batch(batches: list[QueryBatch], n_max: int | None = None) -> list[QueryBatch]:
    """Pad query batches to a common length with masked sentinel rows.

    The sentinel is the max corner of each batch's own coordinates, so
    padded rows stay finite and inside the model's numeric range.
    """
    if not batches:
        raise ValidationError("pad_batch: no batches")
    longest = max(b.n for b in batches)
    if n_max is None:
        n_max = longest
    elif longest > n_max:
        raise ValidationError(f"case of {longest} points exceeds n_max={n_max}")
    out = []
    for b in batches:
        k = n_max - b.n
        mask = b.mask if b.mask is not None else np.zeros(b.n, dtype=bool)
        if k == 0:
            out.append(QueryBatch(coords=b.coords, sdf=b.sdf, extra=b.extra, mask=mask))
            continue
        sentinel = b.coords.max(axis=0)
        coords = np.vstack([b.coords, np.tile(sentinel, (k, 1))])
        sdf = None if b.sdf is None else np.concatenate([b.sdf, np.zeros(k)])
        extra = None
        if b.extra is not None:
            extra = np.vstack([b.extra, np.zeros((k, b.extra.shape[1]))])
        out.append(QueryBatch(
            coords=coords, sdf=sdf, extra=extra,
            mask=np.concatenate([mask, np.ones(k, dtype=bool)]),
        ))
    return out
