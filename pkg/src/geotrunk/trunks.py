"""Trunk networks over point sets of arbitrary 2D/3D domains.

Three attention variants share one skeleton:

* ``self``: set-to-set; queries attend to each other, geometry enters
  only through the query features (coordinates, SDF).
* ``cross``: point-wise; each query attends to a fixed geometry point
  cloud whose per-case SDF values encode the shape. Evaluation at one
  query point is independent of the rest of the batch.
* ``hybrid``: one cross layer followed by one self layer; set-to-set.

A fourth variant, ``mlp``, skips attention entirely (a plain pointwise
trunk used as an ablation baseline).

The pipeline is: input MLP lift (deep, ReLU) -> attention layers with
rotary coordinates -> output MLP with a residual skip from the block
input -> single linear + tanh projection to the trunk output width.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import engine as eg
from .attention import AttentionConfig, MultiHeadAttention
from .engine import Tensor
from .errors import ConfigurationError, ValidationError
from .nn import Mlp, glorot_uniform

VARIANTS = ("self", "cross", "hybrid", "mlp")


def _as_float_array(name: str, value, ndim: int | None = None):
    if value is None:
        return None
    arr = np.asarray(value, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-d, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass
class QueryBatch:
    """Query points of one case: coordinates, optional SDF channel,
    optional extra feature channels, optional padding mask (True = pad).
    Padded rows must hold finite sentinel values."""

    coords: np.ndarray
    sdf: np.ndarray | None = None
    extra: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.coords = _as_float_array("query coords", self.coords, ndim=2)
        self.sdf = _as_float_array("query sdf", self.sdf, ndim=1)
        self.extra = _as_float_array("query extra features", self.extra, ndim=2)
        n = self.coords.shape[0]
        if self.sdf is not None and self.sdf.shape[0] != n:
            raise ValidationError(f"query sdf has {self.sdf.shape[0]} rows, coords have {n}")
        if self.extra is not None and self.extra.shape[0] != n:
            raise ValidationError(f"query extra has {self.extra.shape[0]} rows, coords have {n}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (n,):
                raise ValidationError(f"query mask shape {self.mask.shape} does not match {n} rows")

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass
class GeometryCloud:
    """Fixed point cloud shared by all cases; per-case SDF values carry
    the geometric variability."""

    coords: np.ndarray
    sdf: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.coords = _as_float_array("geometry coords", self.coords, ndim=2)
        self.sdf = _as_float_array("geometry sdf", self.sdf, ndim=1)
        m = self.coords.shape[0]
        if self.sdf is not None and self.sdf.shape[0] != m:
            raise ValidationError(f"geometry sdf has {self.sdf.shape[0]} rows, coords have {m}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (m,):
                raise ValidationError(f"geometry mask shape {self.mask.shape} does not match {m} rows")

    @property
    def m(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class BranchSpec:
    """One branch network: maps a parameter vector of ``width`` entries
    to trunk-output coefficients. ``kind`` records whether the entries
    are scalars or samples of a function at fixed sensor locations."""

    name: str = "mu"
    width: int = 2
    hidden: tuple[int, ...] = (128, 128, 128, 128)
    kind: str = "scalar"

    def __post_init__(self):
        if self.width < 1:
            raise ConfigurationError(f"branch width must be positive, got {self.width}")
        if self.kind not in ("scalar", "function-samples"):
            raise ConfigurationError(f"unknown branch kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class ModelSpec:
    """Complete model description; serializable for checkpoints/configs."""

    variant: str = "cross"
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    layers: int = 2
    input_mlp_hidden: tuple[int, ...] = (128, 128, 128, 128)
    output_mlp_hidden: tuple[int, ...] = (128, 128, 128)
    trunk_out: int = 64
    use_query_sdf: bool = True
    use_geometry_sdf: bool = True
    extra_features: int = 0
    branches: tuple[BranchSpec, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        if self.layers < 1:
            raise ConfigurationError(f"layers must be positive, got {self.layers}")
        if self.variant == "hybrid" and self.layers != 2:
            raise ConfigurationError("hybrid is exactly one cross layer plus one self layer (layers=2)")
        if self.trunk_out < 1:
            raise ConfigurationError(f"trunk_out must be positive, got {self.trunk_out}")
        if self.extra_features < 0:
            raise ConfigurationError(f"extra_features must be >= 0, got {self.extra_features}")
        object.__setattr__(self, "input_mlp_hidden", tuple(int(h) for h in self.input_mlp_hidden))
        object.__setattr__(self, "output_mlp_hidden", tuple(int(h) for h in self.output_mlp_hidden))
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def spatial_dim(self) -> int:
        return self.attention.spatial_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        d = dict(d)
        att = dict(d.pop("attention"))
        att["rope_wavelengths"] = tuple(att["rope_wavelengths"])
        branches = tuple(
            BranchSpec(name=b["name"], width=int(b["width"]), hidden=tuple(b["hidden"]), kind=b["kind"])
            for b in d.pop("branches", ())
        )
        return ModelSpec(attention=AttentionConfig(**att), branches=branches, **d)

    def with_wavelengths(self, wavelengths: tuple[float, ...]) -> "ModelSpec":
        return replace(self, attention=replace(self.attention, rope_wavelengths=tuple(wavelengths)))


class TrunkModel:
    """Parameters plus forward pass for one trunk variant."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        cfg = spec.attention
        d = cfg.embed_dim
        s = cfg.spatial_dim

        q_in = s + (1 if spec.use_query_sdf else 0) + spec.extra_features
        self.query_lift = Mlp(rng, q_in, spec.input_mlp_hidden, d, "relu", dtype=dtype, name="lift.q")

        self.geom_lift = None
        if spec.variant in ("cross", "hybrid"):
            g_in = s + (1 if spec.use_geometry_sdf else 0)
            self.geom_lift = Mlp(rng, g_in, spec.input_mlp_hidden, d, "relu", dtype=dtype, name="lift.g")

        if spec.variant == "self":
            roles = ["self"] * spec.layers
        elif spec.variant == "cross":
            roles = ["cross"] * spec.layers
        elif spec.variant == "hybrid":
            roles = ["cross", "self"]
        else:
            roles = []
        self.attn_layers = [
            (role, MultiHeadAttention(rng, cfg, dtype=dtype, name=f"layers.{i}"))
            for i, role in enumerate(roles)
        ]

        self.out_mlp = Mlp(rng, d, spec.output_mlp_hidden, d, "relu", dtype=dtype, name="out")
        self.head_w = Tensor(glorot_uniform(rng, d, spec.trunk_out, dtype), requires_grad=True)
        self.head_b = Tensor(np.zeros(spec.trunk_out, dtype=dtype), requires_grad=True)

    def _query_features(self, batch: QueryBatch) -> np.ndarray:
        spec = self.spec
        if batch.coords.shape[1] != spec.spatial_dim:
            raise ValidationError(
                f"query coords have {batch.coords.shape[1]} axes, model expects {spec.spatial_dim}"
            )
        feats = [batch.coords]
        if spec.use_query_sdf:
            if batch.sdf is None:
                raise ValidationError("model consumes the query SDF channel but the batch has none")
            feats.append(batch.sdf[:, None])
        if spec.extra_features:
            if batch.extra is None or batch.extra.shape[1] != spec.extra_features:
                got = None if batch.extra is None else batch.extra.shape[1]
                raise ValidationError(
                    f"model expects {spec.extra_features} extra feature channels, got {got}"
                )
            feats.append(batch.extra)
        return np.concatenate(feats, axis=1).astype(self.dtype, copy=False)

    def _geometry_features(self, geom: GeometryCloud) -> np.ndarray:
        spec = self.spec
        if geom.coords.shape[1] != spec.spatial_dim:
            raise ValidationError(
                f"geometry coords have {geom.coords.shape[1]} axes, model expects {spec.spatial_dim}"
            )
        feats = [geom.coords]
        if spec.use_geometry_sdf:
            if geom.sdf is None:
                raise ValidationError("model consumes the geometry SDF channel but the cloud has none")
            feats.append(geom.sdf[:, None])
        return np.concatenate(feats, axis=1).astype(self.dtype, copy=False)

    def forward(self, batch: QueryBatch, geom: GeometryCloud | None = None) -> Tensor:
        spec = self.spec
        if spec.variant in ("self", "mlp"):
            if geom is not None:
                raise ConfigurationError(
                    f"variant {spec.variant!r} does not take a geometry cloud"
                )
        elif geom is None:
            raise ConfigurationError(f"variant {spec.variant!r} requires a geometry cloud")

        rep = self.query_lift(Tensor(self._query_features(batch)))

        grep = None
        if geom is not None:
            # lifted once, shared by every cross layer
            grep = self.geom_lift(Tensor(self._geometry_features(geom)))

        for role, layer in self.attn_layers:
            if role == "cross":
                rep = layer(rep, grep, batch.coords, geom.coords, geom.mask)
            else:
                rep = layer(rep, rep, batch.coords, batch.coords, batch.mask)

        rep = eg.add(rep, self.out_mlp(rep))
        return eg.tanh(eg.add(eg.matmul(rep, self.head_w), self.head_b))

    __call__ = forward

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.query_lift.parameters())
        if self.geom_lift is not None:
            out.update(self.geom_lift.parameters())
        for _, layer in self.attn_layers:
            out.update(layer.parameters())
        out.update(self.out_mlp.parameters())
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


def build_trunk(spec: ModelSpec, seed: int = 0, dtype=np.float64) -> TrunkModel:
    return TrunkModel(spec, np.random.default_rng(seed), dtype=dtype)
