"""Attention kernels and rotary coordinate embeddings.

Three interchangeable kernels over point sets:

* ``standard``: softmax attention, O(n*m) score matrix;
* ``fourier``: linear attention (Q~ K~^T) V / n;
* ``galerkin``: linear attention Q (K~^T V~) / n, O(n d^2).

The tilde marks a per-row layer normalization with a trainable affine.
Masked keys (mask True = padding) contribute exactly zero: softmax
weights underflow to 0.0 and normalized key/value rows are zeroed, with
the divisor n counting unmasked keys only.

Queries and keys carry spatial coordinates. The rotary map splits
per-head features into one block per axis and rotates feature pairs by
angle lam_a * x_a * theta_l, so dot products depend on coordinate
displacement rather than absolute position.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import engine as eg
from .engine import Tensor
from .errors import ConfigurationError, DegenerateMaskError, DimensionError
from .nn import glorot_uniform

KERNELS = ("standard", "fourier", "galerkin")


@dataclass(frozen=True)
class AttentionConfig:
    """Shape and kernel choices shared by every attention layer of a model."""

    embed_dim: int = 128
    heads: int = 4
    kernel: str = "galerkin"
    spatial_dim: int = 2
    rope_wavelengths: tuple[float, ...] = (1.0, 1.0)
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigurationError(f"unknown attention kernel {self.kernel!r}; pick one of {KERNELS}")
        if self.heads < 1:
            raise ConfigurationError(f"heads must be positive, got {self.heads}")
        if self.spatial_dim not in (2, 3):
            raise ConfigurationError(f"spatial_dim must be 2 or 3, got {self.spatial_dim}")
        block = 2 * self.heads * self.spatial_dim
        if self.embed_dim <= 0 or self.embed_dim % block != 0:
            raise ConfigurationError(
                f"embed_dim must be a positive multiple of 2*heads*spatial_dim = {block}, "
                f"got {self.embed_dim}"
            )
        if len(self.rope_wavelengths) != self.spatial_dim:
            raise ConfigurationError(
                f"need one rotary wavelength per axis ({self.spatial_dim}), "
                f"got {len(self.rope_wavelengths)}"
            )
        if any(w <= 0 for w in self.rope_wavelengths):
            raise ConfigurationError("rotary wavelengths must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


@dataclass(frozen=True)
class RopeSpec:
    """Rotary layout for one head: which pairs rotate at which frequency.

    ``width`` features split into ``spatial_dim`` equal blocks; within a
    block, pair l (columns 2l, 2l+1) rotates by lam_a * x_a * theta_l
    with theta_l = 10000^(-2(l-1)/axis_width), l starting at 1.
    """

    spatial_dim: int
    width: int
    wavelengths: tuple[float, ...]

    def __post_init__(self):
        if self.spatial_dim not in (2, 3):
            raise ConfigurationError(f"spatial_dim must be 2 or 3, got {self.spatial_dim}")
        if self.width <= 0 or self.width % (2 * self.spatial_dim) != 0:
            raise ConfigurationError(
                f"rotary width must be a positive multiple of 2*spatial_dim = "
                f"{2 * self.spatial_dim}, got {self.width}"
            )
        if len(self.wavelengths) != self.spatial_dim:
            raise ConfigurationError(
                f"need {self.spatial_dim} wavelengths, got {len(self.wavelengths)}"
            )

    @property
    def axis_width(self) -> int:
        return self.width // self.spatial_dim

    def frequencies(self) -> np.ndarray:
        return _rope_frequencies(self.axis_width)


@lru_cache(maxsize=None)
def _rope_frequencies(axis_width: int) -> np.ndarray:
    l = np.arange(1, axis_width // 2 + 1, dtype=np.float64)
    return 10000.0 ** (-2.0 * (l - 1.0) / axis_width)


@lru_cache(maxsize=None)
def _interleave_permutation(spatial_dim: int, width: int) -> np.ndarray:
    """Column order that restores (even, odd) interleaving per axis block."""
    w = width // spatial_dim
    half = w // 2
    perm = np.empty(width, dtype=np.intp)
    for a in range(spatial_dim):
        base = a * w
        perm[base + 2 * np.arange(half)] = base + np.arange(half)
        perm[base + 2 * np.arange(half) + 1] = base + half + np.arange(half)
    return perm


def rope_rotate(x, coords: np.ndarray, spec: RopeSpec) -> Tensor:
    """Rotate per-head features by their coordinate-dependent angles.

    ``x`` is [n x width]; ``coords`` is [n x spatial_dim] and is treated
    as data (no gradient flows into positions). Zero coordinates give
    the identity map, and the rotation preserves row norms.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != spec.width:
        raise DimensionError(
            f"rope_rotate: features {x.data.shape} do not match rotary width {spec.width}"
        )
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape != (x.data.shape[0], spec.spatial_dim):
        raise DimensionError(
            f"rope_rotate: coords {coords.shape} do not match "
            f"({x.data.shape[0]}, {spec.spatial_dim})"
        )
    w = spec.axis_width
    half = w // 2
    theta = spec.frequencies()
    dt = x.data.dtype
    parts = []
    for a in range(spec.spatial_dim):
        base = a * w
        even = base + 2 * np.arange(half)
        x1 = eg.gather_cols(x, even)
        x2 = eg.gather_cols(x, even + 1)
        angles = spec.wavelengths[a] * coords[:, a : a + 1] * theta[None, :]
        c = np.cos(angles).astype(dt, copy=False)
        s = np.sin(angles).astype(dt, copy=False)
        parts.append(eg.sub(eg.mul(x1, c), eg.mul(x2, s)))
        parts.append(eg.add(eg.mul(x1, s), eg.mul(x2, c)))
    stacked = eg.concat_cols(parts)
    return eg.gather_cols(stacked, _interleave_permutation(spec.spatial_dim, spec.width))


def _check_kv(k, v, mask):
    if k.data.shape[0] != v.data.shape[0]:
        raise DimensionError(
            f"keys and values disagree on set size: {k.data.shape} vs {v.data.shape}"
        )
    n = k.data.shape[0]
    if mask is None:
        return n, None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise DimensionError(f"key mask shape {mask.shape} does not match set size {n}")
    n_live = int((~mask).sum())
    if n_live == 0:
        raise DegenerateMaskError("attention: every key is masked")
    return n_live, mask


def _zero_masked_rows(t: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        return t
    keep = (~mask).astype(t.data.dtype)[:, None]
    return eg.mul(t, keep)


def standard_attention(q, k, v, mask=None, scale: float | None = None) -> Tensor:
    """Softmax attention. ``scale`` defaults to 1/sqrt(d_k)."""
    _, mask = _check_kv(k, v, mask)
    if scale is None:
        scale = 1.0 / np.sqrt(q.data.shape[1])
    scores = eg.mul(eg.matmul(q, eg.transpose(k)), scale)
    weights = eg.row_softmax(scores, mask)
    return eg.matmul(weights, v)


def fourier_attention(
    q, k, v, mask=None, *, q_gain=None, q_bias=None, k_gain=None, k_bias=None, eps: float = 1e-5
) -> Tensor:
    """Linear attention (Q~ K~^T) V / n with normalized queries and keys."""
    n_live, mask = _check_kv(k, v, mask)
    qn = eg.layer_normalize(q, q_gain, q_bias, eps)
    kn = _zero_masked_rows(eg.layer_normalize(k, k_gain, k_bias, eps), mask)
    scores = eg.matmul(qn, eg.transpose(kn))
    return eg.mul(eg.matmul(scores, v), 1.0 / n_live)


def galerkin_attention(
    q, k, v, mask=None, *, k_gain=None, k_bias=None, v_gain=None, v_bias=None, eps: float = 1e-5
) -> Tensor:
    """Linear attention Q (K~^T V~) / n; cost O(n d^2), never O(n^2)."""
    n_live, mask = _check_kv(k, v, mask)
    kn = _zero_masked_rows(eg.layer_normalize(k, k_gain, k_bias, eps), mask)
    vn = _zero_masked_rows(eg.layer_normalize(v, v_gain, v_bias, eps), mask)
    context = eg.matmul(eg.transpose(kn), vn)
    return eg.mul(eg.matmul(q, context), 1.0 / n_live)


class MultiHeadAttention:
    """Projections, per-head rotary embedding, kernel, output projection.

    The rotary map runs after the Q/K projections and before the kernel
    (so for the linear kernels the rotated keys are what gets
    normalized). Values are never rotated.
    """

    def __init__(self, rng: np.random.Generator, cfg: AttentionConfig, dtype=np.float64, name: str = "attn"):
        self.cfg = cfg
        self.name = name
        d = cfg.embed_dim
        dh = cfg.head_dim

        def lin(label):
            w = Tensor(glorot_uniform(rng, d, d, dtype), requires_grad=True)
            b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
            setattr(self, "w" + label, w)
            setattr(self, "b" + label, b)

        for label in ("q", "k", "v", "o"):
            lin(label)

        def norm_pair():
            gain = Tensor(np.ones(dh, dtype=dtype), requires_grad=True)
            bias = Tensor(np.zeros(dh, dtype=dtype), requires_grad=True)
            return gain, bias

        self.head_norms: list[dict[str, Tensor]] = []
        for _ in range(cfg.heads):
            norms: dict[str, Tensor] = {}
            if cfg.kernel == "fourier":
                norms["q_gain"], norms["q_bias"] = norm_pair()
                norms["k_gain"], norms["k_bias"] = norm_pair()
            elif cfg.kernel == "galerkin":
                norms["k_gain"], norms["k_bias"] = norm_pair()
                norms["v_gain"], norms["v_bias"] = norm_pair()
            self.head_norms.append(norms)
        self.rope = RopeSpec(cfg.spatial_dim, dh, cfg.rope_wavelengths)

    def __call__(self, q_in, kv_in, coords_q: np.ndarray, coords_k: np.ndarray, mask=None) -> Tensor:
        cfg = self.cfg
        qp = eg.add(eg.matmul(q_in, self.wq), self.bq)
        kp = eg.add(eg.matmul(kv_in, self.wk), self.bk)
        vp = eg.add(eg.matmul(kv_in, self.wv), self.bv)
        dh = cfg.head_dim
        heads = []
        for h in range(cfg.heads):
            cols = np.arange(h * dh, (h + 1) * dh)
            qh = rope_rotate(eg.gather_cols(qp, cols), coords_q, self.rope)
            kh = rope_rotate(eg.gather_cols(kp, cols), coords_k, self.rope)
            vh = eg.gather_cols(vp, cols)
            norms = self.head_norms[h]
            if cfg.kernel == "standard":
                oh = standard_attention(qh, kh, vh, mask)
            elif cfg.kernel == "fourier":
                oh = fourier_attention(
                    qh, kh, vh, mask,
                    q_gain=norms["q_gain"], q_bias=norms["q_bias"],
                    k_gain=norms["k_gain"], k_bias=norms["k_bias"],
                    eps=cfg.norm_eps,
                )
            else:
                oh = galerkin_attention(
                    qh, kh, vh, mask,
                    k_gain=norms["k_gain"], k_bias=norms["k_bias"],
                    v_gain=norms["v_gain"], v_bias=norms["v_bias"],
                    eps=cfg.norm_eps,
                )
            heads.append(oh)
        merged = eg.concat_cols(heads) if len(heads) > 1 else heads[0]
        return eg.add(eg.matmul(merged, self.wo), self.bo)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for label in ("q", "k", "v", "o"):
            out[f"{self.name}.w{label}"] = getattr(self, "w" + label)
            out[f"{self.name}.b{label}"] = getattr(self, "b" + label)
        for h, norms in enumerate(self.head_norms):
            for key in sorted(norms):
                out[f"{self.name}.head{h}.{key}"] = norms[key]
        return out
