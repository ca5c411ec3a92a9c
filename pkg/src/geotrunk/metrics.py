"""Error metrics over per-case field predictions.

Every metric accepts either a single 1-d array pair or a sequence of
per-case pairs. Aggregation over cases defaults to per-case-then-mean;
"pooled" concatenates all points first. The two disagree whenever case
sizes or magnitudes differ, so the mode is always explicit in reports.
"""

from __future__ import annotations

import numpy as np

from .dataset import NormSpec
from .errors import DimensionError, ValidationError

MODES = ("per-case", "pooled")


def _case_pairs(pred, ref) -> list[tuple[np.ndarray, np.ndarray]]:
    if isinstance(pred, np.ndarray) and pred.ndim == 1:
        pred = [pred]
    if isinstance(ref, np.ndarray) and ref.ndim == 1:
        ref = [ref]
    pred = [np.asarray(p, dtype=np.float64) for p in pred]
    ref = [np.asarray(r, dtype=np.float64) for r in ref]
    if len(pred) != len(ref):
        raise DimensionError(f"{len(pred)} prediction cases vs {len(ref)} reference cases")
    if not pred:
        raise ValidationError("metrics need at least one case")
    pairs = []
    for i, (p, r) in enumerate(zip(pred, ref)):
        if p.shape != r.shape or p.ndim != 1:
            raise DimensionError(
                f"case {i}: prediction shape {p.shape} vs reference shape {r.shape}"
            )
        if p.size == 0:
            raise ValidationError(f"case {i} is empty")
        pairs.append((p, r))
    return pairs


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")


def relative_l2(pred, ref, mode: str = "per-case") -> float:
    """||pred - ref||_2 / ||ref||_2, aggregated over cases."""
    _check_mode(mode)
    pairs = _case_pairs(pred, ref)
    if mode == "pooled":
        p = np.concatenate([a for a, _ in pairs])
        r = np.concatenate([b for _, b in pairs])
        pairs = [(p, r)]
    vals = []
    for i, (p, r) in enumerate(pairs):
        denom = float(np.linalg.norm(r))
        if denom == 0.0:
            raise ValidationError(f"case {i}: reference field has zero norm")
        vals.append(float(np.linalg.norm(p - r)) / denom)
    return float(np.mean(vals))


def mae(pred, ref, mode: str = "per-case") -> float:
    """Mean absolute error in the units the fields are given in."""
    _check_mode(mode)
    pairs = _case_pairs(pred, ref)
    if mode == "pooled":
        errs = np.concatenate([np.abs(p - r) for p, r in pairs])
        return float(errs.mean())
    return float(np.mean([np.abs(p - r).mean() for p, r in pairs]))


def mse_norm(pred, ref, norm: NormSpec, variable: str, mode: str = "per-case") -> float:
    """MSE after z-scoring both sides with the dataset NormSpec."""
    _check_mode(mode)
    pairs = _case_pairs(pred, ref)
    zs = [
        (norm.normalize(variable, p), norm.normalize(variable, r))
        for p, r in pairs
    ]
    if mode == "pooled":
        zp = np.concatenate([a for a, _ in zs])
        zr = np.concatenate([b for _, b in zs])
        return float(np.mean((zp - zr) ** 2))
    return float(np.mean([np.mean((a - b) ** 2) for a, b in zs]))
