"""Evaluation and the two protocol experiments: λ sweep, SDF ablation."""

from __future__ import annotations

import dataclasses

import numpy as np

from .dataset import Dataset, GeometryCase, case_to_batch
from .deeponet import OperatorModel
from .errors import ConfigurationError, ValidationError
from .geometry import sample_lambda
from .metrics import mae, mse_norm, relative_l2
from .trainer import TrainConfig, _branch_values, train
from .trunks import ModelSpec, QueryBatch

METRICS = ("relative-l2", "mae", "mse-norm")
SPACES = ("raw", "normalized")
DEFAULT_LAMBDAS = (-0.5, 0.0, 0.5, 1.0)
ABLATION_VARIANTS = ("mlp", "self", "cross", "hybrid")


def _resolve_variable(dataset: Dataset, variable) -> str:
    names = list(dataset.variables)
    if variable is None:
        if len(names) != 1:
            raise ValidationError(f"dataset has variables {names}; pick one")
        return names[0]
    if variable not in names:
        raise ValidationError(f"dataset has variables {names}, not {variable!r}")
    return variable


def predict_case(
    model: OperatorModel,
    dataset: Dataset,
    case: GeometryCase,
    variable: str,
    idx: np.ndarray | None = None,
    space: str = "raw",
) -> np.ndarray:
    """Field prediction at the case's query points (or a row subset).

    The model works in normalized target space; "raw" undoes the z-score.
    """
    if space not in SPACES:
        raise ValidationError(f"space must be one of {SPACES}, got {space!r}")
    batch, geom = case_to_batch(case, dataset)
    if idx is not None:
        batch = QueryBatch(
            coords=batch.coords[idx],
            sdf=None if batch.sdf is None else batch.sdf[idx],
        )
    needs_geom = model.trunk.spec.variant in ("cross", "hybrid")
    out = model.forward(batch, geom if needs_geom else None, _branch_values(model, case))
    z = out.data
    if z.ndim == 2:
        if z.shape[1] != 1:
            raise ConfigurationError(
                f"model emits {z.shape[1]} columns; single-variable evaluation needs 1"
            )
        z = z[:, 0]
    if space == "normalized":
        return z
    return dataset.norm.denormalize(variable, z)


def _reference(dataset: Dataset, case: GeometryCase, variable: str,
               idx: np.ndarray | None, space: str) -> np.ndarray:
    raw = case.targets[variable] if idx is None else case.targets[variable][idx]
    if space == "normalized":
        return dataset.norm.normalize(variable, raw)
    return raw


def evaluate_model(
    model: OperatorModel,
    dataset: Dataset,
    variable=None,
    split: str = "test",
    metric: str = "relative-l2",
    space: str = "raw",
    mode: str = "per-case",
) -> float:
    """Score the model on one split with one metric."""
    if split not in ("train", "test"):
        raise ValidationError(f"split must be 'train' or 'test', got {split!r}")
    if metric not in METRICS:
        raise ValidationError(f"metric must be one of {METRICS}, got {metric!r}")
    variable = _resolve_variable(dataset, variable)
    cases = dataset.train if split == "train" else dataset.test
    if not cases:
        raise ValidationError(f"dataset has no {split} cases")
    preds = [predict_case(model, dataset, c, variable, space=space) for c in cases]
    refs = [_reference(dataset, c, variable, None, space) for c in cases]
    if metric == "relative-l2":
        return relative_l2(preds, refs, mode)
    if metric == "mae":
        return mae(preds, refs, mode)
    return mse_norm(preds, refs, dataset.norm, variable, mode)


def sampling_sweep(
    models: dict[str, OperatorModel],
    dataset: Dataset,
    lambdas=DEFAULT_LAMBDAS,
    query_count: int = 256,
    seed: int = 0,
    variable=None,
) -> list[dict]:
    """Relative L2 on test queries resampled with each λ.

    Each stored test query set was drawn uniformly from the oracle grid,
    so reweighting it by the λ rule shifts the evaluation distribution
    toward (λ > 0) or away from (λ < 0) the boundary. Every model is
    scored on the same resampled subsets, and each subset is evaluated
    as its own batch, so batch-composition sensitivity shows up here.
    """
    if not models:
        raise ValidationError("sampling_sweep needs at least one model")
    if not dataset.test:
        raise ValidationError("dataset has no test cases")
    variable = _resolve_variable(dataset, variable)
    rng = np.random.default_rng(seed)
    rows = []
    for lam in lambdas:
        picks = [
            np.sort(sample_lambda(c.query_sdf, float(lam), min(query_count, c.n), rng))
            for c in dataset.test
        ]
        errors = {}
        for name, model in models.items():
            preds, refs = [], []
            for case, idx in zip(dataset.test, picks):
                preds.append(predict_case(model, dataset, case, variable, idx))
                refs.append(_reference(dataset, case, variable, idx, "raw"))
            errors[name] = relative_l2(preds, refs)
        rows.append({"lambda": float(lam), "errors": errors})
    return rows


def variant_spec(base: ModelSpec, variant: str, with_sdf: bool) -> ModelSpec:
    """Ablation grid cell: one variant with the SDF toggle applied.

    Removing the SDF from cross or hybrid models drops only the query
    channel; the geometry cloud keeps its SDF column. Self and mlp
    models have no cloud, so the toggle strips the SDF entirely.
    """
    if variant not in ABLATION_VARIANTS:
        raise ValidationError(f"variant must be one of {ABLATION_VARIANTS}, got {variant!r}")
    keeps_cloud_sdf = variant in ("cross", "hybrid")
    return dataclasses.replace(
        base,
        variant=variant,
        layers=2 if variant == "hybrid" else base.layers,
        use_query_sdf=with_sdf,
        use_geometry_sdf=keeps_cloud_sdf,
    )


def ablate_sdf(
    dataset: Dataset,
    base: ModelSpec,
    cfg: TrainConfig,
    variants=ABLATION_VARIANTS,
    variable=None,
) -> tuple[list[dict], dict]:
    """Train the variant x SDF-toggle grid and score each cell.

    Returns table rows plus the trained models keyed (variant, toggle)
    so callers can run invariance checks on them.
    """
    variable = _resolve_variable(dataset, variable)
    rows = []
    models = {}
    for variant in variants:
        row = {"variant": variant}
        for label, with_sdf in (("without", False), ("with", True)):
            spec = variant_spec(base, variant, with_sdf)
            model, _ = train(spec, dataset, cfg, variable=variable)
            models[(variant, label)] = model
            row[label] = evaluate_model(model, dataset, variable)
            row[f"{label}_flags"] = {
                "use_query_sdf": spec.use_query_sdf,
                "use_geometry_sdf": spec.use_geometry_sdf,
            }
        rows.append(row)
    return rows, models
