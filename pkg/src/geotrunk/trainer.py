"""Adam training loop with step-decay schedule and checkpointing.

The loss is the MSE between model outputs and z-score normalized
targets. One training step draws a case batch (a single case by
default), subsamples each case's queries, and runs one forward/backward
pass followed by a bias-corrected Adam update. Single-worker runs are
bitwise deterministic under a fixed seed.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as eg
from .dataset import Dataset, GeometryCase, case_to_batch
from .deeponet import OperatorModel, build_model
from .errors import (
    ConfigurationError,
    DegenerateBatchError,
    DimensionError,
    TrainingError,
    ValidationError,
)
from .records import read_manifest, read_record, write_manifest, write_record
from .trunks import ModelSpec, QueryBatch

CHECKPOINT_KIND = "geotrunk-checkpoint"
PRECISIONS = ("float64", "float32")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    lr0: float = 1e-3
    decay: float = 0.99
    decay_every: int = 200
    query_batch: int = 512
    case_batch: int = 1
    seed: int = 0
    precision: str = "float64"
    log_every: int = 50
    checkpoint_every: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("steps", "decay_every", "query_batch", "case_batch",
                     "log_every", "checkpoint_every"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.lr0 <= 0:
            raise ValidationError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.decay <= 1.0:
            raise ValidationError(f"decay must lie in (0, 1], got {self.decay}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValidationError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if self.precision not in PRECISIONS:
            raise ValidationError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown TrainConfig keys: {unknown}")
        return cls(**d)

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


def lr_at(step: int, cfg: TrainConfig) -> float:
    """lr0 * decay^floor(step / decay_every), exactly."""
    if step < 0:
        raise ValidationError(f"step must be nonnegative, got {step}")
    return cfg.lr0 * cfg.decay ** (step // cfg.decay_every)


def mse_loss(pred: eg.Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> eg.Tensor:
    """Mean squared error over unmasked entries, on the tape.

    ``mask`` marks padded query rows (True = exclude) and applies to the
    leading axis; a [N x V] prediction counts V entries per live row.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} does not match target shape {target.shape}")
    if target.size == 0:
        raise DegenerateBatchError("cannot average a loss over zero entries")
    row_width = target.size // target.shape[0]
    if mask is None:
        weights = np.full(target.shape, 1.0 / target.size)
    else:
        mask = np.asarray(mask)
        if mask.dtype != np.bool_ or mask.shape != (target.shape[0],):
            raise ValidationError(
                f"mask must be boolean with shape ({target.shape[0]},), got {mask.dtype} {mask.shape}"
            )
        live = ~mask
        n_live = int(live.sum())
        if n_live == 0:
            raise DegenerateBatchError("every row of the batch is masked")
        weights = np.zeros(target.shape)
        weights[live] = 1.0 / (n_live * row_width)
    diff = eg.sub(pred, target)
    return eg.sum_all(eg.mul(eg.mul(diff, diff), weights))


@dataclass
class TrainState:
    params: dict[str, eg.Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    rng: np.random.Generator | None = None
    history: list[tuple[int, float]] = field(default_factory=list)
    best: tuple[int, float] | None = None


def init_train_state(model: OperatorModel, rng: np.random.Generator | None = None) -> TrainState:
    params = model.parameters()
    return TrainState(
        params=params,
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
        rng=rng,
    )


def adam_step(
    state: TrainState,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """One in-place bias-corrected Adam update; missing grads are zero."""
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in sorted(state.params):
        p = state.params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, parameter has {p.data.shape}"
            )
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {t}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.step = t
    return state


def _resolve_variables(dataset: Dataset, spec: ModelSpec, variable) -> tuple[str, ...]:
    names = tuple(dataset.variables)
    if variable is None:
        chosen = names
    elif isinstance(variable, str):
        chosen = (variable,)
    else:
        chosen = tuple(variable)
    unknown = [v for v in chosen if v not in names]
    if unknown:
        raise ValidationError(f"dataset has variables {list(names)}, not {unknown}")
    if len(chosen) > 1:
        # Multi-output mode maps trunk columns to variables directly, so
        # there is no room for branch scaling.
        if spec.branches:
            raise ConfigurationError("multi-variable training requires a trunk-only model")
        if spec.trunk_out != len(chosen):
            raise ConfigurationError(
                f"trunk_out {spec.trunk_out} must equal the variable count {len(chosen)}"
            )
    return chosen


def _branch_values(model: OperatorModel, case: GeometryCase) -> list[np.ndarray] | None:
    if not model.branches:
        return None
    values = []
    for net in model.branches:
        if net.spec.name != "mu":
            raise ConfigurationError(
                f"branch {net.spec.name!r} has no source column in this dataset"
            )
        values.append(case.mu)
    return values


def case_loss(
    model: OperatorModel,
    dataset: Dataset,
    case: GeometryCase,
    variables: tuple[str, ...],
    idx: np.ndarray | None = None,
) -> eg.Tensor:
    """MSE of one case (optionally row-subsampled) on normalized targets."""
    batch, geom = case_to_batch(case, dataset)
    if idx is not None:
        batch = QueryBatch(
            coords=batch.coords[idx],
            sdf=None if batch.sdf is None else batch.sdf[idx],
        )
    cols = []
    for v in variables:
        raw = case.targets[v] if idx is None else case.targets[v][idx]
        cols.append(dataset.norm.normalize(v, raw))
    target = cols[0] if len(cols) == 1 else np.stack(cols, axis=1)

    needs_geom = model.trunk.spec.variant in ("cross", "hybrid")
    pred = model.forward(batch, geom if needs_geom else None, _branch_values(model, case))
    if pred.data.ndim == 2:
        if pred.data.shape[1] != len(variables):
            raise ConfigurationError(
                f"model emits {pred.data.shape[1]} columns for {len(variables)} variable(s); "
                "set trunk_out accordingly or add a branch"
            )
        if len(variables) == 1:
            pred = eg.reshape(pred, (batch.n,))
    return mse_loss(pred, target)


def _subsample(case_n: int, cfg: TrainConfig, rng: np.random.Generator, warned: dict) -> np.ndarray | None:
    if cfg.query_batch < case_n:
        # Sorted so the loss reduction order does not depend on the draw.
        return np.sort(rng.choice(case_n, size=cfg.query_batch, replace=False))
    if cfg.query_batch > case_n and not warned["yes"]:
        warnings.warn(
            f"query_batch {cfg.query_batch} exceeds the case size {case_n}; using the full case",
            RuntimeWarning,
            stacklevel=3,
        )
        warned["yes"] = True
    return None


def save_checkpoint(stem, model: OperatorModel, cfg: TrainConfig, state: TrainState) -> str:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": CHECKPOINT_KIND,
        "model": model.spec.to_dict(),
        "train": cfg.to_dict(),
        "step": state.step,
        "rng_state": state.rng.bit_generator.state if state.rng is not None else None,
        "history": [[s, l] for s, l in state.history],
        "best": list(state.best) if state.best is not None else None,
    }
    write_manifest(stem.with_suffix(".json"), manifest)
    write_record(stem.with_suffix(".bin"), {k: p.data for k, p in state.params.items()})
    return str(stem)


def load_checkpoint(stem) -> tuple[OperatorModel, TrainConfig, TrainState]:
    """Rebuild the model and optimizer bookkeeping from a checkpoint stem.

    Adam moments are not persisted; resuming restarts them at zero.
    """
    stem = Path(stem)
    manifest = read_manifest(stem.with_suffix(".json"))
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise ValidationError(f"{stem} is not a checkpoint (kind={manifest.get('kind')!r})")
    spec = ModelSpec.from_dict(manifest["model"])
    cfg = TrainConfig.from_dict(manifest["train"])
    model = build_model(spec, seed=0, dtype=cfg.dtype)
    arrays = read_record(stem.with_suffix(".bin"))
    params = model.parameters()
    if set(arrays) != set(params):
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        raise ValidationError(f"checkpoint parameters mismatch: missing {missing}, extra {extra}")
    for name, arr in arrays.items():
        if arr.shape != params[name].data.shape:
            raise DimensionError(
                f"checkpoint array {name!r} has shape {arr.shape}, model expects {params[name].data.shape}"
            )
        params[name].data[...] = arr

    rng = None
    if manifest["rng_state"] is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = manifest["rng_state"]
    state = init_train_state(model, rng)
    state.step = int(manifest["step"])
    state.history = [(int(s), float(l)) for s, l in manifest["history"]]
    if manifest.get("best") is not None:
        state.best = (int(manifest["best"][0]), float(manifest["best"][1]))
    return model, cfg, state


def train(
    spec: ModelSpec,
    dataset: Dataset,
    cfg: TrainConfig,
    out_dir=None,
    variable=None,
    verbose: bool = False,
) -> tuple[OperatorModel, TrainState]:
    """Train a fresh model on the dataset's training split.

    The config seed feeds both parameter initialization and batch
    sampling through a split seed tree. With ``out_dir`` set, numbered
    checkpoints land every ``checkpoint_every`` steps plus a final one.
    """
    if not dataset.train:
        raise ValidationError("dataset has no training cases")
    variables = _resolve_variables(dataset, spec, variable)
    model_seq, sample_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    model = build_model(spec, seed=model_seq, dtype=cfg.dtype)
    state = init_train_state(model, np.random.default_rng(sample_seq))

    out_dir = Path(out_dir) if out_dir is not None else None
    n_cases = len(dataset.train)
    warned = {"yes": False}
    last_ckpt = None

    for t in range(cfg.steps):
        lr = lr_at(t, cfg)
        if cfg.case_batch >= n_cases:
            picks = np.arange(n_cases)
        else:
            picks = state.rng.choice(n_cases, size=cfg.case_batch, replace=False)
        with eg.Tape() as tape:
            total = None
            for ci in picks:
                case = dataset.train[int(ci)]
                idx = _subsample(case.n, cfg, state.rng, warned)
                part = case_loss(model, dataset, case, variables, idx)
                total = part if total is None else eg.add(total, part)
            loss = eg.mul(total, 1.0 / len(picks)) if len(picks) > 1 else total
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingError(
                    f"loss became non-finite at step {t}; "
                    f"last checkpoint: {last_ckpt if last_ckpt else 'none'}"
                )
            table = eg.backward(loss)
        grads = {
            name: table[p.node_id].data
            for name, p in state.params.items()
            if p.tape is tape and p.node_id in table
        }
        adam_step(state, grads, lr, cfg.beta1, cfg.beta2, cfg.eps)

        if t % cfg.log_every == 0 or t == cfg.steps - 1:
            state.history.append((t, loss_val))
            if verbose:
                print(f"step {t:6d}  lr {lr:.6g}  loss {loss_val:.6e}")
        if state.best is None or loss_val < state.best[1]:
            state.best = (t, loss_val)
        if out_dir is not None and (t + 1) % cfg.checkpoint_every == 0:
            last_ckpt = save_checkpoint(out_dir / f"checkpoint-{t + 1:06d}", model, cfg, state)

    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint-final", model, cfg, state)
    return model, state
