"""Command-line surface: gen-data, train, eval, sweep, ablate, inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
Every run that takes an --out directory drops a JSON manifest there
with the fully resolved options, so it can be replayed exactly.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .config import (
    dataset_args_from_config,
    load_config,
    model_spec_from_config,
    run_options,
    train_config_from_config,
)
from .dataset import build_dataset, load_dataset, rope_wavelengths_for, save_dataset
from .errors import GeotrunkError, SchemaError
from .experiments import (
    ABLATION_VARIANTS,
    DEFAULT_LAMBDAS,
    ablate_sdf,
    evaluate_model,
    sampling_sweep,
)
from .metrics import MODES
from .records import read_manifest, read_record, write_manifest
from .trainer import load_checkpoint, train


def _load_optional_config(path):
    if path is None:
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        cp.optionxform = str
        return cp
    return load_config(path)


def format_table(rows: list[dict], columns: list[str]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4e}"
        return str(v)

    cells = [[fmt(row.get(c, "")) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = [
        "  ".join(c.ljust(w) for c, w in zip(columns, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def _write_run_manifest(out_dir: Path, name: str, command: str, options: dict, results):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir / name, {"command": command, "options": options, "results": results})


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    cp = _load_optional_config(args.config)
    kwargs = dataset_args_from_config(cp)
    for flag, key in (("family", "family"), ("count", "count"), ("seed", "seed"),
                      ("split", "split"), ("oracle", "oracle"), ("oracle_n", "oracle_n"),
                      ("cloud_size", "cloud_size"), ("queries", "per_case_queries")):
        value = getattr(args, flag)
        if value is not None:
            kwargs[key] = value
    ds = build_dataset(**kwargs)
    out = Path(args.out)
    save_dataset(ds, out)
    results = {
        "train_cases": len(ds.train),
        "test_cases": len(ds.test),
        "skipped": ds.meta["skipped"],
        "variables": list(ds.variables),
    }
    _write_run_manifest(out, "run.json", "gen-data", kwargs, results)
    skipped = f", {len(ds.meta['skipped'])} skipped" if ds.meta["skipped"] else ""
    print(f"wrote {ds.family} dataset to {out}: "
          f"{len(ds.train)} train / {len(ds.test)} test cases{skipped}")
    return 0


# ------------------------------------------------------------------- train


def _spec_from_flags(cp, ds, args):
    spec = model_spec_from_config(cp, default_wavelengths=rope_wavelengths_for(ds))
    att_kw = {}
    if args.embed is not None:
        att_kw["embed_dim"] = args.embed
    if args.heads is not None:
        att_kw["heads"] = args.heads
    if args.kernel is not None:
        att_kw["kernel"] = args.kernel
    spec_kw = {}
    if att_kw:
        spec_kw["attention"] = dataclasses.replace(spec.attention, **att_kw)
    if args.variant is not None:
        spec_kw["variant"] = args.variant
        if args.variant == "hybrid" and args.layers is None:
            spec_kw["layers"] = 2
    if args.layers is not None:
        spec_kw["layers"] = args.layers
    if args.trunk_out is not None:
        spec_kw["trunk_out"] = args.trunk_out
    return dataclasses.replace(spec, **spec_kw) if spec_kw else spec


def _train_cfg_from_flags(cp, args):
    cfg = train_config_from_config(cp)
    kw = {}
    for flag in ("steps", "lr0", "query_batch", "seed", "precision"):
        value = getattr(args, flag)
        if value is not None:
            kw[flag] = value
    return dataclasses.replace(cfg, **kw) if kw else cfg


def cmd_train(args) -> int:
    cp = _load_optional_config(args.config)
    ds = load_dataset(args.data)
    spec = _spec_from_flags(cp, ds, args)
    cfg = _train_cfg_from_flags(cp, args)
    out = Path(args.out)

    model, state = train(spec, ds, cfg, out_dir=out, variable=args.variable,
                         verbose=not args.quiet)
    results = {"final_loss": state.history[-1][1], "steps": state.step,
               "checkpoint": str(out / "checkpoint-final")}
    if len(ds.variables) == 1 or args.variable is not None:
        err = evaluate_model(model, ds, variable=args.variable)
        results["test_relative_l2"] = err
        print(f"test relative L2 (raw, per-case): {err:.4e}")
    options = {"data": str(args.data), "model": spec.to_dict(),
               "train": cfg.to_dict(), "variable": args.variable}
    _write_run_manifest(out, "run.json", "train", options, results)
    print(f"checkpoint: {out / 'checkpoint-final'}")
    return 0


# -------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model, _, _ = load_checkpoint(args.checkpoint)
    value = evaluate_model(model, ds, variable=args.variable, split=args.split,
                           metric=args.metric, space=args.space, mode=args.mode)
    print(f"{args.metric} ({args.split}, {args.space}, {args.mode}): {value:.6e}")
    if args.out:
        options = {"data": str(args.data), "checkpoint": str(args.checkpoint),
                   "metric": args.metric, "split": args.split, "space": args.space,
                   "mode": args.mode, "variable": args.variable}
        _write_run_manifest(Path(args.out), "eval.json", "eval", options,
                            {args.metric: value})
    return 0


# ------------------------------------------------------------------- sweep


def _named_checkpoints(specs):
    models = {}
    for item in specs:
        name, sep, stem = item.partition("=")
        if not sep:
            name, stem = Path(item).name, item
        model, _, _ = load_checkpoint(stem)
        models[name] = model
    return models


def _sweep_svg(path: Path, rows) -> bool:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(5, 3.5))
    lams = [r["lambda"] for r in rows]
    for name in sorted(rows[0]["errors"]):
        ax.plot(lams, [r["errors"][name] for r in rows], marker="o", label=name)
    ax.set_xlabel("sampling parameter lambda")
    ax.set_ylabel("relative L2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True


def cmd_sweep(args) -> int:
    ds = load_dataset(args.data)
    models = _named_checkpoints(args.checkpoint)
    rows = sampling_sweep(models, ds, lambdas=tuple(args.lambdas),
                          query_count=args.query_count, seed=args.seed,
                          variable=args.variable)
    names = sorted(models)
    flat = [{"lambda": r["lambda"], **r["errors"]} for r in rows]
    print(format_table(flat, ["lambda"] + names))
    if args.out:
        out = Path(args.out)
        options = {"data": str(args.data), "checkpoints": list(args.checkpoint),
                   "lambdas": list(args.lambdas), "query_count": args.query_count,
                   "seed": args.seed, "variable": args.variable}
        _write_run_manifest(out, "sweep.json", "sweep", options, rows)
        if args.plot:
            if _sweep_svg(out / "sweep.svg", rows):
                print(f"plot: {out / 'sweep.svg'}")
            else:
                print("matplotlib not installed; skipped the plot", file=sys.stderr)
    return 0


# ------------------------------------------------------------------ ablate


def cmd_ablate(args) -> int:
    cp = _load_optional_config(args.config)
    ds = load_dataset(args.data)
    base = model_spec_from_config(cp, default_wavelengths=rope_wavelengths_for(ds))
    cfg = _train_cfg_from_flags(cp, args)
    rows, _ = ablate_sdf(ds, base, cfg, variants=tuple(args.variants),
                         variable=args.variable)
    print(format_table(rows, ["variant", "without", "with"]))
    if args.out:
        options = {"data": str(args.data), "model": base.to_dict(),
                   "train": cfg.to_dict(), "variants": list(args.variants),
                   "variable": args.variable}
        _write_run_manifest(Path(args.out), "ablate.json", "ablate", options, rows)
    return 0


# ----------------------------------------------------------------- inspect


def _inspect_dataset(path: Path) -> int:
    ds = load_dataset(path)
    print(f"dataset {path}")
    print(f"  family: {ds.family}")
    print(f"  cases: {len(ds.train)} train / {len(ds.test)} test")
    print(f"  cloud: {ds.cloud_coords.shape[0]} points")
    print(f"  queries per case: {ds.meta['per_case_queries']}")
    print(f"  oracle: {ds.meta['oracle']} (n={ds.meta['oracle_n']})")
    for v in ds.variables:
        print(f"  variable {v}: mean {ds.norm.means[v]:.6g}, std {ds.norm.stds[v]:.6g}")
    if ds.meta["skipped"]:
        print(f"  skipped cases: {[s['name'] for s in ds.meta['skipped']]}")
    return 0


def _inspect_checkpoint(stem: Path) -> int:
    from .trunks import ModelSpec

    manifest = read_manifest(stem.with_suffix(".json"))
    spec = ModelSpec.from_dict(manifest["model"])
    arrays = read_record(stem.with_suffix(".bin"))
    n_params = sum(a.size for a in arrays.values())
    print(f"checkpoint {stem}")
    print(f"  variant: {spec.variant} ({spec.attention.kernel} kernel, "
          f"embed {spec.attention.embed_dim}, heads {spec.attention.heads}, "
          f"layers {spec.layers})")
    print(f"  trunk_out: {spec.trunk_out}, branches: {[b.name for b in spec.branches]}")
    print(f"  step: {manifest['step']}, parameters: {n_params}")
    if manifest.get("best") is not None:
        print(f"  best loss: {manifest['best'][1]:.6e} at step {manifest['best'][0]}")
    return 0


def _inspect_record(path: Path) -> int:
    arrays = read_record(path)
    print(f"record {path}: {len(arrays)} arrays")
    for name in sorted(arrays):
        print(f"  {name}: shape {arrays[name].shape}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir() and (path / "manifest.json").is_file():
        return _inspect_dataset(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    if stem.with_suffix(".json").is_file() and stem.with_suffix(".bin").is_file():
        manifest = read_manifest(stem.with_suffix(".json"))
        if manifest.get("kind") == "geotrunk-checkpoint":
            return _inspect_checkpoint(stem)
    if path.is_file() and path.suffix == ".bin":
        return _inspect_record(path)
    raise GeotrunkError(f"nothing inspectable at {path} "
                        "(expected a dataset directory, checkpoint stem, or .bin record)")


# ------------------------------------------------------------------ parser


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="geotrunk",
        description="Geometry-conditioned operator learning on synthetic 2D domains.",
    )
    p.add_argument("--version", action="version", version=f"geotrunk {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--config", help="INI file with a [dataset] section")
    g.add_argument("--family", choices=["cavity", "rods"])
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--split", type=float)
    g.add_argument("--oracle", choices=["poisson", "analytic"])
    g.add_argument("--oracle-n", dest="oracle_n", type=int)
    g.add_argument("--cloud-size", dest="cloud_size", type=int)
    g.add_argument("--queries", type=int, help="query points per case")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--config", help="INI file with [model]/[train] sections")
    t.add_argument("--variant", choices=["self", "cross", "hybrid", "mlp"])
    t.add_argument("--kernel", choices=["standard", "fourier", "galerkin"])
    t.add_argument("--embed", type=int, help="embedding width")
    t.add_argument("--heads", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--trunk-out", dest="trunk_out", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--query-batch", dest="query_batch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--precision", choices=["float64", "float32"])
    t.add_argument("--variable", help="target variable (defaults to the only one)")
    t.add_argument("--quiet", action="store_true", help="suppress per-step loss lines")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True, help="checkpoint stem (no extension)")
    e.add_argument("--metric", default="relative-l2",
                   choices=["relative-l2", "mae", "mse-norm"])
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--space", default="raw", choices=["raw", "normalized"])
    e.add_argument("--mode", default="per-case", choices=list(MODES))
    e.add_argument("--variable")
    e.add_argument("--out", help="directory for the eval manifest")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="re-sample test queries over a lambda grid")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True, action="append",
                   help="name=stem; repeat to compare models")
    s.add_argument("--lambdas", type=float, nargs="+", default=list(DEFAULT_LAMBDAS))
    s.add_argument("--query-count", dest="query_count", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--variable")
    s.add_argument("--out", help="directory for sweep.json (and the plot)")
    s.add_argument("--plot", action="store_true", help="write an SVG if matplotlib is present")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="train the variant x SDF grid and report errors")
    a.add_argument("--data", required=True)
    a.add_argument("--config", help="INI file with [model]/[train] sections")
    a.add_argument("--variants", nargs="+", default=list(ABLATION_VARIANTS),
                   choices=list(ABLATION_VARIANTS))
    a.add_argument("--steps", type=int)
    a.add_argument("--lr0", type=float)
    a.add_argument("--query-batch", dest="query_batch", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--precision", choices=["float64", "float32"])
    a.add_argument("--variable")
    a.add_argument("--out", help="directory for ablate.json")
    a.set_defaults(func=cmd_ablate)

    i = sub.add_parser("inspect", help="describe a dataset, checkpoint, or record")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)

    return p


def cli_main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GeotrunkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
