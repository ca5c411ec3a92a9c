"""INI run configuration: sections [run], [dataset], [model], [train], [branch.*].

Every value is schema-checked on read and errors cite section.key, so a
typo fails loudly before any compute starts. Keys omitted everywhere
fall back to the dataclass defaults.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .attention import AttentionConfig
from .errors import GeotrunkError, SchemaError
from .trainer import TrainConfig
from .trunks import BranchSpec, ModelSpec

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}

_ATTENTION_SCHEMA = {
    "embed_dim": "int",
    "heads": "int",
    "kernel": "str",
    "spatial_dim": "int",
    "rope_wavelengths": "floats",
    "norm_eps": "float",
}

_MODEL_SCHEMA = {
    **_ATTENTION_SCHEMA,
    "variant": "str",
    "layers": "int",
    "input_mlp_hidden": "ints",
    "output_mlp_hidden": "ints",
    "trunk_out": "int",
    "use_query_sdf": "bool",
    "use_geometry_sdf": "bool",
    "extra_features": "int",
    "branches": "strs",
}

_BRANCH_SCHEMA = {"width": "int", "hidden": "ints", "kind": "str"}

_TRAIN_SCHEMA = {
    "steps": "int",
    "lr0": "float",
    "decay": "float",
    "decay_every": "int",
    "query_batch": "int",
    "case_batch": "int",
    "seed": "int",
    "precision": "str",
    "log_every": "int",
    "checkpoint_every": "int",
    "beta1": "float",
    "beta2": "float",
    "eps": "float",
}

_DATASET_SCHEMA = {
    "family": "str",
    "count": "int",
    "split": "float",
    "oracle": "str",
    "seed": "int",
    "oracle_n": "int",
    "cloud_size": "int",
    "per_case_queries": "int",
}

_RUN_SCHEMA = {
    "data": "str",
    "out": "str",
    "variable": "str",
    "metric": "str",
    "space": "str",
    "mode": "str",
    "lambdas": "floats",
    "query_count": "int",
    "variants": "strs",
    "plot": "bool",
}

_SECTION_SCHEMAS = {
    "run": _RUN_SCHEMA,
    "dataset": _DATASET_SCHEMA,
    "model": _MODEL_SCHEMA,
    "train": _TRAIN_SCHEMA,
}


def _convert(section: str, key: str, raw: str, kind: str):
    base = kind[:-1] if kind.endswith("s") and kind != "floats" else kind
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            flag = _BOOL.get(raw.strip().lower())
            if flag is None:
                raise ValueError(raw)
            return flag
        if kind == "str":
            return raw.strip()
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if kind == "ints":
            return tuple(int(p) for p in parts)
        if kind == "floats":
            return tuple(float(p) for p in parts)
        if kind == "strs":
            return tuple(parts)
    except ValueError:
        raise SchemaError(f"[{section}] {key}: expected {kind}, got {raw!r}") from None
    raise SchemaError(f"[{section}] {key}: unknown schema kind {kind!r}")


def load_config(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    _validate_sections(cp)
    return cp


def _validate_sections(cp: configparser.ConfigParser):
    for section in cp.sections():
        if section in _SECTION_SCHEMAS:
            schema = _SECTION_SCHEMAS[section]
        elif section.startswith("branch."):
            if not section[len("branch."):]:
                raise SchemaError(f"[{section}] branch sections need a name: [branch.<name>]")
            schema = _BRANCH_SCHEMA
        else:
            raise SchemaError(
                f"unknown section [{section}]; expected one of "
                f"{sorted(_SECTION_SCHEMAS)} or [branch.<name>]"
            )
        for key in cp[section]:
            if key not in schema:
                raise SchemaError(f"[{section}] unknown key {key!r}")


def section_values(cp: configparser.ConfigParser, section: str) -> dict:
    """Converted key/value pairs of one section; empty if absent."""
    if not cp.has_section(section):
        return {}
    schema = _BRANCH_SCHEMA if section.startswith("branch.") else _SECTION_SCHEMAS[section]
    return {key: _convert(section, key, cp[section][key], schema[key]) for key in cp[section]}


def _rewrap(section: str, build, kwargs):
    # Constructor-level violations (bad variant, zero steps) are config
    # mistakes here, so they surface as schema errors with the section.
    try:
        return build(**kwargs)
    except GeotrunkError as exc:
        raise SchemaError(f"[{section}] {exc}") from exc


def model_spec_from_config(cp, default_wavelengths=None) -> ModelSpec:
    """Assemble a ModelSpec from [model] and its [branch.*] sections.

    ``default_wavelengths`` fills rope_wavelengths when the config is
    silent, letting callers pass dataset-derived box extents. Branches
    default to a single two-component scalar branch named "mu".
    """
    values = section_values(cp, "model")
    att_kw = {k: values.pop(k) for k in list(values) if k in _ATTENTION_SCHEMA}
    if "rope_wavelengths" not in att_kw and default_wavelengths is not None:
        att_kw["rope_wavelengths"] = tuple(float(w) for w in default_wavelengths)
    names = values.pop("branches", ("mu",))

    declared = {s[len("branch."):] for s in cp.sections() if s.startswith("branch.")}
    unused = sorted(declared - set(names))
    if unused:
        raise SchemaError(
            f"[branch.{unused[0]}] section is not listed in [model] branches = {', '.join(names)}"
        )
    branches = []
    for name in names:
        bkw = section_values(cp, f"branch.{name}")
        branches.append(_rewrap(f"branch.{name}", BranchSpec, {"name": name, "width": 2, **bkw}))

    attention = _rewrap("model", AttentionConfig, att_kw)
    return _rewrap("model", ModelSpec,
                   {"attention": attention, "branches": tuple(branches), **values})


def train_config_from_config(cp) -> TrainConfig:
    return _rewrap("train", TrainConfig, section_values(cp, "train"))


def dataset_args_from_config(cp) -> dict:
    return section_values(cp, "dataset")


def run_options(cp) -> dict:
    return section_values(cp, "run")
