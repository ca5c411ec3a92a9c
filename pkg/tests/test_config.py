"""INI parsing and schema validation."""

import pytest

from geotrunk.config import (
    dataset_args_from_config,
    load_config,
    model_spec_from_config,
    run_options,
    train_config_from_config,
)
from geotrunk.errors import SchemaError
from geotrunk.trainer import TrainConfig


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


FULL = """
[run]
out = results
lambdas = -0.5, 0, 0.5, 1
plot = yes

[dataset]
family = cavity
count = 12
split = 0.75
oracle = analytic
seed = 3

[model]
variant = hybrid
embed_dim = 16
heads = 2
kernel = fourier
layers = 2
trunk_out = 8
input_mlp_hidden = 16, 16
output_mlp_hidden = 16
use_query_sdf = false
branches = mu

[branch.mu]
width = 2
hidden = 32, 32

[train]
steps = 100
lr0 = 0.002
query_batch = 64
seed = 9
"""


class TestLoadConfig:
    def test_full_file_round_trip(self, tmp_path):
        cp = load_config(write(tmp_path, FULL))
        spec = model_spec_from_config(cp)
        assert spec.variant == "hybrid"
        assert spec.attention.kernel == "fourier"
        assert spec.attention.embed_dim == 16
        assert spec.input_mlp_hidden == (16, 16)
        assert spec.use_query_sdf is False
        assert len(spec.branches) == 1
        assert spec.branches[0].hidden == (32, 32)

        cfg = train_config_from_config(cp)
        assert cfg.steps == 100 and cfg.lr0 == 0.002 and cfg.seed == 9

        args = dataset_args_from_config(cp)
        assert args == {"family": "cavity", "count": 12, "split": 0.75,
                        "oracle": "analytic", "seed": 3}

        opts = run_options(cp)
        assert opts["lambdas"] == (-0.5, 0.0, 0.5, 1.0)
        assert opts["plot"] is True

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="not found"):
            load_config(tmp_path / "absent.ini")

    def test_empty_sections_give_defaults(self, tmp_path):
        cp = load_config(write(tmp_path, "[train]\n"))
        assert train_config_from_config(cp) == TrainConfig()
        spec = model_spec_from_config(cp)
        assert spec.variant == "cross"
        assert [b.name for b in spec.branches] == ["mu"]

    def test_unknown_section_cited(self, tmp_path):
        with pytest.raises(SchemaError, match=r"\[optimizer\]"):
            load_config(write(tmp_path, "[optimizer]\nlr = 1\n"))

    def test_unknown_key_cited(self, tmp_path):
        with pytest.raises(SchemaError, match=r"\[train\] unknown key 'momentum'"):
            load_config(write(tmp_path, "[train]\nmomentum = 0.9\n"))

    def test_bad_value_cites_section_and_key(self, tmp_path):
        cp = load_config(write(tmp_path, "[train]\nsteps = soon\n"))
        with pytest.raises(SchemaError, match=r"\[train\] steps: expected int, got 'soon'"):
            train_config_from_config(cp)

    def test_constraint_violation_cites_section(self, tmp_path):
        cp = load_config(write(tmp_path, "[train]\nsteps = 0\n"))
        with pytest.raises(SchemaError, match=r"\[train\]"):
            train_config_from_config(cp)

    def test_bad_bool(self, tmp_path):
        cp = load_config(write(tmp_path, "[run]\nplot = maybe\n"))
        with pytest.raises(SchemaError, match=r"\[run\] plot"):
            run_options(cp)

    def test_malformed_ini(self, tmp_path):
        with pytest.raises(SchemaError):
            load_config(write(tmp_path, "steps without a section\n"))


class TestModelFromConfig:
    def test_default_wavelengths_fill_in(self, tmp_path):
        cp = load_config(write(tmp_path, "[model]\nembed_dim = 16\nheads = 2\n"))
        spec = model_spec_from_config(cp, default_wavelengths=(1.0, 2.0))
        assert spec.attention.rope_wavelengths == (1.0, 2.0)

    def test_explicit_wavelengths_win(self, tmp_path):
        cp = load_config(write(tmp_path, "[model]\nrope_wavelengths = 3, 4\n"))
        spec = model_spec_from_config(cp, default_wavelengths=(1.0, 2.0))
        assert spec.attention.rope_wavelengths == (3.0, 4.0)

    def test_trunk_only(self, tmp_path):
        cp = load_config(write(tmp_path, "[model]\nbranches =\n"))
        assert model_spec_from_config(cp).branches == ()

    def test_orphan_branch_section(self, tmp_path):
        text = "[model]\nbranches = mu\n\n[branch.nu]\nwidth = 3\n"
        with pytest.raises(SchemaError, match=r"\[branch.nu\]"):
            model_spec_from_config(load_config(write(tmp_path, text)))

    def test_invalid_model_value_is_schema_error(self, tmp_path):
        cp = load_config(write(tmp_path, "[model]\nvariant = perceiver\n"))
        with pytest.raises(SchemaError, match=r"\[model\]"):
            model_spec_from_config(cp)

    def test_branch_constraint_cited(self, tmp_path):
        text = "[model]\nbranches = mu\n\n[branch.mu]\nkind = spline\n"
        with pytest.raises(SchemaError, match=r"\[branch.mu\]"):
            model_spec_from_config(load_config(write(tmp_path, text)))
