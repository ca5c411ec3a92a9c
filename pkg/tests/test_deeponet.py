"""Branch nets, product fusion, and the combined operator model."""

import numpy as np
import pytest

import geotrunk.engine as eg
from geotrunk.deeponet import BranchNet, OperatorModel, build_model, combine, trunk_only
from geotrunk.engine import Tensor
from geotrunk.errors import ConfigurationError, DimensionError, ValidationError
from geotrunk.trunks import BranchSpec

from test_trunks import mlp_np, random_batch, random_cloud, reference_forward, tiny_spec
from test_engine import check_against_fd


class TestCombine:
    def test_hand_case_single_branch(self):
        trunk = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        branch = Tensor(np.array([[10.0, 100.0]]))
        out = combine(trunk, [branch]).data
        assert np.array_equal(out, np.array([210.0, 430.0]))

    def test_hand_case_two_branches_multiply(self):
        trunk = Tensor(np.array([[1.0, 1.0]]))
        b1 = Tensor(np.array([[2.0, 3.0]]))
        b2 = Tensor(np.array([[5.0, 7.0]]))
        out = combine(trunk, [b1, b2]).data
        assert np.array_equal(out, np.array([10.0 + 21.0]))

    def test_no_bias_zero_branch_gives_zero(self):
        rng = np.random.default_rng(0)
        trunk = Tensor(rng.normal(size=(6, 4)))
        out = combine(trunk, [Tensor(np.zeros((1, 4)))]).data
        assert np.array_equal(out, np.zeros(6))

    def test_linear_in_trunk(self):
        rng = np.random.default_rng(1)
        t1, t2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        c = Tensor(rng.normal(size=(1, 3)))
        lhs = combine(Tensor(2.0 * t1 + 0.5 * t2), [c]).data
        rhs = 2.0 * combine(Tensor(t1), [c]).data + 0.5 * combine(Tensor(t2), [c]).data
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_multilinear_in_each_branch(self):
        rng = np.random.default_rng(2)
        trunk = Tensor(rng.normal(size=(4, 3)))
        b1, b2 = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        other = Tensor(rng.normal(size=(1, 3)))
        lhs = combine(trunk, [Tensor(3.0 * b1 - b2), other]).data
        rhs = 3.0 * combine(trunk, [Tensor(b1), other]).data - combine(trunk, [Tensor(b2), other]).data
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_needs_a_branch(self):
        with pytest.raises(ConfigurationError):
            combine(Tensor(np.ones((2, 2))), [])

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            combine(Tensor(np.ones((2, 3))), [Tensor(np.ones((1, 2)))])

    def test_trunk_only_passthrough_matches_ones_branch(self):
        rng = np.random.default_rng(3)
        f = Tensor(rng.normal(size=(8, 1)))
        assert np.array_equal(trunk_only(f).data[:, 0], combine(f, [Tensor(np.ones((1, 1)))]).data)

    def test_gradients(self):
        rng = np.random.default_rng(4)
        trunk = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b1 = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        b2 = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
        check_against_fd(lambda: eg.sum_all(combine(trunk, [b1, b2])), [trunk, b1, b2])


class TestBranchNet:
    def test_matches_plain_mlp(self):
        spec = BranchSpec(name="mu", width=2, hidden=(8, 8))
        net = BranchNet(np.random.default_rng(5), spec, out_dim=4)
        vals = np.array([0.3, -1.2])
        out = net(vals).data
        want = mlp_np(net.mlp.layers, vals.reshape(1, 2))
        assert out.shape == (1, 4)
        assert np.abs(out - want).max() < 1e-14

    def test_width_checked(self):
        net = BranchNet(np.random.default_rng(6), BranchSpec(width=3), out_dim=2)
        with pytest.raises(ValidationError):
            net(np.ones(2))

    def test_non_finite_rejected(self):
        net = BranchNet(np.random.default_rng(7), BranchSpec(width=2), out_dim=2)
        with pytest.raises(ValidationError):
            net(np.array([1.0, np.inf]))

    def test_kind_validated(self):
        with pytest.raises(ConfigurationError):
            BranchSpec(kind="image")
        BranchSpec(kind="function-samples", width=32)


class TestOperatorModel:
    def small(self, branches, variant="cross"):
        spec = tiny_spec(variant, branches=branches)
        return build_model(spec, seed=9)

    def test_matches_reference(self):
        rng = np.random.default_rng(10)
        model = self.small((BranchSpec(name="mu", width=2, hidden=(8,)),))
        batch = random_batch(rng, 5)
        geom = random_cloud(rng, 6)
        mu = np.array([1.5, -0.3])
        got = model.forward(batch, geom, [mu]).data
        f = reference_forward(model.trunk, batch, geom)
        c = mlp_np(model.branches[0].mlp.layers, mu.reshape(1, 2))
        want = (f * c).sum(axis=1)
        assert got.shape == (5,)
        assert np.abs(got - want).max() < 1e-10

    def test_two_branches_match_reference(self):
        rng = np.random.default_rng(11)
        model = self.small(
            (BranchSpec(name="mu", width=2, hidden=(8,)),
             BranchSpec(name="load", width=3, hidden=(8,))),
            variant="self",
        )
        batch = random_batch(rng, 4)
        mu, load = np.array([0.5, 0.5]), np.array([1.0, -1.0, 2.0])
        got = model.forward(batch, None, [mu, load]).data
        f = reference_forward(model.trunk, batch)
        c1 = mlp_np(model.branches[0].mlp.layers, mu.reshape(1, -1))
        c2 = mlp_np(model.branches[1].mlp.layers, load.reshape(1, -1))
        want = (f * c1 * c2).sum(axis=1)
        assert np.abs(got - want).max() < 1e-10

    def test_trunk_only_when_no_branches(self):
        rng = np.random.default_rng(12)
        model = self.small((), variant="self")
        batch = random_batch(rng, 6)
        out = model.forward(batch).data
        assert out.shape == (6, 3)
        assert np.array_equal(out, model.trunk.forward(batch).data)

    def test_branch_value_count_checked(self):
        rng = np.random.default_rng(13)
        model = self.small((BranchSpec(name="mu", width=2),))
        batch = random_batch(rng, 3)
        geom = random_cloud(rng, 4)
        with pytest.raises(ValidationError):
            model.forward(batch, geom)
        with pytest.raises(ValidationError):
            model.forward(batch, geom, [np.ones(2), np.ones(2)])

    def test_parameters_include_branches(self):
        model = self.small((BranchSpec(name="mu", width=2, hidden=(8,)),))
        names = model.parameters()
        assert "branch.mu.0.w" in names
        assert "head.w" in names

    def test_build_is_deterministic(self):
        spec = tiny_spec("cross", branches=(BranchSpec(width=2, hidden=(8,)),))
        a = build_model(spec, seed=4).parameters()
        b = build_model(spec, seed=4).parameters()
        c = build_model(spec, seed=5).parameters()
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        assert any(not np.array_equal(a[k].data, c[k].data) for k in a)

    def test_end_to_end_gradients(self):
        # Seeds picked so no relu pre-activation sits within the FD step
        # of its kink (a dead query row puts one exactly at zero, where
        # central differences measure 1/2 instead of the derivative).
        rng = np.random.default_rng(15)
        spec = tiny_spec("hybrid", branches=(BranchSpec(width=2, hidden=(8,)),))
        model = build_model(spec, seed=16)
        batch = random_batch(rng, 4)
        geom = random_cloud(rng, 5)
        mu = np.array([1.0, 0.25])

        def loss():
            return eg.sum_all(model.forward(batch, geom, [mu]))

        check_against_fd(loss, list(model.parameters().values()), tol=1e-4, h=1e-5)
