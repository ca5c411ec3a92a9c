"""Trunk wiring tests against an independent numpy reference forward."""

import numpy as np
import pytest

from geotrunk import attention as at
from geotrunk.attention import KERNELS, AttentionConfig
from geotrunk.errors import ConfigurationError, ValidationError
from geotrunk.trunks import (
    VARIANTS,
    BranchSpec,
    GeometryCloud,
    ModelSpec,
    QueryBatch,
    TrunkModel,
    build_trunk,
)

from test_attention import fourier_oracle, galerkin_oracle, standard_oracle
from test_engine import check_against_fd


# ------------------------------------------------------- reference forward


def rope_np(x, coords, wavelengths):
    """Per-axis rotary map, written against the layout contract."""
    s = len(wavelengths)
    w = x.shape[1] // s
    half = w // 2
    out = np.empty_like(x, dtype=np.float64)
    even = 2 * np.arange(half)
    for a in range(s):
        base = a * w
        l = np.arange(1, half + 1, dtype=np.float64)
        theta = 10000.0 ** (-2.0 * (l - 1.0) / w)
        ang = wavelengths[a] * coords[:, a : a + 1] * theta[None, :]
        c, si = np.cos(ang), np.sin(ang)
        x1 = x[:, base + even]
        x2 = x[:, base + even + 1]
        out[:, base + even] = x1 * c - x2 * si
        out[:, base + even + 1] = x1 * si + x2 * c
    return out


def mlp_np(layers, x):
    for w, b, act in layers:
        x = x @ w.data + b.data
        if act == "relu":
            x = np.maximum(x, 0.0)
        elif act == "tanh":
            x = np.tanh(x)
    return x


def attention_np(layer, q_in, kv_in, coords_q, coords_k, mask):
    cfg = layer.cfg
    qp = q_in @ layer.wq.data + layer.bq.data
    kp = kv_in @ layer.wk.data + layer.bk.data
    vp = kv_in @ layer.wv.data + layer.bv.data
    dh = cfg.head_dim
    waves = cfg.rope_wavelengths
    heads = []
    for h in range(cfg.heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh = rope_np(qp[:, sl], coords_q, waves)
        kh = rope_np(kp[:, sl], coords_k, waves)
        vh = vp[:, sl]
        norms = {k: t.data for k, t in layer.head_norms[h].items()}
        if cfg.kernel == "standard":
            oh = standard_oracle(qh, kh, vh, mask)
        elif cfg.kernel == "fourier":
            oh = fourier_oracle(qh, kh, vh, mask, eps=cfg.norm_eps, **norms)
        else:
            oh = galerkin_oracle(qh, kh, vh, mask, eps=cfg.norm_eps, **norms)
        heads.append(oh)
    merged = np.concatenate(heads, axis=1)
    return merged @ layer.wo.data + layer.bo.data


def reference_forward(model, batch, geom=None):
    spec = model.spec
    feats = [batch.coords]
    if spec.use_query_sdf:
        feats.append(batch.sdf[:, None])
    if spec.extra_features:
        feats.append(batch.extra)
    rep = mlp_np(model.query_lift.layers, np.concatenate(feats, axis=1))

    grep = None
    if geom is not None:
        gfeats = [geom.coords]
        if spec.use_geometry_sdf:
            gfeats.append(geom.sdf[:, None])
        grep = mlp_np(model.geom_lift.layers, np.concatenate(gfeats, axis=1))

    for role, layer in model.attn_layers:
        if role == "cross":
            rep = attention_np(layer, rep, grep, batch.coords, geom.coords, geom.mask)
        else:
            rep = attention_np(layer, rep, rep, batch.coords, batch.coords, batch.mask)

    rep = rep + mlp_np(model.out_mlp.layers, rep)
    return np.tanh(rep @ model.head_w.data + model.head_b.data)


# ------------------------------------------------------------- test helpers


def tiny_spec(variant, kernel="galerkin", **kw):
    cfg = at.AttentionConfig(
        embed_dim=8, heads=2, kernel=kernel, spatial_dim=2, rope_wavelengths=(1.3, 0.7)
    )
    args = dict(
        variant=variant,
        attention=cfg,
        layers=2,
        input_mlp_hidden=(8, 8),
        output_mlp_hidden=(8,),
        trunk_out=3,
    )
    args.update(kw)
    return ModelSpec(**args)


def random_batch(rng, n, mask=None, extra=0):
    return QueryBatch(
        coords=rng.uniform(-1.0, 1.0, size=(n, 2)),
        sdf=rng.uniform(0.0, 0.5, size=n),
        extra=rng.normal(size=(n, extra)) if extra else None,
        mask=mask,
    )


def random_cloud(rng, m, mask=None):
    return GeometryCloud(
        coords=rng.uniform(-1.0, 1.0, size=(m, 2)),
        sdf=rng.uniform(-0.5, 0.5, size=m),
        mask=mask,
    )


def needs_geom(variant):
    return variant in ("cross", "hybrid")


# ------------------------------------------------------------------- tests


class TestReferenceAgreement:
    def test_all_variants_and_kernels_match_reference(self):
        rng = np.random.default_rng(7)
        cases = [("mlp", "galerkin")] + [(v, k) for v in ("self", "cross", "hybrid") for k in KERNELS]
        for variant, kernel in cases:
            model = TrunkModel(tiny_spec(variant, kernel), np.random.default_rng(11))
            batch = random_batch(rng, 5)
            geom = random_cloud(rng, 6) if needs_geom(variant) else None
            got = model.forward(batch, geom).data
            want = reference_forward(model, batch, geom)
            assert np.abs(got - want).max() < 1e-10, (variant, kernel)

    def test_masked_sets_match_reference(self):
        rng = np.random.default_rng(8)
        qmask = np.array([False, True, False, False, True, False])
        gmask = np.array([False, False, True, False, True, False, False])
        for variant in ("self", "cross", "hybrid"):
            for kernel in KERNELS:
                model = TrunkModel(tiny_spec(variant, kernel), np.random.default_rng(12))
                batch = random_batch(rng, 6, mask=qmask)
                geom = random_cloud(rng, 7, mask=gmask) if needs_geom(variant) else None
                got = model.forward(batch, geom).data
                want = reference_forward(model, batch, geom)
                live = ~qmask
                assert np.abs(got[live] - want[live]).max() < 1e-10, (variant, kernel)

    def test_singleton_collapse(self):
        # One query point and one geometry point: attention is forced to
        # return its lone (normalized) value row, so the reference with
        # singleton oracles must agree to round-off.
        rng = np.random.default_rng(9)
        for variant in ("self", "cross", "hybrid"):
            for kernel in KERNELS:
                model = TrunkModel(tiny_spec(variant, kernel), np.random.default_rng(13))
                batch = random_batch(rng, 1)
                geom = random_cloud(rng, 1) if needs_geom(variant) else None
                got = model.forward(batch, geom).data
                want = reference_forward(model, batch, geom)
                assert got.shape == (1, 3)
                assert np.abs(got - want).max() < 1e-10, (variant, kernel)

    def test_extra_feature_channels(self):
        rng = np.random.default_rng(10)
        model = TrunkModel(tiny_spec("cross", extra_features=2), np.random.default_rng(14))
        batch = random_batch(rng, 4, extra=2)
        geom = random_cloud(rng, 5)
        got = model.forward(batch, geom).data
        want = reference_forward(model, batch, geom)
        assert np.abs(got - want).max() < 1e-10


class TestShapes:
    def test_output_shape_and_dtype(self):
        rng = np.random.default_rng(20)
        for variant in VARIANTS:
            model = TrunkModel(tiny_spec(variant), np.random.default_rng(21))
            batch = random_batch(rng, 7)
            geom = random_cloud(rng, 4) if needs_geom(variant) else None
            out = model.forward(batch, geom)
            assert out.data.shape == (7, 3)
            assert out.data.dtype == np.float64

    def test_output_is_tanh_bounded(self):
        rng = np.random.default_rng(22)
        model = TrunkModel(tiny_spec("self"), np.random.default_rng(23))
        out = model.forward(random_batch(rng, 9)).data
        assert np.abs(out).max() < 1.0

    def test_hybrid_is_cross_then_self(self):
        model = build_trunk(tiny_spec("hybrid"))
        assert [role for role, _ in model.attn_layers] == ["cross", "self"]

    def test_mlp_variant_has_no_attention_or_geometry_lift(self):
        model = build_trunk(tiny_spec("mlp"))
        assert model.attn_layers == []
        assert model.geom_lift is None

    def test_layer_count_honored(self):
        model = build_trunk(tiny_spec("cross", layers=3))
        assert [role for role, _ in model.attn_layers] == ["cross"] * 3


class TestConfiguration:
    def test_self_rejects_geometry(self):
        rng = np.random.default_rng(30)
        model = build_trunk(tiny_spec("self"))
        with pytest.raises(ConfigurationError):
            model.forward(random_batch(rng, 3), random_cloud(rng, 3))

    def test_mlp_rejects_geometry(self):
        rng = np.random.default_rng(31)
        model = build_trunk(tiny_spec("mlp"))
        with pytest.raises(ConfigurationError):
            model.forward(random_batch(rng, 3), random_cloud(rng, 3))

    def test_cross_requires_geometry(self):
        rng = np.random.default_rng(32)
        for variant in ("cross", "hybrid"):
            model = build_trunk(tiny_spec(variant))
            with pytest.raises(ConfigurationError):
                model.forward(random_batch(rng, 3))

    def test_hybrid_layer_count_fixed(self):
        with pytest.raises(ConfigurationError):
            tiny_spec("hybrid", layers=3)

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            tiny_spec("transformer")

    def test_missing_query_sdf(self):
        model = build_trunk(tiny_spec("self"))
        batch = QueryBatch(coords=np.zeros((3, 2)))
        with pytest.raises(ValidationError):
            model.forward(batch)

    def test_missing_geometry_sdf(self):
        rng = np.random.default_rng(33)
        model = build_trunk(tiny_spec("cross"))
        geom = GeometryCloud(coords=np.zeros((4, 2)))
        with pytest.raises(ValidationError):
            model.forward(random_batch(rng, 3), geom)

    def test_missing_extra_features(self):
        rng = np.random.default_rng(34)
        model = build_trunk(tiny_spec("self", extra_features=2))
        with pytest.raises(ValidationError):
            model.forward(random_batch(rng, 3))

    def test_wrong_spatial_width(self):
        model = build_trunk(tiny_spec("self"))
        batch = QueryBatch(coords=np.zeros((3, 3)), sdf=np.zeros(3))
        with pytest.raises(ValidationError):
            model.forward(batch)

    def test_non_finite_coords_rejected(self):
        with pytest.raises(ValidationError):
            QueryBatch(coords=np.array([[0.0, np.nan]]))

    def test_mask_shape_checked(self):
        with pytest.raises(ValidationError):
            QueryBatch(coords=np.zeros((3, 2)), mask=np.zeros(4, dtype=bool))


class TestModelSpec:
    def test_dict_round_trip(self):
        spec = tiny_spec(
            "hybrid",
            kernel="fourier",
            branches=(BranchSpec(name="mu", width=2), BranchSpec(name="load", width=5, hidden=(16,))),
        )
        assert ModelSpec.from_dict(spec.to_dict()) == spec

    def test_with_wavelengths(self):
        spec = tiny_spec("cross").with_wavelengths((2.5, 4.0))
        assert spec.attention.rope_wavelengths == (2.5, 4.0)

    def test_duplicate_branch_names_rejected(self):
        from geotrunk.deeponet import OperatorModel

        spec = tiny_spec("self", branches=(BranchSpec(name="a"), BranchSpec(name="a")))
        with pytest.raises(ConfigurationError):
            OperatorModel(spec, np.random.default_rng(0))

    def test_parameter_names(self):
        model = build_trunk(tiny_spec("cross", layers=1))
        names = sorted(model.parameters())
        for expected in ("lift.q.0.w", "lift.g.0.w", "layers.0.wq", "layers.0.head0.k_gain",
                         "out.0.b", "head.w", "head.b"):
            assert expected in names, expected

    def test_parameters_are_distinct_tensors(self):
        model = build_trunk(tiny_spec("hybrid"))
        params = model.parameters()
        assert len({id(t) for t in params.values()}) == len(params)


class TestPadding:
    def pad(self, batch, k, corner):
        n = batch.n
        coords = np.vstack([batch.coords, np.tile(corner, (k, 1))])
        sdf = np.concatenate([batch.sdf, np.zeros(k)])
        mask = np.concatenate([np.zeros(n, dtype=bool), np.ones(k, dtype=bool)])
        return QueryBatch(coords=coords, sdf=sdf, mask=mask)

    def test_query_padding_leaves_real_rows(self):
        rng = np.random.default_rng(40)
        corner = np.array([1.0, 1.0])
        for variant in ("self", "hybrid"):
            for kernel in KERNELS:
                model = TrunkModel(tiny_spec(variant, kernel), np.random.default_rng(41))
                batch = random_batch(rng, 6)
                geom = random_cloud(rng, 5) if needs_geom(variant) else None
                base = model.forward(batch, geom).data
                padded = model.forward(self.pad(batch, 3, corner), geom).data
                assert np.abs(padded[:6] - base).max() < 1e-10, (variant, kernel)

    def test_geometry_padding_leaves_outputs(self):
        rng = np.random.default_rng(42)
        for variant in ("cross", "hybrid"):
            for kernel in KERNELS:
                model = TrunkModel(tiny_spec(variant, kernel), np.random.default_rng(43))
                batch = random_batch(rng, 5)
                geom = random_cloud(rng, 6)
                base = model.forward(batch, geom).data
                k = 4
                padded = GeometryCloud(
                    coords=np.vstack([geom.coords, np.tile([1.0, 1.0], (k, 1))]),
                    sdf=np.concatenate([geom.sdf, np.zeros(k)]),
                    mask=np.concatenate([np.zeros(6, dtype=bool), np.ones(k, dtype=bool)]),
                )
                out = model.forward(batch, padded).data
                assert np.abs(out - base).max() < 1e-10, (variant, kernel)

    def test_pad_row_contents_do_not_matter(self):
        rng = np.random.default_rng(44)
        for kernel in KERNELS:
            model = TrunkModel(tiny_spec("self", kernel), np.random.default_rng(45))
            batch = random_batch(rng, 6)
            a = self.pad(batch, 2, np.array([1.0, 1.0]))
            b = self.pad(batch, 2, np.array([-0.25, 0.75]))
            out_a = model.forward(a).data
            out_b = model.forward(b).data
            assert np.abs(out_a[:6] - out_b[:6]).max() < 1e-10, kernel

    def test_all_false_mask_equals_no_mask(self):
        rng = np.random.default_rng(46)
        model = build_trunk(tiny_spec("self"))
        batch = random_batch(rng, 5)
        masked = QueryBatch(coords=batch.coords, sdf=batch.sdf, mask=np.zeros(5, dtype=bool))
        assert np.abs(model.forward(batch).data - model.forward(masked).data).max() == 0.0


class TestPermutation:
    def test_geometry_permutation_invariance(self):
        rng = np.random.default_rng(50)
        for variant in ("cross", "hybrid"):
            model = TrunkModel(tiny_spec(variant), np.random.default_rng(51))
            batch = random_batch(rng, 5)
            geom = random_cloud(rng, 8)
            base = model.forward(batch, geom).data
            for _ in range(20):
                perm = rng.permutation(8)
                shuffled = GeometryCloud(coords=geom.coords[perm], sdf=geom.sdf[perm])
                out = model.forward(batch, shuffled).data
                assert np.abs(out - base).max() < 1e-10, variant

    def test_query_permutation_equivariance_self(self):
        rng = np.random.default_rng(52)
        model = build_trunk(tiny_spec("self"))
        batch = random_batch(rng, 7)
        base = model.forward(batch).data
        for _ in range(5):
            perm = rng.permutation(7)
            shuffled = QueryBatch(coords=batch.coords[perm], sdf=batch.sdf[perm])
            out = model.forward(shuffled).data
            assert np.abs(out - base[perm]).max() < 1e-10


class TestQueryLocality:
    def test_cross_rows_independent_of_batching(self):
        rng = np.random.default_rng(60)
        for kernel in KERNELS:
            model = TrunkModel(tiny_spec("cross", kernel), np.random.default_rng(61))
            batch = random_batch(rng, 7)
            geom = random_cloud(rng, 6)
            full = model.forward(batch, geom).data
            for i in range(7):
                single = QueryBatch(coords=batch.coords[i : i + 1], sdf=batch.sdf[i : i + 1])
                row = model.forward(single, geom).data
                assert np.abs(row[0] - full[i]).max() < 1e-10, (kernel, i)

    def test_self_and_hybrid_couple_queries(self):
        # Change the last query point; earlier outputs must move.
        rng = np.random.default_rng(62)
        for variant in ("self", "hybrid"):
            model = TrunkModel(tiny_spec(variant), np.random.default_rng(63))
            batch = random_batch(rng, 6)
            geom = random_cloud(rng, 5) if needs_geom(variant) else None
            other_coords = batch.coords.copy()
            other_coords[-1] += 0.5
            other = QueryBatch(coords=other_coords, sdf=batch.sdf)
            a = model.forward(batch, geom).data
            b = model.forward(other, geom).data
            assert np.abs(a[:-1] - b[:-1]).max() > 0.0, variant


class TestSdfToggles:
    def test_query_sdf_off_is_bitwise_invariant(self):
        rng = np.random.default_rng(70)
        model = build_trunk(tiny_spec("cross", use_query_sdf=False))
        coords = rng.uniform(-1, 1, size=(5, 2))
        geom = random_cloud(rng, 6)
        a = QueryBatch(coords=coords, sdf=rng.uniform(size=5))
        b = QueryBatch(coords=coords, sdf=rng.uniform(size=5))
        c = QueryBatch(coords=coords)
        outs = [model.forward(x, geom).data for x in (a, b, c)]
        assert np.array_equal(outs[0], outs[1])
        assert np.array_equal(outs[0], outs[2])

    def test_geometry_sdf_off_is_bitwise_invariant(self):
        rng = np.random.default_rng(71)
        model = build_trunk(tiny_spec("cross", use_geometry_sdf=False))
        batch = random_batch(rng, 4)
        coords = rng.uniform(-1, 1, size=(6, 2))
        a = GeometryCloud(coords=coords, sdf=rng.uniform(size=6))
        b = GeometryCloud(coords=coords, sdf=rng.uniform(size=6))
        assert np.array_equal(model.forward(batch, a).data, model.forward(batch, b).data)

    def test_toggles_shrink_input_width(self):
        assert build_trunk(tiny_spec("self")).query_lift.in_dim == 3
        assert build_trunk(tiny_spec("self", use_query_sdf=False)).query_lift.in_dim == 2
        assert build_trunk(tiny_spec("cross")).geom_lift.in_dim == 3
        assert build_trunk(tiny_spec("cross", use_geometry_sdf=False)).geom_lift.in_dim == 2


class TestGradients:
    def loss_params(self, variant, kernel="galerkin"):
        rng = np.random.default_rng(80)
        model = TrunkModel(tiny_spec(variant, kernel), np.random.default_rng(81))
        batch = random_batch(rng, 5)
        geom = random_cloud(rng, 6) if needs_geom(variant) else None
        import geotrunk.engine as eg

        def loss():
            return eg.sum_all(model.forward(batch, geom))

        return loss, list(model.parameters().values())

    @pytest.mark.parametrize("variant", ["self", "cross", "hybrid", "mlp"])
    def test_fd_gradients_default_kernel(self, variant):
        loss, params = self.loss_params(variant)
        check_against_fd(loss, params, tol=1e-4, h=1e-5)

    @pytest.mark.parametrize("kernel", ["standard", "fourier"])
    def test_fd_gradients_other_kernels(self, kernel):
        loss, params = self.loss_params("cross", kernel)
        check_against_fd(loss, params, tol=1e-4, h=1e-5)
