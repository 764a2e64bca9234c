import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpugnn import autodiff as ad
from cpugnn.autodiff import Tape
from cpugnn.graph import SparseMatrixCSR, build_operators
from cpugnn.models import (ModelSpec, UGNN, appnp_cp, appnp_propagate, cascade, elastic_cp,
                           elastic_propagate, gpr_cp, gpr_propagate, ppr_coefficients)

from conftest import graphs, random_graph


@pytest.fixture
def ops(rng):
    return build_operators(random_graph(rng, 20, 0.2))


class TestSpec:
    def test_defaults(self):
        s = ModelSpec()
        assert (s.variant, s.K, s.alpha, s.hidden) == ("APPNP", 8, 0.1, [128])

    @pytest.mark.parametrize("kw", [{"variant": "GCN"}, {"alpha": 0.0}, {"alpha": 1.5}, {"K": -1},
                                    {"penalty": "l2"}, {"post": "mlp"}, {"clip": "lambda3"},
                                    {"step": 1.5}, {"lambda1": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ModelSpec(**kw)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown"):
            ModelSpec.from_dict({"depth": 3})

    def test_round_trip(self):
        s = ModelSpec(variant="Elastic", lambda1=6.0, clip=2.5, hidden=[16, 8])
        assert ModelSpec.from_dict(s.to_dict()) == s

    def test_elastic_derived_steps(self):
        s = ModelSpec(variant="Elastic", lambda1=3.0, lambda2=9.0)
        assert s.elastic_step == 0.25 and s.elastic_dual_step == 2.0 and s.clip_threshold == 9.0
        assert ModelSpec(variant="Elastic", clip="lambda1", lambda1=6.0).clip_threshold == 6.0


class TestPropagation:
    def test_ppr_coefficients_sum_to_one(self):
        for a, K in [(0.1, 8), (0.5, 3), (1.0, 4)]:
            assert np.isclose(ppr_coefficients(a, K).sum(), 1.0)

    def test_alpha_one_and_zero_steps_are_identity(self, ops, rng):
        X = rng.standard_normal((20, 3))
        assert np.array_equal(appnp_propagate(X, ops.A, 1.0, 5), X)
        assert np.array_equal(appnp_propagate(X, ops.A, 0.3, 0), X)

    def test_gpr_with_ppr_coefficients_equals_appnp(self, ops, rng):
        X = rng.standard_normal((20, 3))
        H1 = appnp_propagate(X, ops.A, 0.2, 7)
        H2 = gpr_propagate(X, ops.A, ppr_coefficients(0.2, 7))
        assert np.allclose(H1, H2, atol=1e-12)

    def test_cp_functions_match_cascade(self, ops, rng):
        X = rng.standard_normal((20, 3))
        appnp = lambda H: appnp_propagate(H, ops.A, 0.2, 5)
        assert np.allclose(appnp_cp(X, ops.A, 0.2, 5), cascade(appnp, X, 1), atol=1e-13)
        g = rng.standard_normal(5)
        assert np.allclose(gpr_cp(X, ops.A, g), cascade(lambda H: gpr_propagate(H, ops.A, g), X, 1))
        el = lambda H: elastic_propagate(H, ops.A, ops.incidence, 0.5, 0.25, 2.0, 6)
        assert np.allclose(elastic_cp(X, ops.A, ops.incidence, 0.5, 0.25, 2.0, 6), cascade(el, X, 1))

    def test_cp_needs_depth(self, ops):
        with pytest.raises(ValueError):
            appnp_cp(np.ones((20, 1)), ops.A, 0.1, 0)

    def test_cascade_return_all(self, ops, rng):
        X = rng.standard_normal((20, 2))
        outs = cascade(lambda H: appnp_propagate(H, ops.A, 0.5, 2), X, 3, return_all=True)
        assert len(outs) == 5 and outs[0] is X

    def test_elastic_zero_clip_is_appnp(self, ops, rng):
        # with no edge penalty the dual stays at zero and the update is APPNP with alpha = step
        X = rng.standard_normal((20, 3))
        H = elastic_propagate(X, ops.A, ops.incidence, 0.0, 0.25, 2.0, 10)
        assert np.allclose(H, appnp_propagate(X, ops.A, 0.25, 10), atol=1e-13)

    @given(graphs(min_nodes=2), st.floats(0.05, 1.0), st.integers(0, 10), st.integers(0, 2**31))
    def test_appnp_linear(self, g, alpha, K, seed):
        rng = np.random.default_rng(seed)
        A = build_operators(g).A
        X, Y = rng.standard_normal((2, g.n_nodes, 2))
        lhs = appnp_propagate(2 * X - Y, A, alpha, K)
        rhs = 2 * appnp_propagate(X, A, alpha, K) - appnp_propagate(Y, A, alpha, K)
        assert np.allclose(lhs, rhs, atol=1e-10)

    @given(graphs(min_nodes=2), st.floats(0.05, 1.0), st.integers(0, 2**31))
    def test_appnp_preserves_stationary_direction(self, g, alpha, seed):
        # D^{1/2} 1 is an eigenvector of A with eigenvalue 1, hence a fixed point
        ops = build_operators(g)
        v = np.sqrt(ops.degrees)[:, None]
        assert np.allclose(appnp_propagate(v, ops.A, alpha, 6), v, atol=1e-12)

    def test_tape_and_detached_agree(self, ops, rng):
        X = ad.Parameter(rng.standard_normal((20, 3)))
        t = Tape()
        node = elastic_propagate(t.watch(X), ops.A, ops.incidence, 0.3, 0.25, 2.0, 5)
        assert np.array_equal(node.value, elastic_propagate(X.value, ops.A, ops.incidence, 0.3, 0.25, 2.0, 5))


class TestUGNN:
    @pytest.mark.parametrize("variant", ["APPNP", "GPRGNN", "Elastic"])
    def test_forward_shapes(self, ops, rng, variant):
        m = UGNN(ModelSpec(variant=variant, K=3, hidden=[8]), 5, 4, seed=1)
        logits, emb = m.forward(ops, rng.standard_normal((20, 5)))
        assert logits.shape == emb.shape == (20, 4)

    def test_sparse_and_dense_features_agree(self, ops, rng):
        X = rng.standard_normal((20, 5)) * (rng.random((20, 5)) < 0.5)
        m = UGNN(ModelSpec(K=3, hidden=[8]), 5, 3)
        assert np.allclose(m.predict_logits(ops, X), m.predict_logits(ops, SparseMatrixCSR.from_dense(X)))

    def test_feature_width_checked(self, ops):
        with pytest.raises(ValueError, match="feature width"):
            UGNN(ModelSpec(), 5, 3).predict_logits(ops, np.ones((20, 4)))

    def test_parameters(self):
        assert [p.name for p in UGNN(ModelSpec(variant="GPRGNN", hidden=[4]), 3, 2).parameters()] == \
            ["W0", "b0", "W1", "b1", "gamma"]
        m = UGNN(ModelSpec(post="linear_then_softmax", freeze_pos=True, hidden=[4]), 3, 2)
        assert "W_pos" not in [p.name for p in m.parameters()]
        assert "W_pos" in [p.name for p in m.all_parameters()]

    def test_linear_post_starts_as_identity(self, ops, rng):
        X = rng.standard_normal((20, 5))
        a = UGNN(ModelSpec(hidden=[8]), 5, 3, seed=4)
        b = UGNN(ModelSpec(hidden=[8], post="linear_then_softmax"), 5, 3, seed=4)
        assert np.array_equal(a.predict_logits(ops, X), b.predict_logits(ops, X))

    def test_cp_rounds_changes_output(self, ops, rng):
        X = rng.standard_normal((20, 5))
        a = UGNN(ModelSpec(K=3, hidden=[8]), 5, 3, seed=4)
        b = UGNN(ModelSpec(K=3, hidden=[8], cp_rounds=1), 5, 3, seed=4)
        Xp = a.preprocess(X)
        assert np.allclose(b.extract_embedding(ops, X), appnp_cp(Xp, ops.A, 0.1, 3))

    def test_save_load(self, ops, rng, tmp_path):
        m = UGNN(ModelSpec(variant="GPRGNN", K=3, hidden=[8], post="linear_then_softmax"), 5, 3, seed=2)
        m.gamma.value += 0.1
        m.save(tmp_path / "m.json")
        m2 = UGNN.load(tmp_path / "m.json")
        X = rng.standard_normal((20, 5))
        assert np.array_equal(m.predict_logits(ops, X), m2.predict_logits(ops, X))

    def test_dropout_only_in_training(self, ops, rng):
        X = rng.standard_normal((20, 5))
        m = UGNN(ModelSpec(K=2, hidden=[16], dropout=0.5), 5, 3)
        ev1, _ = m.forward(ops, X)
        ev2, _ = m.forward(ops, X)
        tr, _ = m.forward(ops, X, training=True, dropout_seed=1)
        assert np.array_equal(ev1, ev2) and not np.allclose(ev1, tr)
