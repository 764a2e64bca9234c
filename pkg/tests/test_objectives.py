import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpugnn import autodiff as ad
from cpugnn.graph import Graph, build_operators
from cpugnn.models import ModelSpec, UGNN, appnp_propagate
from cpugnn.objectives import (elastic_objective, gsd_objective, lower_objective, median_bandwidth,
                               minmax_normalize, mmd, theorem_check, upper_loss)

from conftest import graphs, random_graph


class TestGSD:
    def test_h_equals_x(self, rng):
        ops = build_operators(random_graph(rng, 15, 0.3))
        X = rng.standard_normal((15, 3))
        r = gsd_objective(X, X, ops, 0.3)
        assert r.fidelity == 0.0
        assert np.isclose(r.value, 0.7 * np.trace(X.T @ ops.L.to_dense() @ X))

    def test_single_self_looped_node(self):
        ops = build_operators(Graph(1, np.zeros((0, 2))))
        H, X = np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])
        assert gsd_objective(H, X, ops, 0.4).value == pytest.approx(0.4 * 5)

    @given(graphs(min_nodes=1), st.floats(0.01, 1.0), st.booleans(), st.integers(0, 2**31))
    def test_trace_equals_decomposition(self, g, alpha, loops, seed):
        rng = np.random.default_rng(seed)
        ops = build_operators(g, loops)
        H, X = rng.standard_normal((2, g.n_nodes, 3))
        r = gsd_objective(H, X, ops, alpha)
        assert abs(r.value - (r.fidelity + r.smoothing)) < 1e-9 * max(1.0, abs(r.value))

    def test_errors(self, rng):
        ops = build_operators(random_graph(rng, 5, 0.5))
        with pytest.raises(ValueError, match="shape"):
            gsd_objective(np.ones((5, 2)), np.ones((5, 3)), ops, 0.5)
        with pytest.raises(ValueError, match="alpha"):
            gsd_objective(np.ones((5, 2)), np.ones((5, 2)), ops, 0.0)

    def test_appnp_step_descends(self, rng):
        # one APPNP step is a gradient step with step size 1/2 on the GSD objective
        ops = build_operators(random_graph(rng, 25, 0.2))
        X = rng.standard_normal((25, 2))
        trace = []
        appnp_propagate(X, ops.A, 0.2, 30, trace=trace)
        vals = [gsd_objective(H, X, ops, 0.2).value for H in trace]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


class TestElasticObjective:
    def test_decomposition_and_penalties(self, rng):
        ops = build_operators(random_graph(rng, 15, 0.3))
        H, X = rng.standard_normal((2, 15, 3))
        for pen in ("l21", "l1"):
            r = elastic_objective(H, X, ops, 3.0, 2.0, pen)
            assert np.isclose(r.value, r.fidelity + r.smoothing)
        DH = ops.incidence.to_dense() @ H
        l21 = elastic_objective(H, X, ops, 0.0, 1.0, "l21").value - 0.5 * np.sum((H - X) ** 2)
        l1 = elastic_objective(H, X, ops, 0.0, 1.0, "l1").value - 0.5 * np.sum((H - X) ** 2)
        assert np.isclose(l21, np.linalg.norm(DH, axis=1).sum())
        assert np.isclose(l1, np.abs(DH).sum())

    def test_unknown_penalty(self, rng):
        ops = build_operators(random_graph(rng, 5, 0.5))
        with pytest.raises(ValueError):
            elastic_objective(np.ones((5, 1)), np.ones((5, 1)), ops, 1, 1, "huber")

    def test_dispatch(self, rng):
        ops = build_operators(random_graph(rng, 10, 0.3))
        H, X = rng.standard_normal((2, 10, 2))
        gpr = lower_objective(ModelSpec(variant="GPRGNN", diag_alpha=0.3), H, X, ops)
        assert gpr.value == gsd_objective(H, X, ops, 0.3).value
        el = lower_objective(ModelSpec(variant="Elastic", lambda1=6, lambda2=9), H, X, ops)
        assert el.value == elastic_objective(H, X, ops, 6, 9).value


class TestTheoremCheck:
    @pytest.mark.parametrize("variant", ["APPNP", "GPRGNN", "Elastic"])
    def test_holds_with_rounds(self, rng, variant):
        ops = build_operators(random_graph(rng, 30, 0.15))
        spec = ModelSpec(variant=variant, K=5, alpha=0.2, diag_alpha=0.2, hidden=[8])
        rep = theorem_check(UGNN(spec, 4, 3, seed=1), ops, rng.standard_normal((30, 4)), rounds=4,
                            trajectory=True)
        assert rep.holds and rep.f_cp <= rep.f_transfer + 1e-10
        assert len(rep.round_values) == 5
        assert rep.flagged == (variant == "GPRGNN")
        if variant != "GPRGNN":
            assert len(rep.trajectory_transfer) == 6

    def test_alpha_one_gives_zero(self, rng):
        ops = build_operators(random_graph(rng, 10, 0.3))
        rep = theorem_check(UGNN(ModelSpec(alpha=1.0, hidden=[]), 3, 3), ops, rng.standard_normal((10, 3)))
        assert rep.f_transfer == 0.0 and rep.f_cp == 0.0


class TestMMD:
    def test_known_value(self):
        v = float(mmd(np.array([[0.0]]), np.array([[1.0]]), bandwidth=1.0))
        assert np.isclose(v, 2 - 2 * np.exp(-1))

    def test_identical_is_zero(self, rng):
        S = rng.standard_normal((30, 4))
        assert abs(float(mmd(S, S.copy()))) < 1e-15

    @given(st.integers(0, 2**31), st.floats(0.0, 3.0))
    def test_nonnegative_and_symmetric(self, seed, shift):
        rng = np.random.default_rng(seed)
        S, T = rng.standard_normal((12, 3)), rng.standard_normal((9, 3)) + shift
        a, b = float(mmd(S, T)), float(mmd(T, S))
        assert a >= -1e-12 and np.isclose(a, b, atol=1e-12)

    def test_grows_with_shift(self, rng):
        S, T = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
        vals = [float(mmd(S, T + d, bandwidth=2.0)) for d in (0.0, 0.5, 1.0, 2.0)]
        assert vals == sorted(vals)

    def test_median_bandwidth(self):
        P = np.array([[0.0], [1.0], [3.0]])
        assert median_bandwidth(P) == 4.0  # squared distances 1, 9, 4

    def test_subsampling_deterministic(self, rng):
        S, T = rng.standard_normal((40, 2)), rng.standard_normal((30, 2)) + 1
        a = float(mmd(S, T, max_rows=10, rng_seed=5))
        assert a == float(mmd(S, T, max_rows=10, rng_seed=5))
        assert a != float(mmd(S, T))

    def test_errors(self):
        with pytest.raises(ValueError):
            mmd(np.zeros((0, 2)), np.ones((3, 2)))
        with pytest.raises(ValueError):
            mmd(np.ones((3, 2)), np.ones((3, 3)))

    def test_upper_loss_reduces_to_ce(self, rng):
        Z, y = rng.standard_normal((6, 3)), rng.integers(0, 3, 6)
        ce = float(ad.masked_softmax_cross_entropy(Z, y, np.ones(6, bool)))
        assert float(upper_loss(Z, y, np.ones(6, bool), Z, Z + 1, 0.0)) == ce
        with pytest.raises(ValueError):
            upper_loss(Z, y, np.ones(6, bool), xi=-1.0)


class TestNormalize:
    def test_endpoints_exact(self):
        out = minmax_normalize([0.1308, 0.7687, 0.3, 0.2])
        assert min(out) == 0.0 and max(out) == 1.0

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=10).filter(lambda v: max(v) > min(v)))
    def test_range_and_order(self, vals):
        out = minmax_normalize(vals)
        assert all(0.0 <= o <= 1.0 for o in out)
        order = np.argsort(vals, kind="stable")
        assert np.all(np.diff(np.asarray(out)[order]) >= 0)
        assert out[int(np.argmax(vals))] == 1.0 and out[int(np.argmin(vals))] == 0.0

    def test_constant_rejected(self):
        with pytest.raises(ValueError):
            minmax_normalize([2.0, 2.0])
