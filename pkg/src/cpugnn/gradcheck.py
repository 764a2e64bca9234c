"""Finite-difference verification of every tape primitive and of the three full
training pipelines (with cascaded propagation and the alignment term).

Inputs are drawn away from kinks: relu inputs are bounded away from zero and
clip inputs away from the threshold, so central differences are valid.
"""
from __future__ import annotations

from collections.abc import Callable

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Parameter
from .graph import Graph, SparseMatrixCSR, build_operators
from .models import ModelSpec, UGNN
from .objectives import median_bandwidth, mmd, upper_loss

DEFAULT_TOL = 1e-5
DEFAULT_H = 1e-5


def _scalarize(out, R):
    # fixed random projection keeps every output entry in the check
    return ad.total(ad.matmul(out, R))


def _away_from_zero(rng, shape, lo=0.1):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.0, size=shape)


def _rows_away_from(rng, n, d, t):
    Z = rng.standard_normal((n, d))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    radii = np.where(np.arange(n) % 2 == 0, rng.uniform(0.1, 0.5, n) * t, rng.uniform(2.0, 3.0, n) * t)
    return Z * radii[:, None]


def _bad_relu(x):
    # deliberately wrong backward rule (ignores the mask), for fault injection
    X = ad.value(x)
    return x.tape.record(np.maximum(X, 0.0), (x,), lambda g: (g,))


def _primitive_cases(rng) -> dict[str, tuple[Callable, list[Parameter]]]:
    cases = {}

    A, B = Parameter(rng.standard_normal((5, 4)), "A"), Parameter(rng.standard_normal((4, 3)), "B")
    R3 = rng.standard_normal((3, 2))
    cases["matmul"] = (lambda t: _scalarize(ad.matmul(t.watch(A), t.watch(B)), R3), [A, B])

    S = SparseMatrixCSR.from_scipy(sp.random(6, 5, density=0.4, random_state=1, format="csr"))
    H = Parameter(rng.standard_normal((5, 3)), "H")
    cases["spmm"] = (lambda t: _scalarize(ad.spmm_diff(S, t.watch(H)), R3), [H])

    x, y = Parameter(rng.standard_normal((4, 3)), "x"), Parameter(rng.standard_normal((4, 3)), "y")
    cases["add_scaled"] = (lambda t: _scalarize(ad.add_scaled(t.watch(x), t.watch(y), 0.3, -1.7), R3),
                           [x, y])
    cases["scale"] = (lambda t: _scalarize(ad.scale(t.watch(x), 2.5), R3), [x])

    b = Parameter(rng.standard_normal(3), "b")
    cases["add_bias"] = (lambda t: _scalarize(ad.add_bias(t.watch(x), t.watch(b)), R3), [x, b])

    gamma = Parameter(rng.standard_normal(4), "gamma")
    cases["coef_scale"] = (lambda t: _scalarize(ad.coef_scale(t.watch(x), t.watch(gamma), 2), R3),
                           [x, gamma])

    xr = Parameter(_away_from_zero(rng, (4, 3)), "x")
    cases["relu"] = (lambda t: _scalarize(ad.relu(t.watch(xr)), R3), [xr])
    cases["dropout"] = (lambda t: _scalarize(ad.dropout(t.watch(x), 0.4, 7, True), R3), [x])

    z = Parameter(_rows_away_from(rng, 6, 3, 1.5), "z")
    R6 = rng.standard_normal((3, 2))
    cases["row_l2_clip"] = (lambda t: _scalarize(ad.row_l2_clip(t.watch(z), 1.5), R6), [z])
    ze = Parameter(np.where(rng.random((6, 3)) < 0.5, 1.0, 3.0) * _away_from_zero(rng, (6, 3), 0.3), "z")
    cases["entry_clip"] = (lambda t: _scalarize(ad.entry_clip(t.watch(ze), 1.5), R6), [ze])

    cases["total"] = (lambda t: ad.total(t.watch(x)), [x])

    logits = Parameter(rng.standard_normal((6, 4)), "logits")
    labels = rng.integers(0, 4, 6)
    mask = np.array([True, False, True, True, False, True])
    cases["softmax_cross_entropy"] = (
        lambda t: ad.masked_softmax_cross_entropy(t.watch(logits), labels, mask), [logits])

    s_emb, t_emb = Parameter(rng.standard_normal((7, 3)), "source"), Parameter(rng.standard_normal((5, 3)) + 0.5, "target")
    h = median_bandwidth(np.vstack([s_emb.value, t_emb.value]))
    cases["mmd"] = (lambda t: mmd(t.watch(s_emb), t.watch(t_emb), bandwidth=h), [s_emb, t_emb])
    return cases


def _random_graph(rng, n, p):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return Graph(n, np.c_[iu[keep], ju[keep]])


def _pipeline_cases(rng) -> dict[str, tuple[Callable, list[Parameter]]]:
    cases = {}
    n_s, n_t, M, C = 12, 10, 5, 3
    ops_s = build_operators(_random_graph(rng, n_s, 0.3))
    ops_t = build_operators(_random_graph(rng, n_t, 0.3))
    Xs = rng.standard_normal((n_s, M))
    Xt = rng.standard_normal((n_t, M)) + 0.5
    ys = rng.integers(0, C, n_s)
    train = np.arange(n_s) % 3 != 0
    for variant in ("APPNP", "GPRGNN", "Elastic"):
        spec = ModelSpec(variant=variant, K=4, alpha=0.2, lambda1=1.0, lambda2=0.05, cp_rounds=1,
                         hidden=[8], dropout=0.3, post="linear_then_softmax")
        model = UGNN(spec, M, C, seed=int(rng.integers(1000)))
        # bandwidth fixed at its starting value: it is a constant of the backward pass
        h = median_bandwidth(np.vstack([model.extract_embedding(ops_s, Xs),
                                        model.extract_embedding(ops_t, Xt)]))

        def build(t, model=model, h=h):
            logits, emb_s = model.forward(ops_s, Xs, True, t, dropout_seed=3)
            _, emb_t = model.forward(ops_t, Xt, True, t, dropout_seed=3)
            return upper_loss(logits, ys, train, emb_s, emb_t, 1.0, bandwidth=h)
        cases[f"pipeline_{variant}_cp"] = (build, model.parameters())
    return cases


def gradient_suite(tol: float = DEFAULT_TOL, h: float = DEFAULT_H, seed: int = 0,
                   inject_wrong_backward: bool = False) -> list[dict]:
    """One row per (check, parameter) with its relative error and verdict."""
    rng = np.random.default_rng(seed)
    cases = {**_primitive_cases(rng), **_pipeline_cases(rng)}
    if inject_wrong_backward:
        xr = Parameter(_away_from_zero(rng, (4, 3)), "x")
        R = rng.standard_normal((3, 2))
        cases["injected_wrong_relu"] = (lambda t: _scalarize(_bad_relu(t.watch(xr)), R), [xr])
    rows = []
    for name, (build, params) in cases.items():
        for pname, err in ad.check_gradients(build, params, h).items():
            rows.append({"check": name, "param": pname, "rel_error": err, "tol": tol,
                         "passed": bool(err < tol)})
    return rows
