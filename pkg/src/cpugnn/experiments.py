"""Experiment protocols shared by the command line and the demos: ablation arms,
xi sweeps, cross-domain objective tables and randomized cascade checks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import DomainDataset, ShiftConfig, generate_shifted_pair
from .graph import Graph, build_operators
from .models import ModelSpec, UGNN
from .objectives import THEOREM_SLACK, lower_objective, minmax_normalize, theorem_check
from .trainer import SeedSummary, TrainConfig, run_seeds, train_source

# Desk-scale shifted pair: the shift is a 2.0 feature-mean offset plus a doubled
# inter-block edge probability in the target.
DESK_SHIFT = {"noise": 3.0, "mean_scale": 2.0, "p_in": 0.08, "p_out": 0.002,
              "offset": 2.0, "inter_factor": 2.0}
DESK_MODEL = {"variant": "APPNP", "K": 8, "alpha": 0.5, "hidden": [64]}
DESK_TRAIN = {"epochs": 200}

ARMS = ("vanilla", "+MMD", "+CP")


def desk_pair(seed: int = 0, **overrides) -> tuple[DomainDataset, DomainDataset]:
    return generate_shifted_pair(ShiftConfig(**{**DESK_SHIFT, "seed": seed, **overrides}))


def arm_settings(arm: str, spec: ModelSpec, cfg: TrainConfig, xi: float = 1.0):
    """vanilla: no alignment, no cascade; +MMD: alignment only; +CP: both."""
    if arm == "vanilla":
        return replace(spec, cp_rounds=0), replace(cfg, xi=0.0)
    if arm == "+MMD":
        return replace(spec, cp_rounds=0), replace(cfg, xi=xi)
    if arm == "+CP":
        return replace(spec, cp_rounds=max(spec.cp_rounds, 1)), replace(cfg, xi=xi)
    raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")


def ablation(spec, cfg, source, target, seeds=range(5), arms=ARMS, xi=1.0,
             workers=1) -> dict[str, SeedSummary]:
    out = {}
    for arm in arms:
        s, c = arm_settings(arm, spec, cfg, xi)
        out[arm] = run_seeds(s, c, source, target, seeds, workers)
    return out


def xi_sweep(spec, cfg, source, target, xi_values=(0, 1, 2, 3, 4, 5), seeds=range(5),
             workers=1) -> list[tuple[float, SeedSummary]]:
    xs = sorted(float(x) for x in xi_values)
    if any(x < 0 for x in xs):
        raise ValueError("xi values must be nonnegative")
    return [(x, run_seeds(spec, replace(cfg, xi=x), source, target, seeds, workers)) for x in xs]


# ---------------------------------------------------------------- objective tables

def f_low_cell(model: UGNN, domain: DomainDataset) -> float:
    """Lower-level objective of ``model``'s propagation on ``domain``, anchored at
    its pre-processor output (one pass, no cascade)."""
    ops = build_operators(domain.graph, model.spec.self_loops)
    X = model.preprocess(domain.features)
    H = model.propagate(ops, X, rounds=0)
    return lower_objective(model.spec, H, X, ops).value


def objective_cells(models: dict[str, UGNN], domains: dict[str, DomainDataset]) -> list[dict]:
    """One cell per (train domain, eval domain), in sorted name order."""
    return [{"train_domain": a, "eval_domain": b, "f_low": f_low_cell(models[a], domains[b])}
            for a in sorted(models) for b in sorted(domains)]


def normalize_cells(cells: list[dict], scope: str = "table") -> list[dict]:
    """Min-max normalize f_low over the whole table or within each train-domain row."""
    if scope not in ("table", "row"):
        raise ValueError("scope must be 'table' or 'row'")
    groups = {}
    for i, c in enumerate(cells):
        groups.setdefault("all" if scope == "table" else c["train_domain"], []).append(i)
    out = [dict(c, normalization=scope) for c in cells]
    for idx in groups.values():
        vals = [cells[i]["f_low"] for i in idx]
        if len(vals) < 2 or max(vals) == min(vals):
            raise ValueError("normalization group needs at least two distinct values")
        for i, v in zip(idx, minmax_normalize(vals)):
            out[i]["f_low_normalized"] = v
    return out


@dataclass
class TrendReport:
    """Per seed: [in-domain, transfer, zero-shift transfer] f_low of one source-trained model."""
    seeds: list[int]
    raw: list[list[float]]
    wins: int
    mean_table: list[float]
    zero_shift_gap: float
    extra: dict = field(default_factory=dict)


def objective_gap_trend(spec: ModelSpec, cfg: TrainConfig, seeds=range(20), shift: dict | None = None,
                 ) -> TrendReport:
    """Train on the source, then evaluate f_low on the source itself, on the shifted
    target, and on an unshifted target drawn from the source distribution.

    A win is transfer > in-domain. The seed-mean cells are min-max normalized
    together, and the zero-shift gap is |zero-shift cell - in-domain cell|.
    """
    shift = {**DESK_SHIFT, **(shift or {})}
    zero = {**shift, "offset": 0.0, "inter_factor": 1.0}
    rows = []
    seeds = list(seeds)
    for s in seeds:
        src, tgt = generate_shifted_pair(ShiftConfig(**{**shift, "seed": s}))
        _, tgt0 = generate_shifted_pair(ShiftConfig(**{**zero, "seed": s}))
        model = UGNN(spec, src.feature_dim, src.class_count, s)
        train_source(model, src, src, replace(cfg, seed=s, xi=0.0), evaluate_target=False)
        rows.append([f_low_cell(model, src), f_low_cell(model, tgt), f_low_cell(model, tgt0)])
    R = np.array(rows)
    wins = int(np.sum(R[:, 1] > R[:, 0]))
    norm = minmax_normalize(R.mean(axis=0))
    return TrendReport(seeds, R.tolist(), wins, norm, abs(norm[2] - norm[0]))


# ---------------------------------------------------------------- randomized cascade checks

def random_instance(rng: np.random.Generator, variant: str, max_nodes: int = 200):
    """A random graph, feature matrix and hyperparameters for one theorem trial."""
    n = int(rng.integers(2, max_nodes + 1))
    p = float(rng.uniform(0.0, min(1.0, 8.0 / n)))
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    g = Graph(n, np.c_[iu[keep], ju[keep]])
    M = int(rng.integers(1, 9))
    alpha = float(rng.uniform(0.05, 1.0))
    spec = ModelSpec(variant=variant, K=int(rng.integers(1, 13)), alpha=alpha,
                     lambda1=float(rng.uniform(0, 9)), lambda2=float(rng.uniform(0, 9)),
                     hidden=[], self_loops=bool(rng.integers(2)), diag_alpha=alpha)
    model = UGNN(spec, M, M, int(rng.integers(2**31)))
    features = rng.standard_normal((n, M)) * rng.uniform(0.1, 10.0)
    return model, build_operators(g, spec.self_loops), features


def theorem_trials(variants=("APPNP", "GPRGNN", "Elastic"), trials: int = 100, seed: int = 0,
                   rounds: int = 1, max_nodes: int = 200, slack: float = THEOREM_SLACK,
                   inject_violation: bool = False) -> list[dict]:
    """Run ``trials`` random instances per variant; each row carries the instance
    seed so a failure can be replayed alone.

    ``inject_violation`` replaces the first trial's cascaded value with a larger
    one, to exercise the failure path.
    """
    rows = []
    for vi, variant in enumerate(variants):
        for t in range(trials):
            inst = seed * 1_000_003 + vi * 10_007 + t
            model, ops, feats = random_instance(np.random.default_rng(inst), variant, max_nodes)
            rep = theorem_check(model, ops, feats, rounds=rounds, slack=slack)
            values = list(rep.round_values)
            if inject_violation and t == 0:
                values[1] = values[0] + 1.0
            holds = all(b <= a + slack for a, b in zip(values, values[1:]))
            rows.append({"variant": variant, "trial": t, "instance_seed": inst,
                         "n_nodes": ops.graph.n_nodes, "f_transfer": values[0], "f_cp": values[1],
                         "margin": values[0] - values[1], "holds": holds})
    return rows
