import numpy as np
import pytest

from cpugnn.data import ShiftConfig, generate_shifted_pair
from cpugnn.experiments import (arm_settings, normalize_cells, objective_cells, random_instance,
                                theorem_trials, xi_sweep)
from cpugnn.models import ModelSpec, UGNN
from cpugnn.trainer import TrainConfig


def test_arm_settings():
    spec, cfg = ModelSpec(cp_rounds=0), TrainConfig(xi=3.0)
    assert arm_settings("vanilla", spec, cfg)[1].xi == 0.0
    s, c = arm_settings("+MMD", spec, cfg, xi=2.0)
    assert (s.cp_rounds, c.xi) == (0, 2.0)
    s, c = arm_settings("+CP", spec, cfg, xi=2.0)
    assert (s.cp_rounds, c.xi) == (1, 2.0)
    with pytest.raises(ValueError):
        arm_settings("+GAN", spec, cfg)


def test_objective_cells_and_normalization():
    src, tgt = generate_shifted_pair(ShiftConfig(n_nodes=60, offset=1.0, seed=0))
    spec = ModelSpec(K=3, hidden=[8])
    models = {"source": UGNN(spec, 16, 4, 0), "target": UGNN(spec, 16, 4, 1)}
    cells = objective_cells(models, {"source": src, "target": tgt})
    assert [(c["train_domain"], c["eval_domain"]) for c in cells] == [
        ("source", "source"), ("source", "target"), ("target", "source"), ("target", "target")]
    table = normalize_cells(cells, "table")
    vals = [c["f_low_normalized"] for c in table]
    assert min(vals) == 0.0 and max(vals) == 1.0
    rows = normalize_cells(cells, "row")
    for name in ("source", "target"):
        r = sorted(c["f_low_normalized"] for c in rows if c["train_domain"] == name)
        assert r == [0.0, 1.0]
    with pytest.raises(ValueError):
        normalize_cells(cells, "column")


def test_random_instances_valid():
    rng = np.random.default_rng(0)
    for variant in ("APPNP", "GPRGNN", "Elastic"):
        model, ops, X = random_instance(rng, variant, max_nodes=50)
        assert 2 <= ops.graph.n_nodes <= 50 and X.shape[0] == ops.graph.n_nodes
        assert model.spec.diag_alpha == model.spec.alpha


def test_theorem_trials_and_injection():
    rows = theorem_trials(trials=5, max_nodes=40)
    assert len(rows) == 15 and all(r["holds"] for r in rows)
    assert len({r["instance_seed"] for r in rows}) == 15
    bad = [r for r in theorem_trials(trials=2, max_nodes=40, inject_violation=True) if not r["holds"]]
    assert [r["trial"] for r in bad] == [0, 0, 0]


def test_xi_sweep_sorted():
    src, tgt = generate_shifted_pair(ShiftConfig(n_nodes=60, seed=0))
    out = xi_sweep(ModelSpec(K=2, hidden=[8]), TrainConfig(epochs=3), src, tgt, [2, 0], seeds=[0])
    assert [x for x, _ in out] == [0.0, 2.0]
    with pytest.raises(ValueError):
        xi_sweep(ModelSpec(), TrainConfig(), src, tgt, [-1])
