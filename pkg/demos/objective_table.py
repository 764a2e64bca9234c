# How well does a transferred propagation layer fit the new graph?
#
# Train one model per domain, then evaluate each model's lower-level
# objective on every domain. A layer fitted on the source should leave a
# larger objective on the shifted target than on the source itself, and
# about the same on an unshifted copy.

from dataclasses import replace

from cpugnn.data import ShiftConfig, generate_shifted_pair
from cpugnn.experiments import DESK_MODEL, DESK_SHIFT, normalize_cells, objective_cells
from cpugnn.models import ModelSpec, UGNN
from cpugnn.trainer import TrainConfig, train_source

source, target = generate_shifted_pair(ShiftConfig(**DESK_SHIFT, seed=0))
_, unshifted = generate_shifted_pair(ShiftConfig(**{**DESK_SHIFT, "offset": 0.0,
                                                     "inter_factor": 1.0}, seed=0))
domains = {"source": source, "target": target, "unshifted": unshifted}

spec = ModelSpec(**DESK_MODEL)
cfg = TrainConfig(epochs=200, xi=0.0)
models = {}
for name in ("source", "target"):
    d = domains[name]
    models[name] = UGNN(spec, d.feature_dim, d.class_count, seed=0)
    train_source(models[name], d, d, replace(cfg, seed=0), evaluate_target=False)

cells = normalize_cells(objective_cells(models, domains), scope="table")
print(f"{'trained on':>10s} {'evaluated on':>12s} {'f_low':>12s} {'normalized':>10s}")
for c in cells:
    print(f"{c['train_domain']:>10s} {c['eval_domain']:>12s} {c['f_low']:12.2f} "
          f"{c['f_low_normalized']:10.3f}")
