"""Full-batch training with MMD alignment, oracle / frozen-post-processor
protocols, seed aggregation and grid search."""
from __future__ import annotations

import hashlib
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .autodiff import Parameter, Tape, masked_softmax_cross_entropy
from .data import DomainDataset, SplitSpec, split_source
from .graph import build_operators
from .metrics import f1_scores, predict
from .models import ModelSpec, UGNN
from .objectives import theorem_check, upper_loss


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    xi: float = 1.0
    epochs: int = 500
    patience: int = 50
    seed: int = 0
    mmd_max_rows: int = 2000

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay nonnegative")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Adam:
    """Adam with decoupled weight decay; frozen parameters are skipped."""

    def __init__(self, params: list[Parameter], lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.weight_decay, self.eps = lr, weight_decay, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.frozen:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if self.weight_decay:
                p.value *= 1 - self.lr * self.weight_decay
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class RunReport:
    config: dict
    config_hash: str
    seed: int
    train_loss: list[float] = field(default_factory=list)
    val_micro: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_micro: float = 0.0
    target_macro: float | None = None
    target_micro: float | None = None
    f_low: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def stable_hash(self) -> str:
        """Hash of every field except wall-clock time."""
        d = self.to_dict()
        d.pop("wall_clock")
        return config_hash(d)


def evaluate(model: UGNN, domain: DomainDataset, ops=None) -> tuple[float, float]:
    ops = ops or build_operators(domain.graph, model.spec.self_loops)
    pred = predict(model.predict_logits(ops, domain.features))
    return f1_scores(domain.labels, pred, domain.class_count)


def _check_pair(source, target):
    if source.feature_dim != target.feature_dim or source.class_count != target.class_count:
        raise ValueError("source and target must share feature_dim and class_count")


def train_source(model: UGNN, source: DomainDataset, target: DomainDataset, cfg: TrainConfig,
                 masks=None, evaluate_target: bool = True) -> tuple[UGNN, RunReport]:
    """Train on the labelled source, aligning embeddings to the target with MMD.

    Model selection keeps the epoch with the best source-validation Micro-F1,
    ties broken by lower validation cross-entropy; training stops after
    ``cfg.patience`` epochs without improvement.
    """
    _check_pair(source, target)
    t0 = time.perf_counter()
    spec = model.spec
    ops_s = build_operators(source.graph, spec.self_loops)
    ops_t = build_operators(target.graph, spec.self_loops)
    train_mask, val_mask = masks if masks is not None else split_source(source, SplitSpec(seed=cfg.seed))
    val_idx = np.flatnonzero(val_mask)
    echo = {"model": spec.to_dict(), "train": asdict(cfg)}
    report = RunReport(echo, config_hash(echo), cfg.seed)

    opt = Adam(model.parameters(), cfg.lr, cfg.weight_decay)
    best_state, best_key, best_epoch = model.state(), (-1.0, -np.inf), -1
    for epoch in range(cfg.epochs):
        for p in model.all_parameters():
            p.zero_grad()
        tape = Tape()
        drop_seed = cfg.seed * 100_003 + epoch
        logits_s, emb_s = model.forward(ops_s, source.features, True, tape, drop_seed)
        emb_t = None
        if cfg.xi > 0:
            _, emb_t = model.forward(ops_t, target.features, True, tape, drop_seed)
        loss = upper_loss(logits_s, source.labels, train_mask, emb_s, emb_t, cfg.xi,
                          max_rows=cfg.mmd_max_rows, rng_seed=drop_seed)
        lv = float(loss.value)
        if not np.isfinite(lv):
            raise DivergenceError(epoch, lv)
        tape.backward(loss)
        opt.step()

        logits = model.predict_logits(ops_s, source.features)
        _, val_micro = f1_scores(source.labels[val_idx], predict(logits[val_idx]), source.class_count)
        val_loss = float(masked_softmax_cross_entropy(logits, source.labels, val_idx))
        report.train_loss.append(lv)
        report.val_micro.append(val_micro)
        key = (val_micro, -val_loss)
        if key > best_key:
            best_key, best_epoch, best_state = key, epoch, model.state()
        elif epoch - best_epoch >= cfg.patience:
            break

    model.load_state(best_state)
    report.best_epoch, report.best_val_micro = best_epoch, best_key[0]
    if evaluate_target:
        report.target_macro, report.target_micro = evaluate(model, target, ops_t)
        if spec.K >= 1:
            tc = theorem_check(model, ops_t, target.features)
            report.f_low = {"transfer": tc.f_transfer, "cp": tc.f_cp, "holds": tc.holds,
                            "flagged": tc.flagged}
    report.wall_clock = time.perf_counter() - t0
    return model, report


def train_oracle(model: UGNN, target: DomainDataset, cfg: TrainConfig, masks=None):
    """Train directly on the labelled target; the same loop with target as both domains."""
    model, _ = train_source(model, target, target, cfg, masks)
    return model


def frozen_pos_check(spec: ModelSpec, source: DomainDataset, target: DomainDataset,
                     cfg: TrainConfig) -> dict:
    """Train on the source, then retrain on the target with the source's
    post-processor frozen; compare with an unrestricted target-trained oracle.

    Both target runs train with ``xi = 0`` and are scored on all target nodes.
    """
    spec = replace(spec, post="linear_then_softmax")
    src = UGNN(spec, source.feature_dim, source.class_count, cfg.seed)
    train_source(src, source, target, cfg, evaluate_target=False)
    tcfg = replace(cfg, xi=0.0)

    frozen = UGNN(spec, target.feature_dim, target.class_count, cfg.seed)
    for p, q in zip(frozen.pos, src.pos):
        p.value[...] = q.value
        p.frozen = True
    train_oracle(frozen, target, tcfg)
    oracle = train_oracle(UGNN(spec, target.feature_dim, target.class_count, cfg.seed), target, tcfg)
    fm, fi = evaluate(frozen, target)
    om, oi = evaluate(oracle, target)
    return {"frozen_macro": fm, "frozen_micro": fi, "oracle_macro": om, "oracle_micro": oi}


# ---------------------------------------------------------------- seeds and grids

@dataclass
class SeedSummary:
    seeds: list[int]
    reports: list[RunReport]
    mean: dict
    std: dict

    def to_dict(self):
        return {"seeds": self.seeds, "mean": self.mean, "std": self.std,
                "reports": [r.to_dict() for r in self.reports]}


def _one_run(args):
    spec, cfg, source, target = args
    model = UGNN(spec, source.feature_dim, source.class_count, cfg.seed)
    return train_source(model, source, target, cfg)[1]


def run_seeds(spec: ModelSpec, cfg: TrainConfig, source, target, seeds=(0, 1, 2, 3, 4),
              workers: int = 1) -> SeedSummary:
    """Independent runs per seed, aggregated by mean and sample std (None when n = 1)."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = [(spec, replace(cfg, seed=s), source, target) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            reports = list(ex.map(_one_run, jobs))
    else:
        reports = [_one_run(j) for j in jobs]
    keys = ("target_macro", "target_micro", "best_val_micro")
    mean, std = {}, {}
    for k in keys:
        vals = np.array([getattr(r, k) for r in reports], dtype=np.float64)
        mean[k] = float(vals.mean())
        std[k] = float(vals.std(ddof=1)) if len(vals) > 1 else None
    for k in ("transfer", "cp"):
        vals = [r.f_low[k] for r in reports if k in r.f_low]
        if vals:
            mean[f"f_low_{k}"] = float(np.mean(vals))
    return SeedSummary(seeds, reports, mean, std)


_MODEL_KEYS = {f.name for f in fields(ModelSpec)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def apply_overrides(spec: ModelSpec, cfg: TrainConfig, point: dict):
    unknown = set(point) - _MODEL_KEYS - _TRAIN_KEYS
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    return (replace(spec, **{k: v for k, v in point.items() if k in _MODEL_KEYS}),
            replace(cfg, **{k: v for k, v in point.items() if k in _TRAIN_KEYS}))


def grid_search(grids: dict[str, list], spec: ModelSpec, cfg: TrainConfig, source, target,
                seeds=(0, 1, 2, 3, 4), workers: int = 1):
    """Exhaustive search; the winner maximizes mean source-validation Micro-F1.

    Ties go to the point whose canonical JSON sorts first, so the result does
    not depend on how the grids were listed.
    """
    if any(len(v) == 0 for v in grids.values()):
        raise ValueError("grids must be nonempty")
    names = sorted(grids)
    table = []
    for combo in itertools.product(*(grids[k] for k in names)):
        point = dict(zip(names, combo))
        s, c = apply_overrides(spec, cfg, point)
        summary = run_seeds(s, c, source, target, seeds, workers)
        table.append({"point": point, **summary.mean})
    ordered = sorted(table, key=lambda row: json.dumps(row["point"], sort_keys=True))
    best = max(ordered, key=lambda row: row["best_val_micro"])
    return best, table
