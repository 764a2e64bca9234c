"""Command-line entry point: ``python -m cpugnn <command> --config run.json``.

Every command reads one JSON config, writes CSV tables (LF line endings) and a
JSON report into the output directory, and embeds the config hash in both.
Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data import DatasetFormatError, ShiftConfig, generate_shifted_pair, load_domain, save_domain
from .experiments import ARMS, ablation, arm_settings, normalize_cells, objective_cells, theorem_trials, xi_sweep
from .gradcheck import DEFAULT_H, DEFAULT_TOL, gradient_suite
from .models import UGNN, ModelSpec
from .trainer import DivergenceError, TrainConfig, apply_overrides, config_hash, grid_search, train_source

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4

RUN_COLUMNS = ["source", "target", "variant", "cp_rounds", "xi", "seed", "macro_f1", "micro_f1",
               "f_low_transfer", "f_low_cp"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One JSON document per invocation. Sections not used by a command are ignored,
    but every key anywhere in the document must be known."""
    source_dir: str | None = None
    target_dir: str | None = None
    synthetic: dict | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    workers: int = 1
    output_dir: str | None = None
    # gda-run
    pairs: list[dict] | None = None
    variants: list[str] | None = None
    arms: list[str] = field(default_factory=lambda: list(ARMS))
    xi: float = 1.0
    # train
    grids: dict | None = None
    # sensitivity
    xi_values: list[float] = field(default_factory=lambda: [0, 1, 2, 3, 4, 5])
    # objective-table
    domains: dict | None = None
    checkpoints: dict | None = None
    normalize: str = "table"
    # theorem-check
    theorem: dict = field(default_factory=dict)
    # gradcheck
    gradcheck: dict = field(default_factory=dict)

    THEOREM_KEYS = {"variants", "trials", "rounds", "max_nodes", "slack", "inject_violation"}
    GRADCHECK_KEYS = {"tol", "h", "inject_wrong_backward"}
    PAIR_KEYS = {"name", "source_dir", "target_dir", "synthetic"}

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        def check_keys(section, allowed, where):
            extra = set(section) - allowed
            if extra:
                raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
        try:
            ModelSpec.from_dict(self.model)
            TrainConfig.from_dict(self.train)
            if self.synthetic is not None:
                ShiftConfig.from_dict(self.synthetic)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        check_keys(self.theorem, self.THEOREM_KEYS, "theorem")
        check_keys(self.gradcheck, self.GRADCHECK_KEYS, "gradcheck")
        for p in self.pairs or []:
            check_keys(p, self.PAIR_KEYS, "pairs[]")
        bad_arms = set(self.arms) - set(ARMS)
        if bad_arms:
            raise ConfigError(f"unknown arms {sorted(bad_arms)}; expected a subset of {list(ARMS)}")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of integers")
        if self.normalize not in ("table", "row"):
            raise ConfigError("normalize must be 'table' or 'row'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.source_dir is not None and self.synthetic is not None:
            raise ConfigError("give either source_dir/target_dir or synthetic, not both")

    def spec(self) -> ModelSpec:
        return ModelSpec.from_dict(self.model)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        tc = TrainConfig.from_dict(self.train)
        if seed is not None:
            tc.seed = seed
        return tc

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- helpers

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns: list[str], rows: list[dict], chash: str):
    """RFC-4180 style CSV with LF endings; a trailing config_hash column ties every row to its config."""
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*columns, "config_hash"])
        for r in rows:
            w.writerow([*(_fmt(r.get(c)) for c in columns), chash])


def write_report(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _load_pair(source_dir, target_dir, synthetic, seed):
    if synthetic is not None:
        return generate_shifted_pair(ShiftConfig.from_dict({**synthetic, "seed": synthetic.get("seed", 0) + seed}))
    if source_dir is None or target_dir is None:
        raise ConfigError("need source_dir and target_dir, or a synthetic section")
    return load_domain(source_dir), load_domain(target_dir)


def _run_rows(summary, src_name, tgt_name, spec, xi):
    rows = []
    for r in summary.reports:
        rows.append({"source": src_name, "target": tgt_name, "variant": spec.variant,
                     "cp_rounds": spec.cp_rounds, "xi": float(xi), "seed": r.seed,
                     "macro_f1": r.target_macro, "micro_f1": r.target_micro,
                     "f_low_transfer": r.f_low.get("transfer"), "f_low_cp": r.f_low.get("cp")})
    return rows


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: ExperimentConfig, seed: int, out: Path, chash: str) -> int:
    src, tgt = _load_pair(None, None, cfg.synthetic or {}, seed)
    save_domain(src, out / "source")
    save_domain(tgt, out / "target")
    summary = {d.name: {"n_nodes": d.n_nodes, "n_edges": d.graph.n_edges, "feature_dim": d.feature_dim,
                        "class_count": d.class_count, "class_sizes": np.bincount(d.labels).tolist()}
               for d in (src, tgt)}
    write_report(out / "generate.json", {"config": cfg.to_dict(), "config_hash": chash, "domains": summary})
    for name, s in summary.items():
        print(f"{name}: {s['n_nodes']} nodes, {s['n_edges']} edges, {s['feature_dim']} features, "
              f"{s['class_count']} classes")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, seed: int, out: Path, chash: str) -> int:
    source, target = _load_pair(cfg.source_dir, cfg.target_dir, cfg.synthetic, seed)
    spec, tc = cfg.spec(), cfg.train_config(seed)
    doc = {"config": cfg.to_dict(), "config_hash": chash}
    if cfg.grids:
        best, table = grid_search(cfg.grids, spec, tc, source, target, [seed + s for s in cfg.seeds],
                                  cfg.workers)
        doc["grid"] = {"best": best, "table": table}
        names = sorted(cfg.grids)
        write_csv(out / "grid.csv", [*names, "best_val_micro", "target_macro", "target_micro"],
                  [{**r["point"], **r} for r in table], chash)
        spec, tc = apply_overrides(spec, tc, best["point"])
    model = UGNN(spec, source.feature_dim, source.class_count, tc.seed)
    model, report = train_source(model, source, target, tc)
    model.save(out / "model.json", extra={"config_hash": chash, "source": source.name})
    doc["run"] = report.to_dict()
    doc["run_hash"] = report.stable_hash()
    write_report(out / "report.json", doc)
    rows = [{"source": source.name, "target": target.name, "variant": spec.variant,
             "cp_rounds": spec.cp_rounds, "xi": tc.xi, "seed": tc.seed,
             "macro_f1": report.target_macro, "micro_f1": report.target_micro,
             "f_low_transfer": report.f_low.get("transfer"), "f_low_cp": report.f_low.get("cp")}]
    write_csv(out / "runs.csv", RUN_COLUMNS, rows, chash)
    print(f"best epoch {report.best_epoch}: val Micro-F1 {report.best_val_micro:.4f}, "
          f"target Macro-F1 {report.target_macro:.4f}, Micro-F1 {report.target_micro:.4f}")
    return EXIT_OK


def cmd_gda_run(cfg: ExperimentConfig, seed: int, out: Path, chash: str) -> int:
    pairs = cfg.pairs or [{"name": "pair", "source_dir": cfg.source_dir, "target_dir": cfg.target_dir,
                           "synthetic": cfg.synthetic}]
    base = cfg.spec()
    variants = cfg.variants or [base.variant]
    seeds = [seed + s for s in cfg.seeds]
    runs, summary, failures = [], [], []
    for i, p in enumerate(pairs):
        name = p.get("name", f"pair{i}")
        try:
            source, target = _load_pair(p.get("source_dir"), p.get("target_dir"), p.get("synthetic"), seed)
            for variant in variants:
                spec = ModelSpec.from_dict({**cfg.model, "variant": variant})
                tc = cfg.train_config()
                res = ablation(spec, tc, source, target, seeds, cfg.arms, cfg.xi, cfg.workers)
                for arm, s in res.items():
                    aspec, atc = arm_settings(arm, spec, tc, cfg.xi)
                    runs += _run_rows(s, source.name, target.name, aspec, atc.xi)
                    summary.append({"pair": name, "source": source.name, "target": target.name,
                                    "variant": variant, "arm": arm, "cp_rounds": aspec.cp_rounds,
                                    "xi": atc.xi, "n_seeds": len(seeds),
                                    "macro_f1_mean": s.mean["target_macro"], "macro_f1_std": s.std["target_macro"],
                                    "micro_f1_mean": s.mean["target_micro"], "micro_f1_std": s.std["target_micro"]})
                    print(f"{name} {variant} {arm}: Micro-F1 {s.mean['target_micro']:.4f}")
        except (DivergenceError, DatasetFormatError, FileNotFoundError, ConfigError) as exc:
            failures.append({"pair": name, "error": type(exc).__name__, "message": str(exc)})
            print(f"{name}: failed ({exc})", file=sys.stderr)
    write_csv(out / "gda_runs.csv", RUN_COLUMNS, runs, chash)
    write_csv(out / "gda_summary.csv",
              ["pair", "source", "target", "variant", "arm", "cp_rounds", "xi", "n_seeds",
               "macro_f1_mean", "macro_f1_std", "micro_f1_mean", "micro_f1_std"], summary, chash)
    write_report(out / "gda.json", {"config": cfg.to_dict(), "config_hash": chash, "summary": summary,
                                    "failures": failures})
    if failures and len(failures) == len(pairs):
        return EXIT_DIVERGED if any(f["error"] == "DivergenceError" for f in failures) else EXIT_CONFIG
    return EXIT_OK


def cmd_sensitivity(cfg: ExperimentConfig, seed: int, out: Path, chash: str) -> int:
    source, target = _load_pair(cfg.source_dir, cfg.target_dir, cfg.synthetic, seed)
    spec = cfg.spec()
    seeds = [seed + s for s in cfg.seeds]
    sweep = xi_sweep(spec, cfg.train_config(), source, target, cfg.xi_values, seeds, cfg.workers)
    rows, runs = [], []
    for xi, s in sweep:
        rows.append({"xi": xi, "macro_f1": s.mean["target_macro"], "micro_f1": s.mean["target_micro"],
                     "micro_f1_std": s.std["target_micro"], "n_seeds": len(seeds)})
        runs += _run_rows(s, source.name, target.name, spec, xi)
        print(f"xi={xi:g}: Macro-F1 {rows[-1]['macro_f1']:.4f}, Micro-F1 {rows[-1]['micro_f1']:.4f}")
    write_csv(out / "sensitivity.csv", ["xi", "macro_f1", "micro_f1", "micro_f1_std", "n_seeds"], rows, chash)
    write_csv(out / "sensitivity_runs.csv", RUN_COLUMNS, runs, chash)
    write_report(out / "sensitivity.json", {"config": cfg.to_dict(), "config_hash": chash, "rows": rows})
    return EXIT_OK


def cmd_objective_table(cfg: ExperimentConfig, seed: int, out: Path, chash: str) -> int:
    if cfg.domains:
        domains = {name: load_domain(path) for name, path in cfg.domains.items()}
    else:
        src, tgt = _load_pair(cfg.source_dir, cfg.target_dir, cfg.synthetic, seed)
        domains = {"source": src, "target": tgt}
    checkpoints = cfg.checkpoints or {}
    if not checkpoints:
        raise ConfigError("objective-table needs at least one checkpoint")
    unknown = sorted(set(checkpoints) - set(domains))
    if unknown:
        raise ConfigError(f"checkpoints for unknown domain(s) {unknown}")
    models = {}
    for name, path in checkpoints.items():
        if not Path(path).exists():
            raise ConfigError(f"missing checkpoint: {path}")
        models[name] = UGNN.load(path)
    cells = normalize_cells(objective_cells(models, domains), cfg.normalize)
    write_csv(out / "objective_table.csv",
              ["train_domain", "eval_domain", "f_low", "f_low_normalized", "normalization"], cells, chash)
    write_report(out / "objective_table.json", {"config": cfg.to_dict(), "config_hash": chash, "cells": cells})
    for c in cells:
        print(f"{c['train_domain']} -> {c['eval_domain']}: {c['f_low_normalized']:.4f} ({c['f_low']:.6g})")
    return EXIT_OK


def cmd_theorem_check(cfg: ExperimentConfig, seed: int, out: Path, chash: str) -> int:
    t = cfg.theorem
    rows = theorem_trials(tuple(t.get("variants", ("APPNP", "GPRGNN", "Elastic"))), int(t.get("trials", 100)),
                          seed, int(t.get("rounds", 1)), int(t.get("max_nodes", 200)),
                          float(t.get("slack", 1e-10)), bool(t.get("inject_violation", False)))
    write_csv(out / "theorem.csv",
              ["variant", "trial", "instance_seed", "n_nodes", "f_transfer", "f_cp", "margin", "holds"],
              rows, chash)
    bad = [r for r in rows if not r["holds"]]
    write_report(out / "theorem.json", {"config": cfg.to_dict(), "config_hash": chash, "trials": len(rows),
                                        "violations": bad})
    for r in bad:
        print(f"VIOLATION {r['variant']} trial {r['trial']}: instance seed {r['instance_seed']} "
              f"(f_transfer={r['f_transfer']!r}, f_cp={r['f_cp']!r})")
    print(f"{len(rows) - len(bad)}/{len(rows)} trials hold")
    return EXIT_VERIFY if bad else EXIT_OK


def cmd_gradcheck(cfg: ExperimentConfig, seed: int, out: Path, chash: str) -> int:
    g = cfg.gradcheck
    rows = gradient_suite(float(g.get("tol", DEFAULT_TOL)), float(g.get("h", DEFAULT_H)), seed,
                          bool(g.get("inject_wrong_backward", False)))
    write_csv(out / "gradcheck.csv", ["check", "param", "rel_error", "tol", "passed"], rows, chash)
    worst = max(rows, key=lambda r: r["rel_error"])
    failed = [r for r in rows if not r["passed"]]
    write_report(out / "gradcheck.json", {"config": cfg.to_dict(), "config_hash": chash,
                                          "failed": failed, "worst": worst})
    print(f"{len(rows) - len(failed)}/{len(rows)} checks pass; worst {worst['check']}/{worst['param']} "
          f"rel error {worst['rel_error']:.3e}")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "gda-run": cmd_gda_run,
    "objective-table": cmd_objective_table,
    "theorem-check": cmd_theorem_check,
    "sensitivity": cmd_sensitivity,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpugnn", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=0, help="base seed added to every configured seed")
    ap.add_argument("--output-dir", default=None, help="overrides output_dir in the config")
    ap.add_argument("--threads", type=int, default=1, help="BLAS thread limit")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = ExperimentConfig.from_dict(raw)
    except (OSError, json.JSONDecodeError, ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.output_dir or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash({"command": args.command, "seed": args.seed, "config": cfg.to_dict()})
    with threadpool_limits(limits=args.threads):
        try:
            return COMMANDS[args.command](cfg, args.seed, out, chash)
        except (ConfigError, DatasetFormatError, FileNotFoundError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except DivergenceError as exc:
            print(f"diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
