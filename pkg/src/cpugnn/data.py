"""Domain datasets: the four-file directory format, validation, source splits,
and a two-domain stochastic-block-model generator with controlled shift.

Directory layout::

    meta.json      {"name", "n_nodes", "feature_dim", "class_count"}
    edges.tsv      u <TAB> v          (undirected, u < v)
    features.tsv   row <TAB> col <TAB> value
    labels.tsv     node <TAB> class
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph, SparseMatrixCSR


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class DomainDataset:
    name: str
    graph: Graph
    features: SparseMatrixCSR
    labels: np.ndarray
    feature_dim: int
    class_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.n_nodes
        if self.labels.shape != (n,):
            raise DatasetFormatError(f"expected {n} labels, got {self.labels.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetFormatError("label outside [0, class_count)")
        if self.features.shape != (n, self.feature_dim):
            raise DatasetFormatError(f"feature matrix shape {self.features.shape} != ({n}, {self.feature_dim})")

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def dense_features(self) -> np.ndarray:
        return self.features.to_dense()

    def equals(self, other: DomainDataset) -> bool:
        return (self.name == other.name and self.feature_dim == other.feature_dim
                and self.class_count == other.class_count
                and self.graph.n_nodes == other.graph.n_nodes
                and np.array_equal(self.graph.edges, other.graph.edges)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.features.row_offsets, other.features.row_offsets)
                and np.array_equal(self.features.col_indices, other.features.col_indices)
                and np.array_equal(self.features.values, other.features.values))


# ---------------------------------------------------------------- disk format

def _rows(path: Path, ncols: int, types):
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != ncols:
                raise DatasetFormatError(f"{path.name}:{lineno}: expected {ncols} columns, got {len(parts)}")
            try:
                out.append((lineno, *(t(p) for t, p in zip(types, parts))))
            except ValueError as exc:
                raise DatasetFormatError(f"{path.name}:{lineno}: {exc}") from None
    return out


def load_domain(dir_path) -> DomainDataset:
    d = Path(dir_path)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        name, n, M, C = meta["name"], int(meta["n_nodes"]), int(meta["feature_dim"]), int(meta["class_count"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"meta.json: {exc}") from None

    seen = set()
    edges = []
    for lineno, u, v in _rows(d / "edges.tsv", 2, (int, int)):
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetFormatError(f"edges.tsv:{lineno}: node index out of range [0, {n})")
        if u == v:
            raise DatasetFormatError(f"edges.tsv:{lineno}: self-loop ({u}, {v})")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DatasetFormatError(f"edges.tsv:{lineno}: duplicate edge {key}")
        seen.add(key)
        edges.append(key)

    trip = {}
    for lineno, r, c, val in _rows(d / "features.tsv", 3, (int, int, float)):
        if not (0 <= r < n and 0 <= c < M):
            raise DatasetFormatError(f"features.tsv:{lineno}: index ({r}, {c}) out of range")
        if not np.isfinite(val):
            raise DatasetFormatError(f"features.tsv:{lineno}: non-finite value")
        if (r, c) in trip:
            raise DatasetFormatError(f"features.tsv:{lineno}: duplicate entry ({r}, {c})")
        trip[(r, c)] = val

    labels = np.full(n, -1, dtype=np.int64)
    for lineno, node, cls in _rows(d / "labels.tsv", 2, (int, int)):
        if not 0 <= node < n:
            raise DatasetFormatError(f"labels.tsv:{lineno}: node {node} out of range")
        if not 0 <= cls < C:
            raise DatasetFormatError(f"labels.tsv:{lineno}: class {cls} outside [0, {C})")
        if labels[node] != -1:
            raise DatasetFormatError(f"labels.tsv:{lineno}: node {node} labelled twice")
        labels[node] = cls
    missing = np.flatnonzero(labels < 0)
    if len(missing):
        raise DatasetFormatError(f"labels.tsv: {len(missing)} nodes without a label (first: {missing[0]})")

    if trip:
        rc = np.array(list(trip.keys()), dtype=np.int64)
        vals = np.array(list(trip.values()), dtype=np.float64)
    else:
        rc, vals = np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    X = SparseMatrixCSR.from_scipy(sp.coo_matrix((vals, (rc[:, 0], rc[:, 1])), shape=(n, M)))
    return DomainDataset(name, Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2)), X, labels, M, C)


def save_domain(ds: DomainDataset, dir_path) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"name": ds.name, "n_nodes": ds.n_nodes, "feature_dim": ds.feature_dim,
            "class_count": ds.class_count}
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    with (d / "edges.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for u, v in ds.graph.edges:
            fh.write(f"{u}\t{v}\n")
    F = ds.features
    with (d / "features.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for r in range(F.n_rows):
            for k in range(F.row_offsets[r], F.row_offsets[r + 1]):
                fh.write(f"{r}\t{F.col_indices[k]}\t{F.values[k]:.17g}\n")
    with (d / "labels.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for i, y in enumerate(ds.labels):
            fh.write(f"{i}\t{y}\n")


# ---------------------------------------------------------------- splits

@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.2
    seed: int = 0


def split_source(ds: DomainDataset, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle of the source nodes into disjoint, exhaustive train/val masks."""
    if spec.train_fraction < 0 or spec.val_fraction < 0 or abs(spec.train_fraction + spec.val_fraction - 1) > 1e-12:
        raise ValueError("train and val fractions must be nonnegative and sum to 1")
    n = ds.n_nodes
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(spec.train_fraction * n))
    train = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    return train, ~train


# ---------------------------------------------------------------- generator

@dataclass
class ShiftConfig:
    n_nodes: int = 400
    target_n_nodes: int | None = None
    n_classes: int = 4
    feature_dim: int = 16
    p_in: float = 0.05
    p_out: float = 0.005
    target_p_in: float | None = None
    target_p_out: float | None = None
    # multiplies the target's inter-block probability
    inter_factor: float = 1.0
    class_means: list[list[float]] | None = None
    mean_scale: float = 1.0
    noise: float = 1.0
    offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_in", "p_out", "target_p_in", "target_p_out"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.inter_factor < 0:
            raise ValueError("inter_factor must be nonnegative")
        n_t = self.target_n_nodes if self.target_n_nodes is not None else self.n_nodes
        if self.n_classes < 1 or min(self.n_nodes, n_t) < self.n_classes:
            raise ValueError("every block needs at least one node")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.class_means is not None and np.shape(self.class_means) != (self.n_classes, self.feature_dim):
            raise ValueError("class_means must have shape (n_classes, feature_dim)")
        if min(self.mean_scale, self.noise) < 0:
            raise ValueError("mean_scale and noise must be nonnegative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ShiftConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown synthetic keys: {sorted(unknown)}")
        return cls(**d)


def sbm_graph(sizes, p_in: float, p_out: float, rng) -> tuple[Graph, np.ndarray]:
    """Undirected SBM; returns the graph and the block id of every node."""
    blocks = np.repeat(np.arange(len(sizes)), sizes)
    n = len(blocks)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    return Graph(n, np.c_[iu[keep], ju[keep]]), blocks


def _block_sizes(n, k):
    base, extra = divmod(n, k)
    return [base + (i < extra) for i in range(k)]


def _domain(name, n, C, p_in, p_out, means, noise, shift, rng):
    g, y = sbm_graph(_block_sizes(n, C), p_in, p_out, rng)
    X = means[y] + noise * rng.standard_normal((n, means.shape[1])) + shift
    return DomainDataset(name, g, SparseMatrixCSR.from_dense(X), y, means.shape[1], C)


def generate_shifted_pair(cfg: ShiftConfig) -> tuple[DomainDataset, DomainDataset]:
    """Two SBM domains sharing class means; the target gets a feature offset and
    a rescaled inter-block edge probability. Deterministic in ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    C, M = cfg.n_classes, cfg.feature_dim
    if cfg.class_means is not None:
        means = np.asarray(cfg.class_means, dtype=np.float64)
    else:
        means = cfg.mean_scale * rng.standard_normal((C, M))
    direction = rng.standard_normal(M)
    # unit RMS per coordinate, so `offset` is the typical per-feature shift
    direction *= np.sqrt(M) / np.linalg.norm(direction)
    src_rng, tgt_rng = (np.random.default_rng(s) for s in rng.integers(0, 2**63 - 1, size=2))

    t_in = cfg.p_in if cfg.target_p_in is None else cfg.target_p_in
    t_out = (cfg.p_out if cfg.target_p_out is None else cfg.target_p_out) * cfg.inter_factor
    if t_out > 1.0:
        raise ValueError("perturbed inter-block probability exceeds 1")
    n_t = cfg.target_n_nodes if cfg.target_n_nodes is not None else cfg.n_nodes
    source = _domain("source", cfg.n_nodes, C, cfg.p_in, cfg.p_out, means, cfg.noise, 0.0, src_rng)
    target = _domain("target", n_t, C, t_in, t_out, means, cfg.noise, cfg.offset * direction, tgt_rng)
    return source, target
