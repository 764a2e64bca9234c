"""Unfolded GNNs: MLP pre-processor, APPNP / GPRGNN / ElasticGNN propagation,
cascaded propagation, and the softmax (or linear + softmax) post-processor.

Propagation functions take a node or an ndarray. With ndarrays nothing is
recorded, which is how embeddings are extracted for diagnostics.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from functools import partial
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape
from .graph import GraphOperators, SparseMatrixCSR

VARIANTS = ("APPNP", "GPRGNN", "Elastic")


@dataclass
class ModelSpec:
    variant: str = "APPNP"
    K: int = 8
    alpha: float = 0.1
    lambda1: float = 3.0
    lambda2: float = 3.0
    # Elastic: dual clip threshold; "lambda2" (default), "lambda1", or a number
    clip: float | str = "lambda2"
    penalty: str = "l21"
    step: float | None = None
    dual_step: float | None = None
    cp_rounds: int = 0
    hidden: list[int] = field(default_factory=lambda: [128])
    dropout: float = 0.5
    post: str = "softmax_only"
    freeze_pos: bool = False
    self_loops: bool = True
    diag_alpha: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.K < 0 or self.cp_rounds < 0:
            raise ValueError("K and cp_rounds must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 < self.diag_alpha <= 1.0:
            raise ValueError("diag_alpha must lie in (0, 1]")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.penalty not in ("l21", "l1"):
            raise ValueError("penalty must be 'l21' or 'l1'")
        if self.post not in ("softmax_only", "linear_then_softmax"):
            raise ValueError(f"unknown post-processor {self.post!r}")
        if isinstance(self.clip, str) and self.clip not in ("lambda1", "lambda2"):
            raise ValueError("clip must be 'lambda1', 'lambda2' or a number")
        if self.step is not None and not 0.0 < self.step <= 1.0:
            raise ValueError("step must lie in (0, 1]")
        if self.dual_step is not None and self.dual_step <= 0:
            raise ValueError("dual_step must be positive")
        self.hidden = [int(h) for h in self.hidden]

    @property
    def elastic_step(self) -> float:
        return self.step if self.step is not None else 1.0 / (1.0 + self.lambda1)

    @property
    def elastic_dual_step(self) -> float:
        return self.dual_step if self.dual_step is not None else 1.0 / (2.0 * self.elastic_step)

    @property
    def clip_threshold(self) -> float:
        if self.clip == "lambda2":
            return self.lambda2
        if self.clip == "lambda1":
            return self.lambda1
        return float(self.clip)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def ppr_coefficients(alpha: float, K: int) -> np.ndarray:
    """gamma_k = alpha (1-alpha)^k for k < K and (1-alpha)^K for the last term."""
    g = alpha * (1.0 - alpha) ** np.arange(K + 1)
    g[-1] = (1.0 - alpha) ** K
    return g


# ---------------------------------------------------------------- propagation

def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")


def appnp_propagate(X, A: SparseMatrixCSR, alpha: float, K: int, anchor=None, trace=None):
    """K steps of H <- (1-alpha) A H + alpha * anchor from H = X (anchor defaults to X).

    If ``trace`` is a list, the value of every iterate H^(0..K) is appended to it.
    """
    _check_alpha(alpha)
    if K < 0:
        raise ValueError("K must be nonnegative")
    anchor = X if anchor is None else anchor
    H = X
    if trace is not None:
        trace.append(ad.value(H))
    for _ in range(K):
        H = ad.add_scaled(ad.spmm_diff(A, H), anchor, 1.0 - alpha, alpha)
        if trace is not None:
            trace.append(ad.value(H))
    return H


def appnp_cp(X, A: SparseMatrixCSR, alpha: float, K: int):
    _check_alpha(alpha)
    if K < 1:
        raise ValueError("cascaded propagation needs K >= 1")
    H = X
    for _ in range(K):
        H = ad.add_scaled(ad.spmm_diff(A, H), X, 1.0 - alpha, alpha)
    HK = H
    for _ in range(K):
        H = ad.add_scaled(ad.spmm_diff(A, H), HK, 1.0 - alpha, alpha)
    return H


def gpr_propagate(X, A: SparseMatrixCSR, gamma):
    """sum_k gamma_k A^k X, evaluated Horner-style with len(gamma)-1 sparse products."""
    K = len(ad.value(gamma)) - 1
    H = ad.coef_scale(X, gamma, K)
    for k in range(K - 1, -1, -1):
        H = ad.add(ad.spmm_diff(A, H), ad.coef_scale(X, gamma, k))
    return H


def gpr_cp(X, A: SparseMatrixCSR, gamma):
    return gpr_propagate(gpr_propagate(X, A, gamma), A, gamma)


def elastic_propagate(X, A: SparseMatrixCSR, incidence: SparseMatrixCSR, clip: float,
                      step: float, dual_step: float, K: int, penalty: str = "l21", trace=None):
    """K rounds of the proximal alternating predictor-corrector update.

    Y = step*X + (1-step) A H            (predictor)
    Hb = Y - step * D^T Z                (corrector)
    Z <- proj(Z + dual_step * D Hb)      (dual ascent + projection)
    H = Y - step * D^T Z                 (corrector)
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    project = ad.row_l2_clip if penalty == "l21" else ad.entry_clip
    DT = incidence.T
    H = X
    Z = np.zeros((incidence.n_rows, ad.value(X).shape[1]))
    if trace is not None:
        trace.append(ad.value(H))
    for _ in range(K):
        Y = ad.add_scaled(X, ad.spmm_diff(A, H), step, 1.0 - step)
        Hb = ad.add_scaled(Y, ad.spmm_diff(DT, Z), 1.0, -step)
        Z = project(ad.add_scaled(Z, ad.spmm_diff(incidence, Hb), 1.0, dual_step), clip)
        H = ad.add_scaled(Y, ad.spmm_diff(DT, Z), 1.0, -step)
        if trace is not None:
            trace.append(ad.value(H))
    return H


def elastic_cp(X, A, incidence, clip, step, dual_step, K, penalty="l21"):
    if K < 1:
        raise ValueError("cascaded propagation needs K >= 1")
    HK = elastic_propagate(X, A, incidence, clip, step, dual_step, K, penalty)
    return elastic_propagate(HK, A, incidence, clip, step, dual_step, K, penalty)


def cascade(propagate_fn, X, rounds: int, return_all: bool = False):
    """Run ``propagate_fn`` once, then ``rounds`` more times, each anchored at the
    previous output. With ``return_all`` the list [input, out_0, ..., out_rounds]
    is returned."""
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")
    outs = [X, propagate_fn(X)]
    for _ in range(rounds):
        outs.append(propagate_fn(outs[-1]))
    return outs if return_all else outs[-1]


# ---------------------------------------------------------------- model

def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class UGNN:
    """p_pos(propagate(p_pre(features))) with parameters held as :class:`Parameter`."""

    def __init__(self, spec: ModelSpec, in_dim: int, n_classes: int, seed: int = 0):
        self.spec = spec
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.seed = seed
        rng = np.random.default_rng(seed)
        widths = [in_dim, *spec.hidden, n_classes]
        self.layers: list[tuple[Parameter, Parameter]] = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.layers.append((Parameter(_glorot(rng, a, b), f"W{i}"),
                                Parameter(np.zeros(b), f"b{i}")))
        self.gamma = None
        if spec.variant == "GPRGNN":
            self.gamma = Parameter(ppr_coefficients(spec.alpha, spec.K), "gamma")
        self.pos = None
        if spec.post == "linear_then_softmax":
            self.pos = (Parameter(np.eye(n_classes), "W_pos", frozen=spec.freeze_pos),
                        Parameter(np.zeros(n_classes), "b_pos", frozen=spec.freeze_pos))

    def all_parameters(self) -> list[Parameter]:
        ps = [p for layer in self.layers for p in layer]
        if self.gamma is not None:
            ps.append(self.gamma)
        if self.pos is not None:
            ps.extend(self.pos)
        return ps

    def parameters(self) -> list[Parameter]:
        """Parameters the optimizer updates (frozen post-processor excluded)."""
        return [p for p in self.all_parameters() if not p.frozen]

    def freeze_post(self, frozen: bool = True):
        if self.pos is not None:
            for p in self.pos:
                p.frozen = frozen

    def _bind(self, tape: Tape | None):
        if tape is None:
            return lambda p: p.value
        cache = {}

        def get(p):
            if id(p) not in cache:
                cache[id(p)] = tape.watch(p)
            return cache[id(p)]
        return get

    def preprocess(self, features, tape=None, training=False, dropout_seed=0):
        if isinstance(features, SparseMatrixCSR):
            if features.n_cols != self.in_dim:
                raise ValueError(f"feature width {features.n_cols} != model input {self.in_dim}")
        elif np.shape(features)[1] != self.in_dim:
            raise ValueError(f"feature width {np.shape(features)[1]} != model input {self.in_dim}")
        p = self._bind(tape)
        H = features
        for i, (W, b) in enumerate(self.layers):
            if i > 0:
                H = ad.dropout(ad.relu(H), self.spec.dropout, dropout_seed * 1000 + i, training)
            if isinstance(H, SparseMatrixCSR):
                H = ad.add_bias(ad.spmm_diff(H, p(W)), p(b))
            else:
                H = ad.add_bias(ad.matmul(H, p(W)), p(b))
        return H

    def propagator(self, ops: GraphOperators, tape=None):
        """Single-pass propagation H -> H' anchored at its own input."""
        s = self.spec
        if s.variant == "APPNP":
            return partial(appnp_propagate, A=ops.A, alpha=s.alpha, K=s.K)
        if s.variant == "GPRGNN":
            gamma = self._bind(tape)(self.gamma)
            return lambda X: gpr_propagate(X, ops.A, gamma)
        return partial(elastic_propagate, A=ops.A, incidence=ops.incidence, clip=s.clip_threshold,
                       step=s.elastic_step, dual_step=s.elastic_dual_step, K=s.K, penalty=s.penalty)

    def propagate(self, ops: GraphOperators, X, tape=None, rounds: int | None = None):
        rounds = self.spec.cp_rounds if rounds is None else rounds
        return cascade(self.propagator(ops, tape), X, rounds)

    def postprocess(self, emb, tape=None):
        if self.pos is None:
            return emb
        p = self._bind(tape)
        W, b = self.pos
        return ad.add_bias(ad.matmul(emb, p(W)), p(b))

    def forward(self, ops: GraphOperators, features, training=False, tape=None, dropout_seed=0):
        """Returns ``(logits, embedding)``; nodes when ``tape`` is given, arrays otherwise."""
        X = self.preprocess(features, tape, training, dropout_seed)
        emb = self.propagate(ops, X, tape)
        return self.postprocess(emb, tape), emb

    def extract_embedding(self, ops: GraphOperators, features) -> np.ndarray:
        _, emb = self.forward(ops, features, training=False)
        return np.array(emb, copy=True)

    def predict_logits(self, ops: GraphOperators, features) -> np.ndarray:
        logits, _ = self.forward(ops, features, training=False)
        return logits

    # -------------------------------------------------------- persistence

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.all_parameters()}

    def load_state(self, state: dict[str, np.ndarray]):
        for p in self.all_parameters():
            if p.value.shape != np.shape(state[p.name]):
                raise ValueError(f"shape mismatch for {p.name}")
            p.value[...] = state[p.name]

    def save(self, path, extra: dict | None = None):
        doc = {
            "spec": self.spec.to_dict(),
            "in_dim": self.in_dim,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "params": {p.name: {"shape": list(p.value.shape), "data": p.value.ravel().tolist()}
                       for p in self.all_parameters()},
        }
        if extra:
            doc["extra"] = extra
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path) -> UGNN:
        doc = json.loads(Path(path).read_text())
        model = cls(ModelSpec.from_dict(doc["spec"]), doc["in_dim"], doc["n_classes"], doc["seed"])
        model.load_state({k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                          for k, v in doc["params"].items()})
        return model
