"""Unfolded graph neural networks with cascaded propagation for graph domain
adaptation: sparse operators, a reverse-mode tape, APPNP / GPRGNN / ElasticGNN
propagation, lower-level objectives, MMD alignment and training protocols."""
from .autodiff import Parameter, Tape
from .data import DomainDataset, ShiftConfig, generate_shifted_pair, load_domain, save_domain
from .graph import Graph, GraphOperators, SparseMatrixCSR, build_operators, spmm
from .metrics import f1_scores
from .models import ModelSpec, UGNN
from .objectives import elastic_objective, gsd_objective, lower_objective, mmd, theorem_check
from .trainer import TrainConfig, evaluate, run_seeds, train_source

__version__ = "0.1.0"

__all__ = [
    "DomainDataset", "Graph", "GraphOperators", "ModelSpec", "Parameter", "ShiftConfig",
    "SparseMatrixCSR", "Tape", "TrainConfig", "UGNN", "build_operators", "elastic_objective",
    "evaluate", "f1_scores", "generate_shifted_pair", "gsd_objective", "load_domain",
    "lower_objective", "mmd", "run_seeds", "save_domain", "spmm", "theorem_check", "train_source",
]
