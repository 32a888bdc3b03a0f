"""Neighborhood-overlap-aware link prediction with classical heuristic baselines."""

__version__ = "0.1.0"

from .errors import DataError, NeoGNNError, NumericError, UndefinedMetricError
from .graph import Graph, PowerSeries, SparseMatrix, build_graph, gcn_normalize, power_series, read_edge_list, spmm
from .heuristics import HeuristicKind, HeuristicParams, score_all_pairs
from .metrics import EvalReport, adjacency_correlation, auc, hits_at_k, mrr, spearman
from .model import ModelConfig, NeoModelParams, init_params, load_checkpoint, make_context, save_checkpoint
from .train import Adam, SplitDataset, TrainConfig, fit_heuristic, sample_negatives, split_edges

# the training loop itself is ``neognn.train.train``; re-exporting it here would shadow the submodule

__all__ = [
    "Adam", "DataError", "EvalReport", "Graph", "HeuristicKind", "HeuristicParams", "ModelConfig",
    "NeoGNNError", "NeoModelParams", "NumericError", "PowerSeries", "SparseMatrix", "SplitDataset",
    "TrainConfig", "UndefinedMetricError", "adjacency_correlation", "auc", "build_graph", "fit_heuristic",
    "gcn_normalize", "hits_at_k", "init_params", "load_checkpoint", "make_context", "mrr", "power_series",
    "read_edge_list", "sample_negatives", "save_checkpoint", "score_all_pairs", "spearman", "split_edges",
    "spmm",
]
