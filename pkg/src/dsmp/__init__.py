"""Spectral graph framelets, scattering and deep scattering message passing."""

__version__ = "0.1.0"

from .datasets import GraphDataset, load_dataset, save_dataset
from .diagnostics import DiagnosticsReport, PerturbationSpec, diagnose
from .estimators import DSMPClassifier, DSMPRegressor, FrameletTransformer, ScatteringTransformer
from .framelet import FrameletConfig, FrameletOperatorSet, operator_set
from .graph import Graph, from_edges
from .model import DsmpModel, TrainConfig, init_model, train
from .scattering import scatter

__all__ = [
    "DSMPClassifier",
    "DSMPRegressor",
    "DiagnosticsReport",
    "DsmpModel",
    "FrameletConfig",
    "FrameletOperatorSet",
    "FrameletTransformer",
    "Graph",
    "GraphDataset",
    "PerturbationSpec",
    "ScatteringTransformer",
    "TrainConfig",
    "diagnose",
    "from_edges",
    "init_model",
    "load_dataset",
    "operator_set",
    "save_dataset",
    "scatter",
    "train",
]
