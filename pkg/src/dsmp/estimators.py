"""scikit-learn style wrappers.

Every estimator takes a sequence of :class:`~dsmp.graph.Graph` objects as
``X``; node features are read from ``Graph.features``.
"""
from __future__ import annotations

from typing import List, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_graphs, check_same_width
from .datasets import GraphDataset, stratified_split
from .framelet import FrameletConfig, operator_set
from .graph import Graph
from .model import TrainConfig, forward, init_model, make_rng, train
from .scattering import flatten, scatter


class _FrameletParams:
    def _framelet_config(self) -> FrameletConfig:
        return FrameletConfig(J=self.J, R=self.R, cheb_order=self.cheb_order,
                              mode=self.mode, lambda_up=self.lambda_up)


class FrameletTransformer(_FrameletParams, TransformerMixin, BaseEstimator):
    """Stack every framelet band of each graph's features side by side.

    ``transform`` returns one ``N x (n_bands * d)`` array per graph, bands
    in canonical index order (low pass first).
    """

    def __init__(self, J=2, R=None, cheb_order=8, mode="cascade", lambda_up=2.0, backing="exact"):
        self.J = J
        self.R = R
        self.cheb_order = cheb_order
        self.mode = mode
        self.lambda_up = lambda_up
        self.backing = backing

    def fit(self, X: Sequence[Graph], y=None):
        graphs = check_graphs(X)
        check_same_width(graphs)
        self.config_ = self._framelet_config()
        self.n_features_in_ = graphs[0].num_features
        return self

    def transform(self, X: Sequence[Graph]) -> List[np.ndarray]:
        check_is_fitted(self, "config_")
        out = []
        for g in check_graphs(X):
            ops = operator_set(g, self.config_, self.backing)
            out.append(np.hstack([ops.apply(k, g.features) for k in ops.indices]))
        return out


class ScatteringTransformer(_FrameletParams, TransformerMixin, BaseEstimator):
    """Scattering coefficients, optionally pooled to one row per graph.

    With ``pooling='mean'`` (the default) the output is a 2-D array that
    can feed any scikit-learn classifier.
    """

    def __init__(self, depth=2, J=2, R=None, cheb_order=8, mode="cascade", lambda_up=2.0,
                 backing="exact", pooling="mean"):
        self.depth = depth
        self.J = J
        self.R = R
        self.cheb_order = cheb_order
        self.mode = mode
        self.lambda_up = lambda_up
        self.backing = backing
        self.pooling = pooling

    def fit(self, X: Sequence[Graph], y=None):
        graphs = check_graphs(X)
        check_same_width(graphs)
        if self.pooling not in ("mean", "sum", None):
            raise ValueError("pooling must be 'mean', 'sum' or None")
        self.config_ = self._framelet_config()
        self.n_features_in_ = graphs[0].num_features
        return self

    def transform(self, X: Sequence[Graph]):
        check_is_fitted(self, "config_")
        feats = [flatten(scatter(g, g.features, self.config_, self.depth, self.backing))
                 for g in check_graphs(X)]
        if self.pooling is None:
            return feats
        pool = np.mean if self.pooling == "mean" else np.sum
        return np.vstack([pool(F, axis=0) for F in feats])


class _DSMPBase(_FrameletParams, BaseEstimator):
    _task = "graph_class"

    def __init__(self, hidden_size=32, num_layers=2, J=2, R=None, cheb_order=8, mode="cascade",
                 lambda_up=2.0, backing="cheb", psd=False, learning_rate=1e-3, weight_decay=5e-4,
                 batch_size=8, max_epochs=200, patience=20, validation_fraction=0.2, seed=0):
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.J = J
        self.R = R
        self.cheb_order = cheb_order
        self.mode = mode
        self.lambda_up = lambda_up
        self.backing = backing
        self.psd = psd
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _split(self, targets):
        n = len(targets)
        rng = make_rng(self.seed)
        f = float(self.validation_fraction)
        if f <= 0:
            return {"train": list(range(n))}
        if self._task == "graph_class":
            s = stratified_split(targets, rng, (1 - f, f, 0.0))
            s["train"] = sorted(s["train"] + s["test"])
        else:
            perm = rng.permutation(n)
            n_val = int(round(f * n))
            s = {"val": sorted(perm[:n_val].tolist()), "train": sorted(perm[n_val:].tolist())}
        return {"train": s["train"], "val": s["val"]}

    def _fit(self, graphs, targets, n_outputs):
        check_same_width(graphs)
        labelled = [Graph(g.num_nodes, g.edges, g.features, t) for g, t in zip(graphs, targets)]
        ds = GraphDataset(labelled, self._task, self._split(targets))
        tcfg = TrainConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, hidden_size=self.hidden_size,
                           num_layers=self.num_layers, seed=self.seed)
        model = init_model(graphs[0].num_features, n_outputs, hidden=self.hidden_size,
                           num_layers=self.num_layers, task=self._task,
                           config=self._framelet_config(), backing=self.backing,
                           psd=self.psd, seed=self.seed)
        self.model_, self.history_ = train(model, ds, tcfg)
        self.n_features_in_ = graphs[0].num_features
        return self

    def _outputs(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return np.vstack([forward(self.model_, g)[0] for g in check_graphs(X)])


class DSMPClassifier(ClassifierMixin, _DSMPBase):
    """Graph-level classifier built on stacked DSMP layers."""

    _task = "graph_class"

    def fit(self, X: Sequence[Graph], y):
        graphs = check_graphs(X)
        y = np.asarray(y)
        if len(y) != len(graphs):
            raise ValueError(f"got {len(graphs)} graphs but {len(y)} labels")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        return self._fit(graphs, codes.tolist(), len(self.classes_))

    def predict_proba(self, X: Sequence[Graph]) -> np.ndarray:
        Z = self._outputs(X)
        Z = np.exp(Z - Z.max(axis=1, keepdims=True))
        return Z / Z.sum(axis=1, keepdims=True)

    def predict(self, X: Sequence[Graph]) -> np.ndarray:
        return self.classes_[np.argmax(self._outputs(X), axis=1)]


class DSMPRegressor(RegressorMixin, _DSMPBase):
    """Graph-level scalar regressor (squared loss)."""

    _task = "graph_reg"

    def fit(self, X: Sequence[Graph], y):
        graphs = check_graphs(X)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(graphs):
            raise ValueError(f"got {len(graphs)} graphs but {len(y)} targets")
        return self._fit(graphs, y.tolist(), 1)

    def predict(self, X: Sequence[Graph]) -> np.ndarray:
        return self._outputs(X)[:, 0]
