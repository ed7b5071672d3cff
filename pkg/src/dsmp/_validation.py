"""Input checks shared by the public functions and estimators."""
import numpy as np

from .exceptions import FeatureMissing, ShapeMismatch


def check_features(X, n_rows=None, name="X"):
    """Return ``X`` as a finite 2-D float array, optionally with ``n_rows`` rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got {X.ndim}-D")
    if n_rows is not None and X.shape[0] != n_rows:
        raise ShapeMismatch(f"{name} has {X.shape[0]} rows, expected {n_rows}")
    if not np.all(np.isfinite(X)):
        raise ShapeMismatch(f"{name} contains non-finite values")
    return X


def check_graphs(graphs):
    """Accept a single graph or a sequence of graphs; return a list."""
    from .graph import Graph

    if isinstance(graphs, Graph):
        return [graphs]
    graphs = list(graphs)
    for i, g in enumerate(graphs):
        if not isinstance(g, Graph):
            raise TypeError(f"item {i} is {type(g).__name__}, expected Graph")
    return graphs


def check_same_width(graphs):
    widths = {g.num_features for g in graphs}
    if len(widths) > 1:
        raise ShapeMismatch(f"graphs have mixed feature widths {sorted(widths)}")
    if not widths:
        raise FeatureMissing("no graphs given")
    return widths.pop()
