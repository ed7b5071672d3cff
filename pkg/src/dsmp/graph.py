"""Undirected attributed graphs, Laplacians and their spectra."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as sparse_linalg

from .exceptions import NonSymmetric, SchemaError, ShapeMismatch, SizeLimit

DENSE_LIMIT = 3000
EIG_CLAMP = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with node features.

    Edges are stored as an ``(M, 2)`` integer array with ``u < v``.
    Self-loops and repeated unordered pairs are rejected rather than
    silently merged.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    label: Optional[float] = None
    node_labels: Optional[np.ndarray] = None
    masks: Optional[Mapping[str, np.ndarray]] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 1:
            raise SchemaError("num_nodes must be a positive integer")
        object.__setattr__(self, "num_nodes", n)

        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2) if len(self.edges) else np.zeros((0, 2), np.int64)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            bad = edges[(edges < 0).any(axis=1) | (edges >= n).any(axis=1)][0]
            raise SchemaError(f"edge ({bad[0]}, {bad[1]}) has endpoint outside [0, {n})")
        if np.any(edges[:, 0] == edges[:, 1]):
            u = int(edges[edges[:, 0] == edges[:, 1]][0, 0])
            raise SchemaError(f"self-loop at node {u}")
        edges = np.sort(edges, axis=1)
        if len(np.unique(edges, axis=0)) != len(edges):
            raise SchemaError("duplicate edge")
        object.__setattr__(self, "edges", _frozen(edges))

        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise SchemaError(f"features must have {n} rows, got shape {feats.shape}")
        object.__setattr__(self, "features", _frozen(feats))

        if self.node_labels is not None:
            nl = np.asarray(self.node_labels, dtype=np.int64)
            if nl.shape != (n,):
                raise SchemaError(f"node_labels must have length {n}")
            object.__setattr__(self, "node_labels", _frozen(nl))
        if self.masks is not None:
            masks = {}
            for k, m in self.masks.items():
                m = np.asarray(m, dtype=bool)
                if m.shape != (n,):
                    raise SchemaError(f"mask '{k}' must have length {n}")
                masks[k] = _frozen(m)
            object.__setattr__(self, "masks", masks)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def with_features(self, features) -> "Graph":
        return Graph(self.num_nodes, self.edges, features, self.label, self.node_labels, self.masks)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        same_masks = (self.masks is None) == (other.masks is None)
        if same_masks and self.masks is not None:
            same_masks = self.masks.keys() == other.masks.keys() and all(
                np.array_equal(self.masks[k], other.masks[k]) for k in self.masks
            )
        same_nl = (self.node_labels is None) == (other.node_labels is None) and (
            self.node_labels is None or np.array_equal(self.node_labels, other.node_labels)
        )
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
            and self.label == other.label
            and same_nl
            and same_masks
        )

    __hash__ = None


def from_edges(n: int, edges: Sequence, features=None, **kw) -> Graph:
    """Build a graph, defaulting features to a column of ones."""
    if features is None:
        features = np.ones((n, 1))
    return Graph(n, np.asarray(list(edges), dtype=np.int64).reshape(-1, 2), features, **kw)


def permute(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel nodes so that old node ``i`` becomes ``perm[i]``."""
    perm = np.asarray(perm)
    feats = np.empty_like(g.features)
    feats[perm] = g.features
    nl = None
    if g.node_labels is not None:
        nl = np.empty_like(g.node_labels)
        nl[perm] = g.node_labels
    masks = None
    if g.masks is not None:
        masks = {}
        for k, m in g.masks.items():
            mm = np.empty_like(m)
            mm[perm] = m
            masks[k] = mm
    return Graph(g.num_nodes, perm[g.edges], feats, g.label, nl, masks)


def disjoint_union(a: Graph, b: Graph) -> Graph:
    edges = np.vstack([a.edges, b.edges + a.num_nodes])
    return Graph(a.num_nodes + b.num_nodes, edges, np.vstack([a.features, b.features]))


def adjacency(g: Graph, as_sparse: bool = False):
    """Symmetric 0/1 adjacency matrix."""
    key = "sparse" if as_sparse else "dense"
    if key not in g._cache:
        n = g.num_nodes
        u, v = g.edges[:, 0], g.edges[:, 1]
        data = np.ones(2 * len(u))
        A = sparse.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        g._cache[key] = A if as_sparse else A.toarray()
    return g._cache[key]


def degrees_and_volume(g: Graph):
    deg = np.zeros(g.num_nodes)
    np.add.at(deg, g.edges.ravel(), 1.0)
    return deg, float(deg.sum())


def combinatorial_laplacian(g: Graph, as_sparse: bool = False):
    A = adjacency(g, as_sparse=True)
    deg, _ = degrees_and_volume(g)
    L = sparse.diags(deg) - A
    return L.tocsr() if as_sparse else L.toarray()


def _inv_sqrt_degrees(deg):
    out = np.zeros_like(deg)
    nz = deg > 0
    out[nz] = 1.0 / np.sqrt(deg[nz])
    return out


def normalized_laplacian(g: Graph, as_sparse: bool = False):
    """``D^{-1/2} (D - A) D^{-1/2}`` with zero rows for isolated nodes."""
    A = adjacency(g, as_sparse=True)
    deg, _ = degrees_and_volume(g)
    s = sparse.diags(_inv_sqrt_degrees(deg))
    L = sparse.diags((deg > 0).astype(float)) - s @ A @ s
    return L.tocsr() if as_sparse else L.toarray()


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


def _fix_signs(U: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    # first entry whose magnitude exceeds tol is made positive
    idx = np.argmax(np.abs(U) > tol, axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def eigendecompose(L, dense_limit: int = DENSE_LIMIT) -> EigenSystem:
    """Full symmetric eigendecomposition with a deterministic sign convention.

    Eigenvalues are returned ascending; anything below ``1e-10`` is
    clamped to zero.
    """
    if sparse.issparse(L):
        L = L.toarray()
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got {L.shape}")
    n = L.shape[0]
    if n > dense_limit:
        raise SizeLimit(f"N={n} exceeds dense limit {dense_limit}")
    asym = np.max(np.abs(L - L.T)) if n else 0.0
    if asym > 1e-12:
        raise NonSymmetric(f"max asymmetry {asym:.3e} > 1e-12")
    w, U = np.linalg.eigh(L)
    w = np.where(w < EIG_CLAMP, 0.0, w)
    return EigenSystem(_frozen(w), _frozen(_fix_signs(U)))


def connected_components(g: Graph):
    """Return ``(count, labels)``."""
    n, labels = csgraph.connected_components(adjacency(g, as_sparse=True), directed=False)
    return int(n), labels


def power_iteration_lambda_max(L, tol: float = 1e-8, max_iter: int = 10000, seed: int = 0) -> float:
    """Largest eigenvalue of a PSD matrix by power iteration."""
    n = L.shape[0]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = L @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nrm
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    return lam


@dataclass(frozen=True)
class SpectralSummary:
    lambda_max: float
    lambda_2: float
    num_components: int


def spectral_summary(g: Graph, dense_limit: int = DENSE_LIMIT) -> SpectralSummary:
    ncomp, _ = connected_components(g)
    n = g.num_nodes
    if n <= dense_limit:
        w = eigendecompose(normalized_laplacian(g), dense_limit).eigenvalues
        lam2 = float(w[1]) if n > 1 else 0.0
        return SpectralSummary(float(w[-1]), lam2, ncomp)
    L = normalized_laplacian(g, as_sparse=True)
    lam_max = power_iteration_lambda_max(L)
    small = sparse_linalg.eigsh(L, k=2, which="SA", return_eigenvectors=False)
    lam2 = float(np.sort(small)[1])
    if lam2 < EIG_CLAMP:
        lam2 = 0.0
    return SpectralSummary(lam_max, lam2, ncomp)


def induced_subgraph(g: Graph, nodes: Sequence[int]) -> Graph:
    nodes = np.asarray(sorted(nodes))
    remap = -np.ones(g.num_nodes, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    keep = (remap[g.edges[:, 0]] >= 0) & (remap[g.edges[:, 1]] >= 0)
    return Graph(len(nodes), remap[g.edges[keep]], g.features[nodes])


def spectrum_facts_check(g: Graph, dense_limit: int = DENSE_LIMIT) -> dict:
    """Check the four classical facts about the normalized Laplacian spectrum."""
    w = eigendecompose(normalized_laplacian(g), dense_limit).eigenvalues
    deg, _ = degrees_and_volume(g)
    n = g.num_nodes
    isolated = bool(np.any(deg == 0))
    total = float(w.sum())
    ncomp, labels = connected_components(g)

    comp_spectra = []
    for c in range(ncomp):
        sub = induced_subgraph(g, np.flatnonzero(labels == c))
        comp_spectra.append(eigendecompose(normalized_laplacian(sub), dense_limit).eigenvalues)
    union = np.sort(np.concatenate(comp_spectra))

    # fact (ii): connected iff lambda_2 > 0
    lam2 = float(w[1]) if n > 1 else 0.0
    return {
        "sum_eigenvalues": total,
        "sum_le_n": total <= n + 1e-8,
        "sum_equality": abs(total - n) <= 1e-8,
        "sum_equality_iff_no_isolated": (abs(total - n) <= 1e-8) == (not isolated),
        "connected": ncomp == 1,
        "gap_iff_connected": (lam2 > 0) == (ncomp == 1) if n > 1 else True,
        "max_le_2": bool(w[-1] <= 2 + 1e-9),
        "lambda_max": float(w[-1]),
        "components_union": bool(np.allclose(union, w, atol=1e-7, rtol=0)),
    }
