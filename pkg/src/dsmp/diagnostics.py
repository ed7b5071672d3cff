"""Energy, bottleneck, density, stability and spectral diagnostics."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ._validation import check_features
from .exceptions import (BackingMismatch, ConfigInvalid, DegenerateInput, Disconnected,
                         FeatureMissing, SizeInvalid, TooLarge)
from .framelet import FrameletConfig, FrameletOperatorSet, operator_set, operator_support
from .datasets import GraphDataset
from .graph import (Graph, adjacency, connected_components,
                    degrees_and_volume, eigendecompose, induced_subgraph,
                    normalized_laplacian, spectral_summary)
from .model import DsmpModel, forward_features, init_model, lipschitz_constant, make_rng

CHEEGER_MAX_NODES = 14
LAPLACIANS = ("sum_form", "combinatorial", "normalized")


# -- dirichlet energy --------------------------------------------------------

def _as_2d(g, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return check_features(X, g.num_nodes)


def dirichlet_energy(g: Graph, X, laplacian: str = "normalized") -> float:
    """Dirichlet energy of ``X`` on ``g``.

    ``sum_form`` is half the adjacency-weighted sum of squared differences,
    i.e. one term per undirected edge. The other two options return
    ``trace(X^T L X)`` for the corresponding Laplacian, evaluated edge by
    edge so that near-constant signals do not lose precision to cancellation.
    """
    X = _as_2d(g, X)
    if laplacian not in LAPLACIANS:
        raise ConfigInvalid(f"laplacian must be one of {LAPLACIANS}")
    if laplacian == "normalized":
        deg, _ = degrees_and_volume(g)
        scale = np.zeros_like(deg, dtype=float)
        scale[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
        X = X * scale[:, None]
    diff = X[g.edges[:, 0]] - X[g.edges[:, 1]]
    return float(np.sum(diff * diff))


def energy_split(g: Graph, X, opset: FrameletOperatorSet) -> dict:
    """Normalized-Laplacian energy of every framelet band and the relative residual."""
    X = _as_2d(g, X)
    total = dirichlet_energy(g, X)
    parts = {k: dirichlet_energy(g, Y) for k, Y in opset.apply_all(X).items()}
    low = parts.pop(opset.low_index)
    residual = abs(total - low - sum(parts.values())) / max(total, 1e-12)
    return {"total": total, "low": low, "high": parts, "residual": residual}


def energy_conservation_check(g: Graph, X, opset: FrameletOperatorSet) -> float:
    """Relative residual of the band-wise energy decomposition.

    Only a tight frame splits energy exactly, so anything other than the
    exact cascade operators is rejected.
    """
    if opset.backing != "exact" or opset.config.mode != "cascade":
        raise BackingMismatch("energy conservation needs the exact cascade operators")
    return energy_split(g, X, opset)["residual"]


def energy_trajectory(model: DsmpModel, g: Graph, X=None, laplacian: str = "normalized") -> np.ndarray:
    """Energy of ``X^(0), ..., X^(T)`` through the layer stack."""
    return np.array([dirichlet_energy(g, H, laplacian) for H in forward_features(model, g, X)])


def baseline_smoothing_layer(g: Graph, X) -> np.ndarray:
    """One step of symmetric-normalized averaging with self-loops."""
    X = _as_2d(g, X)
    A = adjacency(g, as_sparse=True)
    deg = np.asarray(A.sum(axis=1)).ravel() + 1.0
    s = 1.0 / np.sqrt(deg)
    return s[:, None] * (A @ (s[:, None] * X) + s[:, None] * X)


def baseline_trajectory(g: Graph, X, steps: int, laplacian: str = "normalized") -> np.ndarray:
    X = _as_2d(g, X)
    out = [dirichlet_energy(g, X, laplacian)]
    for _ in range(steps):
        X = baseline_smoothing_layer(g, X)
        out.append(dirichlet_energy(g, X, laplacian))
    return np.array(out)


# -- bottlenecks -------------------------------------------------------------

def cheeger_bruteforce(g: Graph) -> dict:
    """Exact Cheeger constant by enumerating every bipartition.

    Ties are broken towards the lexicographically smallest node subset.
    """
    n = g.num_nodes
    if n > CHEEGER_MAX_NODES:
        raise TooLarge(f"brute force limited to N <= {CHEEGER_MAX_NODES}, got {n}")
    if n < 2:
        raise SizeInvalid("need at least 2 nodes")
    if connected_components(g)[0] != 1:
        raise Disconnected("Cheeger constant needs a connected graph")
    deg, vol = degrees_and_volume(g)
    masks = np.arange(1, 2 ** n - 1, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    vol_s = bits @ deg
    cut = np.sum(bits[:, g.edges[:, 0]] != bits[:, g.edges[:, 1]], axis=1)
    denom = np.minimum(vol_s, vol - vol_s)
    h = cut / denom
    best = h.min()
    # integer cross-multiplication keeps the tie set exact
    i0 = int(np.argmin(h))
    ties = np.flatnonzero(cut * denom[i0] == cut[i0] * denom)
    subsets = [tuple(np.flatnonzero(bits[i]).tolist()) for i in ties]
    return {"h": float(best), "subset": list(min(subsets))}


def cheeger_bounds_check(g: Graph, slack: float = 1e-9) -> dict:
    h = cheeger_bruteforce(g)["h"]
    lam2 = spectral_summary(g).lambda_2
    lower, upper = lam2 / 2, math.sqrt(2 * lam2)
    return {
        "lambda_2": lam2,
        "lower": lower,
        "h": h,
        "upper": upper,
        "holds": bool(lower <= h + slack and h <= upper + slack),
    }


# -- support density ---------------------------------------------------------

def density_gain(g: Graph, cfg: FrameletConfig = None) -> dict:
    """How many node pairs the polynomial operators connect beyond ``A``."""
    cfg = cfg or FrameletConfig()
    S = operator_support(operator_set(g, cfg, "cheb"))
    A = adjacency(g) != 0
    nnz_a = int(A.sum())
    nnz_ra = int(S.sum())
    offdiag = nnz_ra - int(np.trace(S))
    return {
        "nnz_A": nnz_a,
        "nnz_RA": nnz_ra,
        "nnz_RA_offdiag": offdiag,
        "gain": offdiag - nnz_a,
        "contains_A": bool(np.all(S[A])),
    }


# -- perturbations -----------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSpec:
    target_fraction: float = 0.1
    candidate_pool: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.target_fraction <= 1:
            raise ConfigInvalid("target_fraction must lie in (0, 1]")
        if int(self.candidate_pool) != self.candidate_pool or self.candidate_pool < 1:
            raise ConfigInvalid("candidate_pool must be a positive integer")

    def num_targets(self, n: int) -> int:
        # rounding guards against 0.1 * 30 = 3.0000000000000004
        return max(1, math.ceil(round(self.target_fraction * n, 9)))


def _inject(X, spec, rng):
    n = X.shape[0]
    out = X.copy()
    targets = rng.choice(n, spec.num_targets(n), replace=False)
    k = min(int(spec.candidate_pool), n - 1)
    for i in targets:
        others = np.delete(np.arange(n), i)
        cand = np.sort(rng.choice(others, k, replace=False))
        dist = np.linalg.norm(X[cand] - X[i], axis=1)
        out[i] = X[cand[int(np.argmax(dist))]]
    return out, np.sort(targets)


def attribute_injection(obj: Union[Graph, GraphDataset], spec: PerturbationSpec, X=None):
    """Replace a random subset of node attributes with far-away ones.

    Each target takes the attributes of the most distant node among
    ``candidate_pool`` random candidates. Reads always use the original
    attributes, so a node can donate after it has itself been overwritten.
    Returns a perturbed copy of the graph (or of every graph in a dataset).
    """

    rng = make_rng(spec.seed)
    if isinstance(obj, GraphDataset):
        graphs = [_inject_graph(g, spec, rng, None) for g in obj.graphs]
        return GraphDataset(graphs, obj.task, obj.splits, obj.name)
    return _inject_graph(obj, spec, rng, X)


def _inject_graph(g, spec, rng, X):
    X = g.features if X is None else _as_2d(g, X)
    if X.shape[1] == 0:
        raise FeatureMissing("attribute injection needs node features")
    if g.num_nodes < 2:
        raise SizeInvalid("attribute injection needs at least 2 nodes")
    return g.with_features(_inject(np.asarray(X, float), spec, rng)[0])


def stability_probe(model: DsmpModel, g: Graph, X=None, spec: PerturbationSpec = None,
                    trials: int = 20) -> dict:
    """Compare measured feature deviation with the conservative Lipschitz bound.

    Trial ``t`` perturbs with seed ``spec.seed + t``. Features are taken
    after the last layer, before pooling and readout.
    """
    spec = spec or PerturbationSpec()
    X = _as_2d(g, g.features if X is None else X)
    opset = model.operators(g)
    base = forward_features(model, g, X, opset)[-1]
    bound = lipschitz_constant(model, "conservative")
    ratios = []
    for t in range(trials):
        rng = make_rng(spec.seed + t)
        Xp, _ = _inject(X, spec, rng)
        dx = np.linalg.norm(Xp - X)
        if dx == 0.0:
            continue
        df = np.linalg.norm(forward_features(model, g, Xp, opset)[-1] - base)
        ratios.append(float(df / dx))
    if not ratios:
        raise DegenerateInput("every trial left the input unchanged")
    worst = max(ratios)
    return {
        "measured_ratio": worst,
        "ratios": ratios,
        "bound_conservative": bound,
        "bound_max": lipschitz_constant(model, "max"),
        "within_bound": bool(worst <= bound * (1 + 1e-9)),
    }


# -- spectral histograms -----------------------------------------------------

def _graphs(obj) -> List[Graph]:
    return list(obj.graphs) if hasattr(obj, "graphs") else list(obj)


def frequency_profile(obj, tau: float = 1.2, bins: int = 20) -> dict:
    """Pooled normalized-Laplacian eigenvalue histogram over ``[0, 2]``."""
    lams = np.concatenate([eigendecompose(normalized_laplacian(g)).eigenvalues for g in _graphs(obj)])
    lams = np.clip(lams, 0.0, 2.0)
    counts, edges = np.histogram(lams, bins=bins, range=(0.0, 2.0))
    return {
        "edges": edges.tolist(),
        "counts": counts.tolist(),
        "tau": tau,
        "ratio_above": float(np.mean(lams > tau)),
        "num_eigenvalues": int(lams.size),
    }


def largest_component_gap(g: Graph) -> float:
    n, labels = connected_components(g)
    if n > 1:
        biggest = int(np.argmax(np.bincount(labels)))
        g = induced_subgraph(g, np.flatnonzero(labels == biggest))
    if g.num_nodes < 2:
        return 0.0
    return spectral_summary(g).lambda_2


def spectral_gap_histogram(obj, bins: int = 10) -> dict:
    gaps = np.array([largest_component_gap(g) for g in _graphs(obj)])
    counts, edges = np.histogram(np.clip(gaps, 0.0, 2.0), bins=bins, range=(0.0, 2.0))
    return {"edges": edges.tolist(), "counts": counts.tolist(), "gaps": gaps.tolist(),
            "mean_gap": float(gaps.mean())}


def write_histogram_csv(hist: dict, path: str) -> None:
    edges = hist["edges"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], hist["counts"]):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


# -- cost --------------------------------------------------------------------

def memory_estimate(g: Graph, d: int) -> dict:
    """Entry count ``6E + 2R + N d`` with ``R`` the pairs exactly two hops apart."""
    A = adjacency(g, as_sparse=True)
    A2 = (A @ A).tolil()
    A2.setdiag(0)
    two_hop = (A2.tocsr() != 0).astype(int) - (A != 0).astype(int)
    R = int((two_hop > 0).sum()) // 2
    E = g.num_edges
    return {"E": E, "R": R, "N": g.num_nodes, "d": d, "entries": 6 * E + 2 * R + g.num_nodes * d}


def bench(g: Graph, layer_counts: Sequence[int] = (1, 3, 50), repeats: int = 5, hidden: int = 16,
          cfg: FrameletConfig = None, backing: str = "cheb", seed: int = 0) -> dict:
    """Median forward time per layer count; operators are built once beforehand."""
    if repeats < 1:
        raise ConfigInvalid("repeats must be >= 1")
    cfg = cfg or FrameletConfig()
    opset = operator_set(g, cfg, backing)
    rows = []
    for T in layer_counts:
        model = init_model(g.num_features, 2, hidden=hidden, num_layers=int(T), config=cfg,
                           backing=backing, seed=seed)
        forward_features(model, g, opset=opset)  # warm-up, untimed
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            forward_features(model, g, opset=opset)
            times.append(time.perf_counter() - t0)
        rows.append({"layers": int(T), "median_seconds": float(np.median(times)), "repeats": repeats})
    return {"rows": rows, "memory": memory_estimate(g, hidden)}


# -- report ------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    dirichlet_sum: float
    dirichlet_quadratic: Dict[str, float]
    energy_split: dict
    spectral_gap: float
    density: dict
    cheeger: Optional[dict] = None
    stability: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        if not out["extra"]:
            out.pop("extra")
        return out


def _index_key(k):
    return f"{k[0]},{k[1]}"


def diagnose(g: Graph, X=None, cfg: FrameletConfig = None, *, cheeger: bool = False,
             model: DsmpModel = None, spec: PerturbationSpec = None, trials: int = 20) -> DiagnosticsReport:
    cfg = cfg or FrameletConfig()
    X = _as_2d(g, g.features if X is None else X)
    split = energy_split(g, X, operator_set(g, cfg, "exact"))
    report = DiagnosticsReport(
        dirichlet_sum=dirichlet_energy(g, X, "sum_form"),
        dirichlet_quadratic={
            "combinatorial": dirichlet_energy(g, X, "combinatorial"),
            "normalized": dirichlet_energy(g, X, "normalized"),
        },
        energy_split={
            "low": split["low"],
            "high": {_index_key(k): v for k, v in split["high"].items()},
            "residual": split["residual"],
        },
        spectral_gap=spectral_summary(g).lambda_2,
        density=density_gain(g, cfg),
    )
    if cheeger:
        report.cheeger = cheeger_bounds_check(g)
    if model is not None:
        probe = stability_probe(model, g, X, spec, trials)
        report.stability = {k: probe[k] for k in ("measured_ratio", "bound_conservative", "within_bound")}
    return report


def write_report(report: Union[DiagnosticsReport, dict], path: str, **meta) -> None:
    body = report.to_dict() if isinstance(report, DiagnosticsReport) else dict(report)
    body.update(meta)
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
