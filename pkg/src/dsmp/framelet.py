"""Haar-type undecimated graph framelets.

Two multiplier families are provided. The *cascade* family builds level
``l`` from products of dilated low-pass masks,

    g_{r,l}(lam) = b(2^{l-1-R} lam) * prod_{j<l} a(2^{j-1-R} lam),
    g_{0,J}(lam) = prod_{j<=J} a(2^{j-1-R} lam),

and telescopes to an exact partition of unity. The *direct* family uses the
closed-form scaling functions ``alpha(lam/2)`` and ``beta(lam/2^l)``; it is
kept for comparison and is not tight for ``J >= 2``.

Operators are realised either exactly through the eigendecomposition of the
normalized Laplacian or as products of Chebyshev polynomials in it.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from ._validation import check_features
from .exceptions import BackingMismatch, ConfigInvalid
from .graph import DENSE_LIMIT, Graph, eigendecompose, normalized_laplacian

Index = Tuple[int, int]
MODES = ("cascade", "direct")


# -- filter bank -------------------------------------------------------------

def a_hat(x):
    return np.cos(np.asarray(x, dtype=float) / 2.0)


def b_hat(x):
    return np.sin(np.asarray(x, dtype=float) / 2.0)


def alpha_hat(xi):
    xi = np.asarray(xi, dtype=float)
    half = xi / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(half == 0.0, 1.0, np.sin(half) / np.where(half == 0.0, 1.0, half))
    return out


def beta_hat(xi):
    return np.sqrt(np.clip(1.0 - alpha_hat(xi) ** 2, 0.0, None))


# -- configuration -----------------------------------------------------------

def smallest_dilation(J: int, lambda_up: float) -> int:
    """Smallest integer R with 2^R pi >= lambda_up and 2^(J-1-R) lambda_up <= pi."""
    r = math.ceil(J - 1 + math.log2(lambda_up / math.pi) - 1e-12)
    while not _dilation_ok(r, J, lambda_up):
        r += 1
    return r


def _dilation_ok(R: int, J: int, lambda_up: float) -> bool:
    return (2.0 ** R) * math.pi >= lambda_up and (2.0 ** (J - 1 - R)) * lambda_up <= math.pi * (1 + 1e-15)


@dataclass(frozen=True)
class FrameletConfig:
    """Framelet hyperparameters.

    ``R=None`` resolves to the smallest admissible dilation for
    ``lambda_up``. Only the Haar-type bank (``K=1``) is available.
    """

    K: int = 1
    J: int = 2
    R: Optional[int] = None
    cheb_order: int = 8
    mode: str = "cascade"
    lambda_up: float = 2.0

    def __post_init__(self):
        if self.K != 1:
            raise ConfigInvalid("only the Haar-type bank (K=1) is implemented")
        if int(self.J) != self.J or self.J < 1:
            raise ConfigInvalid(f"J must be an integer >= 1, got {self.J}")
        if int(self.cheb_order) != self.cheb_order or self.cheb_order < 1:
            raise ConfigInvalid(f"cheb_order must be an integer >= 1, got {self.cheb_order}")
        if self.mode not in MODES:
            raise ConfigInvalid(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.lambda_up > 0 and math.isfinite(self.lambda_up)):
            raise ConfigInvalid("lambda_up must be positive")
        if self.R is None:
            object.__setattr__(self, "R", smallest_dilation(self.J, self.lambda_up))
        elif not _dilation_ok(self.R, self.J, self.lambda_up):
            raise ConfigInvalid(
                f"dilation R={self.R} violates 2^R*pi >= {self.lambda_up} "
                f"or 2^(J-1-R)*lambda_up <= pi for J={self.J}"
            )

    def indices(self) -> List[Index]:
        return [(0, self.J)] + [(r, l) for r in range(1, self.K + 1) for l in range(1, self.J + 1)]

    def high_indices(self) -> List[Index]:
        return self.indices()[1:]

    def replace(self, **kw) -> "FrameletConfig":
        if "J" in kw or "lambda_up" in kw:
            kw.setdefault("R", None)
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "J": self.J,
            "R": self.R,
            "cheb_order": self.cheb_order,
            "mode": self.mode,
            "lambda_up": self.lambda_up,
        }


# -- multipliers -------------------------------------------------------------

def _scaled(fn, scale):
    return lambda lam: fn(scale * np.asarray(lam, dtype=float))


def multiplier_factors(cfg: FrameletConfig) -> Dict[Index, List[Callable]]:
    """Per-index list of scalar factors, in application order (level 1 first)."""
    out = {}
    J, R = cfg.J, cfg.R
    if cfg.mode == "cascade":
        lows = [_scaled(a_hat, 2.0 ** (j - 1 - R)) for j in range(1, J + 1)]
        out[(0, J)] = lows
        for r in range(1, cfg.K + 1):
            for l in range(1, J + 1):
                out[(r, l)] = lows[: l - 1] + [_scaled(b_hat, 2.0 ** (l - 1 - R))]
    else:
        out[(0, J)] = [_scaled(alpha_hat, 0.5)]
        for r in range(1, cfg.K + 1):
            for l in range(1, J + 1):
                out[(r, l)] = [_scaled(beta_hat, 2.0 ** -l)]
    return out


def spectral_multipliers(cfg: FrameletConfig) -> Dict[Index, Callable]:
    """Full multiplier ``g_k(lam)`` for every operator index."""

    def product(factors):
        def g(lam):
            out = np.ones_like(np.asarray(lam, dtype=float))
            for f in factors:
                out = out * f(lam)
            return out

        return g

    return {k: product(fs) for k, fs in multiplier_factors(cfg).items()}


# -- chebyshev ---------------------------------------------------------------

def cheb_fit(gfun: Callable, order: int, lambda_up: float) -> np.ndarray:
    """Chebyshev interpolant of ``gfun`` on ``[0, lambda_up]``.

    Interpolates at the ``order + 1`` Chebyshev-Gauss nodes; the returned
    coefficients multiply ``T_k(2 x / lambda_up - 1)``.
    """
    if order < 1:
        raise ConfigInvalid("order must be >= 1")
    if lambda_up <= 0:
        raise ConfigInvalid("lambda_up must be positive")
    return npcheb.chebinterpolate(lambda t: gfun(lambda_up * (t + 1.0) / 2.0), order)


def cheb_eval(coeffs: np.ndarray, x, lambda_up: float):
    """Evaluate a fitted series at scalar points ``x``."""
    return npcheb.chebval(2.0 * np.asarray(x, dtype=float) / lambda_up - 1.0, coeffs)


def clenshaw_apply(L, coeffs: np.ndarray, X: np.ndarray, lambda_up: float) -> np.ndarray:
    """Compute ``sum_k c_k T_k(2L/lambda_up - I) X`` by Clenshaw's recurrence."""
    scale = 2.0 / lambda_up

    def shifted(Y):
        return scale * (L @ Y) - Y

    b1 = np.zeros_like(X)
    b2 = np.zeros_like(X)
    for c in coeffs[:0:-1]:
        b1, b2 = c * X + 2.0 * shifted(b1) - b2, b1
    return coeffs[0] * X + shifted(b1) - b2


# -- operator sets -----------------------------------------------------------

class FrameletOperatorSet:
    """Low-pass and high-pass framelet operators on one graph.

    Build with :func:`exact_operator_set` or :func:`cheb_operator_set`.
    Instances are read-only after construction.
    """

    def __init__(self, config, backing, num_nodes, *, eig=None, multipliers=None,
                 laplacian=None, coefficients=None):
        self.config = config
        self.backing = backing
        self.num_nodes = num_nodes
        self.eig = eig
        self.multipliers = multipliers
        self.laplacian = laplacian
        self.coefficients = coefficients
        self._dense = {}

    @property
    def indices(self) -> List[Index]:
        return self.config.indices()

    @property
    def low_index(self) -> Index:
        return (0, self.config.J)

    def _check_index(self, index):
        index = tuple(index)
        if index not in self.indices:
            raise ConfigInvalid(f"unknown operator index {index}")
        return index

    def apply(self, index, X) -> np.ndarray:
        index = self._check_index(index)
        X = check_features(X, self.num_nodes)
        if self.backing == "exact":
            U = self.eig.eigenvectors
            return U @ (self.multipliers[index][:, None] * (U.T @ X))
        out = X
        for c in self.coefficients[index]:
            out = clenshaw_apply(self.laplacian, c, out, self.config.lambda_up)
        return out

    def apply_all(self, X) -> Dict[Index, np.ndarray]:
        return {k: self.apply(k, X) for k in self.indices}

    def matrix(self, index) -> np.ndarray:
        """Dense ``N x N`` matrix of one operator (cached)."""
        index = self._check_index(index)
        if index not in self._dense:
            if self.backing == "exact":
                U = self.eig.eigenvectors
                M = (U * self.multipliers[index]) @ U.T
            else:
                M = self.apply(index, np.eye(self.num_nodes))
            M.setflags(write=False)
            self._dense[index] = M
        return self._dense[index]

    def composite(self, index) -> np.ndarray:
        """Dense ``W_low @ W_index``; the low index itself maps to ``W_low``."""
        index = self._check_index(index)
        if index == self.low_index:
            return self.matrix(index)
        key = ("low", index)
        if key not in self._dense:
            M = self.matrix(self.low_index) @ self.matrix(index)
            M.setflags(write=False)
            self._dense[key] = M
        return self._dense[key]


def exact_operator_set(g: Graph, cfg: FrameletConfig, dense_limit: int = DENSE_LIMIT) -> FrameletOperatorSet:
    eig = eigendecompose(normalized_laplacian(g), dense_limit)
    lam = eig.eigenvalues
    mults = {}
    for k, fn in spectral_multipliers(cfg).items():
        v = np.asarray(fn(lam), dtype=float)
        v.setflags(write=False)
        mults[k] = v
    return FrameletOperatorSet(cfg, "exact", g.num_nodes, eig=eig, multipliers=mults)


def cheb_operator_set(g: Graph, cfg: FrameletConfig) -> FrameletOperatorSet:
    coeffs = {
        k: [cheb_fit(f, cfg.cheb_order, cfg.lambda_up) for f in factors]
        for k, factors in multiplier_factors(cfg).items()
    }
    L = normalized_laplacian(g, as_sparse=True)
    return FrameletOperatorSet(cfg, "cheb", g.num_nodes, laplacian=L, coefficients=coeffs)


def operator_set(g: Graph, cfg: FrameletConfig, backing: str = "exact") -> FrameletOperatorSet:
    """Build (or fetch from the graph's cache) the operator set for ``cfg``."""
    if backing not in ("exact", "cheb"):
        raise ConfigInvalid(f"backing must be 'exact' or 'cheb', got {backing!r}")
    key = ("opset", backing, cfg)
    if key not in g._cache:
        build = exact_operator_set if backing == "exact" else cheb_operator_set
        g._cache[key] = build(g, cfg)
    return g._cache[key]


# -- analysis ----------------------------------------------------------------

def tightness_residual(opset: FrameletOperatorSet, trials: int = 1, seed: int = 0, width: int = 3) -> float:
    """Worst relative Parseval defect over random signals."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        X = rng.standard_normal((opset.num_nodes, width))
        total = sum(np.sum(Y * Y) for Y in opset.apply_all(X).values())
        ref = np.sum(X * X)
        worst = max(worst, abs(total - ref) / ref)
    return float(worst)


def operator_error(approx: FrameletOperatorSet, exact: FrameletOperatorSet) -> float:
    """Largest spectral-norm gap between matching operators."""
    return float(max(np.linalg.norm(approx.matrix(k) - exact.matrix(k), 2) for k in exact.indices))


def operator_support(opset: FrameletOperatorSet, eps: float = 1e-12) -> np.ndarray:
    """Binary union of operator supports; the diagonal is always included."""
    if opset.backing != "cheb":
        raise BackingMismatch("support analysis needs the chebyshev backing")
    S = np.eye(opset.num_nodes, dtype=bool)
    for k in opset.indices:
        S |= np.abs(opset.matrix(k)) > eps
    return S | S.T


def write_coefficients(opset: FrameletOperatorSet, X, out_dir: str) -> List[str]:
    """Write one CSV per operator index; returns the file names."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = opset.config
    order = cfg.cheb_order if opset.backing == "cheb" else "exact"
    names = []
    for (r, l), Y in opset.apply_all(X).items():
        name = f"W_{r}_{l}.csv"
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(f"# operator=({r},{l}) mode={cfg.mode} order={order}\n")
            w = csv.writer(fh)
            for row in Y:
                w.writerow([repr(float(v)) for v in row])
        names.append(name)
    return names


def read_coefficients(path: str) -> np.ndarray:
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return np.array([[float(v) for v in r.strip().split(",")] for r in rows if r.strip()])
