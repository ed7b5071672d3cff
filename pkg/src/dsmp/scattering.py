"""Parameter-free framelet scattering cascade."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from ._validation import check_features
from .exceptions import ConfigInvalid, ShapeMismatch
from .framelet import FrameletConfig, FrameletOperatorSet, operator_set
from .graph import Graph

MAX_DEPTH = 4

Path = Tuple[Tuple[int, int], ...]


def enumerate_paths(K: int, J: int, m: int) -> List[Path]:
    """All high-pass paths of length ``0 .. m-1``, shortest first, then lexicographic."""
    if min(K, J, m) < 1:
        raise ConfigInvalid("K, J and m must be >= 1")
    steps = [(r, l) for r in range(1, K + 1) for l in range(1, J + 1)]
    paths = []
    for t in range(m):
        paths.extend(itertools.product(steps, repeat=t))
    return [tuple(p) for p in paths]


@dataclass(frozen=True)
class ScatteringCoefficients:
    entries: Dict[Path, np.ndarray]
    depth: int
    config: FrameletConfig

    @property
    def paths(self) -> List[Path]:
        return enumerate_paths(self.config.K, self.config.J, self.depth)

    def flatten(self) -> np.ndarray:
        return flatten(self)


def _check_depth(m):
    if int(m) != m or m < 1 or m > MAX_DEPTH:
        raise ConfigInvalid(f"depth must be an integer in [1, {MAX_DEPTH}], got {m}")


def scatter(g: Graph, X, cfg: FrameletConfig, depth: int, backing: str = "exact",
            opset: FrameletOperatorSet = None) -> ScatteringCoefficients:
    """Scattering coefficients ``W_low |W_pt ... |W_p1 X| ... |`` for every path."""
    _check_depth(depth)
    X = check_features(X, g.num_nodes)
    if opset is None:
        opset = operator_set(g, cfg, backing)
    elif opset.num_nodes != g.num_nodes:
        raise ShapeMismatch("operator set built for a different graph")
    low = opset.low_index

    # modulus signals keyed by path prefix, filled breadth-first so each
    # prefix is computed once
    mod = {(): X}
    entries = {}
    for path in enumerate_paths(cfg.K, cfg.J, depth):
        if path:
            mod[path] = np.abs(opset.apply(path[-1], mod[path[:-1]]))
        entries[path] = opset.apply(low, mod[path])
    return ScatteringCoefficients(entries, depth, cfg)


def flatten(c: ScatteringCoefficients) -> np.ndarray:
    """Stack coefficient matrices column-wise in canonical path order."""
    return np.hstack([c.entries[p] for p in c.paths])


def unflatten(F: np.ndarray, cfg: FrameletConfig, depth: int) -> ScatteringCoefficients:
    paths = enumerate_paths(cfg.K, cfg.J, depth)
    if F.shape[1] % len(paths):
        raise ShapeMismatch(f"{F.shape[1]} columns do not split into {len(paths)} paths")
    d = F.shape[1] // len(paths)
    return ScatteringCoefficients({p: F[:, i * d:(i + 1) * d] for i, p in enumerate(paths)}, depth, cfg)


def path_to_json(path: Path) -> list:
    return [list(step) for step in path]


def write_flat(c: ScatteringCoefficients, csv_path: str, sidecar_path: str) -> None:
    F = flatten(c)
    np.savetxt(csv_path, F, delimiter=",", fmt="%.17g")
    d = F.shape[1] // len(c.paths)
    with open(sidecar_path, "w") as fh:
        json.dump(
            {
                "paths": [path_to_json(p) for p in c.paths],
                "features_per_path": d,
                "depth": c.depth,
                "config": c.config.to_dict(),
            },
            fh,
            indent=2,
        )
