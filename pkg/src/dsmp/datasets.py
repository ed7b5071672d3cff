"""Synthetic graph generators, dataset containers and file formats.

Two on-disk formats are supported:

* JSON lines, one graph object per line::

    {"num_nodes": 3, "edges": [[0, 1], [1, 2]], "features": [[1.0], [1.0], [1.0]],
     "label": 0, "node_labels": null, "masks": null}

* edge-list text, one block per graph: a header ``N M d``, then ``M`` lines
  ``u v``, then ``N`` lines of ``d`` floats.

A dataset saved as ``data.jsonl`` carries its name, task and splits in
``data.jsonl.manifest.json``.
"""
from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exceptions import ParseError, SchemaError, SizeInvalid
from .graph import Graph, degrees_and_volume
from .model import make_rng

TASKS = ("graph_class", "node_class", "graph_reg")


@dataclass
class GraphDataset:
    graphs: List[Graph]
    task: str = "graph_class"
    splits: Dict[str, List[int]] = field(default_factory=dict)
    name: str = "dataset"

    def __post_init__(self):
        self.splits = {k: [int(i) for i in v] for k, v in self.splits.items()}
        seen = set()
        for k, idx in self.splits.items():
            for i in idx:
                if not 0 <= i < len(self.graphs):
                    raise SchemaError(f"split '{k}' index {i} out of range")
                if i in seen:
                    raise SchemaError(f"index {i} appears in more than one split")
                seen.add(i)
        widths = {g.num_features for g in self.graphs}
        if len(widths) > 1:
            raise SchemaError(f"graphs have mixed feature widths {sorted(widths)}")

    @property
    def num_features(self) -> int:
        return self.graphs[0].num_features if self.graphs else 0

    def __len__(self):
        return len(self.graphs)

    def __eq__(self, other):
        if not isinstance(other, GraphDataset):
            return NotImplemented
        return (self.name == other.name and self.task == other.task
                and self.splits == other.splits and self.graphs == other.graphs)

    def manifest(self) -> dict:
        return {"name": self.name, "task": self.task, "splits": self.splits}


# -- deterministic generators ------------------------------------------------

def _ones(n):
    return np.ones((n, 1))


def gen_cycle(n: int) -> Graph:
    if n < 3:
        raise SizeInvalid("cycle needs n >= 3")
    return Graph(n, [(i, (i + 1) % n) for i in range(n)], _ones(n))


def gen_path(n: int) -> Graph:
    if n < 2:
        raise SizeInvalid("path needs n >= 2")
    return Graph(n, [(i, i + 1) for i in range(n - 1)], _ones(n))


def gen_complete(n: int) -> Graph:
    if n < 2:
        raise SizeInvalid("complete graph needs n >= 2")
    return Graph(n, list(itertools.combinations(range(n), 2)), _ones(n))


def gen_empty(n: int) -> Graph:
    if n < 1:
        raise SizeInvalid("need n >= 1")
    return Graph(n, np.zeros((0, 2), np.int64), _ones(n))


def gen_barbell(clique_size: int, bridge_len: int = 1) -> Graph:
    """Two ``clique_size`` cliques joined by a path of ``bridge_len`` edges."""
    if clique_size < 3:
        raise SizeInvalid("clique_size must be >= 3")
    if bridge_len < 1:
        raise SizeInvalid("bridge_len must be >= 1")
    k = clique_size
    inner = bridge_len - 1
    n = 2 * k + inner
    second = k + inner
    edges = list(itertools.combinations(range(k), 2))
    edges += [(second + i, second + j) for i, j in itertools.combinations(range(k), 2)]
    chain = [k - 1] + list(range(k, k + inner)) + [second]
    edges += list(zip(chain[:-1], chain[1:]))
    return Graph(n, edges, _ones(n))


# -- random generators -------------------------------------------------------

def _check_prob(*ps):
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise SizeInvalid(f"probability {p} outside [0, 1]")


def _er_edges(rng, n, p):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def gen_erdos_renyi(n: int, p: float, seed: int = 0, rng=None) -> Graph:
    if n < 1:
        raise SizeInvalid("need n >= 1")
    _check_prob(p)
    rng = rng if rng is not None else make_rng(seed)
    return Graph(n, _er_edges(rng, n, p), _ones(n))


def gen_sbm(block_sizes: Sequence[int], p_in: float, p_out: float, seed: int = 0) -> Graph:
    sizes = [int(b) for b in block_sizes]
    if not sizes or min(sizes) < 1:
        raise SizeInvalid("block sizes must be positive")
    _check_prob(p_in, p_out)
    rng = make_rng(seed)
    block = np.repeat(np.arange(len(sizes)), sizes)
    n = len(block)
    iu, ju = np.triu_indices(n, 1)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1), _ones(n))


def stratified_split(labels, rng, fractions=(0.6, 0.2, 0.2)) -> Dict[str, List[int]]:
    labels = np.asarray(labels)
    out = {"train": [], "val": [], "test": []}
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        out["train"] += idx[:n_tr].tolist()
        out["val"] += idx[n_tr:n_tr + n_va].tolist()
        out["test"] += idx[n_tr + n_va:].tolist()
    return {k: sorted(v) for k, v in out.items()}


def gen_two_class_synthetic(num_graphs: int = 200, n_range=(10, 20), seed: int = 0,
                            p=(0.15, 0.45), noise: float = 0.1) -> GraphDataset:
    """Sparse-vs-dense Erdos-Renyi graphs with structural node features.

    Labels alternate 0/1. Each node carries ``degree / mean degree`` of its
    own graph plus Gaussian noise, so the class is only recoverable from how
    degrees spread over the topology, not from their scale.
    """
    if num_graphs < 20:
        raise SizeInvalid("num_graphs must be >= 20")
    lo, hi = int(n_range[0]), int(n_range[1])
    if lo < 2 or hi < lo:
        raise SizeInvalid(f"bad n_range {n_range}")
    rng = make_rng(seed)
    graphs, labels = [], []
    for i in range(num_graphs):
        y = i % 2
        n = int(rng.integers(lo, hi + 1))
        edges = _er_edges(rng, n, p[y])
        g = Graph(n, edges, np.zeros((n, 1)))
        deg, vol = degrees_and_volume(g)
        mean = vol / n
        base = deg / mean if mean > 0 else np.zeros(n)
        feats = (base + noise * rng.standard_normal(n)).reshape(-1, 1)
        graphs.append(Graph(n, edges, feats, label=y))
        labels.append(y)
    splits = stratified_split(labels, rng)
    return GraphDataset(graphs, "graph_class", splits, name=f"two_class_{num_graphs}_{seed}")


def mean_degree(g: Graph) -> float:
    _, vol = degrees_and_volume(g)
    return vol / g.num_nodes


def degree_threshold_oracle(ds: GraphDataset) -> dict:
    """Fit a mean-degree threshold on train, report accuracies on every split."""
    md = np.array([mean_degree(g) for g in ds.graphs])
    y = np.array([int(g.label) for g in ds.graphs])
    tr = np.asarray(ds.splits["train"])
    cands = np.unique(md[tr])
    mids = np.r_[cands[0] - 1, (cands[:-1] + cands[1:]) / 2, cands[-1] + 1]
    best = (-1.0, 0.0, 1)
    for t in mids:
        for sign in (1, -1):
            pred = (sign * (md[tr] - t) > 0).astype(int)
            acc = float(np.mean(pred == y[tr]))
            if acc > best[0]:
                best = (acc, float(t), sign)
    _, t, sign = best
    out = {"threshold": t, "sign": sign}
    for k, idx in ds.splits.items():
        idx = np.asarray(idx)
        out[k] = float(np.mean(((sign * (md[idx] - t)) > 0).astype(int) == y[idx])) if len(idx) else float("nan")
    return out


# -- JSON --------------------------------------------------------------------

def graph_to_dict(g: Graph) -> dict:
    label = g.label
    if isinstance(label, (np.integer,)):
        label = int(label)
    elif isinstance(label, np.floating):
        label = float(label)
    return {
        "num_nodes": g.num_nodes,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "label": label,
        "node_labels": None if g.node_labels is None else g.node_labels.tolist(),
        "masks": None if g.masks is None else {k: m.tolist() for k, m in g.masks.items()},
    }


_KEYS = {"num_nodes", "edges", "features", "label", "node_labels", "masks"}


def graph_from_dict(obj, where: str = "graph") -> Graph:
    if not isinstance(obj, dict):
        raise SchemaError("graph must be a JSON object", where=where)
    unknown = set(obj) - _KEYS
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}", where=where)
    for k in ("num_nodes", "edges"):
        if k not in obj:
            raise SchemaError(f"missing '{k}'", where=where)
    n = obj["num_nodes"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise SchemaError("num_nodes must be an integer", where=where)
    feats = obj.get("features")
    try:
        feats = np.ones((n, 1)) if feats is None else np.asarray(feats, dtype=float)
        if feats.ndim == 1 and feats.size == 0 and n:
            feats = feats.reshape(n, 0)
        edges = np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2)
        return Graph(n, edges, feats, obj.get("label"), obj.get("node_labels"), obj.get("masks"))
    except SchemaError as exc:
        raise SchemaError(str(exc), where=where) from None
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed field: {exc}", where=where) from None


def _parse_json_line(line, where):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", where=where) from None


def read_jsonl(path: str) -> List[Graph]:
    graphs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            graphs.append(graph_from_dict(_parse_json_line(line, where), where))
    if not graphs:
        raise ParseError("file contains no graphs", where=path)
    return graphs


def write_jsonl(graphs: Sequence[Graph], path: str) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_dict(g)) + "\n")


# -- edge list ---------------------------------------------------------------

def read_edgelist(path: str) -> List[Graph]:
    with open(path) as fh:
        lines = [(i, ln.split()) for i, ln in enumerate(fh, 1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ParseError("file contains no graphs", where=path)
    graphs, pos = [], 0
    while pos < len(lines):
        hdr_line, hdr = lines[pos]
        where = f"{path}:{hdr_line}"
        if len(hdr) != 3:
            raise ParseError("header must be 'N M d'", where=where)
        try:
            n, m, d = (int(x) for x in hdr)
        except ValueError:
            raise ParseError("header values must be integers", where=where) from None
        if pos + 1 + m + n > len(lines):
            raise ParseError("truncated graph block", where=where)
        edges = []
        for lineno, parts in lines[pos + 1:pos + 1 + m]:
            if len(parts) != 2:
                raise ParseError("edge line must be 'u v'", where=f"{path}:{lineno}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError("edge endpoints must be integers", where=f"{path}:{lineno}") from None
        feats = []
        for lineno, parts in lines[pos + 1 + m:pos + 1 + m + n]:
            if len(parts) != d:
                raise ParseError(f"expected {d} feature values", where=f"{path}:{lineno}")
            try:
                feats.append([float(x) for x in parts])
            except ValueError:
                raise ParseError("features must be numbers", where=f"{path}:{lineno}") from None
        try:
            graphs.append(Graph(n, np.asarray(edges, np.int64).reshape(-1, 2), np.asarray(feats).reshape(n, d)))
        except SchemaError as exc:
            raise SchemaError(str(exc), where=where) from None
        pos += 1 + m + n
    return graphs


def write_edgelist(graphs: Sequence[Graph], path: str) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(f"{g.num_nodes} {g.num_edges} {g.num_features}\n")
            for u, v in g.edges:
                fh.write(f"{u} {v}\n")
            for row in g.features:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


# -- datasets ----------------------------------------------------------------

def _infer_format(path):
    return "jsonl" if path.endswith((".jsonl", ".json")) else "edgelist"


def manifest_path(path: str) -> str:
    return path + ".manifest.json"


def load_dataset(path: str, format: Optional[str] = None) -> GraphDataset:
    fmt = format or _infer_format(path)
    if fmt == "jsonl":
        if path.endswith(".json"):
            graphs = [graph_from_dict(_load_json(path), path)]
        else:
            graphs = read_jsonl(path)
    elif fmt == "edgelist":
        graphs = read_edgelist(path)
    else:
        raise ParseError(f"unknown format {fmt!r}")
    man = {}
    if os.path.exists(manifest_path(path)):
        man = _load_json(manifest_path(path))
        if not isinstance(man, dict):
            raise SchemaError("manifest must be an object", where=manifest_path(path))
    task = man.get("task", "node_class" if len(graphs) == 1 and graphs[0].masks else "graph_class")
    if task not in TASKS:
        raise SchemaError(f"unknown task {task!r}", where=manifest_path(path))
    name = man.get("name", os.path.splitext(os.path.basename(path))[0])
    return GraphDataset(graphs, task, man.get("splits", {}), name)


def save_dataset(ds: GraphDataset, path: str, format: Optional[str] = None) -> None:
    fmt = format or _infer_format(path)
    if fmt == "jsonl":
        write_jsonl(ds.graphs, path)
    elif fmt == "edgelist":
        write_edgelist(ds.graphs, path)
    else:
        raise ParseError(f"unknown format {fmt!r}")
    with open(manifest_path(path), "w") as fh:
        json.dump(ds.manifest(), fh, indent=2)


def _load_json(path):
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        raise ParseError("empty file", where=path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", where=f"{path}:{exc.lineno}") from None


def load_graph(path: str) -> Graph:
    """Load a single graph from ``.json``, the first line of ``.jsonl``, or edge-list text."""
    if path.endswith(".json"):
        return graph_from_dict(_load_json(path), path)
    return load_dataset(path).graphs[0]


def save_graph(g: Graph, path: str) -> None:
    if path.endswith(".json"):
        with open(path, "w") as fh:
            json.dump(graph_to_dict(g), fh)
    elif path.endswith(".jsonl"):
        write_jsonl([g], path)
    else:
        write_edgelist([g], path)
