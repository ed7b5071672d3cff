"""Trainable deep scattering message passing (DSMP) model.

Each SMP layer computes

    Y = (W_low X) theta_0 + sum_{r,l} (W_low W_{r,l} X) theta_{r,l}
    Z = relu(Y P + bias)
    X <- X + Z

with all weights acting on the feature dimension. Gradients are derived by
hand; there is no autodiff dependency.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._validation import check_features
from .exceptions import (
    CacheMismatch,
    ConfigInvalid,
    EmptySplit,
    LabelOutOfRange,
    ParseError,
    ShapeMismatch,
    VersionMismatch,
)
from .framelet import FrameletConfig, FrameletOperatorSet, operator_set
from .graph import Graph

CHECKPOINT_VERSION = 1
TASKS = ("graph_class", "node_class", "graph_reg")


def make_rng(seed: int) -> np.random.Generator:
    """The single PRNG used for init, shuffling and perturbations (SFC64)."""
    return np.random.Generator(np.random.SFC64(int(seed)))


def glorot(rng, fan_in, fan_out):
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


# -- parameters --------------------------------------------------------------

@dataclass
class SmpLayerParams:
    """Weights of one SMP layer.

    With ``psd=True`` the stored ``theta_*`` arrays are factors ``S`` and the
    effective weights are ``S.T @ S``.
    """

    theta_0: np.ndarray
    theta_high: Dict[tuple, np.ndarray]
    P: np.ndarray
    bias: np.ndarray
    psd: bool = False

    @classmethod
    def init(cls, rng, d, high_indices, psd=False):
        theta_0 = glorot(rng, d, d)
        theta_high = {k: glorot(rng, d, d) for k in high_indices}
        return cls(theta_0, theta_high, glorot(rng, d, d), np.zeros(d), psd)

    @classmethod
    def zeros(cls, d, high_indices, psd=False):
        return cls(np.zeros((d, d)), {k: np.zeros((d, d)) for k in high_indices},
                   np.zeros((d, d)), np.zeros(d), psd)

    def named(self):
        """``(name, array)`` pairs; arrays are the live storage."""
        out = [("theta_0", self.theta_0)]
        out += [(f"theta_{r}_{l}", self.theta_high[(r, l)]) for r, l in sorted(self.theta_high)]
        out += [("P", self.P), ("bias", self.bias)]
        return out

    def effective(self, theta):
        return theta.T @ theta if self.psd else theta

    def check(self):
        for name, a in self.named():
            if not np.all(np.isfinite(a)):
                raise ConfigInvalid(f"{name} has non-finite entries")


@dataclass
class DsmpModel:
    layers: List[SmpLayerParams]
    config: FrameletConfig
    readout_W: np.ndarray
    readout_b: np.ndarray
    task: str = "graph_class"
    input_proj: Optional[np.ndarray] = None
    backing: str = "cheb"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigInvalid(f"task must be one of {TASKS}")
        widths = {l.P.shape[0] for l in self.layers} | {self.readout_W.shape[0]}
        if len(widths) != 1:
            raise ShapeMismatch(f"layers disagree on feature width: {sorted(widths)}")
        if self.task != "graph_reg" and self.readout_W.shape[1] < 2:
            raise ConfigInvalid("classification needs at least 2 classes")

    @property
    def width(self) -> int:
        return self.readout_W.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.readout_W.shape[1]

    @property
    def psd(self) -> bool:
        return bool(self.layers and self.layers[0].psd)

    def parameters(self):
        """Ordered ``(name, array)`` pairs over the whole model."""
        out = []
        if self.input_proj is not None:
            out.append(("input_proj", self.input_proj))
        for i, layer in enumerate(self.layers):
            out += [(f"layer_{i}.{n}", a) for n, a in layer.named()]
        out += [("readout.W", self.readout_W), ("readout.b", self.readout_b)]
        return out

    def operators(self, g: Graph) -> FrameletOperatorSet:
        return operator_set(g, self.config, self.backing)


def init_model(d_in: int, n_outputs: int, *, hidden: int = 32, num_layers: int = 2,
               task: str = "graph_class", config: FrameletConfig = None,
               backing: str = "cheb", psd: bool = False, seed: int = 0) -> DsmpModel:
    config = config or FrameletConfig()
    rng = make_rng(seed)
    proj = glorot(rng, d_in, hidden) if d_in != hidden else None
    layers = [SmpLayerParams.init(rng, hidden, config.high_indices(), psd) for _ in range(num_layers)]
    W = glorot(rng, hidden, n_outputs)
    return DsmpModel(layers, config, W, np.zeros(n_outputs), task, proj, backing)


def zero_model(d: int, n_outputs: int, *, num_layers: int = 2, task: str = "graph_class",
               config: FrameletConfig = None, backing: str = "exact") -> DsmpModel:
    config = config or FrameletConfig()
    layers = [SmpLayerParams.zeros(d, config.high_indices()) for _ in range(num_layers)]
    return DsmpModel(layers, config, np.zeros((d, n_outputs)), np.zeros(n_outputs), task, None, backing)


# -- single layer ------------------------------------------------------------

@dataclass
class LayerCache:
    layer: SmpLayerParams
    opset: FrameletOperatorSet
    X: np.ndarray
    H0: np.ndarray
    Hk: Dict[tuple, np.ndarray]
    thetas: Dict[object, np.ndarray]
    Y: np.ndarray
    A: np.ndarray


def smp_forward(layer: SmpLayerParams, opset: FrameletOperatorSet, X):
    X = check_features(X, opset.num_nodes)
    d = layer.P.shape[0]
    if X.shape[1] != d:
        raise ShapeMismatch(f"layer width {d} but X has {X.shape[1]} columns")
    th0 = layer.effective(layer.theta_0)
    H0 = opset.matrix(opset.low_index) @ X
    Y = H0 @ th0
    Hk, thetas = {}, {0: th0}
    for k, theta in layer.theta_high.items():
        Hk[k] = opset.composite(k) @ X
        thetas[k] = layer.effective(theta)
        Y = Y + Hk[k] @ thetas[k]
    A = Y @ layer.P + layer.bias
    X_out = X + np.maximum(A, 0.0)
    return X_out, LayerCache(layer, opset, X, H0, Hk, thetas, Y, A)


def smp_backward(cache: LayerCache, dX_out):
    """Return ``(dX, grads)`` with ``grads`` keyed like ``layer.named()``."""
    if not isinstance(cache, LayerCache):
        raise CacheMismatch("expected a LayerCache from smp_forward")
    dX_out = np.asarray(dX_out, dtype=float)
    if dX_out.shape != cache.X.shape:
        raise CacheMismatch(f"gradient shape {dX_out.shape} does not match cached {cache.X.shape}")
    layer, ops = cache.layer, cache.opset
    dA = dX_out * (cache.A > 0)
    grads = {"P": cache.Y.T @ dA, "bias": dA.sum(axis=0)}
    dY = dA @ layer.P.T

    def theta_grad(H, eff, raw):
        dth = H.T @ dY
        return raw @ (dth + dth.T) if layer.psd else dth

    grads["theta_0"] = theta_grad(cache.H0, cache.thetas[0], layer.theta_0)
    # operators are symmetric polynomials / spectral functions of L
    dX = dX_out + ops.matrix(ops.low_index).T @ (dY @ cache.thetas[0].T)
    for (r, l), H in cache.Hk.items():
        grads[f"theta_{r}_{l}"] = theta_grad(H, cache.thetas[(r, l)], layer.theta_high[(r, l)])
        dX = dX + ops.composite((r, l)).T @ (dY @ cache.thetas[(r, l)].T)
    return dX, grads


# -- whole model -------------------------------------------------------------

@dataclass
class ForwardCache:
    X_in: np.ndarray
    layers: List[LayerCache]
    features: np.ndarray
    pooled: bool


def forward_features(model: DsmpModel, g: Graph, X=None, opset=None):
    """Node features after every layer: ``[X^(0), ..., X^(T)]`` (``X^(0)`` is projected)."""
    X = check_features(g.features if X is None else X, g.num_nodes)
    opset = opset or model.operators(g)
    H = X @ model.input_proj if model.input_proj is not None else X
    out = [H]
    for layer in model.layers:
        H, _ = smp_forward(layer, opset, H)
        out.append(H)
    return out


def forward(model: DsmpModel, g: Graph, X=None, opset=None):
    """Model output and the cache needed by :func:`backward`.

    Graph tasks return a vector of length ``n_outputs`` (mean-pooled
    readout); node tasks return an ``N x n_outputs`` matrix.
    """
    X = check_features(g.features if X is None else X, g.num_nodes)
    d_in = model.input_proj.shape[0] if model.input_proj is not None else model.width
    if X.shape[1] != d_in:
        raise ShapeMismatch(f"model expects {d_in} input features, got {X.shape[1]}")
    opset = opset or model.operators(g)
    H = X @ model.input_proj if model.input_proj is not None else X
    caches = []
    for layer in model.layers:
        H, c = smp_forward(layer, opset, H)
        caches.append(c)
    pooled = model.task != "node_class"
    Z = H.mean(axis=0) if pooled else H
    return Z @ model.readout_W + model.readout_b, ForwardCache(X, caches, H, pooled)


def backward(model: DsmpModel, cache: ForwardCache, d_output) -> Dict[str, np.ndarray]:
    H = cache.features
    d_output = np.asarray(d_output, dtype=float)
    grads = {}
    if cache.pooled:
        grads["readout.W"] = np.outer(H.mean(axis=0), d_output)
        grads["readout.b"] = d_output.copy()
        dH = np.broadcast_to(d_output @ model.readout_W.T / H.shape[0], H.shape).copy()
    else:
        grads["readout.W"] = H.T @ d_output
        grads["readout.b"] = d_output.sum(axis=0)
        dH = d_output @ model.readout_W.T
    for i in range(len(model.layers) - 1, -1, -1):
        dH, g = smp_backward(cache.layers[i], dH)
        for k, v in g.items():
            grads[f"layer_{i}.{k}"] = v
    if model.input_proj is not None:
        grads["input_proj"] = cache.X_in.T @ dH
    return grads


# -- loss --------------------------------------------------------------------

def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss(output, target, task: str, mask=None):
    """Scalar loss and its gradient with respect to ``output``.

    Classification uses softmax cross-entropy, regression ``0.5 * MSE``.
    For node tasks the mean runs over nodes selected by ``mask``.
    """
    output = np.asarray(output, dtype=float)
    if task == "graph_reg":
        t = np.broadcast_to(np.asarray(target, dtype=float), output.shape)
        diff = output - t
        return 0.5 * float(np.mean(diff ** 2)), diff / diff.size
    if task not in ("graph_class", "node_class"):
        raise ConfigInvalid(f"unknown task {task!r}")
    logits = np.atleast_2d(output)
    y = np.atleast_1d(np.asarray(target)).astype(np.int64)
    if y.shape[0] != logits.shape[0]:
        raise ShapeMismatch("targets and outputs disagree in length")
    c = logits.shape[1]
    if np.any((y < 0) | (y >= c)):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    sel = np.ones(len(y), bool) if mask is None else np.asarray(mask, bool)
    n = int(sel.sum())
    if n == 0:
        return 0.0, np.zeros_like(output)
    logp = _log_softmax(logits)
    rows = np.flatnonzero(sel)
    value = -float(logp[rows, y[rows]].sum()) / n
    grad = np.exp(logp)
    grad[np.arange(len(y)), y] -= 1.0
    grad[~sel] = 0.0
    grad /= n
    return value, grad.reshape(output.shape)


# -- optimiser ---------------------------------------------------------------

class Adam:
    """Adam with coupled L2 weight decay (``grad + wd * param``)."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p) for n, p in self.params}
        self.v = {n: np.zeros_like(p) for n, p in self.params}

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params:
            g = grads.get(name)
            g = np.zeros_like(p) if g is None else g
            if self.weight_decay:
                g = g + self.weight_decay * p
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 8
    max_epochs: int = 200
    patience: int = 20
    hidden_size: int = 32
    num_layers: int = 2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigInvalid("learning_rate must be >= 0")
        if self.patience < 1:
            raise ConfigInvalid("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0 or self.num_layers < 0 or self.hidden_size < 1:
            raise ConfigInvalid("batch_size, hidden_size >= 1; max_epochs, num_layers >= 0")

    def to_dict(self):
        return asdict(self)


def _targets(dataset, idx):
    if dataset.task == "node_class":
        return None
    return [dataset.graphs[i].label for i in idx]


def _metric(task, outputs, targets):
    if task == "graph_reg":
        o = np.array([float(np.ravel(x)[0]) for x in outputs])
        return float(np.mean((o - np.asarray(targets, float)) ** 2))
    pred = np.array([int(np.argmax(x)) for x in outputs])
    return float(np.mean(pred == np.asarray(targets, int)))


def evaluate(model: DsmpModel, dataset, split: str):
    """``(loss, metric)`` on a split; metric is accuracy or MSE."""
    task = model.task
    if task == "node_class":
        g = dataset.graphs[0]
        mask = g.masks[split]
        if not mask.any():
            return float("nan"), float("nan")
        out, _ = forward(model, g)
        value, _ = loss(out, g.node_labels, task, mask)
        acc = float(np.mean(np.argmax(out[mask], axis=1) == g.node_labels[mask]))
        return value, acc
    idx = dataset.splits.get(split, [])
    if len(idx) == 0:
        return float("nan"), float("nan")
    outs, total = [], 0.0
    for i in idx:
        g = dataset.graphs[i]
        out, _ = forward(model, g)
        outs.append(out)
        total += loss(out, g.label, task)[0]
    return total / len(idx), _metric(task, outs, _targets(dataset, idx))


def predict(model: DsmpModel, graphs: Sequence[Graph]) -> List[np.ndarray]:
    return [forward(model, g)[0] for g in graphs]


def _accumulate(acc, grads, scale):
    for k, v in grads.items():
        if k in acc:
            acc[k] += scale * v
        else:
            acc[k] = scale * v


def train(model: DsmpModel, dataset, tcfg: TrainConfig, log=None):
    """Fit ``model`` in place on ``dataset.splits['train']``.

    Early-stops on validation loss after ``tcfg.patience`` stale epochs and
    restores the best parameters. Returns ``(model, history)``; each history
    row holds epoch, train_loss, val_loss, val_metric and seconds.
    """
    task = model.task
    if task == "node_class":
        g0 = dataset.graphs[0]
        if g0.masks is None or not g0.masks.get("train", np.zeros(1, bool)).any():
            raise EmptySplit("train mask is empty")
        train_idx = [0]
    else:
        train_idx = list(dataset.splits.get("train", []))
        if not train_idx:
            raise EmptySplit("train split is empty")
    rng = make_rng(tcfg.seed)
    opt = Adam(model.parameters(), tcfg.learning_rate, (tcfg.beta1, tcfg.beta2), tcfg.eps, tcfg.weight_decay)
    history = []
    best = (math.inf, None)
    stale = 0
    has_val = (task == "node_class" and "val" in g0.masks and g0.masks["val"].any()) or (
        task != "node_class" and len(dataset.splits.get("val", [])) > 0
    )
    for epoch in range(1, tcfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_idx))
        # summed in canonical order so the value does not depend on the shuffle
        losses = np.zeros(len(train_idx))
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            grads = {}
            for j in batch:
                g = dataset.graphs[train_idx[j]]
                out, cache = forward(model, g)
                if task == "node_class":
                    value, d_out = loss(out, g.node_labels, task, g.masks["train"])
                else:
                    value, d_out = loss(out, g.label, task)
                losses[j] = value
                _accumulate(grads, backward(model, cache, d_out), 1.0 / len(batch))
            opt.step(grads)
        train_loss = float(losses.sum() / len(train_idx))
        val_loss, val_metric = evaluate(model, dataset, "val")
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_metric": val_metric,
            "seconds": time.perf_counter() - t0,
        }
        history.append(row)
        if log is not None:
            log(row)
        if has_val:
            if val_loss < best[0]:
                best = (val_loss, [p.copy() for _, p in model.parameters()])
                stale = 0
            else:
                stale += 1
                if stale >= tcfg.patience:
                    break
    if best[1] is not None:
        for (_, p), saved in zip(model.parameters(), best[1]):
            p[...] = saved
    return model, history


def write_metrics(history, path: str, with_time: bool = False) -> None:
    """Metrics CSV. ``seconds`` is left empty unless ``with_time`` so reruns match byte for byte."""
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,val_metric,seconds\n")
        for r in history:
            secs = repr(r["seconds"]) if with_time else ""
            fh.write(f"{r['epoch']},{float(r['train_loss'])!r},{float(r['val_loss'])!r},{float(r['val_metric'])!r},{secs}\n")


# -- lipschitz ---------------------------------------------------------------

def spectral_norm(M, tol: float = 1e-8, max_iter: int = 10000) -> float:
    """Largest singular value by power iteration on ``M^T M``."""
    M = np.asarray(M, dtype=float)
    if not np.any(M):
        return 0.0
    G = M.T @ M
    v = np.ones(G.shape[0]) / math.sqrt(G.shape[0]) + 1e-3 * np.arange(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            break
        new = float(v @ w)
        v = w / nrm
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    # Rayleigh quotient approaches from below; a final refinement step costs nothing
    return math.sqrt(max(lam, float(v @ G @ v)))


def layer_constants(layer: SmpLayerParams):
    c0 = spectral_norm(layer.effective(layer.theta_0))
    ch = {k: spectral_norm(layer.effective(t)) for k, t in layer.theta_high.items()}
    return c0, ch, spectral_norm(layer.P)


def lipschitz_constant(model: DsmpModel, variant: str = "conservative", per_layer: bool = False):
    """Lipschitz bound of the layer stack (input projection included).

    ``max`` uses ``C_p (max C_{r,l} + C_0)`` per layer; ``conservative``
    sums over levels, ``C_p (sum_l max_r C_{r,l} + C_0)``. Only the
    conservative form is a guaranteed bound: ``max`` drops a factor of up to
    ``J`` and is reported for comparison. Each residual layer contributes a
    factor ``1 + C_layer``.
    """
    if variant not in ("max", "conservative"):
        raise ConfigInvalid(f"variant must be 'max' or 'conservative', got {variant!r}")
    per = []
    for layer in model.layers:
        c0, ch, cp = layer_constants(layer)
        if not ch:
            high = 0.0
        elif variant == "max":
            high = max(ch.values())
        else:
            levels = sorted({l for _, l in ch})
            high = sum(max(v for (r, l), v in ch.items() if l == lv) for lv in levels)
        per.append(cp * (high + c0))
    total = float(np.prod([1.0 + c for c in per])) if per else 1.0
    if model.input_proj is not None:
        total *= spectral_norm(model.input_proj)
    return (total, per) if per_layer else total


# -- checkpoints -------------------------------------------------------------

def _model_config(model: DsmpModel) -> dict:
    d_in = model.input_proj.shape[0] if model.input_proj is not None else model.width
    return {
        "framelet": model.config.to_dict(),
        "task": model.task,
        "backing": model.backing,
        "psd": model.psd,
        "hidden_size": model.width,
        "num_layers": len(model.layers),
        "n_outputs": model.n_outputs,
        "d_in": d_in,
        "input_proj": model.input_proj is not None,
    }


def checkpoint_dict(model: DsmpModel) -> dict:
    params = {}
    if model.input_proj is not None:
        params["input_proj"] = model.input_proj.ravel().tolist()
    for i, layer in enumerate(model.layers):
        params[f"layer_{i}"] = {n: a.ravel().tolist() for n, a in layer.named()}
    params["readout"] = {"W": model.readout_W.ravel().tolist(), "b": model.readout_b.tolist()}
    return {"version": CHECKPOINT_VERSION, "config": _model_config(model), "params": params}


def save_checkpoint(model: DsmpModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model), fh)


def _array(tree, path, shape):
    node = tree
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ParseError("missing field", where=path)
        node = node[part]
    if not isinstance(node, list):
        raise ParseError("expected a list of numbers", where=path)
    for j, v in enumerate(node):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"not a number: {v!r}", where=f"{path}[{j}]")
    a = np.asarray(node, dtype=float)
    if a.size != int(np.prod(shape)):
        raise ShapeMismatch(f"{path}: expected {int(np.prod(shape))} values, got {a.size}")
    return a.reshape(shape)


def model_from_dict(data: dict) -> DsmpModel:
    if not isinstance(data, dict):
        raise ParseError("checkpoint must be a JSON object")
    if data.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {data.get('version')!r}", where="version")
    try:
        cfgd = data["config"]
        fcfg = FrameletConfig(**cfgd["framelet"])
        d, T, c = int(cfgd["hidden_size"]), int(cfgd["num_layers"]), int(cfgd["n_outputs"])
        d_in, has_proj, psd = int(cfgd["d_in"]), bool(cfgd["input_proj"]), bool(cfgd["psd"])
        task, backing = cfgd["task"], cfgd["backing"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad config: {exc}", where="config") from exc
    params = data.get("params")
    if not isinstance(params, dict):
        raise ParseError("missing params object", where="params")
    proj = _array(params, "input_proj", (d_in, d)) if has_proj else None
    layers = []
    for i in range(T):
        base = f"layer_{i}"
        theta_high = {}
        for r, l in fcfg.high_indices():
            theta_high[(r, l)] = _array(params, f"{base}.theta_{r}_{l}", (d, d))
        layers.append(SmpLayerParams(
            _array(params, f"{base}.theta_0", (d, d)), theta_high,
            _array(params, f"{base}.P", (d, d)), _array(params, f"{base}.bias", (d,)), psd,
        ))
    W = _array(params, "readout.W", (d, c))
    b = _array(params, "readout.b", (c,))
    return DsmpModel(layers, fcfg, W, b, task, proj, backing)


def load_checkpoint(path: str) -> DsmpModel:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), where=f"{path}:{exc.lineno}") from exc
    return model_from_dict(data)
