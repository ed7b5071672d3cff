"""Command-line entry point.

Exit codes: 0 success, 2 I/O or parse failure, 3 invalid configuration or
input, 4 runtime failure (e.g. an empty training split).

Options may also come from a JSON ``--config`` file. A flag given on the
command line wins over the file, which wins over the built-in default.
Unknown keys in the file are rejected.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np

from . import __version__
from . import datasets as dsets
from . import diagnostics as diag
from .exceptions import ConfigInvalid, DSMPError, EmptySplit, ParseError, ValidationError
from .framelet import FrameletConfig, operator_set, read_coefficients, write_coefficients
from .graph import DENSE_LIMIT
from .model import (TrainConfig, evaluate, init_model, load_checkpoint, save_checkpoint, train,
                    write_metrics)
from .scattering import scatter, write_flat

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULTS = {
    # framelet
    "K": 1, "J": 2, "R": None, "cheb_order": 8, "mode": "cascade", "lambda_up": 2.0,
    "backing": "cheb",
    # training
    **{f.name: f.default for f in fields(TrainConfig)},
    "task": None, "psd": False,
    # scattering, perturbation, bench, spectra
    "depth": 2, "target_fraction": 0.1, "candidate_pool": 5, "trials": 20,
    "layers": "1,3,50", "repeat": 5, "tau": 1.2, "bins": 20, "cheeger": False,
}


def _check_type(key, value):
    default = DEFAULTS[key]
    if default is None or value is None:
        return
    ok = isinstance(value, type(default)) and not (isinstance(value, bool) and not isinstance(default, bool))
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        ok = True
    if not ok:
        raise ConfigInvalid(f"config key {key!r} expects {type(default).__name__}, got {value!r}")


def _framelet_flags(p, backing_default="cheb"):
    g = p.add_argument_group("framelet")
    g.add_argument("--K", type=int, dest="K")
    g.add_argument("--J", type=int, dest="J")
    g.add_argument("--R", type=int, dest="R")
    g.add_argument("--cheb-order", type=int, dest="cheb_order")
    g.add_argument("--mode", choices=["cascade", "direct"])
    g.add_argument("--lambda-up", type=float, dest="lambda_up")
    g.add_argument("--backing", choices=["exact", "cheb"])
    p.set_defaults(_backing_default=backing_default)


def _common(p):
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker count (default: $DSMP_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsmp", description="Graph framelet, scattering and DSMP toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="framelet coefficients of a graph signal")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _framelet_flags(p, "exact")
    _common(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("scatter", help="scattering coefficients")
    p.add_argument("--graph", required=True)
    p.add_argument("--depth", type=int)
    p.add_argument("--out", required=True, help="CSV path; path order goes to <out>.paths.json")
    _framelet_flags(p, "exact")
    _common(p)
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("diagnose", help="energy, bottleneck and density report")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph")
    src.add_argument("--dataset")
    p.add_argument("--report", required=True)
    p.add_argument("--cheeger", action="store_true", default=None)
    _framelet_flags(p)
    _common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("train", help="train a DSMP model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", choices=list(dsets.TASKS))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden-size", type=int, dest="hidden_size")
    p.add_argument("--num-layers", type=int, dest="num_layers")
    p.add_argument("--psd", action="store_true", default=None)
    p.add_argument("--timing", action="store_true", help="fill the seconds column (breaks byte-identical reruns)")
    _framelet_flags(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stability", help="attribute-injection stability probe")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rho", type=float, dest="target_fraction")
    p.add_argument("--k", type=int, dest="candidate_pool")
    p.add_argument("--trials", type=int)
    p.add_argument("--report", required=True)
    _common(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("bench", help="forward-pass timing")
    p.add_argument("--graph", required=True)
    p.add_argument("--layers")
    p.add_argument("--repeat", type=int)
    p.add_argument("--hidden-size", type=int, dest="hidden_size")
    p.add_argument("--out", required=True)
    _framelet_flags(p)
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", aliases=["generate"], help="generate graphs or datasets")
    p.add_argument("--kind", required=True,
                   choices=["cycle", "path", "complete", "barbell", "er", "sbm", "two-class"])
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--clique-size", type=int, default=3)
    p.add_argument("--bridge-len", type=int, default=1)
    p.add_argument("--blocks", help="comma-separated block sizes")
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.add_argument("--num", type=int, default=200)
    p.add_argument("--n-min", type=int, default=10)
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("frequency", help="eigenvalue and spectral-gap histograms")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph")
    src.add_argument("--dataset")
    p.add_argument("--tau", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--out", required=True, help="eigenvalue histogram CSV")
    p.add_argument("--gap-out", help="spectral-gap histogram CSV")
    p.add_argument("--report", help="JSON summary")
    _common(p)
    p.set_defaults(func=cmd_frequency)

    p = sub.add_parser("energy", help="Dirichlet energy per layer, DSMP vs. smoothing baseline")
    p.add_argument("--graph", required=True)
    p.add_argument("--num-layers", type=int, dest="num_layers")
    p.add_argument("--hidden-size", type=int, dest="hidden_size")
    p.add_argument("--psd", action="store_true", default=None)
    p.add_argument("--out", required=True)
    _framelet_flags(p, "exact")
    _common(p)
    p.set_defaults(func=cmd_energy)
    return parser


# -- config resolution -------------------------------------------------------

_NOT_OPTIONS = {"command", "func", "config", "threads", "graph", "dataset", "out", "report",
                "checkpoint", "metrics", "gap_out", "kind", "_backing_default", "timing",
                "n", "p", "clique_size", "bridge_len", "blocks", "p_in", "p_out", "num",
                "n_min", "n_max"}


def resolve(args) -> dict:
    """Merge defaults, the config file, and explicit flags (in that order)."""
    cfg = dict(DEFAULTS)
    if getattr(args, "_backing_default", None):
        cfg["backing"] = args._backing_default
    if args.config:
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", where=f"{args.config}:{exc.lineno}") from None
        if not isinstance(data, dict):
            raise ConfigInvalid("config file must hold a JSON object")
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(unknown)}")
        for k, v in data.items():
            _check_type(k, v)
        cfg.update(data)
    for k, v in vars(args).items():
        if k not in _NOT_OPTIONS and v is not None:
            cfg[k] = v
    return cfg


def _framelet(cfg) -> FrameletConfig:
    return FrameletConfig(K=cfg["K"], J=cfg["J"], R=cfg["R"], cheb_order=cfg["cheb_order"],
                          mode=cfg["mode"], lambda_up=cfg["lambda_up"])


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(**{f.name: cfg[f.name] for f in fields(TrainConfig)})


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        try:
            n = int(os.environ.get("DSMP_THREADS", "1"))
        except ValueError:
            raise ConfigInvalid("DSMP_THREADS must be an integer") from None
    if n < 1:
        raise ConfigInvalid("thread count must be >= 1")
    return n


def _pmap(fn, items, threads):
    # results come back in input order regardless of worker count
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def _meta(cfg, keys):
    return {"tool_version": __version__, "config": {k: cfg[k] for k in keys}}


_FRAMELET_KEYS = ("K", "J", "R", "cheb_order", "mode", "lambda_up", "backing")


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_graph_or_dataset(args):
    if getattr(args, "graph", None):
        return [dsets.load_graph(args.graph)]
    return dsets.load_dataset(args.dataset).graphs


# -- commands ----------------------------------------------------------------

def cmd_transform(args, cfg):
    g = dsets.load_graph(args.graph)
    fcfg = _framelet(cfg)
    ops = operator_set(g, fcfg, cfg["backing"])
    os.makedirs(args.out, exist_ok=True)
    files = [os.path.join(args.out, os.path.basename(f)) for f in write_coefficients(ops, g.features, args.out)]
    manifest = {
        **_meta(cfg, _FRAMELET_KEYS),
        "indices": [list(k) for k in ops.indices],
        "files": [os.path.basename(f) for f in files],
        "num_nodes": g.num_nodes,
    }
    if cfg["backing"] == "cheb" and g.num_nodes <= DENSE_LIMIT:
        exact = operator_set(g, fcfg, "exact")
        manifest["max_abs_diff_vs_exact"] = max(
            float(np.max(np.abs(read_coefficients(f) - exact.apply(k, g.features)), initial=0.0))
            for k, f in zip(ops.indices, files)
        )
    _dump(manifest, os.path.join(args.out, "manifest.json"))


def cmd_scatter(args, cfg):
    g = dsets.load_graph(args.graph)
    c = scatter(g, g.features, _framelet(cfg), cfg["depth"], cfg["backing"])
    sidecar = args.out + ".paths.json"
    write_flat(c, args.out, sidecar)
    with open(sidecar) as fh:
        body = json.load(fh)
    body.update(_meta(cfg, _FRAMELET_KEYS + ("depth",)))
    _dump(body, sidecar)


def cmd_diagnose(args, cfg):
    graphs = _load_graph_or_dataset(args)
    fcfg = _framelet(cfg)
    cheeger = bool(cfg.get("cheeger"))
    reports = _pmap(lambda g: diag.diagnose(g, cfg=fcfg, cheeger=cheeger).to_dict(), graphs, _threads(args))
    body = _meta(cfg, _FRAMELET_KEYS)
    if args.graph:
        body.update(reports[0])
    else:
        body["graphs"] = reports
        body["aggregate"] = {
            "num_graphs": len(reports),
            "mean_gap": float(np.mean([r["spectral_gap"] for r in reports])),
            "max_energy_residual": float(max(r["energy_split"]["residual"] for r in reports)),
            "min_density_gain": int(min(r["density"]["gain"] for r in reports)),
        }
    _dump(body, args.report)


def _n_outputs(ds):
    if ds.task == "graph_reg":
        return 1
    if ds.task == "node_class":
        return max(2, int(ds.graphs[0].node_labels.max()) + 1)
    return max(2, int(max(int(g.label) for g in ds.graphs)) + 1)


def cmd_train(args, cfg):
    ds = dsets.load_dataset(args.dataset)
    if cfg["task"]:
        ds.task = cfg["task"]
    tcfg = _train_config(cfg)
    model = init_model(ds.num_features, _n_outputs(ds), hidden=tcfg.hidden_size,
                       num_layers=tcfg.num_layers, task=ds.task, config=_framelet(cfg),
                       backing=cfg["backing"], psd=bool(cfg["psd"]), seed=tcfg.seed)
    model, history = train(model, ds, tcfg)
    write_metrics(history, args.metrics, with_time=args.timing)
    save_checkpoint(model, args.checkpoint)
    _, metric = evaluate(model, ds, "test")
    print(f"test_metric={float(metric)!r}")


def cmd_stability(args, cfg):
    ds = dsets.load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    seed = cfg["seed"]
    spec = diag.PerturbationSpec(cfg["target_fraction"], cfg["candidate_pool"], seed)
    trials = int(cfg["trials"])
    if trials < 1:
        raise ConfigInvalid("trials must be >= 1")

    def probe(g):
        r = diag.stability_probe(model, g, None, spec, trials)
        return {k: r[k] for k in ("ratios", "measured_ratio", "bound_conservative", "bound_max", "within_bound")}

    rows = _pmap(probe, ds.graphs, _threads(args))
    body = _meta(cfg, ("target_fraction", "candidate_pool", "trials", "seed"))
    body["graphs"] = rows
    body["within_bound"] = all(r["within_bound"] for r in rows)
    body["max_measured_ratio"] = max(r["measured_ratio"] for r in rows)
    _dump(body, args.report)


def _layer_list(text):
    try:
        out = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigInvalid(f"layer list must be comma-separated integers, got {text!r}") from None
    if not out or min(out) < 0:
        raise ConfigInvalid("layer list must hold non-negative integers")
    return out


def cmd_bench(args, cfg):
    layers = _layer_list(cfg["layers"])
    g = dsets.load_graph(args.graph)
    res = diag.bench(g, layers, int(cfg["repeat"]), int(cfg["hidden_size"]), _framelet(cfg),
                     cfg["backing"], cfg["seed"])
    with open(args.out, "w") as fh:
        fh.write("layers,median_seconds,memory_estimate\n")
        for row in res["rows"]:
            fh.write(f"{row['layers']},{float(row['median_seconds'])!r},{res['memory']['entries']}\n")


def cmd_gen(args, cfg):
    kind, seed = args.kind, cfg["seed"]

    def need(name):
        v = getattr(args, name)
        if v is None:
            raise ConfigInvalid(f"--{name.replace('_', '-')} is required for --kind {kind}")
        return v

    if kind == "two-class":
        ds = dsets.gen_two_class_synthetic(args.num, (args.n_min, args.n_max), seed)
        dsets.save_dataset(ds, args.out)
        return
    if kind == "cycle":
        g = dsets.gen_cycle(need("n"))
    elif kind == "path":
        g = dsets.gen_path(need("n"))
    elif kind == "complete":
        g = dsets.gen_complete(need("n"))
    elif kind == "barbell":
        g = dsets.gen_barbell(args.clique_size, args.bridge_len)
    elif kind == "er":
        g = dsets.gen_erdos_renyi(need("n"), need("p"), seed)
    else:
        try:
            blocks = [int(b) for b in need("blocks").split(",")]
        except ValueError:
            raise ConfigInvalid("--blocks must be comma-separated integers") from None
        g = dsets.gen_sbm(blocks, need("p_in"), need("p_out"), seed)
    dsets.save_graph(g, args.out)


def cmd_frequency(args, cfg):
    graphs = _load_graph_or_dataset(args)
    if cfg["bins"] < 1:
        raise ConfigInvalid("bins must be >= 1")
    freq = diag.frequency_profile(graphs, cfg["tau"], cfg["bins"])
    diag.write_histogram_csv(freq, args.out)
    gaps = diag.spectral_gap_histogram(graphs, cfg["bins"])
    if args.gap_out:
        diag.write_histogram_csv(gaps, args.gap_out)
    if args.report:
        body = _meta(cfg, ("tau", "bins"))
        body.update({"ratio_above": freq["ratio_above"], "num_eigenvalues": freq["num_eigenvalues"],
                     "mean_gap": gaps["mean_gap"]})
        _dump(body, args.report)


def cmd_energy(args, cfg):
    g = dsets.load_graph(args.graph)
    T = int(cfg["num_layers"])
    d = int(cfg["hidden_size"])
    model = init_model(g.num_features, 2, hidden=d, num_layers=T, config=_framelet(cfg),
                       backing=cfg["backing"], psd=bool(cfg["psd"]), seed=cfg["seed"])
    dsmp = diag.energy_trajectory(model, g)
    X0 = g.features @ model.input_proj if model.input_proj is not None else g.features
    base = diag.baseline_trajectory(g, X0, T)
    with open(args.out, "w") as fh:
        fh.write("layer,dsmp,baseline\n")
        for t, (a, b) in enumerate(zip(dsmp, base)):
            fh.write(f"{t},{float(a)!r},{float(b)!r}\n")


# -- entry point -------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        args.func(args, cfg)
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EmptySplit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DSMPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
