"""Acceptance suite.

Each test prints one PASS/FAIL line, collected in the terminal summary
under "acceptance criteria".
"""
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from dsmp.datasets import (degree_threshold_oracle, gen_cycle, gen_path, gen_two_class_synthetic,
                           save_dataset)
from dsmp.diagnostics import (PerturbationSpec, baseline_trajectory, cheeger_bounds_check,
                              density_gain, energy_conservation_check, energy_trajectory,
                              stability_probe)
from dsmp.framelet import (FrameletConfig, cheb_operator_set, exact_operator_set, operator_error,
                           tightness_residual)
from dsmp.model import TrainConfig, evaluate, forward_features, init_model, train

from helpers import corpus, criterion, fd_gradient_errors, random_graph

CORPUS_SEED = 2024
ORDERS = (2, 4, 8, 16, 32, 64)
# below this level, differences between orders are floating-point rounding
NOISE_FLOOR = 1e-12


@pytest.fixture(scope="module")
def graphs():
    return corpus(seed=CORPUS_SEED, count=50, n_max=50)


def test_criterion_1_parseval(graphs):
    with criterion(1, "tightness on 50 random graphs, N <= 50") as c:
        t0 = time.perf_counter()
        worst = 0.0
        for i, g in enumerate(graphs):
            ops = exact_operator_set(g, FrameletConfig())
            worst = max(worst, tightness_residual(ops, trials=3, seed=i))
        elapsed = time.perf_counter() - t0
        c.detail = f"max residual {worst:.2e}, {elapsed:.2f}s"
        assert worst <= 1e-9
        assert elapsed < 10


def test_criterion_2_energy_conservation(graphs):
    with criterion(2, "energy conservation on the same corpus") as c:
        rng = np.random.default_rng(CORPUS_SEED)
        worst = 0.0
        for g in graphs:
            X = rng.standard_normal((g.num_nodes, 3))
            worst = max(worst, energy_conservation_check(g, X, exact_operator_set(g, FrameletConfig())))
        c.detail = f"max residual {worst:.2e}"
        assert worst <= 1e-8


def test_criterion_3_cheeger():
    with criterion(3, "Cheeger inequality on 500 connected graphs, N <= 10") as c:
        rng = np.random.default_rng(3)
        violations = 0
        for _ in range(500):
            n = int(rng.integers(2, 11))
            g = random_graph(rng, n, float(rng.uniform(0.0, 0.8)))
            violations += not cheeger_bounds_check(g)["holds"]
        c.detail = f"{violations} violations"
        assert violations == 0


def test_criterion_4_chebyshev_convergence(graphs):
    with criterion(4, "Chebyshev relative operator error") as c:
        worst64, bad_steps = 0.0, 0
        for g in graphs:
            exact = exact_operator_set(g, FrameletConfig())
            scale = max(np.linalg.norm(exact.matrix(k), 2) for k in exact.indices)
            errs = [operator_error(cheb_operator_set(g, FrameletConfig(cheb_order=m)), exact) / scale
                    for m in ORDERS]
            worst64 = max(worst64, errs[-1])
            bad_steps += sum(b > max(a, NOISE_FLOOR) for a, b in zip(errs, errs[1:]))
        c.detail = f"max error at order 64 {worst64:.2e}, {bad_steps} increases above {NOISE_FLOOR:g}"
        assert worst64 <= 1e-5
        assert bad_steps == 0


def test_criterion_5_gradients():
    with criterion(5, "gradients vs central differences on 20 instances") as c:
        t0 = time.perf_counter()
        tasks = ("graph_class", "node_class", "graph_reg")
        worst = 0.0
        for i in range(20):
            rng = np.random.default_rng(100 + i)
            task = tasks[i % 3]
            n, d = int(rng.integers(3, 8)), int(rng.integers(1, 4))
            g = random_graph(rng, n, 0.4, d=d)
            n_out = 1 if task == "graph_reg" else 3
            model = init_model(d, n_out, hidden=int(rng.integers(2, 5)), num_layers=2, task=task,
                               backing="exact", psd=bool(i % 2), seed=i)
            for layer in model.layers:
                layer.bias[:] = rng.uniform(0.05, 0.2, layer.bias.shape)
            target = {"graph_class": int(rng.integers(0, 3)), "graph_reg": float(rng.standard_normal()),
                      "node_class": rng.integers(0, 3, n)}[task]
            worst = max(worst, max(fd_gradient_errors(model, g, target).values()))
        elapsed = time.perf_counter() - t0
        c.detail = f"max relative error {worst:.2e}, {elapsed:.2f}s"
        assert worst <= 1e-5
        assert elapsed < 30


def test_criterion_6_stability():
    with criterion(6, "stability, 100 trials over 10 random models") as c:
        violations, trials, worst = 0, 0, 0.0
        for i in range(10):
            rng = np.random.default_rng(600 + i)
            g = random_graph(rng, int(rng.integers(6, 16)), 0.3, d=3)
            model = init_model(3, 2, hidden=4, num_layers=2, backing="exact", psd=bool(i % 2), seed=i)
            r = stability_probe(model, g, None, PerturbationSpec(0.2, 5, seed=10 * i), trials=10)
            trials += len(r["ratios"])
            bound = r["bound_conservative"]
            violations += sum(x > bound * (1 + 1e-9) for x in r["ratios"])
            worst = max(worst, max(r["ratios"]) / bound)
        c.detail = f"{trials} trials, {violations} violations, max measured/bound {worst:.3f}"
        assert trials == 100
        assert violations == 0


def test_criterion_7_density(graphs):
    with criterion(7, "density gain non-negative, positive on P4 at m=2") as c:
        gains = [density_gain(g, FrameletConfig(cheb_order=m))["gain"] for g in graphs for m in (1, 2, 4, 8)]
        p4 = density_gain(gen_path(4), FrameletConfig(cheb_order=2))["gain"]
        c.detail = f"min gain {min(gains)}, P4 gain {p4}"
        assert min(gains) >= 0
        assert p4 > 0


def test_criterion_8_energy_non_collapse():
    with criterion(8, "energy non-collapse over 50 layers on C16") as c:
        g = gen_cycle(16)
        X = np.random.default_rng(8).standard_normal((16, 4))
        model = init_model(4, 2, hidden=4, num_layers=50, backing="exact", psd=True, seed=8)
        X0 = forward_features(model, g, X)[0]
        dsmp = energy_trajectory(model, g, X)
        base = baseline_trajectory(g, X0, 50)
        r_dsmp, r_base = dsmp[-1] / dsmp[0], base[-1] / base[0]
        c.detail = f"DSMP ratio {r_dsmp:.2e}, baseline ratio {r_base:.2e}"
        assert r_dsmp >= 0.1
        assert r_base <= 1e-3


def test_criterion_9_training():
    with criterion(9, "two-class training, seed 7") as c:
        ds = gen_two_class_synthetic(200, (10, 20), seed=7)
        oracle = degree_threshold_oracle(ds)["test"]
        c.detail = f"oracle {oracle:.3f}"
        assert oracle >= 0.90
        t0 = time.perf_counter()
        tcfg = TrainConfig()
        model = init_model(ds.num_features, 2, hidden=tcfg.hidden_size, num_layers=tcfg.num_layers,
                           seed=tcfg.seed)
        model, history = train(model, ds, tcfg)
        elapsed = time.perf_counter() - t0
        _, acc = evaluate(model, ds, "test")
        c.detail += f", test accuracy {acc:.3f} after {len(history)} epochs, {elapsed:.1f}s"
        assert len(history) <= 200
        assert acc >= 0.90
        assert elapsed < 300


def test_criterion_10_cli_determinism(tmp_path):
    with criterion(10, "train CLI reruns give identical metrics bytes") as c:
        data = str(tmp_path / "two.jsonl")
        save_dataset(gen_two_class_synthetic(200, (10, 20), seed=7), data)
        env = dict(os.environ, DSMP_THREADS="1")
        outputs = []
        for tag in ("a", "b"):
            metrics = str(tmp_path / f"{tag}.csv")
            res = subprocess.run(
                [sys.executable, "-m", "dsmp", "train", "--dataset", data, "--seed", "7",
                 "--checkpoint", str(tmp_path / f"{tag}.ckpt"), "--metrics", metrics],
                capture_output=True, text=True, env=env,
            )
            assert res.returncode == 0, res.stderr
            outputs.append(open(metrics, "rb").read())
        c.detail = f"{len(outputs[0])} bytes each"
        assert outputs[0] == outputs[1]
