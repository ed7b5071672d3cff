import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dsmp.cli import main
from dsmp.datasets import (GraphDataset, gen_cycle, gen_two_class_synthetic, save_dataset,
                           save_graph)
from dsmp.graph import Graph, from_edges
from dsmp.model import save_checkpoint, zero_model


@pytest.fixture
def c4(tmp_path):
    path = str(tmp_path / "c4.json")
    save_graph(Graph(4, gen_cycle(4).edges, np.arange(8.0).reshape(4, 2)), path)
    return path


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("ds") / "two.jsonl")
    save_dataset(gen_two_class_synthetic(24, (6, 9), seed=2), path)
    return path


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- transform / scatter -----------------------------------------------------

def test_transform_writes_one_csv_per_operator(tmp_path, c4):
    out = tmp_path / "coef"
    assert main(["transform", "--graph", c4, "--out", str(out)]) == 0
    assert sorted(p for p in os.listdir(out) if p.endswith(".csv")) == ["W_0_2.csv", "W_1_1.csv", "W_1_2.csv"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["indices"] == [[0, 2], [1, 1], [1, 2]]
    assert man["tool_version"] and man["config"]["J"] == 2


def test_transform_cheb_64_close_to_exact(tmp_path, c4):
    out = tmp_path / "coef"
    assert main(["transform", "--graph", c4, "--backing", "cheb", "--cheb-order", "64", "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["max_abs_diff_vs_exact"] <= 1e-5


def test_transform_missing_graph(tmp_path):
    assert main(["transform", "--graph", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_transform_bad_config_value(tmp_path, c4):
    assert main(["transform", "--graph", c4, "--J", "0", "--out", str(tmp_path)]) == 3


def test_scatter_sidecar(tmp_path, c4):
    out = str(tmp_path / "s.csv")
    assert main(["scatter", "--graph", c4, "--depth", "2", "--out", out]) == 0
    side = json.loads(open(out + ".paths.json").read())
    assert side["paths"] == [[], [[1, 1]], [[1, 2]]]
    assert np.loadtxt(out, delimiter=",").shape == (4, 6)


def test_scatter_depth_one(tmp_path, c4):
    out = str(tmp_path / "s.csv")
    assert main(["scatter", "--graph", c4, "--depth", "1", "--out", out]) == 0
    assert json.loads(open(out + ".paths.json").read())["paths"] == [[]]


def test_scatter_depth_cap(tmp_path, c4):
    assert main(["scatter", "--graph", c4, "--depth", "5", "--out", str(tmp_path / "s.csv")]) == 3


# -- diagnose ----------------------------------------------------------------

def test_diagnose_c4_cheeger(tmp_path, c4):
    rep = str(tmp_path / "r.json")
    assert main(["diagnose", "--graph", c4, "--report", rep, "--cheeger"]) == 0
    body = json.loads(open(rep).read())
    assert body["cheeger"]["h"] == 0.5 and body["cheeger"]["holds"] is True
    assert body["tool_version"] and "config" in body


def test_diagnose_disconnected_cheeger(tmp_path, capsys):
    path = str(tmp_path / "g.json")
    save_graph(from_edges(4, [(0, 1), (2, 3)]), path)
    assert main(["diagnose", "--graph", path, "--report", str(tmp_path / "r.json"), "--cheeger"]) == 3
    assert "Disconnected" in capsys.readouterr().err


def test_diagnose_oversized_cheeger(tmp_path):
    path = str(tmp_path / "g.json")
    save_graph(gen_cycle(15), path)
    assert main(["diagnose", "--graph", path, "--report", str(tmp_path / "r.json"), "--cheeger"]) == 3


def test_diagnose_dataset_aggregate(tmp_path, small_ds):
    rep = str(tmp_path / "r.json")
    assert main(["diagnose", "--dataset", small_ds, "--report", rep]) == 0
    body = json.loads(open(rep).read())
    assert len(body["graphs"]) == 24
    gaps = [r["spectral_gap"] for r in body["graphs"]]
    assert body["aggregate"]["mean_gap"] == pytest.approx(np.mean(gaps))


# -- train -------------------------------------------------------------------

def _train(tmp_path, ds, tag, *extra):
    ck, met = str(tmp_path / f"{tag}.ckpt"), str(tmp_path / f"{tag}.csv")
    code = main(["train", "--dataset", ds, "--checkpoint", ck, "--metrics", met, "--epochs", "5",
                 "--hidden-size", "4", *extra])
    return code, ck, met


def test_train_is_deterministic(tmp_path, small_ds, capsys):
    code_a, _, met_a = _train(tmp_path, small_ds, "a")
    out_a = capsys.readouterr().out
    code_b, _, met_b = _train(tmp_path, small_ds, "b")
    out_b = capsys.readouterr().out
    assert code_a == code_b == 0
    assert open(met_a, "rb").read() == open(met_b, "rb").read()
    assert out_a == out_b and out_a.startswith("test_metric=")
    float(out_a.strip().split("=", 1)[1])


def test_train_zero_lr_constant_loss(tmp_path, small_ds):
    code, _, met = _train(tmp_path, small_ds, "z", "--lr", "0")
    assert code == 0
    losses = {row["train_loss"] for row in _read_csv(met)}
    assert len(losses) == 1


def test_train_empty_split_exit_4(tmp_path):
    path = str(tmp_path / "d.jsonl")
    graphs = [Graph(3, [(0, 1)], np.ones((3, 1)), label=i % 2) for i in range(4)]
    save_dataset(GraphDataset(graphs, splits={"train": [], "test": [0, 1]}), path)
    code, _, _ = _train(tmp_path, path, "e")
    assert code == 4


# -- stability ---------------------------------------------------------------

def test_stability_zero_checkpoint(tmp_path, small_ds):
    ck, rep = str(tmp_path / "zero.ckpt"), str(tmp_path / "s.json")
    save_checkpoint(zero_model(1, 2), ck)
    assert main(["stability", "--dataset", small_ds, "--checkpoint", ck, "--rho", "0.1", "--k", "5",
                 "--trials", "20", "--report", rep]) == 0
    body = json.loads(open(rep).read())
    assert all(len(g["ratios"]) == 20 for g in body["graphs"])
    assert max(max(g["ratios"]) for g in body["graphs"]) <= 1 + 1e-9
    assert body["within_bound"] is True


def test_stability_zero_pool(tmp_path, small_ds):
    ck = str(tmp_path / "zero.ckpt")
    save_checkpoint(zero_model(1, 2), ck)
    assert main(["stability", "--dataset", small_ds, "--checkpoint", ck, "--k", "0",
                 "--report", str(tmp_path / "s.json")]) == 3


# -- bench -------------------------------------------------------------------

def test_bench_rows(tmp_path, c4):
    out = str(tmp_path / "b.csv")
    assert main(["bench", "--graph", c4, "--layers", "1,3,50", "--repeat", "1", "--out", out]) == 0
    rows = _read_csv(out)
    assert [r["layers"] for r in rows] == ["1", "3", "50"]
    assert list(rows[0]) == ["layers", "median_seconds", "memory_estimate"]
    assert all(float(r["median_seconds"]) >= 0 for r in rows)


def test_bench_bad_layers(tmp_path, c4):
    assert main(["bench", "--graph", c4, "--layers", "1,x", "--out", str(tmp_path / "b.csv")]) == 3


# -- gen ---------------------------------------------------------------------

def test_gen_cycle(tmp_path):
    out = str(tmp_path / "c.json")
    assert main(["gen", "--kind", "cycle", "--n", "4", "--out", out]) == 0
    assert len(json.loads(open(out).read())["edges"]) == 4


def test_gen_two_class(tmp_path):
    out = str(tmp_path / "d.jsonl")
    assert main(["generate", "--kind", "two-class", "--num", "200", "--seed", "7", "--out", out]) == 0
    assert len(open(out).read().splitlines()) == 200


def test_gen_bad_probability(tmp_path):
    assert main(["gen", "--kind", "er", "--n", "5", "--p", "1.5", "--out", str(tmp_path / "g.json")]) == 3


# -- frequency / energy ------------------------------------------------------

def test_frequency_report(tmp_path):
    path = str(tmp_path / "d.jsonl")
    save_dataset(GraphDataset([gen_cycle(4)] * 3), path)
    rep = str(tmp_path / "f.json")
    assert main(["frequency", "--dataset", path, "--out", str(tmp_path / "h.csv"), "--report", rep]) == 0
    body = json.loads(open(rep).read())
    assert body["ratio_above"] == 0.25 and body["mean_gap"] == pytest.approx(1.0)


def test_energy_csv(tmp_path, c4):
    out = str(tmp_path / "e.csv")
    assert main(["energy", "--graph", c4, "--num-layers", "4", "--hidden-size", "2", "--out", out]) == 0
    rows = _read_csv(out)
    assert len(rows) == 5
    assert all(float(r["dsmp"]) >= 0 and float(r["baseline"]) >= 0 for r in rows)


# -- config resolution -------------------------------------------------------

def test_flag_beats_file_beats_default(tmp_path, c4):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"J": 3, "depth": 2}))
    out = str(tmp_path / "s.csv")
    assert main(["scatter", "--graph", c4, "--config", str(cfg), "--out", out]) == 0
    side = json.loads(open(out + ".paths.json").read())
    assert side["config"]["J"] == 3 and len(side["paths"]) == 4
    assert main(["scatter", "--graph", c4, "--config", str(cfg), "--J", "1", "--out", out]) == 0
    side = json.loads(open(out + ".paths.json").read())
    assert side["config"]["J"] == 1 and len(side["paths"]) == 2


def test_unknown_config_key(tmp_path, c4, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"deph": 2}))
    assert main(["scatter", "--graph", c4, "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == 3
    assert "deph" in capsys.readouterr().err


def test_wrong_config_type(tmp_path, c4):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"J": "two"}))
    assert main(["scatter", "--graph", c4, "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == 3


def test_threads_do_not_change_output(tmp_path, small_ds, monkeypatch):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    assert main(["diagnose", "--dataset", small_ds, "--report", a]) == 0
    monkeypatch.setenv("DSMP_THREADS", "4")
    assert main(["diagnose", "--dataset", small_ds, "--report", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_bad_thread_env(tmp_path, small_ds, monkeypatch):
    monkeypatch.setenv("DSMP_THREADS", "many")
    assert main(["diagnose", "--dataset", small_ds, "--report", str(tmp_path / "r.json")]) == 3


def test_module_entry_point(tmp_path):
    out = str(tmp_path / "c.json")
    res = subprocess.run([sys.executable, "-m", "dsmp", "gen", "--kind", "path", "--n", "3", "--out", out],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads(open(out).read())["num_nodes"] == 3
