import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsmp.exceptions import ConfigInvalid, ShapeMismatch
from dsmp.framelet import FrameletConfig, exact_operator_set
from dsmp.graph import disjoint_union, from_edges, permute
from dsmp.scattering import enumerate_paths, flatten, scatter, unflatten, write_flat

from helpers import random_graph

CFG = FrameletConfig(J=2)
C6 = from_edges(6, [(i, (i + 1) % 6) for i in range(6)])


def _x(n, d=2, seed=0):
    return np.random.default_rng(seed).standard_normal((n, d))


def test_paths_k1_j2_m2():
    assert enumerate_paths(1, 2, 2) == [(), ((1, 1),), ((1, 2),)]


def test_paths_k1_j1_m3():
    assert enumerate_paths(1, 1, 3) == [(), ((1, 1),), ((1, 1), (1, 1))]


def test_paths_k2_j2_m2_count():
    assert len(enumerate_paths(2, 2, 2)) == 5


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4))
def test_path_count_formula(K, J, m):
    paths = enumerate_paths(K, J, m)
    assert len(paths) == sum((K * J) ** t for t in range(m))
    # shortest first, lexicographic within a length
    assert paths == sorted(paths, key=lambda p: (len(p), p))


def test_three_coefficients_at_depth_two():
    c = scatter(C6, _x(6), CFG, 2)
    assert len(c.entries) == 3
    assert all(v.shape == (6, 2) for v in c.entries.values())


def test_zero_input_gives_zero():
    c = scatter(C6, np.zeros((6, 3)), CFG, 3)
    for v in c.entries.values():
        np.testing.assert_array_equal(v, 0.0)
    np.testing.assert_array_equal(flatten(c), 0.0)


def test_depth_one_is_low_pass():
    X = _x(6)
    c = scatter(C6, X, CFG, 1)
    assert list(c.entries) == [()]
    np.testing.assert_allclose(c.entries[()], exact_operator_set(C6, CFG).apply((0, 2), X))


def test_second_order_formula():
    X = _x(6)
    ops = exact_operator_set(C6, CFG)
    c = scatter(C6, X, CFG, 3)
    expected = ops.apply((0, 2), np.abs(ops.apply((1, 2), np.abs(ops.apply((1, 1), X)))))
    np.testing.assert_allclose(c.entries[((1, 1), (1, 2))], expected, atol=1e-14)


@pytest.mark.parametrize("m", [0, 5, 2.5])
def test_depth_validation(m):
    with pytest.raises(ConfigInvalid):
        scatter(C6, _x(6), CFG, m)


def test_row_mismatch():
    with pytest.raises(ShapeMismatch):
        scatter(C6, _x(5), CFG, 2)


def test_flatten_layout():
    X = _x(6)
    c = scatter(C6, X, CFG, 2)
    F = flatten(c)
    assert F.shape == (6, 6)
    np.testing.assert_array_equal(F[:, :2], c.entries[()])
    back = unflatten(F, CFG, 2)
    for p in c.paths:
        np.testing.assert_array_equal(back.entries[p], c.entries[p])


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_norm_non_increase_per_step(seed, J):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    g = random_graph(rng, n, 0.3)
    ops = exact_operator_set(g, FrameletConfig(J=J))
    Y = rng.standard_normal((n, 2))
    for k in ops.indices[1:]:
        out = ops.apply(ops.low_index, np.abs(ops.apply(k, Y)))
        assert np.linalg.norm(out) <= np.linalg.norm(Y) * (1 + 1e-12)


@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    g = random_graph(rng, n, 0.3)
    perm = rng.permutation(n)
    X = rng.standard_normal((n, 2))
    Xp = np.empty_like(X)
    Xp[perm] = X
    a = scatter(g, X, CFG, 3)
    b = scatter(permute(g, perm), Xp, CFG, 3)
    for p in a.paths:
        expect = np.empty_like(a.entries[p])
        expect[perm] = a.entries[p]
        np.testing.assert_allclose(b.entries[p], expect, atol=1e-9)


def test_disjoint_union_is_block_concatenation():
    rng = np.random.default_rng(3)
    g1, g2 = random_graph(rng, 5, 0.4), random_graph(rng, 7, 0.3)
    X1, X2 = rng.standard_normal((5, 2)), rng.standard_normal((7, 2))
    u = scatter(disjoint_union(g1, g2), np.vstack([X1, X2]), CFG, 3)
    a, b = scatter(g1, X1, CFG, 3), scatter(g2, X2, CFG, 3)
    for p in u.paths:
        np.testing.assert_allclose(u.entries[p], np.vstack([a.entries[p], b.entries[p]]), atol=1e-9)


def test_write_flat_sidecar(tmp_path):
    c = scatter(C6, _x(6), CFG, 2)
    csv_path, side = tmp_path / "s.csv", tmp_path / "s.json"
    write_flat(c, str(csv_path), str(side))
    meta = json.loads(side.read_text())
    assert meta["paths"] == [[], [[1, 1]], [[1, 2]]]
    assert meta["features_per_path"] == 2
    np.testing.assert_array_equal(np.loadtxt(csv_path, delimiter=","), flatten(c))
