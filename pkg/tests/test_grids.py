import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpfilter.grids import GridTooLarge, _compositions, build_grid
from jumpfilter.model import make_belief, validate_model

from conftest import m1_variant


def test_m1_vertex_counts(m1):
    grid = build_grid(m1, 4)
    assert [len(c) for c in grid.compositions] == [5, 1]
    assert grid.n_vertices == 6


def test_k1_gives_corners(m1):
    grid = build_grid(m1, 1)
    assert [len(c) for c in grid.compositions] == [2, 1]
    np.testing.assert_array_equal(np.sort(grid.vertex_weights.max(axis=1)), [1.0, 1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 12), d=st.integers(1, 4))
def test_composition_count(k, d):
    comps = _compositions(k, d)
    assert len(comps) == math.comb(k + d - 1, d - 1)
    assert np.all(comps.sum(axis=1) == k)
    assert np.all(comps >= 0)


def test_vertex_exactness(m1):
    grid = build_grid(m1, 8)
    values = np.arange(grid.n_vertices, dtype=float) ** 1.5
    for i in range(grid.n_vertices):
        got = grid.interpolate(values, grid.vertex_belief(i))
        assert got == pytest.approx(values[i], abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(p=st.floats(0.0, 1.0), k=st.integers(1, 16))
def test_weights_form_convex_combination(p, k):
    m1 = validate_model(m1_variant())
    grid = build_grid(m1, k)
    nu = make_belief(m1, 0, np.array([p, 1.0 - p, 0.0]))
    ids, wts = grid.locate(nu)
    assert np.all(wts >= 0)
    assert wts.sum() == pytest.approx(1.0, abs=1e-12)
    recon = (grid.vertex_weights[ids] * wts[:, None]).sum(axis=0)
    np.testing.assert_allclose(recon, nu.weights, atol=1e-12)


def test_affine_reproduction():
    doc = m1_variant(states=["0", "1", "2", "3"], h=["a", "a", "a", "b"])
    doc["lambda"] = [[[0, 1, 0, 1], [0, 1, 0, 1]] if i == 0 else
                     [[1, 0, 0, 1], [1, 0, 0, 1]] if i == 1 else
                     [[1, 1, 0, 0], [1, 1, 0, 0]] if i == 2 else
                     [[1, 0, 1, 0], [1, 0, 1, 0]] for i in range(4)]
    doc["f"] = [[0, 0]] * 4
    m = validate_model(doc)
    grid = build_grid(m, 6)
    coef = np.array([0.3, -1.2, 2.0, 0.7])
    values = grid.vertex_weights @ coef + 0.25
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = np.zeros(4)
        w[:3] = rng.dirichlet(np.ones(3))
        nu = make_belief(m, 0, w)
        assert grid.interpolate(values, nu) == pytest.approx(float(w @ coef) + 0.25, abs=1e-12)


def test_locate_batch_matches_single(m1):
    grid = build_grid(m1, 8)
    rng = np.random.default_rng(3)
    W = np.zeros((40, 3))
    W[:, :2] = rng.dirichlet(np.ones(2), size=40)
    ids, wts = grid.locate_batch(0, W)
    for row in range(40):
        i1, w1 = grid.locate(make_belief(m1, 0, W[row]))
        np.testing.assert_array_equal(ids[row], i1)
        np.testing.assert_allclose(wts[row], w1, atol=1e-15)


def test_nearest_vertex_deterministic(m1):
    grid = build_grid(m1, 4)
    W = np.array([[0.5, 0.5, 0.0]])
    a = grid.nearest_vertex_batch(0, W)
    b = grid.nearest_vertex_batch(0, W)
    np.testing.assert_array_equal(a, b)


def test_grid_too_large(m1):
    with pytest.raises(GridTooLarge):
        build_grid(m1, 10, max_vertices=5)
