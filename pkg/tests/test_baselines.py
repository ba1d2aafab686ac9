import warnings

import numpy as np
import pytest

from oracles import ne_lagrange, ols_normal_equations
from tsrefine.baselines import GlrModel, NeConfig, glr_refine, glr_train, ne_refine, ne_weights
from tsrefine.nalr import RegressionCoeffs
from tsrefine.patches import SampleSet, build_sample_set
from tsrefine.tsgrid import CellSize, TSDiagram

CELL = CellSize(60.0, 100.0)


def raw_set(low, high):
    return SampleSet(np.asarray(low, float), np.asarray(high, float), {})


def test_glr_single_regime_fallback(rng):
    s = raw_set(rng.uniform(40, 100, (50, 9)), rng.uniform(40, 100, (50, 4)))
    with pytest.warns(UserWarning, match="one traffic regime"):
        m = glr_train(s, 30.0)
    np.testing.assert_array_equal(m.free_coeffs.table, m.congested_coeffs.table)


def test_glr_recovers_linear_world(rng):
    A = rng.normal(0, 0.3, (4, 9))
    b = rng.uniform(0, 5, 4)
    X = rng.uniform(0, 100, (200, 9))
    s = raw_set(X, b + X @ A.T)
    m = glr_train(s)
    for coeffs in (m.free_coeffs, m.congested_coeffs):
        np.testing.assert_allclose(coeffs.weights, A, atol=1e-9)
        np.testing.assert_allclose(coeffs.intercept, b, atol=1e-7)
    assert m.free_r2 == pytest.approx(1.0) and m.congested_r2 == pytest.approx(1.0)


def test_glr_matches_normal_equations(rng):
    X, Y = rng.uniform(0, 100, (200, 9)), rng.uniform(0, 100, (200, 4))
    m = glr_train(raw_set(X, Y), 30.0)
    cong = X[:, 4] < 30
    np.testing.assert_allclose(m.free_coeffs.table, ols_normal_equations(X[~cong], Y[~cong]), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(m.congested_coeffs.table, ols_normal_equations(X[cong], Y[cong]), rtol=1e-8, atol=1e-10)


def test_glr_small_regime_uses_ridge(rng):
    X = rng.uniform(40, 100, (60, 9))
    X[:3, 4] = 10.0
    m = glr_train(raw_set(X, rng.uniform(0, 100, (60, 4))))
    assert np.isfinite(m.congested_coeffs.table).all()


def test_glr_constant_field():
    low = TSDiagram(np.full((5, 5), 50.0), CELL)
    s = build_sample_set(low, TSDiagram(np.full((10, 10), 50.0), CELL.halved()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = glr_train(s)
    out = glr_refine(TSDiagram(np.full((3, 4), 50.0), CELL), m)
    assert out.shape == (6, 8)
    np.testing.assert_allclose(out.values, 50.0, atol=1e-6)


def test_glr_threshold_boundary_is_free_flow():
    free = np.zeros((4, 10))
    free[:, 0] = 80.0
    cong = np.zeros((4, 10))
    cong[:, 0] = 10.0
    m = GlrModel(RegressionCoeffs(free), RegressionCoeffs(cong), 30.0)
    out = glr_refine(TSDiagram([[30.0, 29.999]], CELL), m)
    assert out.values[:, :2].tolist() == [[80, 80], [80, 80]]
    assert out.values[:, 2:].tolist() == [[10, 10], [10, 10]]


@pytest.mark.filterwarnings("ignore:only one traffic regime")
def test_glr_zero_intercept_scaling(rng):
    # affine map without intercept is homogeneous
    A = rng.normal(0, 0.3, (4, 9))
    X = rng.uniform(35, 50, (40, 9))
    s1 = raw_set(X, X @ A.T)
    s2 = raw_set(2 * X, 2 * X @ A.T)
    m1, m2 = glr_train(s1), glr_train(s2)
    np.testing.assert_allclose(m1.free_coeffs.intercept, 0, atol=1e-8)
    q = rng.uniform(35, 50, 9)
    p1 = m1.free_coeffs.intercept + m1.free_coeffs.weights @ q
    p2 = m2.free_coeffs.intercept + m2.free_coeffs.weights @ (2 * q)
    np.testing.assert_allclose(p2, 2 * p1, rtol=1e-8)


def test_glr_threshold_validation():
    c = RegressionCoeffs(np.zeros((4, 10)))
    with pytest.raises(ValueError):
        GlrModel(c, c, 0.0)


# --- NE ------------------------------------------------------------------

def test_ne_exact_neighbour():
    s = raw_set([[10.0] * 9, [50.0] * 9], [[1, 2, 3, 4], [5, 6, 7, 8]])
    out = ne_refine(TSDiagram(np.full((1, 1), 50.0), CELL), s, NeConfig(k=1))
    assert out.values.ravel().tolist() == [5, 6, 7, 8]


def test_ne_symmetric_pair():
    q = np.full(9, 50.0)
    w = ne_weights(q, [q + 3.0, q - 3.0])
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)


def test_ne_matches_lagrange(rng):
    q = rng.uniform(0, 100, 9)
    nb = rng.uniform(0, 100, (4, 9))
    np.testing.assert_allclose(ne_weights(q, nb, 1e-6), ne_lagrange(q, nb, 1e-6), rtol=1e-8, atol=1e-12)


def test_ne_weights_sum_to_one(rng):
    for k in (1, 2, 5, 12, 30):
        w = ne_weights(rng.uniform(0, 100, 9), rng.uniform(0, 100, (k, 9)))
        assert abs(w.sum() - 1) < 1e-10


def test_ne_duplicate_neighbours_regularised():
    q = np.full(9, 40.0)
    w = ne_weights(q, np.tile(q + 1, (3, 1)))
    np.testing.assert_allclose(w, 1 / 3)


def test_ne_sixteen_x_single_pass(rng):
    low = TSDiagram(rng.uniform(0, 100, (6, 6)), CELL)
    high = TSDiagram(rng.uniform(0, 100, (24, 24)), CELL.scaled(0.25))
    s = build_sample_set(low, high)
    out = ne_refine(TSDiagram(rng.uniform(0, 100, (4, 5)), CELL), s, NeConfig(k=3, factor=16))
    assert out.shape == (16, 20)
    assert out.cell_size == CELL.scaled(0.25)
    with pytest.raises(ValueError):
        ne_refine(low, s, NeConfig(factor=4))


def test_ne_l2_distance(rng):
    s = raw_set(rng.uniform(0, 100, (30, 9)), rng.uniform(0, 100, (30, 4)))
    test = TSDiagram(rng.uniform(0, 100, (3, 3)), CELL)
    out = ne_refine(test, s, NeConfig(k=4, distance="l2"))
    assert out.shape == (6, 6)


def test_ne_deterministic(rng):
    s = raw_set(rng.uniform(0, 100, (30, 9)), rng.uniform(0, 100, (30, 4)))
    test = TSDiagram(rng.uniform(0, 100, (3, 3)), CELL)
    assert ne_refine(test, s) == ne_refine(test, s)


def test_ne_config_validation():
    with pytest.raises(ValueError):
        NeConfig(k=0)
    with pytest.raises(ValueError):
        NeConfig(distance="cosine")
    with pytest.raises(ValueError):
        NeConfig(factor=8)
