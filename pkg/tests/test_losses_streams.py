import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbnlab.losses import (CategoricalNLL, MultilinearQuadratic, MultinomialReconstruction,
                           PolynomialMultilinear, Quadratic, SoftmaxCrossEntropy, loss_eval,
                           loss_grad_x, multilinear_correction)
from sbnlab.streams import child, child_seed


def _fd(loss, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (loss_eval(loss, x + e) - loss_eval(loss, x - e)) / (2 * h)
    return g


def _losses(rng):
    W, y = rng.normal(size=(3, 4)), rng.normal(size=3)
    counts = rng.integers(0, 4, size=4).astype(float)
    return [
        Quadratic(W, y),
        MultilinearQuadratic(W, y),
        PolynomialMultilinear({(): 0.3, (0,): 1.0, (1, 3): -2.0, (0, 2, 3): 0.5}),
        SoftmaxCrossEntropy(2),
    ], counts


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    losses, counts = _losses(rng)
    x = rng.normal(size=4)
    for loss in losses:
        np.testing.assert_allclose(loss_grad_x(loss, x), _fd(loss, x), rtol=1e-6, atol=1e-8)
    f = rng.dirichlet(np.ones(4))
    for loss in (MultinomialReconstruction(counts), CategoricalNLL(1)):
        np.testing.assert_allclose(loss_grad_x(loss, f), _fd(loss, f), rtol=1e-6, atol=1e-6)


def test_correction_agrees_on_cube_and_is_multilinear():
    rng = np.random.default_rng(2)
    W, y = rng.normal(size=(4, 5)), rng.normal(size=4)
    q, m = Quadratic(W, y), multilinear_correction(W, y)
    X = np.array(list(itertools.product((-1.0, 1.0), repeat=5)))
    np.testing.assert_allclose(loss_eval(m, X), loss_eval(q, X), atol=1e-12)
    # affine in each coordinate: the second difference along any axis vanishes
    x = rng.normal(size=5)
    for i in range(5):
        e = np.eye(5)[i]
        assert loss_eval(m, x + e) - 2 * loss_eval(m, x) + loss_eval(m, x - e) == pytest.approx(0, abs=1e-10)


def test_polynomial_rejects_repeated_variables():
    with pytest.raises(ValueError, match="repeats"):
        PolynomialMultilinear({(1, 1): 1.0})
    with pytest.raises(ValueError, match="twice"):
        PolynomialMultilinear({(0, 1): 1.0, (1, 0): 2.0})


def test_degenerate_reconstruction_and_non_finite():
    with pytest.raises(ValueError, match="degenerate reconstruction"):
        loss_eval(MultinomialReconstruction([1.0, 0.0]), np.array([0.0, 1.0]))
    # a zero frequency on a zero count is fine
    assert loss_eval(MultinomialReconstruction([0.0, 2.0]), np.array([0.0, 1.0])) == 0.0
    with pytest.raises(ValueError, match="non-negative"):
        MultinomialReconstruction([-1.0])


def test_rows_reindex_per_row_targets():
    rng = np.random.default_rng(3)
    W, Y = rng.normal(size=(2, 3)), rng.normal(size=(4, 2))
    loss = Quadratic(W, Y)
    X = rng.normal(size=(4, 3))
    idx = np.array([3, 3, 0])
    np.testing.assert_allclose(loss.rows(idx).value(X[idx]), loss.value(X)[idx])


def test_streams_are_label_determined():
    a = child(7, "trial", 3).random(5)
    b = child(7, "trial", 3).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, child(7, "trial", 4).random(5))
    assert not np.array_equal(a, child(8, "trial", 3).random(5))
    assert child_seed(7, "x") == child_seed(7, "x") < 2 ** 63


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.lists(st.integers(0, 50), min_size=1, max_size=4))
def test_stream_creation_order_does_not_matter(seed, labels):
    first = child(seed, *labels).integers(0, 2 ** 62)
    child(seed, "other")
    assert child(seed, *labels).integers(0, 2 ** 62) == first
