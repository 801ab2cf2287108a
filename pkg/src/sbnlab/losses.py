"""Loss functions on network outputs.

Every loss works row-wise on a batch ``out`` of shape ``(B, k)``: ``value``
returns ``(B,)`` and ``grad`` returns ``(B, k)``, the gradient of the real
extension of the loss.  Targets bound to a loss are either shared by all rows
or given per row; ``rows(idx)`` re-indexes per-row targets so a batch can be
replicated (enumeration, bit flips) without touching the loss definition.
"""

from __future__ import annotations

import numpy as np


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _take(t, idx):
    return t if t is None or t.ndim == 1 else t[idx]


class LossFn:
    kind = "abstract"

    def value(self, out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rows(self, idx) -> "LossFn":
        return self

    def __call__(self, x):
        return loss_eval(self, x)


class Quadratic(LossFn):
    """``||W x - y||^2``."""

    kind = "quadratic"

    def __init__(self, W, y):
        self.W = np.atleast_2d(np.asarray(W, dtype=float))
        self.y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(self.W)):
            raise ValueError("quadratic loss needs a finite W")

    def residual(self, out):
        return out @ self.W.T - self.y

    def value(self, out):
        r = self.residual(out)
        return np.einsum("bk,bk->b", r, r)

    def grad(self, out):
        return 2.0 * self.residual(out) @ self.W

    def rows(self, idx):
        return type(self)(self.W, _take(self.y, idx))


class MultilinearQuadratic(Quadratic):
    """Quadratic loss with the ``x_i^2`` terms replaced by their value on +-1.

    Agrees with :class:`Quadratic` on every +-1 vector and is affine in each
    coordinate separately.
    """

    kind = "multilinear_quadratic"

    def __init__(self, W, y):
        super().__init__(W, y)
        self.col_sq = np.einsum("ki,ki->i", self.W, self.W)

    def value(self, out):
        return super().value(out) - (out ** 2) @ self.col_sq + self.col_sq.sum()

    def grad(self, out):
        return super().grad(out) - 2.0 * out * self.col_sq


class PolynomialMultilinear(LossFn):
    """``sum_S c_S prod_{i in S} x_i`` over distinct index subsets ``S``."""

    kind = "polynomial_multilinear"

    def __init__(self, table: dict):
        terms = {}
        for key, coef in table.items():
            s = tuple(sorted(int(i) for i in key))
            if len(set(s)) != len(s) or s in terms:
                raise ValueError(f"subset {key!r} repeats a variable or occurs twice")
            terms[s] = float(coef)
        self.terms = terms

    def value(self, out):
        v = np.zeros(out.shape[0])
        for s, c in self.terms.items():
            v += c * np.prod(out[:, list(s)], axis=1)
        return v

    def grad(self, out):
        g = np.zeros_like(out, dtype=float)
        for s, c in self.terms.items():
            for pos, i in enumerate(s):
                rest = list(s[:pos] + s[pos + 1:])
                g[:, i] += c * np.prod(out[:, rest], axis=1)
        return g


class MultinomialReconstruction(LossFn):
    """``-sum_i y_i log f_i`` for word counts ``y`` and frequencies ``f``."""

    kind = "multinomial_reconstruction"

    def __init__(self, counts):
        self.counts = np.asarray(counts, dtype=float)
        if np.any(self.counts < 0):
            raise ValueError("multinomial counts must be non-negative")

    def _check(self, out):
        if np.any((out <= 0) & (self.counts > 0)):
            raise ValueError("degenerate reconstruction")

    def value(self, out):
        self._check(out)
        pos = self.counts > 0
        logf = np.log(np.where(pos, out, 1.0))
        return -np.sum(np.where(pos, self.counts * logf, 0.0), axis=-1)

    def grad(self, out):
        self._check(out)
        pos = self.counts > 0
        return np.where(pos, -self.counts / np.where(pos, out, 1.0), 0.0)

    def rows(self, idx):
        return MultinomialReconstruction(_take(self.counts, idx))


class SoftmaxCrossEntropy(LossFn):
    """Cross-entropy of integer labels against softmax(logits)."""

    kind = "softmax_cross_entropy"

    def __init__(self, labels):
        self.labels = np.atleast_1d(np.asarray(labels, dtype=int))

    def _logp(self, out):
        z = out - out.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def value(self, out):
        lab = np.broadcast_to(self.labels, (out.shape[0],))
        return -self._logp(out)[np.arange(out.shape[0]), lab]

    def grad(self, out):
        lab = np.broadcast_to(self.labels, (out.shape[0],))
        g = np.exp(self._logp(out))
        g[np.arange(out.shape[0]), lab] -= 1.0
        return g

    def rows(self, idx):
        return self if self.labels.size == 1 else SoftmaxCrossEntropy(self.labels[idx])


class CategoricalNLL(LossFn):
    """Negative log-probability of integer labels under a probability vector."""

    kind = "categorical_nll"

    def __init__(self, labels):
        self.labels = np.atleast_1d(np.asarray(labels, dtype=int))

    def _picked(self, out):
        rows = np.arange(out.shape[0])
        lab = np.broadcast_to(self.labels, (out.shape[0],))
        return rows, lab, out[rows, lab]

    def value(self, out):
        _, _, p = self._picked(out)
        if np.any(p <= 0):
            raise ValueError("degenerate reconstruction")
        return -np.log(p)

    def grad(self, out):
        rows, lab, p = self._picked(out)
        g = np.zeros_like(out, dtype=float)
        g[rows, lab] = -1.0 / p
        return g

    def rows(self, idx):
        return self if self.labels.size == 1 else CategoricalNLL(self.labels[idx])


def loss_eval(loss: LossFn, x):
    """Loss at a single vector (scalar) or per row of a batch."""
    xb, single = _as_batch(x)
    v = loss.value(xb)
    if not np.all(np.isfinite(v)):
        raise ValueError("loss is not finite")
    return float(v[0]) if single else v


def loss_grad_x(loss: LossFn, x):
    xb, single = _as_batch(x)
    g = loss.grad(xb)
    return g[0] if single else g


def multilinear_correction(W, y) -> MultilinearQuadratic:
    return MultilinearQuadratic(W, y)
