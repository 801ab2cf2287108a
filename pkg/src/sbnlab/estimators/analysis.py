"""Ascent-condition checks for single-layer models, in pre-activation space.

The gradients compared here are taken with respect to the pre-activations
``a`` of the one sign layer.  ``g_i(x) = dL/dx_i`` must be Lipschitz in
``x_i`` with the supplied constant(s).  Two guarantees are reported with
their premise and conclusion kept separate:

* expected ST: premise ``|E g_i| > L_i`` for all ``i``; conclusion
  ``<E[ST], true> > 0``;
* deterministic ST at ``x* = sign(a)`` with ``p* = p(x* | a)``: premise
  ``|g*_i| >= 2 (1 - p*) L_i`` (against expected ST) and
  ``|g*_i| >= 2 (1 - p*) L_i + L_i`` (against the true gradient).
"""

from __future__ import annotations

import itertools

import numpy as np

from .. import noise as noise_mod
from ..losses import Quadratic, loss_eval, loss_grad_x
from ..sbn import SignActivation, forward_det
from .enumeration import ENUM_BUDGET_BITS, EnumerationBudgetError


def quadratic_lipschitz(W) -> np.ndarray:
    """Per-coordinate Lipschitz constant ``2 ||W[:, i]||^2`` of ``dL/dx_i``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return 2.0 * np.einsum("ki,ki->i", W, W)


def _pm_states(n):
    return np.array(list(itertools.product((-1.0, 1.0), repeat=n)))


def unit_moments(a, noise, loss, closed_form: bool | None = None):
    """``E[dL/dx]`` and the true gradient ``dE[L]/da`` for ``x_i = sign(a_i - z_i)``.

    Quadratic losses use closed forms valid for any ``n``: with
    ``m = E[x] = 2F(a) - 1``, ``E[dL/dx] = dL/dx (m)`` and
    ``E[L] = L(m) - sum_i m_i^2 ||W_i||^2 + sum_i ||W_i||^2``.  Other losses are
    enumerated.
    """
    a = np.asarray(a, dtype=float)
    n = a.size
    F = np.asarray(noise_mod.cdf(noise, a), dtype=float)
    dF = np.asarray(noise_mod.pdf(noise, a), dtype=float)
    quad = isinstance(loss, Quadratic) and type(loss).__name__ == "Quadratic"
    if closed_form is None:
        closed_form = quad
    if closed_form:
        if not quad:
            raise ValueError("closed form needs a quadratic loss")
        m = 2.0 * F - 1.0
        eg = loss_grad_x(loss, m)
        col = quadratic_lipschitz(loss.W) / 2.0
        true = 2.0 * dF * (eg - 2.0 * m * col)
        return eg, true
    if n > ENUM_BUDGET_BITS:
        raise EnumerationBudgetError(
            f"enumeration needs 2^{n} configurations, above the budget of 2^{ENUM_BUDGET_BITS}")
    X = _pm_states(n)
    P = np.where(X > 0, F, 1.0 - F)
    p = np.prod(P, axis=1)
    L = loss_eval(loss, X)
    G = loss_grad_x(loss, X)
    eg = p @ G
    # d p(x) / d a_i = p(x) * x_i F'(a_i) / P(x_i), written without dividing
    true = np.zeros(n)
    for i in range(n):
        rest = np.prod(np.delete(P, i, axis=1), axis=1)
        true[i] = np.sum(L * rest * X[:, i]) * dF[i]
    return eg, true


def ascent_condition_check(net, input, loss, lipschitz_L=None) -> dict:
    """Report the premises and conclusions of both ascent guarantees."""
    sites = net.sites()
    if len(sites) != 1 or not isinstance(net.layers[sites[0]], SignActivation):
        raise ValueError("ascent check needs a single sign layer")
    s = sites[0]
    if s != len(net.layers) - 1:
        raise ValueError("ascent check needs the sign layer to be the output layer")
    layer = net.layers[s]
    if layer.encoding != "pm_one":
        raise ValueError("ascent check uses the +-1 encoding")
    _, tape = forward_det(net, input)
    a = tape.records[s]["a"]
    if a.shape[0] != 1:
        raise ValueError("ascent check takes a single input")
    a = a[0]
    if lipschitz_L is None:
        if not isinstance(loss, Quadratic):
            raise ValueError("a Lipschitz constant is required for non-quadratic losses")
        lipschitz_L = quadratic_lipschitz(loss.W)
    Lc = np.broadcast_to(np.asarray(lipschitz_L, dtype=float), a.shape)
    eg, true = unit_moments(a, layer.noise, loss)
    dF = np.asarray(noise_mod.pdf(layer.noise, a), dtype=float)
    e_st = 2.0 * dF * eg
    x_star = np.where(a >= 0, 1.0, -1.0)
    F = np.asarray(noise_mod.cdf(layer.noise, a), dtype=float)
    p_star = float(np.prod(np.where(x_star > 0, F, 1.0 - F)))
    g_star = loss_grad_x(loss, x_star)
    det_st = 2.0 * dF * g_star
    premise = np.abs(eg) > Lc
    st_dot = float(np.dot(e_st, true))
    det_dot_st = float(np.dot(det_st, e_st))
    det_dot_true = float(np.dot(det_st, true))
    return {
        "a": a,
        "abs_expected_grad": np.abs(eg),
        "lipschitz": Lc.copy(),
        "premise": premise,
        "premise_all": bool(np.all(premise)),
        "fraction_premise": float(np.mean(premise)),
        "expected_st": e_st,
        "true_grad": true,
        "st_dot_true": st_dot,
        "st_ascent": st_dot > 0,
        "p_star": p_star,
        "det_grad": g_star,
        "det_premise_vs_st": bool(np.all(np.abs(g_star) >= 2.0 * (1.0 - p_star) * Lc)),
        "det_premise_vs_true": bool(np.all(np.abs(g_star) >= 2.0 * (1.0 - p_star) * Lc + Lc)),
        "det_dot_st": det_dot_st,
        "det_dot_true": det_dot_true,
    }
