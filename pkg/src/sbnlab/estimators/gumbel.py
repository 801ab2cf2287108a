"""Gumbel-Softmax on a single layer of 0/1 units, with quadrature references.

Units are ``x = [eta - z >= 0]`` with ``z`` standard logistic (the difference
of two Gumbel variables), so ``P(x = 1) = sigmoid(eta)``.  The relaxation is
``y = sigmoid((eta - z) / tau)``.  Expectations over ``z`` are computed in the
variable ``v = y``, where the noise density becomes
``p_Z(eta - tau * logit(v))`` and the integrals live on ``(0, 1)``.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import integrate
from scipy.special import expit, logit

from ..losses import LossFn, loss_grad_x
from .core import GradEstimate

QUAD_EPSABS = 1e-10
QUAD_LIMIT = 500


def logistic_density(z):
    s = expit(z)
    return s * (1.0 - s)


def _check_tau(tau):
    if not tau > 0:
        raise ValueError("tau must be positive")


def _derivative(loss, y):
    if isinstance(loss, LossFn):
        return np.asarray(loss_grad_x(loss, y), dtype=float)
    return np.asarray(loss(y), dtype=float)


def _noise(eta, rng, z):
    if z is not None:
        return np.broadcast_to(np.asarray(z, dtype=float), eta.shape)
    u = rng.random(eta.shape)
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return logit(u)


def relaxed(eta, z, tau):
    """``sigmoid((eta - z) / tau)`` and its derivative in ``eta``."""
    _check_tau(tau)
    y = expit((np.asarray(eta, dtype=float) - z) / tau)
    return y, y * (1.0 - y) / tau


def gs_gradient(eta, tau, rng, loss, z=None) -> GradEstimate:
    """One Gumbel-Softmax draw: ``L'(y) * y (1 - y) / tau``.

    ``loss`` is a :class:`LossFn` on the relaxed vector or a callable
    returning the elementwise derivative.  ``z`` fixes the noise.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    zz = _noise(eta, rng, z)
    y, dy = relaxed(eta, zz, tau)
    g = _derivative(loss, y) * dy
    return GradEstimate(g, f"gumbel_softmax(tau={tau:g})", loss_evaluations=1,
                        extra={"z": zz, "y": y})


def hard_state(eta, z):
    return (np.asarray(eta, dtype=float) - z >= 0).astype(float)


def st_gs_gradient(eta, tau, rng, loss, z=None) -> GradEstimate:
    """One ST Gumbel-Softmax draw: ``L'(x) * y (1 - y) / tau`` at hard ``x``."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    zz = _noise(eta, rng, z)
    y, dy = relaxed(eta, zz, tau)
    x = hard_state(eta, zz)
    g = _derivative(loss, x) * dy
    return GradEstimate(g, f"st_gumbel_softmax(tau={tau:g})", loss_evaluations=1,
                        extra={"z": zz, "y": y, "x": x})


def _quad(f, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, a, b, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=QUAD_LIMIT)
        except integrate.IntegrationWarning as exc:
            raise ArithmeticError(f"quadrature did not converge: {exc}") from None
    return val


def _v_density(eta, tau):
    def w(v):
        if v <= 0.0 or v >= 1.0:
            return 0.0
        return logistic_density(eta - tau * logit(v))
    return w


def exact_unit_gradient(dloss, eta) -> float:
    """``p_Z(eta) (L(1) - L(0))`` with ``L(1) - L(0)`` integrated from ``L'``."""
    return float(logistic_density(eta)) * _quad(lambda v: float(dloss(v)), 0.0, 1.0)


def gs_expected_gradient(dloss, eta, tau) -> float:
    """``E_z`` of the Gumbel-Softmax gradient for one unit, by quadrature.

    ``tau = 0`` returns the exact limit ``p_Z(eta) (L(1) - L(0))``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if tau == 0:
        return exact_unit_gradient(dloss, eta)
    w = _v_density(eta, tau)
    return _quad(lambda v: float(dloss(v)) * w(v), 0.0, 1.0)


def gs_bias_quadrature(dloss, eta, tau) -> float:
    """Bias of the expected Gumbel-Softmax gradient against the exact one."""
    return gs_expected_gradient(dloss, eta, tau) - exact_unit_gradient(dloss, eta)


def gs_second_moment(dloss, eta, tau) -> float:
    """``E_z[(L'(y) y (1 - y) / tau)^2] = (1/tau) int L'(v)^2 v (1-v) p_Z(...) dv``."""
    _check_tau(tau)
    w = _v_density(eta, tau)
    return _quad(lambda v: float(dloss(v)) ** 2 * v * (1.0 - v) * w(v), 0.0, 1.0) / tau


def gs_variance_quadrature(dloss, eta, tau) -> float:
    m = gs_expected_gradient(dloss, eta, tau)
    return gs_second_moment(dloss, eta, tau) - m * m


def st_gs_expected_gradient(dloss, eta, tau) -> float:
    """``E_z`` of the ST Gumbel-Softmax gradient; hard states split at ``v = 1/2``."""
    _check_tau(tau)
    w = _v_density(eta, tau)
    d0, d1 = float(dloss(0.0)), float(dloss(1.0))
    return d0 * _quad(w, 0.0, 0.5) + d1 * _quad(w, 0.5, 1.0)


def _threshold_interval(eta, tau, eps):
    _check_tau(tau)
    if not 0 < eps < 0.25:
        raise ValueError("threshold eps must lie in (0, 1/4)")
    s_star = (1.0 - np.sqrt(1.0 - 4.0 * eps)) / 2.0
    half = tau * logit(s_star)  # negative
    return eta + half, eta - half


def gs_threshold_probability(eta, tau, eps) -> float:
    """``P(y (1 - y) >= eps)`` for ``y = sigmoid((eta - z) / tau)``, closed form."""
    z1, z2 = _threshold_interval(eta, tau, eps)
    return float(expit(z2) - expit(z1))


def gs_threshold_probability_mc(eta, tau, eps, rng, draws: int = 10**6) -> float:
    _threshold_interval(eta, tau, eps)
    z = _noise(np.zeros(draws), rng, None)
    y = expit((eta - z) / tau)
    return float(np.mean(y * (1.0 - y) >= eps))
