"""Straight-through family, local expectations and network-level Gumbel estimators."""

from __future__ import annotations

import numpy as np

from .. import noise as noise_mod
from ..sbn import (BatchNormAffine, ForwardTape, SignActivation, forward_det,
                   forward_sample, forward_tail)
from .core import (GradEstimate, RelaxedRule, RescaledRule, SiteRule, STRule, Timer, backprop,
                   flatten, objective_grad)


def _finish(tape, grads, kind, values, w, seed=None, evals=None, wall=0.0, extra=None):
    return GradEstimate(flatten(tape.net, grads), kind, seed=seed,
                        loss_evaluations=tape.batch if evals is None else evals,
                        wall_time=wall, value=float(np.dot(values, w)), extra=extra or {})


def _backward(tape, loss, rule, kind, upstream=None, row_weights=None, seed=None):
    with Timer() as t:
        values, gout, w = objective_grad(tape, loss, row_weights)
        if upstream is not None:
            gout = np.asarray(upstream, dtype=float).reshape(tape.output.shape) * w[:, None]
        grads = backprop(tape, gout, rule)
    return _finish(tape, grads, kind, values, w, seed=seed, wall=t.elapsed)


def st_backward(tape: ForwardTape, loss, upstream=None, weights: str = "alg2",
                row_weights=None, seed=None) -> GradEstimate:
    """ST gradient for a sampled tape.

    Sign layers use ``dL/da = 2 F'(a) dL/dx`` (``F'(a)`` for 0/1 states); binary
    weights use ``dL/deta = 2 dL/dw``.  ``upstream`` replaces the loss
    gradient at the network output when given.  ``weights="st"`` multiplies
    the weight gradient by ``F_w'(eta)`` instead of bypassing it.
    """
    return _backward(tape, loss, STRule(weights), "st", upstream, row_weights, seed)


def det_st_backward(net, input, loss) -> GradEstimate:
    """ST backward through the zero-noise state ``x* = sign(a)`` (deterministic)."""
    _, tape = forward_det(net, input)
    est = _backward(tape, loss, STRule(), "det_st")
    return est


def rescaled_st_backward(tape: ForwardTape, loss, lam, row_weights=None, seed=None) -> GradEstimate:
    """ST with the Jacobian ``2 diag(F'(a))`` replaced by a non-negative diagonal.

    ``lam`` is a scalar, a per-unit vector, or ``{layer_index: vector}``.
    """
    _check_lambda(lam)
    return _backward(tape, loss, RescaledRule(lam), "rescaled_st", row_weights=row_weights, seed=seed)


def identity_st_backward(tape: ForwardTape, loss, row_weights=None, seed=None) -> GradEstimate:
    est = rescaled_st_backward(tape, loss, 1.0, row_weights=row_weights, seed=seed)
    est.kind = "identity_st"
    return est


def _check_lambda(lam):
    vals = lam.values() if isinstance(lam, dict) else [lam]
    for v in vals:
        if np.any(np.asarray(v, dtype=float) < 0):
            raise ValueError("rescaling diagonal must be non-negative")


def gs_backward(net, input, rng, loss, tau, seed=None) -> GradEstimate:
    """Gumbel-Softmax: relaxed forward and its exact derivative."""
    tape = forward_sample(net, input, rng, relax_tau=tau)
    return _backward(tape, loss, RelaxedRule(tau), f"gumbel_softmax(tau={tau:g})", seed=seed)


def st_gs_backward(net, input, rng, loss, tau, seed=None) -> GradEstimate:
    """ST Gumbel-Softmax: hard forward, relaxed derivative with the same noise."""
    tape = forward_sample(net, input, rng, retain_noise=True)
    return _backward(tape, loss, RelaxedRule(tau), f"st_gumbel_softmax(tau={tau:g})", seed=seed)


# ---------------------------------------------------------------------------
# local expectations


def single_sign_site(net) -> int:
    sites = net.sites()
    if len(sites) != 1 or not isinstance(net.layers[sites[0]], SignActivation):
        raise ValueError("local expectations requires single layer")
    s = sites[0]
    if any(isinstance(layer, BatchNormAffine) for layer in net.layers[s + 1:]):
        raise ValueError("local expectations does not support batch norm after the binary layer")
    return s


def _flip(layer: SignActivation, x):
    return 1.0 - x if layer.encoding == "zero_one" else -x


def flip_losses(tape: ForwardTape, loss, site: int) -> np.ndarray:
    """``L(x_{flip i})`` for every row and unit, shape ``(B, n)``."""
    net = tape.net
    layer = net.layers[site]
    x = tape.records[site]["x"]
    B, n = x.shape
    X = np.repeat(x, n, axis=0).reshape(B, n, n)
    idx = np.arange(n)
    X[:, idx, idx] = _flip(layer, X[:, idx, idx])
    X = X.reshape(B * n, n)
    if site + 1 < len(net.layers):
        out = forward_tail(net, site + 1, X).output
    else:
        out = X
    rows = np.repeat(np.arange(B), n)
    vals = loss.rows(rows).value(out)
    if not np.all(np.isfinite(vals)):
        raise ValueError("loss is not finite")
    return vals.reshape(B, n)


class LocalExpectationRule(SiteRule):
    """Replaces the ST factor by ``dp(x_i)/da_i * (L(x) - L(x_flip_i))``."""

    name = "local_expectations"

    def __init__(self, tape, loss, site, values, row_weights):
        layer = tape.net.layers[site]
        rec = tape.records[site]
        high = rec["x"] > (0.5 if layer.encoding == "zero_one" else 0.0)
        dp = np.where(high, 1.0, -1.0) * noise_mod.pdf(layer.noise, rec["a"])
        diff = values[:, None] - flip_losses(tape, loss, site)
        self.site = site
        self.grad_a = row_weights[:, None] * dp * diff

    def activation(self, idx, layer, rec, g):
        if idx != self.site:
            raise ValueError("local expectations requires single layer")
        return self.grad_a


def local_expectations_from_tape(tape: ForwardTape, loss, row_weights=None, seed=None) -> GradEstimate:
    site = single_sign_site(tape.net)
    with Timer() as t:
        values, gout, w = objective_grad(tape, loss, row_weights)
        rule = LocalExpectationRule(tape, loss, site, values, w)
        grads = backprop(tape, gout, rule)
    n = tape.records[site]["x"].shape[1]
    return _finish(tape, grads, "local_expectations", values, w, seed=seed,
                   evals=tape.batch * (n + 1), wall=t.elapsed)


def local_expectations(net, input, rng, loss, seed=None) -> GradEstimate:
    """Unbiased single-sample estimate with one bit-flip loss evaluation per unit.

    Parameters below the binary layer receive the probability-derivative
    terms; parameters above it receive the pathwise gradient at the sample.
    """
    single_sign_site(net)
    tape = forward_sample(net, input, rng)
    return local_expectations_from_tape(tape, loss, seed=seed)


def local_expectations_avg(net, input, rng, loss, K: int, seed=None) -> GradEstimate:
    """Mean of ``K`` independent local-expectations draws."""
    if K < 1:
        raise ValueError("K must be at least 1")
    acc = None
    evals = 0
    value = 0.0
    with Timer() as t:
        for _ in range(K):
            est = local_expectations(net, input, rng, loss)
            acc = est.grad.copy() if acc is None else acc + est.grad
            evals += est.loss_evaluations
            value += est.value
    return GradEstimate(acc / K, f"local_expectations_avg(K={K})", seed=seed,
                        loss_evaluations=evals, wall_time=t.elapsed, value=value / K)
