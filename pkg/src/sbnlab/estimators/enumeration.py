"""Exact expectations over every joint binary configuration (desk-scale oracle).

A configuration fixes every sampled sign state and every sampled binary
weight.  Its probability is the product of per-site factors, with sign-layer
factors conditioned on the pre-activations produced by the earlier states, so
deep networks are handled by one clamped forward pass per configuration.
"""

from __future__ import annotations

import numpy as np

from .. import noise as noise_mod
from ..sbn import BinaryLinear, SignActivation, forward_det, forward_forced
from .core import GradEstimate, RescaledRule, SiteRule, STRule, Timer, backprop, flatten
from .straight_through import LocalExpectationRule, single_sign_site

ENUM_BUDGET_BITS = 20
CHUNK = 4096


class EnumerationBudgetError(ValueError):
    pass


def _sites(net):
    out = []
    off = 0
    for i in net.sites():
        layer = net.layers[i]
        m = layer.eta.size if isinstance(layer, BinaryLinear) else _sign_width(net, i)
        out.append((i, off, m))
        off += m
    return out, off


def _sign_width(net, i):
    w = net.layers[i].width
    if w is None:
        raise ValueError(f"unknown width of sign layer {i}")
    return int(w)


def enumeration_bits(net) -> int:
    return _sites(net)[1]


def check_budget(net, budget_bits=ENUM_BUDGET_BITS):
    bits = enumeration_bits(net)
    if bits > budget_bits:
        raise EnumerationBudgetError(
            f"enumeration needs 2^{bits} configurations, above the budget of 2^{budget_bits}")
    return bits


class _Chunk:
    """One block of configurations for one input row, after the clamped forward."""

    def __init__(self, net, row, ints, sites, S, loss_row):
        C = ints.size
        bits = ((ints[:, None] >> np.arange(S)) & 1).astype(float)
        forced = {}
        for i, off, m in sites:
            b = bits[:, off:off + m]
            layer = net.layers[i]
            if isinstance(layer, BinaryLinear):
                forced[i] = (2.0 * b - 1.0).reshape((C,) + layer.eta.shape)
            elif layer.encoding == "zero_one":
                forced[i] = b
            else:
                forced[i] = 2.0 * b - 1.0
        tape = forward_forced(net, np.repeat(row[None, :], C, axis=0), forced)
        P = np.empty((C, S))
        for i, off, m in sites:
            b = bits[:, off:off + m]
            rec = tape.records[i]
            q = rec["theta"].reshape(1, -1) if "theta" in rec else rec["p"]
            P[:, off:off + m] = np.where(b > 0.5, q, 1.0 - q)
        self.bits = bits
        self.tape = tape
        self.P = P
        self.prob = np.prod(P, axis=1)
        self.values = loss_row.value(tape.output)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("loss is not finite")
        self.loss = loss_row

    def leave_one_out(self):
        """Product of all factors except column j, without dividing."""
        P = self.P
        C, S = P.shape
        prefix = np.ones((C, S + 1))
        suffix = np.ones((C, S + 1))
        prefix[:, 1:] = np.cumprod(P, axis=1)
        suffix[:, :-1] = np.cumprod(P[:, ::-1], axis=1)[:, ::-1]
        return prefix[:, :-1] * suffix[:, 1:]


def _configurations(net, input, loss, budget_bits=ENUM_BUDGET_BITS):
    sites, S = _sites(net)
    if S > budget_bits:
        raise EnumerationBudgetError(
            f"enumeration needs 2^{S} configurations, above the budget of 2^{budget_bits}")
    X = np.atleast_2d(np.asarray(input, dtype=float))
    R = X.shape[0]
    total = 1 << S
    for r in range(R):
        for c0 in range(0, total, CHUNK):
            ints = np.arange(c0, min(total, c0 + CHUNK), dtype=np.int64)
            loss_row = loss.rows(np.full(ints.size, r))
            yield _Chunk(net, X[r], ints, sites, S, loss_row), sites, R


class _ScoreRule(SiteRule):
    """Gradient of ``sum_c p(c) L(c)`` through the probability factors only."""

    def __init__(self, chunk, sites, scale, weight_param):
        self.loo = chunk.leave_one_out()
        self.cols = {i: (off, m) for i, off, m in sites}
        self.values = chunk.values
        self.bits = chunk.bits
        self.scale = scale
        self.weight_param = weight_param

    def _coef(self, idx):
        off, m = self.cols[idx]
        sgn = 2.0 * self.bits[:, off:off + m] - 1.0
        return self.scale * self.values[:, None] * self.loo[:, off:off + m] * sgn

    def activation(self, idx, layer, rec, g):
        return self._coef(idx) * noise_mod.pdf(layer.noise, rec["a"])

    def weights(self, idx, layer, rec, gw):
        coef = self._coef(idx).sum(axis=0).reshape(layer.eta.shape)
        if self.weight_param == "eta":
            coef = coef * noise_mod.pdf(layer.noise, layer.eta)
        return coef


def exact_gradient_enum(net, input, loss, weight_param: str = "eta",
                        budget_bits: int = ENUM_BUDGET_BITS) -> GradEstimate:
    """Exact gradient of the row-averaged expected loss.

    ``weight_param="theta"`` reports binary-weight gradients with respect to
    the probabilities ``theta = F_w(eta)`` instead of the logits.
    """
    if weight_param not in ("eta", "theta"):
        raise ValueError("weight_param must be 'eta' or 'theta'")
    acc = np.zeros(net.size)
    value = 0.0
    evals = 0
    with Timer() as t:
        for chunk, sites, R in _configurations(net, input, loss, budget_bits):
            rw = chunk.prob / R
            value += float(np.dot(rw, chunk.values))
            evals += chunk.values.size
            gout = chunk.loss.grad(chunk.tape.output) * rw[:, None]
            rule = _ScoreRule(chunk, sites, 1.0 / R, weight_param)
            acc += flatten(net, backprop(chunk.tape, gout, rule))
    return GradEstimate(acc, "exact_enum", loss_evaluations=evals, wall_time=t.elapsed, value=value)


def expected_loss_enum(net, input, loss, budget_bits: int = ENUM_BUDGET_BITS) -> float:
    value = 0.0
    for chunk, _, R in _configurations(net, input, loss, budget_bits):
        value += float(np.dot(chunk.prob / R, chunk.values))
    return value


def expected_estimator_enum(kind, net, input, loss, lam=None,
                            budget_bits: int = ENUM_BUDGET_BITS) -> GradEstimate:
    """Exact expectation of a one-sample estimator over all configurations."""
    from .kinds import EstimatorKind

    if isinstance(kind, str):
        # an explicit lam (scalar, vector or per-layer dict) replaces the parsed one
        k = EstimatorKind("rescaled_st", lam=0.0) if kind == "rescaled_st" and lam is not None \
            else EstimatorKind.parse(kind)
    else:
        k = kind
    if k.name == "exact_enum":
        return exact_gradient_enum(net, input, loss, budget_bits=budget_bits)
    if k.name == "det_st":
        from .straight_through import det_st_backward
        return det_st_backward(net, input, loss)
    if k.name in ("gumbel_softmax", "st_gumbel_softmax"):
        raise ValueError(f"{k} needs integration over the noise; use the quadrature functions")
    if k.name in ("local_expectations", "local_expectations_avg"):
        single_sign_site(net)
    acc = np.zeros(net.size)
    value = 0.0
    evals = 0
    with Timer() as t:
        for chunk, _, R in _configurations(net, input, loss, budget_bits):
            rw = chunk.prob / R
            value += float(np.dot(rw, chunk.values))
            tape = chunk.tape
            gout = chunk.loss.grad(tape.output) * rw[:, None]
            if k.name == "st":
                rule = STRule()
            elif k.name == "identity_st":
                rule = RescaledRule(1.0)
            elif k.name == "rescaled_st":
                rule = RescaledRule(k.lam if lam is None else lam)
            elif k.name in ("local_expectations", "local_expectations_avg"):
                site = single_sign_site(net)
                rule = LocalExpectationRule(tape, chunk.loss, site, chunk.values, rw)
            else:
                raise ValueError(f"unsupported estimator {k}")
            acc += flatten(net, backprop(tape, gout, rule))
            evals += chunk.values.size
    return GradEstimate(acc, f"E[{k}]", loss_evaluations=evals, wall_time=t.elapsed, value=value)


def det_state_probability(net, input) -> np.ndarray:
    """Probability ``p* = p(x* | a)`` of the zero-noise state, per input row."""
    _, tape = forward_det(net, input)
    out = np.ones(tape.batch)
    for i in net.sites():
        layer = net.layers[i]
        rec = tape.records[i]
        if isinstance(layer, SignActivation):
            p = rec["p"]
            out *= np.prod(np.where(rec["a"] >= 0, p, 1.0 - p), axis=1)
        else:
            th = noise_mod.cdf(layer.noise, layer.eta)
            out *= np.prod(np.where(layer.eta >= 0, th, 1.0 - th))
    return out
