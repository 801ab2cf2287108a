"""Reverse pass over a forward tape with pluggable rules at stochastic sites.

Every estimator in this package shares the same chain rule through the
deterministic layers (linear, batch norm, relu, softmax).  They differ only in
what happens at a stochastic site: the site rule receives the incoming
gradient with respect to the sampled states and returns the gradient with
respect to the site's pre-activations (sign layers) or latent logits
(binary-weight layers).

The objective is a weighted sum of per-row losses.  ``row_weights`` defaults
to ``1/B`` (the batch mean); enumeration passes probability weights instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import noise as noise_mod
from ..sbn import (BatchNormAffine, BinaryLinear, ForwardTape, NoiseCdfTransform,
                   RealLinear, Relu, SignActivation, Softmax)


@dataclass
class GradEstimate:
    grad: np.ndarray
    kind: str
    seed: int | None = None
    loss_evaluations: int = 0
    wall_time: float = 0.0
    value: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grad = np.asarray(self.grad, dtype=float)
        if not np.all(np.isfinite(self.grad)):
            raise ValueError(f"{self.kind}: gradient estimate is not finite")


class SiteRule:
    """Default behaviour: straight-through at sign layers and at binary weights."""

    name = "st"

    def activation(self, idx, layer: SignActivation, rec, g):
        return g * layer.st_scale * noise_mod.pdf(layer.noise, rec["a"])

    def weights(self, idx, layer: BinaryLinear, rec, gw):
        # straight-through weights: dL/deta = 2 dL/dw, bypassing F_w'
        return 2.0 * gw.sum(axis=0)


class STRule(SiteRule):
    def __init__(self, weights: str = "alg2"):
        if weights not in ("alg2", "st"):
            raise ValueError(f"unknown weight rule {weights!r}")
        self.weight_mode = weights

    def weights(self, idx, layer, rec, gw):
        g = 2.0 * gw.sum(axis=0)
        if self.weight_mode == "st":
            g = g * noise_mod.pdf(layer.noise, layer.eta)
        return g


class RescaledRule(SiteRule):
    """Replaces the ST Jacobian ``2 diag(F'(a))`` by a fixed diagonal ``Lambda``."""

    name = "rescaled_st"

    def __init__(self, lam):
        self.lam = lam

    def _lam(self, idx, shape):
        lam = self.lam[idx] if isinstance(self.lam, dict) else self.lam
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("rescaling diagonal must be non-negative")
        return np.broadcast_to(lam, shape[-1:]) if lam.ndim <= 1 else lam

    def activation(self, idx, layer, rec, g):
        return g * self._lam(idx, g.shape)


class RelaxedRule(SiteRule):
    """Derivative of the Gumbel-Softmax relaxation ``y = sigmoid(k (a - z))``."""

    name = "gumbel"

    def __init__(self, tau):
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.tau = tau

    def activation(self, idx, layer, rec, g):
        if "z" not in rec:
            raise ValueError("tape has no retained noise for the relaxed backward")
        k = 2.0 / (layer.noise.scale * self.tau)
        y = _sigmoid(k * (rec["a"] - rec["z"]))
        dy = k * y * (1.0 - y)
        return g * dy * (1.0 if layer.encoding == "zero_one" else 2.0)


def _sigmoid(t):
    from scipy.special import expit
    return expit(t)


def default_row_weights(tape: ForwardTape):
    return np.full(tape.batch, 1.0 / tape.batch)


def backprop(tape: ForwardTape, grad_out, rule: SiteRule, stop: int | None = None) -> dict:
    """Reverse pass; returns ``{(layer_index, attr): gradient}``.

    ``grad_out`` is the (already weighted) gradient of the objective with
    respect to the network output.  Records of layers below ``tape.start`` do
    not exist, so the pass stops there (or at ``stop`` if given).
    """
    net = tape.net
    g = np.asarray(grad_out, dtype=float)
    grads = {}
    lowest = tape.start if stop is None else max(stop, tape.start)
    first_param = min((e.layer for e in net.layout), default=len(net.layers))
    for i in range(len(net.layers) - 1, lowest - 1, -1):
        layer, rec = net.layers[i], tape.records[i]
        if rec is None:
            raise ValueError(f"tape is missing the record of layer {i}")
        if isinstance(layer, RealLinear):
            grads[(i, "W")] = g.T @ rec["in"]
            grads[(i, "b")] = g.sum(axis=0)
            g = g @ layer.W
        elif isinstance(layer, BinaryLinear):
            gw = g[:, :, None] * rec["in"][:, None, :]
            grads[(i, "eta")] = rule.weights(i, layer, rec, gw)
            g = np.einsum("bo,boi->bi", g, rec["w"])
        elif isinstance(layer, BatchNormAffine):
            grads[(i, "scale")] = (g * rec["xhat"]).sum(axis=0)
            grads[(i, "shift")] = g.sum(axis=0)
            dxhat = g * layer.scale
            if rec["bn_mode"] == "train":
                n = g.shape[0]
                xhat = rec["xhat"]
                g = rec["inv"] / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                g = dxhat * rec["inv"]
        elif isinstance(layer, SignActivation):
            g = rule.activation(i, layer, rec, g)
        elif isinstance(layer, NoiseCdfTransform):
            g = g * 2.0 * noise_mod.pdf(layer.noise, rec["a"])
        elif isinstance(layer, Relu):
            g = g * rec["mask"]
        elif isinstance(layer, Softmax):
            out = rec["out"]
            g = out * (g - (g * out).sum(axis=1, keepdims=True))
        else:
            raise TypeError(f"unsupported layer {type(layer).__name__}")
        if i <= first_param:
            break
    return grads


def flatten(net, grads: dict) -> np.ndarray:
    out = np.zeros(net.size)
    for e in net.layout:
        g = grads.get((e.layer, e.attr))
        if g is not None:
            out[e.offset:e.offset + e.size] = np.asarray(g).ravel()
    return out


def objective_grad(tape: ForwardTape, loss, row_weights=None):
    """Loss values per row and the weighted output gradient."""
    w = default_row_weights(tape) if row_weights is None else np.asarray(row_weights, dtype=float)
    values = loss.value(tape.output)
    if not np.all(np.isfinite(values)):
        raise ValueError("loss is not finite")
    return values, loss.grad(tape.output) * w[:, None], w


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
