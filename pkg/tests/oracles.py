"""Independent brute-force references for small stochastic binary networks.

These helpers share no numerical code with the package: noise cdfs come from
``scipy.stats``, the forward pass is a plain recursion over every joint state
of every stochastic unit and weight, and gradients are central differences of
the resulting expected loss.
"""

import itertools

import numpy as np
from scipy import stats

from sbnlab.sbn import (BatchNormAffine, BinaryLinear, NoiseCdfTransform, RealLinear, Relu, SignActivation,
                        Softmax)


def noise_cdf(model, z):
    """cdf of the unit-slope noise shapes, from scipy's distributions."""
    z = np.asarray(z, dtype=float) / model.scale
    if model.kind == "logistic":
        return stats.logistic.cdf(2.0 * z)
    if model.kind == "uniform":
        return stats.uniform(loc=-1.0, scale=2.0).cdf(z)
    return stats.triang(c=0.5, loc=-2.0, scale=4.0).cdf(z)


def noise_pdf(model, z):
    z = np.asarray(z, dtype=float) / model.scale
    if model.kind == "logistic":
        return 2.0 * stats.logistic.pdf(2.0 * z) / model.scale
    if model.kind == "uniform":
        return stats.uniform(loc=-1.0, scale=2.0).pdf(z) / model.scale
    return stats.triang(c=0.5, loc=-2.0, scale=4.0).pdf(z) / model.scale


def _expected_row(layers, start, h, loss_row):
    """E[L] for one input row, branching over every stochastic state."""
    for i in range(start, len(layers)):
        layer = layers[i]
        if isinstance(layer, RealLinear):
            h = layer.W @ h + layer.b
        elif isinstance(layer, BatchNormAffine):
            # enumeration semantics: batch norm on its running statistics
            h = (h - layer.running_mean) / np.sqrt(layer.running_var + layer.eps) * layer.scale + layer.shift
        elif isinstance(layer, Relu):
            h = np.maximum(h, 0.0)
        elif isinstance(layer, Softmax):
            e = np.exp(h - h.max())
            h = e / e.sum()
        elif isinstance(layer, NoiseCdfTransform):
            h = 2.0 * noise_cdf(layer.noise, h) - 1.0
        elif isinstance(layer, SignActivation):
            p = noise_cdf(layer.noise, h)
            lo = 0.0 if layer.encoding == "zero_one" else -1.0
            total = 0.0
            for bits in itertools.product((0, 1), repeat=h.size):
                b = np.array(bits)
                prob = np.prod(np.where(b == 1, p, 1.0 - p))
                if prob == 0.0:
                    continue
                x = np.where(b == 1, 1.0, lo)
                total += prob * _expected_row(layers, i + 1, x, loss_row)
            return total
        elif isinstance(layer, BinaryLinear):
            theta = noise_cdf(layer.noise, layer.eta).ravel()
            total = 0.0
            for bits in itertools.product((0, 1), repeat=theta.size):
                b = np.array(bits)
                prob = np.prod(np.where(b == 1, theta, 1.0 - theta))
                if prob == 0.0:
                    continue
                w = np.where(b == 1, 1.0, -1.0).reshape(layer.eta.shape)
                total += prob * _expected_row(layers, i + 1, w @ h, loss_row)
            return total
        else:
            raise TypeError(f"oracle does not support {type(layer).__name__}")
    return float(loss_row(h))


def expected_loss(net, X, loss):
    """Mean over rows of the exact expected loss."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    vals = []
    for r in range(X.shape[0]):
        lr = loss.rows(np.array([r])) if X.shape[0] > 1 else loss
        vals.append(_expected_row(net.layers, 0, X[r], lambda out: lr.value(out[None, :])[0]))
    return float(np.mean(vals))


def fd_gradient(net, X, loss, h=1e-6):
    """Central-difference gradient of :func:`expected_loss` in the flat parameters."""
    base = net.get_flat().copy()
    g = np.zeros_like(base)
    try:
        for j in range(base.size):
            up, dn = base.copy(), base.copy()
            up[j] += h
            dn[j] -= h
            net.set_flat(up)
            fu = expected_loss(net, X, loss)
            net.set_flat(dn)
            fd = expected_loss(net, X, loss)
            g[j] = (fu - fd) / (2 * h)
    finally:
        net.set_flat(base)
    return g


def one_unit_st_expectation(a, noise, dloss_pm):
    """``E[2 F'(a) L'(x)]`` for one +-1 unit, written out by hand."""
    F = float(noise_cdf(noise, a))
    return 2.0 * float(noise_pdf(noise, a)) * (F * dloss_pm(1.0) + (1.0 - F) * dloss_pm(-1.0))
