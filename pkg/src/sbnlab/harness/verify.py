"""Property suites run by ``sbnlab verify``.

Each check returns one row ``(suite, check, passed, value, tolerance)``.
Instances are drawn from streams derived from the seed, so a rerun with the
same seed reproduces the report byte for byte.
"""

from __future__ import annotations

import itertools
import math
import os

import numpy as np
from scipy.special import logit

from .. import noise as noise_mod
from ..estimators import (det_st_backward, exact_gradient_enum, expected_estimator_enum,
                          gs_bias_quadrature, gs_threshold_probability,
                          gs_threshold_probability_mc, gs_variance_quadrature,
                          logistic_density, st_backward, st_gs_expected_gradient)
from ..losses import MultilinearQuadratic, PolynomialMultilinear, Quadratic, loss_eval
from ..metrics import TrialSet, bias_variance, ecs, ei, rmse
from ..optim import (bayesbinn_collapsed_step, bayesbinn_step, kl_prox_verify, md_kl_step,
                     vb_step)
from ..sbn import NetworkSpec, RealLinear, SignActivation, forward_sample, init_network
from ..streams import child
from .io import write_csv

COLUMNS = ["suite", "check", "passed", "value", "tolerance"]
NOISES = (noise_mod.uniform(), noise_mod.logistic(), noise_mod.triangular())


def _row(suite, check, value, tol, passed):
    return {"suite": suite, "check": check, "passed": bool(passed), "value": float(value), "tolerance": float(tol)}


def random_multilinear(rng, n, terms=12, max_order=3):
    max_order = min(max_order, n)
    # every subset of size <= max_order, counting the constant term
    terms = min(terms, sum(math.comb(n, k) for k in range(max_order + 1)))
    table = {(): rng.uniform(-1, 1)}
    while len(table) < terms:
        k = int(rng.integers(1, max_order + 1))
        s = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
        table.setdefault(s, rng.uniform(-1, 1))
    return PolynomialMultilinear(table)


def one_layer(rng, n, noise, inputs=3):
    W = rng.normal(size=(n, inputs))
    b = rng.normal(size=n)
    net = NetworkSpec(inputs, [RealLinear(W, b), SignActivation(noise)])
    return net, rng.normal(size=(2, inputs))


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def check_unbiasedness(seed, count=10, n=8):
    rng = child(seed, "verify", "unbiased")
    worst = 0.0
    for t in range(count):
        nz = NOISES[t % 3]
        net, x = one_layer(rng, n, nz)
        L = random_multilinear(rng, n)
        worst = max(worst, _rel(expected_estimator_enum("st", net, x, L).grad,
                                exact_gradient_enum(net, x, L).grad))
    return _row("estimators", "st_unbiased_multilinear", worst, 1e-9, worst < 1e-9)


def square_loss():
    """``L(x) = x^2`` on one unit."""
    return Quadratic(np.eye(1), np.zeros(1))


def check_counterexample(seed):
    worst = 0.0
    nz = noise_mod.logistic()
    for a in (-2.0, -1.0, 0.0, 1.0, 2.0):
        net = NetworkSpec(1, [RealLinear(np.zeros((1, 1)), [a]), SignActivation(nz)])
        e = expected_estimator_enum("st", net, np.zeros(1), square_loss()).grad[-1]
        g = exact_gradient_enum(net, np.zeros(1), square_loss()).grad[-1]
        want = 4 * noise_mod.pdf(nz, a) * (2 * noise_mod.cdf(nz, a) - 1)
        worst = max(worst, abs(e - want), abs(g))
    return _row("estimators", "square_loss_bias", worst, 1e-12, worst < 1e-12)


def check_quadratic_repair(seed, count=5, n=8):
    rng = child(seed, "verify", "repair")
    worst = 0.0
    X = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    for _ in range(count):
        W, y = rng.normal(size=(4, n)), rng.normal(size=4)
        Lt = MultilinearQuadratic(W, y)
        net, x = one_layer(rng, n, noise_mod.logistic())
        worst = max(worst, _rel(expected_estimator_enum("st", net, x, Lt).grad,
                                exact_gradient_enum(net, x, Lt).grad))
        worst = max(worst, float(np.max(np.abs(loss_eval(Lt, X) - loss_eval(Quadratic(W, y), X)))))
    return _row("estimators", "quadratic_repair", worst, 1e-9, worst < 1e-9)


def check_rescaling(seed, count=20, n=6):
    rng = child(seed, "verify", "rescale")
    worst = np.inf
    for _ in range(count):
        net, x = one_layer(rng, n, noise_mod.logistic(), inputs=1)
        x = np.ones((1, 1))
        L = random_multilinear(rng, n)
        lam = rng.uniform(0, 2, size=n) * (rng.random(n) < 0.8)
        a = expected_estimator_enum("rescaled_st", net, x, L, lam=lam).grad
        b = expected_estimator_enum("st", net, x, L).grad
        worst = min(worst, float(a @ b))
    return _row("estimators", "rescaled_ascent", worst, -1e-12, worst >= -1e-12)


def invariance_pair(rng, n=5):
    """The same units under logistic noise and under uniform noise on 2F(a) - 1."""
    from ..sbn import NoiseCdfTransform
    nz = noise_mod.logistic()
    W, b = rng.normal(size=(n, 3)), rng.normal(size=n)
    net_a = NetworkSpec(3, [RealLinear(W, b), SignActivation(nz)])
    net_b = NetworkSpec(3, [RealLinear(W, b), NoiseCdfTransform(nz), SignActivation(noise_mod.uniform())])
    return net_a, net_b


def check_invariance(seed, count=5):
    rng = child(seed, "verify", "invariance")
    worst = 0.0
    for t in range(count):
        net_a, net_b = invariance_pair(rng)
        x = rng.normal(size=(4, 3))
        L = Quadratic(rng.normal(size=(2, 5)), rng.normal(size=2))
        ta = forward_sample(net_a, x, child(seed, "inv", t))
        tb = forward_sample(net_b, x, child(seed, "inv", t))
        worst = max(worst, float(np.max(np.abs(st_backward(ta, L).grad - st_backward(tb, L).grad))))
    return _row("estimators", "st_invariance", worst, 1e-12, worst <= 1e-12)


def check_md(seed, count=20):
    rng = child(seed, "verify", "md")
    worst = 0.0
    for _ in range(count):
        th = rng.uniform(0.05, 0.95, size=3)
        g, lr = rng.normal(size=3), rng.uniform(0.1, 1.0)
        eta = md_kl_step(logit(th), g, lr)
        worst = max(worst, kl_prox_verify(th, g, lr, 1 / (1 + np.exp(-eta)), iters=120))
    return _row("optim", "md_kl_prox", worst, 1e-8, worst < 1e-8)


def check_vb(seed, count=20):
    rng = child(seed, "verify", "vb")
    worst = 0.0
    for _ in range(count):
        eta, g = rng.normal(size=4), rng.normal(size=4)
        lr, lam = rng.uniform(0.01, 1), rng.uniform(0, 1)
        new = vb_step(eta, g, lr, lam, exact_prox=True)
        worst = max(worst, float(np.max(np.abs((lr * lam + 1) * new - (eta - lr * g)))))
    return _row("optim", "vb_stationary", worst, 1e-8, worst < 1e-8)


def check_gumbel(seed):
    d = lambda v: 2.0 * v  # noqa: E731
    rows = []
    ratio = gs_bias_quadrature(d, 0.0, 0.05) / gs_bias_quadrature(d, 0.0, 0.1)
    rows.append(_row("estimators", "gs_bias_ratio", ratio, 0.3, 1.7 <= ratio <= 2.3))
    vr = gs_variance_quadrature(d, 0.0, 0.05) / gs_variance_quadrature(d, 0.0, 0.1)
    rows.append(_row("estimators", "gs_variance_ratio", vr, 0.4, 1.6 <= vr <= 2.4))
    P = gs_threshold_probability(0.3, 0.01, 1e-4)
    mc = gs_threshold_probability_mc(0.3, 0.01, 1e-4, child(seed, "verify", "thr"), 10**5)
    z = abs(mc - P) / np.sqrt(P * (1 - P) / 10**5)
    rows.append(_row("estimators", "gs_threshold_mc", z, 3.0, z <= 3.0))
    worst = 0.0
    for eta in (0.0, 0.5, 1.0):
        r = st_gs_expected_gradient(lambda v: 1.0, eta, 1e-3) / (0.5 * logistic_density(eta))
        worst = max(worst, abs(r - 1.0))
    rows.append(_row("estimators", "st_gs_half", worst, 0.05, worst <= 0.05))
    return rows


def check_bayesbinn(seed, steps=200):
    rng = child(seed, "verify", "bb")
    A = rng.normal(size=(12, 8)) / np.sqrt(8)
    y = rng.normal(size=12)
    grad = lambda w: A.T @ (A @ w - y)  # noqa: E731
    eb0 = 0.1 * rng.normal(size=8)
    bits = {}
    for N in (1e3, 1e5):
        eta, eb = eb0 * N / 1e-10, eb0.copy()
        r = child(seed, "verify", "bb", N)
        seq, mism = [], 0
        for _ in range(steps):
            eta, info = bayesbinn_step(eta, grad, r, 0.05, 1e-10, 1e-10, N)
            eb, ci = bayesbinn_collapsed_step(eb, grad, 0.05)
            wb = np.where(info["w_b"] >= 0, 1.0, -1.0)
            mism += int(np.any(wb != ci["w_b"]))
            seq.append(wb)
        bits[N] = (np.array(seq), mism)
    same = np.array_equal(bits[1e3][0], bits[1e5][0])
    total = bits[1e3][1] + bits[1e5][1]
    return _row("optim", "bayesbinn_collapse", total + (0 if same else 1), 0, total == 0 and same)


def check_deep_ascent(seed, count=5):
    rng = child(seed, "verify", "deep")
    good = 0
    for _ in range(count):
        net = init_network(4, "linear:6,sign,linear:6,sign", rng)
        x = rng.normal(size=(1, 4))
        L = Quadratic(rng.normal(size=(3, 6)), rng.normal(size=3))
        a = expected_estimator_enum("st", net, x, L).grad
        b = exact_gradient_enum(net, x, L).grad
        good += int(a @ b > 0)
    return _row("estimators", "deep_st_ascent", good, count - 1, good >= count - 1)


def check_metrics(seed):
    rng = child(seed, "verify", "metrics")
    g = rng.normal(size=5)
    worst = max(abs(ecs(TrialSet(g, [g]))[0] - 1.0), abs(ecs(TrialSet(g, [-g]))[0] + 1.0),
                abs(ei(TrialSet(g, [g])) + np.linalg.norm(g)), rmse(TrialSet(g, [g])))
    ts = TrialSet(g, g + rng.normal(size=(50, 5)))
    b2, var = bias_variance(ts)
    worst = max(worst, abs(rmse(ts) ** 2 - (b2 + var)))
    return _row("metrics", "identities", worst, 1e-10, worst <= 1e-10)


def check_zero_variance(seed):
    nz = noise_mod.logistic()
    net = NetworkSpec(1, [RealLinear(np.zeros((3, 1)), [0.3, -0.2, 1.0]), SignActivation(nz)])
    L = PolynomialMultilinear({(0,): 1.0, (1,): -2.0, (2,): 0.5})
    draws = np.array([st_backward(forward_sample(net, np.zeros(1), child(seed, "zv", t)), L).grad
                      for t in range(100)])
    sd = float(np.max(np.ptp(draws, axis=0)))
    return _row("estimators", "linear_zero_variance", sd, 0.0, sd == 0.0)


def check_det_st(seed):
    nz = noise_mod.logistic()
    net = NetworkSpec(1, [RealLinear(np.zeros((2, 1)), [10.0, -10.0]), SignActivation(nz)])
    L = Quadratic(np.array([[1.0, 2.0]]), np.array([0.5]))
    a = det_st_backward(net, np.zeros(1), L).grad
    b = expected_estimator_enum("st", net, np.zeros(1), L).grad
    dev = float(np.max(np.abs(a - b)))
    return _row("estimators", "det_st_saturated", dev, 1e-12, dev <= 1e-12)


SUITES = (check_unbiasedness, check_counterexample, check_quadratic_repair, check_rescaling,
          check_invariance, check_md, check_vb, check_gumbel, check_bayesbinn, check_deep_ascent,
          check_metrics, check_zero_variance, check_det_st)


def run_verify(seed: int = 0, out_dir: str | None = None) -> list:
    rows = []
    for suite in SUITES:
        r = suite(seed)
        rows.extend(r if isinstance(r, list) else [r])
    if out_dir is not None:
        write_csv(rows, os.path.join(out_dir, "verify.csv"), COLUMNS)
    return rows
