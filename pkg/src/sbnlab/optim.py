"""Optimizers on real parameters, weight probabilities and latent logits.

Conventions: ``theta`` are Bernoulli weight probabilities, ``eta`` latent
logits with ``theta = F(eta)``, ``g_theta`` a gradient with respect to
``theta`` and ``g_w`` a gradient with respect to sampled +-1 weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath
import numpy as np

from .noise import NoiseModel

KINDS = ("sgd", "adam", "pgd_theta", "md_kl", "md_general", "vb_composite",
         "bayesbinn", "bayesbinn_collapsed")

MD_KL_CLAMP = 500.0


def _arr(x):
    return np.asarray(x, dtype=float)


def pgd_step(theta, g, lr):
    """Projected gradient step ``clip(theta - lr g, 0, 1)``."""
    return np.clip(_arr(theta) - lr * _arr(g), 0.0, 1.0)


def md_kl_step(eta, g_theta, lr):
    """KL mirror descent on ``theta = sigmoid(eta)``: a plain step in the logits."""
    return np.clip(_arr(eta) - lr * _arr(g_theta), -MD_KL_CLAMP, MD_KL_CLAMP)


def md_general_step(eta, g_w, lr, noise: NoiseModel):
    """SGD on latent logits with the straight-through weight gradient ``2 g_w``.

    For bounded noise the logits are clipped to the noise support, which keeps
    ``theta = F(eta)`` a projection onto ``[0, 1]``.
    """
    out = _arr(eta) - lr * 2.0 * _arr(g_w)
    lo, hi = noise.support
    if np.isfinite(lo):
        out = np.clip(out, lo, hi)
    return out


def vb_step(eta, g_theta, lr, lam, exact_prox: bool = False):
    """Composite mirror step with latent weight decay ``lam``.

    The default drops the step-size correction: ``eta - lr (g + lam eta)``.
    ``exact_prox`` returns the exact proximal solution
    ``(eta - lr g) / (lr lam + 1)``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    eta, g = _arr(eta), _arr(g_theta)
    if exact_prox:
        return (eta - lr * g) / (lr * lam + 1.0)
    return eta - lr * (g + lam * eta)


def kl_prox_verify(theta_t, g, lr, theta_candidate, dps: int = 40, iters: int = 160) -> float:
    """Largest distance between ``theta_candidate`` and an independent prox minimizer.

    Each coordinate of ``g theta + KL(Ber(theta) || Ber(theta_t)) / lr`` is
    minimized by golden-section search on ``(1e-9, 1 - 1e-9)`` in extended
    precision, because the objective is too flat near its minimum for double
    precision to locate it to 1e-8.
    """
    theta_t = np.atleast_1d(_arr(theta_t))
    g = np.broadcast_to(_arr(g), theta_t.shape)
    cand = np.broadcast_to(_arr(theta_candidate), theta_t.shape)
    if np.any((theta_t <= 0) | (theta_t >= 1)):
        raise ValueError("theta_t must be interior")
    worst = 0.0
    with mpmath.workdps(dps):
        for tt, gg, cc in zip(theta_t.ravel(), g.ravel(), cand.ravel()):
            best = _golden_prox(mpmath.mpf(float(tt)), mpmath.mpf(float(gg)), mpmath.mpf(float(lr)), iters)
            worst = max(worst, abs(float(cc) - float(best)))
    return worst


def _golden_prox(tt, gg, lr, iters):
    def f(th):
        kl = th * mpmath.log(th / tt) + (1 - th) * mpmath.log((1 - th) / (1 - tt))
        return gg * th + kl / lr

    lo, hi = mpmath.mpf("1e-9"), 1 - mpmath.mpf("1e-9")
    r = (mpmath.sqrt(5) - 1) / 2
    c, d = hi - r * (hi - lo), lo + r * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - r * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + r * (hi - lo)
            fd = f(d)
    return (lo + hi) / 2


def uniform_logit_step(eta, g_eta, lr):
    """Logit-space step for uniform noise, clipped to the support ``[-1, 1]``.

    With ``theta = (eta + 1) / 2`` and step ``4 lr`` this is :func:`pgd_step`
    at step ``lr``.
    """
    return np.clip(_arr(eta) - lr * _arr(g_eta), -1.0, 1.0)


# ---------------------------------------------------------------------------
# BayesBiNN


def bayesbinn_scale(w_b, eta, tau, eps_gs, N):
    """``N (1 - w_b^2 + eps) / (tau (1 - tanh(eta)^2 + eps))``."""
    return N * (1.0 - w_b ** 2 + eps_gs) / (tau * (1.0 - np.tanh(eta) ** 2 + eps_gs))


def bayesbinn_step(eta, grad_fn, rng, alpha, tau, eps_gs, N):
    """One replica step; returns ``(eta', info)`` with ``w_b`` and ``s`` in ``info``.

    ``w_b = tanh((eta - z) / tau)`` with ``z = logit(u) / 2``; ``grad_fn(w_b)``
    returns the minibatch gradient in ``w_b``.
    """
    _check_bayesbinn(tau, eps_gs, N)
    eta = _arr(eta)
    u = rng.random(eta.shape)
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    z = 0.5 * np.log(u / (1.0 - u))
    # np.tanh saturates to +-1 without overflow for arguments of any size
    w_b = np.tanh((eta - z) / tau)
    g = _arr(grad_fn(w_b))
    s = bayesbinn_scale(w_b, eta, tau, eps_gs, N)
    new = (1.0 - alpha) * eta - alpha * s * g
    return new, {"w_b": w_b, "s": s, "z": z, "g": g}


def bayesbinn_collapsed_step(eta_bar, grad_fn, alpha):
    """Deterministic collapsed step: ``w_b = sign(eta_bar)``, then decayed SGD."""
    eta_bar = _arr(eta_bar)
    w_b = np.where(eta_bar >= 0, 1.0, -1.0)
    g = _arr(grad_fn(w_b))
    return (1.0 - alpha) * eta_bar - alpha * g, {"w_b": w_b, "g": g}


def _check_bayesbinn(tau, eps_gs, N):
    if not (tau > 0 and eps_gs > 0):
        raise ValueError("tau and eps_gs must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")


# ---------------------------------------------------------------------------
# stateful optimizers


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 0.0
    alpha: float = 0.1
    tau: float = 1e-10
    eps_gs: float = 1e-10
    N: float = 1.0
    names: list = field(default_factory=list)
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("step size must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not (self.tau > 0 and self.eps_gs > 0):
            raise ValueError("tau and eps_gs must be positive")
        if self.N < 1:
            raise ValueError("N must be at least 1")

    @classmethod
    def for_network(cls, net, **kw) -> "OptimizerState":
        names = [(e.name, e.offset, e.size) for e in net.layout]
        return cls(names=names, **kw)

    def reset(self):
        """Clear moment buffers and the step count."""
        self.step_count = 0
        self.m = None
        self.v = None

    def check_grad(self, grad):
        grad = _arr(grad)
        bad = ~np.isfinite(grad)
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            name = next((n for n, off, size in self.names if off <= j < off + size), f"index {j}")
            raise ValueError(f"non-finite gradient for parameter {name}")
        return grad

    def step(self, params, grad):
        if self.kind == "sgd":
            return sgd_step(self, params, grad)
        if self.kind == "adam":
            return adam_step(self, params, grad)
        grad = self.check_grad(grad)
        if self.kind == "pgd_theta":
            return pgd_step(params, grad, self.lr)
        if self.kind == "md_kl":
            return md_kl_step(params, grad, self.lr)
        if self.kind == "vb_composite":
            return vb_step(params, grad, self.lr, self.lam)
        raise ValueError(f"optimizer {self.kind} needs its dedicated step function")


def sgd_step(state: OptimizerState, params, grad):
    grad = state.check_grad(grad)
    state.step_count += 1
    return _arr(params) - state.lr * grad


def adam_step(state: OptimizerState, params, grad):
    """Adam with bias-corrected moments."""
    grad = state.check_grad(grad)
    if state.m is None:
        state.m = np.zeros_like(grad)
        state.v = np.zeros_like(grad)
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** t)
    v_hat = state.v / (1 - state.beta2 ** t)
    return _arr(params) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
