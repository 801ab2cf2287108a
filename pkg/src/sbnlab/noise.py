"""Injected-noise distributions for noisy-sign units.

A unit fires ``x = sign(a - z)`` with ``z ~ F``, so ``P(x = +1) = F(a)``.
All three base shapes are stored in their unit-slope form (``2 F'(0) = 1``);
``scale`` stretches the argument, ``F(z) = F_base(z / scale)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

KINDS = ("uniform", "logistic", "triangular")

# ST factor is evaluated through exp(-|t|) beyond this argument, see pdf().
_LOG_SPACE_THRESHOLD = 30.0


def _check_finite(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input")
    return z


def _scalar_or_array(v):
    return v.item() if isinstance(v, np.ndarray) and v.ndim == 0 else v


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "logistic"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"noise scale must be positive, got {self.scale}")

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return (-self.scale, self.scale)
        if self.kind == "triangular":
            return (-2.0 * self.scale, 2.0 * self.scale)
        return (-np.inf, np.inf)

    def cdf(self, z):
        return cdf(self, z)

    def pdf(self, z):
        return pdf(self, z)

    def quantile(self, p):
        return quantile(self, p)

    def sample(self, rng, count):
        return sample(self, rng, count)


def cdf(model: NoiseModel, z):
    """P(noise <= z)."""
    t = _check_finite(z) / model.scale
    if model.kind == "logistic":
        out = expit(2.0 * t)
    elif model.kind == "uniform":
        out = np.clip((t + 1.0) / 2.0, 0.0, 1.0)
    else:
        t = np.clip(t, -2.0, 2.0)
        out = np.where(t <= 0, (2.0 + t) ** 2 / 8.0, 1.0 - (2.0 - t) ** 2 / 8.0)
    return _scalar_or_array(out)


def pdf(model: NoiseModel, z):
    """Density F'(z); zero outside a bounded support."""
    t = _check_finite(z) / model.scale
    if model.kind == "logistic":
        u = 2.0 * t
        e = np.exp(-np.abs(u))
        out = np.where(
            np.abs(u) > _LOG_SPACE_THRESHOLD,
            2.0 * np.exp(-np.abs(u) - 2.0 * np.log1p(e)),
            2.0 * e / (1.0 + e) ** 2,
        )
    elif model.kind == "uniform":
        out = np.where(np.abs(t) <= 1.0, 0.5, 0.0)
    else:
        out = np.maximum(0.0, (2.0 - np.abs(t)) / 4.0)
    return _scalar_or_array(out / model.scale)


def quantile(model: NoiseModel, p):
    """Inverse cdf on the open interval (0, 1)."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0) & (p < 1)):
        raise ValueError("quantile undefined at boundary")
    if model.kind == "logistic":
        t = 0.5 * logit(p)
    elif model.kind == "uniform":
        t = 2.0 * p - 1.0
    else:
        t = np.where(p <= 0.5, np.sqrt(8.0 * p) - 2.0, 2.0 - np.sqrt(8.0 * (1.0 - p)))
    return _scalar_or_array(model.scale * t)


def sample(model: NoiseModel, rng: np.random.Generator, count: int) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be non-negative")
    u = uniform_open(rng, count)
    return np.asarray(quantile(model, u), dtype=float).reshape(count)


def uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms strictly inside (0, 1)."""
    u = rng.random(size)
    # Generator.random is on [0, 1); map the single excluded point.
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u)


def normalize_unit_slope(model: NoiseModel) -> NoiseModel:
    """Rescale so that 2 F'(0) = 1, keeping the kind."""
    slope = 2.0 * pdf(model, 0.0)
    return replace(model, scale=model.scale * slope)


def logistic(scale: float = 1.0) -> NoiseModel:
    return NoiseModel("logistic", scale)


def uniform(scale: float = 1.0) -> NoiseModel:
    return NoiseModel("uniform", scale)


def triangular(scale: float = 1.0) -> NoiseModel:
    return NoiseModel("triangular", scale)
