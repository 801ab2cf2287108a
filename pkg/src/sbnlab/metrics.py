"""Accuracy of a gradient estimator against a reference gradient.

A :class:`TrialSet` holds a reference ``g`` and trial estimates ``g~_t``.
The reference may be one vector shared by all trials or one vector per
trial (a flat batch-by-trial grid, where each cell has its own reference).
:class:`CellStats` keeps only the per-cell inner products, for grids too
large to hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ("checkpoint", "estimator", "ecs", "ecs_lo", "ecs_hi", "ei", "ei_max",
               "rmse", "alpha_opt", "trials", "zero_trials")

CI_LOW, CI_HIGH = 15.0, 85.0


@dataclass
class TrialSet:
    reference: np.ndarray
    trials: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trials = np.atleast_2d(np.asarray(self.trials, dtype=float))
        self.reference = np.asarray(self.reference, dtype=float)
        if self.trials.shape[0] < 1:
            raise ValueError("a trial set needs at least one trial")
        D = self.trials.shape[1]
        if self.reference.shape not in ((D,), self.trials.shape):
            raise ValueError(f"reference shape {self.reference.shape} does not match trials {self.trials.shape}")
        if not np.all(np.isfinite(self.reference)):
            raise ValueError("reference gradient must be finite")

    @property
    def T(self):
        return self.trials.shape[0]

    def ref_rows(self):
        return np.broadcast_to(self.reference, self.trials.shape)


@dataclass
class CellStats:
    """Per-cell scalars that every metric except the bias split is built from.

    ``dot = <g, g~>``, ``tt = ||g~||^2``, ``rr = ||g||^2``, ``dd = ||g~ - g||^2``.
    Cells can be accumulated one at a time, so a large batch-by-trial grid
    never has to be held in memory.
    """

    dot: list = field(default_factory=list)
    tt: list = field(default_factory=list)
    rr: list = field(default_factory=list)
    dd: list = field(default_factory=list)

    def add(self, ref, est):
        ref = np.asarray(ref, dtype=float)
        est = np.asarray(est, dtype=float)
        if ref.shape != est.shape:
            raise ValueError(f"reference shape {ref.shape} does not match estimate {est.shape}")
        if not np.all(np.isfinite(ref)):
            raise ValueError("reference gradient must be finite")
        d = est - ref
        self.dot.append(float(ref @ est))
        self.tt.append(float(est @ est))
        self.rr.append(float(ref @ ref))
        self.dd.append(float(d @ d))

    @property
    def T(self):
        return len(self.dot)

    def arrays(self):
        return tuple(np.asarray(v, dtype=float) for v in (self.dot, self.tt, self.rr, self.dd))

    @classmethod
    def from_trials(cls, ts: TrialSet) -> "CellStats":
        ref = ts.ref_rows()
        d = ts.trials - ref
        out = cls()
        out.dot = np.einsum("td,td->t", ref, ts.trials).tolist()
        out.tt = np.einsum("td,td->t", ts.trials, ts.trials).tolist()
        out.rr = np.einsum("td,td->t", ref, ref).tolist()
        out.dd = np.einsum("td,td->t", d, d).tolist()
        return out


def _stats(ts):
    s = ts if isinstance(ts, CellStats) else CellStats.from_trials(ts)
    if s.T < 1:
        raise ValueError("a trial set needs at least one trial")
    return s.arrays()


def ecs(ts):
    """Mean cosine similarity with a 70% empirical interval.

    Returns ``(mean, lo, hi, zero_trials)``; zero trials are excluded.
    """
    dot, tt, rr, _ = _stats(ts)
    if np.any(rr == 0):
        raise ValueError("zero reference gradient")
    keep = tt > 0
    zero = int(np.sum(~keep))
    if not np.any(keep):
        return float("nan"), float("nan"), float("nan"), zero
    # sqrt(<g,g><g~,g~>) makes the cosine of a vector with itself exactly 1
    cos = dot[keep] / np.sqrt(rr[keep] * tt[keep])
    cos = np.clip(cos, -1.0, 1.0)
    lo, hi = np.percentile(cos, [CI_LOW, CI_HIGH], method="linear")
    return float(np.mean(cos)), float(lo), float(hi), zero


def ei(ts) -> float:
    """``-E<g, g~> / sqrt(E ||g~||^2)``; negative means expected descent."""
    dot, tt, _, _ = _stats(ts)
    sq = np.mean(tt)
    if sq == 0:
        raise ValueError("all trials are zero")
    return float(-np.mean(dot) / np.sqrt(sq))


def ei_max(ts) -> float:
    """:func:`ei` with every trial replaced by the reference, ``-sqrt(E ||g||^2)``.

    It is evaluated through the same formula as :func:`ei`, so an exact
    estimator reaches it bit for bit.
    """
    _, _, rr, _ = _stats(ts)
    sq = np.mean(rr)
    return float(-sq / np.sqrt(sq))


def optimal_alpha(ts, eps: float) -> float:
    """Step ``eps E<g, g~> / E ||g~||^2``, reported even when negative."""
    dot, tt, _, _ = _stats(ts)
    sq = np.mean(tt)
    if sq == 0:
        raise ValueError("degenerate trials: all estimates are zero")
    return float(eps * np.mean(dot) / sq)


def rmse(ts) -> float:
    _, _, _, dd = _stats(ts)
    return float(np.sqrt(np.mean(dd)))


def bias_variance(ts: TrialSet):
    """``(||bias||^2, mean trace variance)`` for a shared reference."""
    if ts.reference.ndim != 1:
        raise ValueError("bias decomposition needs a single reference vector")
    mean = ts.trials.mean(axis=0)
    b = mean - ts.reference
    var = np.mean(np.sum((ts.trials - mean) ** 2, axis=1))
    return float(b @ b), float(var)


def measure(ts, checkpoint, estimator: str, eps: float = 1.0) -> dict:
    """One CSV row with the declared columns, from a :class:`TrialSet` or :class:`CellStats`."""
    if not isinstance(ts, CellStats):
        ts = CellStats.from_trials(ts)
    m, lo, hi, zero = ecs(ts)
    try:
        e = ei(ts)
        a = optimal_alpha(ts, eps)
    except ValueError:
        e = a = float("nan")
    return {
        "checkpoint": checkpoint, "estimator": estimator, "ecs": m, "ecs_lo": lo, "ecs_hi": hi,
        "ei": e, "ei_max": ei_max(ts), "rmse": rmse(ts), "alpha_opt": a,
        "trials": ts.T, "zero_trials": zero,
    }
