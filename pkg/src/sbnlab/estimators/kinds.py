"""Estimator names, their textual form and a single dispatch entry point."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

NAMES = ("st", "det_st", "identity_st", "rescaled_st", "local_expectations",
         "local_expectations_avg", "exact_enum", "gumbel_softmax", "st_gumbel_softmax")

# parameter name accepted in the text form, per estimator
_PARAM = {"rescaled_st": "lambda", "local_expectations_avg": "K",
          "gumbel_softmax": "tau", "st_gumbel_softmax": "tau"}

_PATTERN = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*(?:([A-Za-z_]+)\s*=\s*)?([^)]*?)\s*\))?\s*$")


@dataclass(frozen=True)
class EstimatorKind:
    name: str
    tau: float | None = None
    K: int | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown estimator {self.name!r}")
        if self.name in ("gumbel_softmax", "st_gumbel_softmax"):
            if self.tau is None or not self.tau > 0:
                raise ValueError("tau must be positive")
        if self.name == "local_expectations_avg" and (self.K is None or self.K < 1):
            raise ValueError("K must be at least 1")
        if self.name == "rescaled_st" and (self.lam is None or self.lam < 0):
            raise ValueError("rescaling diagonal must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "EstimatorKind":
        m = _PATTERN.match(text)
        if not m:
            raise ValueError(f"cannot parse estimator {text!r}")
        name, key, arg = m.group(1), m.group(2), m.group(3)
        if name not in NAMES:
            raise ValueError(f"unknown estimator {name!r}")
        want = _PARAM.get(name)
        if want is None:
            if arg:
                raise ValueError(f"estimator {name} takes no parameter")
            return cls(name)
        if not arg:
            raise ValueError(f"estimator {name} needs parameter {want}")
        if key is not None and key != want:
            raise ValueError(f"estimator {name} has no parameter {key!r}")
        try:
            value = int(arg) if want == "K" else float(arg)
        except ValueError:
            raise ValueError(f"bad value {arg!r} for {name}({want}=...)") from None
        if want == "K":
            return cls(name, K=value)
        if want == "tau":
            return cls(name, tau=value)
        return cls(name, lam=value)

    def __str__(self):
        if self.name in ("gumbel_softmax", "st_gumbel_softmax"):
            return f"{self.name}(tau={self.tau:g})"
        if self.name == "local_expectations_avg":
            return f"{self.name}(K={self.K})"
        if self.name == "rescaled_st":
            return f"{self.name}(lambda={self.lam:g})"
        return self.name


def estimate(kind, net, input, loss, rng: np.random.Generator | None = None, seed=None):
    """Run one draw of the named estimator on ``(net, input, loss)``."""
    from ..sbn import forward_sample
    from . import enumeration as en
    from . import straight_through as st

    k = EstimatorKind.parse(kind) if isinstance(kind, str) else kind
    if k.name == "st":
        est = st.st_backward(forward_sample(net, input, rng), loss, seed=seed)
    elif k.name == "det_st":
        est = st.det_st_backward(net, input, loss)
    elif k.name == "identity_st":
        est = st.identity_st_backward(forward_sample(net, input, rng), loss, seed=seed)
    elif k.name == "rescaled_st":
        est = st.rescaled_st_backward(forward_sample(net, input, rng), loss, k.lam, seed=seed)
    elif k.name == "local_expectations":
        est = st.local_expectations(net, input, rng, loss, seed=seed)
    elif k.name == "local_expectations_avg":
        est = st.local_expectations_avg(net, input, rng, loss, k.K, seed=seed)
    elif k.name == "exact_enum":
        est = en.exact_gradient_enum(net, input, loss)
    elif k.name == "gumbel_softmax":
        est = st.gs_backward(net, input, rng, loss, k.tau, seed=seed)
    else:
        est = st.st_gs_backward(net, input, rng, loss, k.tau, seed=seed)
    est.kind = str(k)
    est.seed = seed
    return est
