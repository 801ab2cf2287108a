"""Stochastic binary networks: layers, forward passes and the forward tape.

A network is an ordered list of layers acting on row batches ``(B, d)``.  A
1-D input is treated as a batch of one.  Two layer types are stochastic:

* :class:`SignActivation` samples ``x_i = sign(a_i - z_i)``, i.e.
  ``P(x_i = +1) = F(a_i)``; with ``encoding="zero_one"`` the states are 0/1.
* :class:`BinaryLinear` samples +-1 weights with ``P(w = +1) = F_w(eta)``,
  independently for every row of the batch.

Sampling compares a retained uniform ``u`` with the firing probability, so a
tape fully determines the pass and replays bit-identically from the same
stream state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import noise as noise_mod
from .noise import NoiseModel

ENCODINGS = ("pm_one", "zero_one")

THETA_CLIP = 1e-4
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def sign_pm(v):
    """sign with the tie sign(0) = +1."""
    return np.where(v >= 0, 1.0, -1.0)


class Layer:
    param_names: tuple = ()
    stochastic = False

    def out_dim(self, in_dim: int) -> int:
        return in_dim


class RealLinear(Layer):
    param_names = ("W", "b")

    def __init__(self, W, b=None):
        self.W = np.atleast_2d(np.asarray(W, dtype=float)).copy()
        self.b = np.zeros(self.W.shape[0]) if b is None else np.asarray(b, dtype=float).copy()

    def out_dim(self, in_dim):
        if in_dim != self.W.shape[1]:
            raise ValueError(f"linear layer expects input dim {self.W.shape[1]}, got {in_dim}")
        return self.W.shape[0]


class BinaryLinear(Layer):
    """Linear map with Bernoulli +-1 weights parameterized by latent logits."""

    param_names = ("eta",)
    stochastic = True

    def __init__(self, eta, noise: NoiseModel | None = None):
        self.eta = np.atleast_2d(np.asarray(eta, dtype=float)).copy()
        if not np.all(np.isfinite(self.eta)):
            raise ValueError("binary layer logits must be finite")
        self.noise = noise or noise_mod.logistic()

    @property
    def width(self):
        return self.eta.size

    def out_dim(self, in_dim):
        if in_dim != self.eta.shape[1]:
            raise ValueError(f"binary layer expects input dim {self.eta.shape[1]}, got {in_dim}")
        return self.eta.shape[0]


class BatchNormAffine(Layer):
    param_names = ("scale", "shift")

    def __init__(self, dim, scale=None, shift=None, eps=BN_EPS, momentum=BN_MOMENTUM):
        if eps <= 0:
            raise ValueError("batch-norm eps must be positive")
        self.dim = int(dim)
        self.scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float).copy()
        self.shift = np.zeros(dim) if shift is None else np.asarray(shift, dtype=float).copy()
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def out_dim(self, in_dim):
        if in_dim != self.dim:
            raise ValueError(f"batch norm expects dim {self.dim}, got {in_dim}")
        return in_dim


class SignActivation(Layer):
    stochastic = True

    def __init__(self, noise: NoiseModel | None = None, encoding: str = "pm_one", width: int | None = None):
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {encoding!r}")
        self.noise = noise or noise_mod.logistic()
        self.encoding = encoding
        self.width = width

    def out_dim(self, in_dim):
        self.width = in_dim
        return in_dim

    @property
    def low(self):
        return 0.0 if self.encoding == "zero_one" else -1.0

    @property
    def st_scale(self):
        # d x / d a = 2 F'(a) for +-1 states, F'(a) for 0/1 states.
        return 1.0 if self.encoding == "zero_one" else 2.0


class NoiseCdfTransform(Layer):
    """Elementwise ``a -> 2 F(a) - 1``: a strictly monotone reparameterization."""

    def __init__(self, noise: NoiseModel):
        self.noise = noise


class Relu(Layer):
    pass


class Softmax(Layer):
    pass


@dataclass
class LayoutEntry:
    name: str
    layer: int
    attr: str
    shape: tuple
    offset: int

    @property
    def size(self):
        return int(np.prod(self.shape)) if self.shape else 1


class NetworkSpec:
    """Ordered layers plus the flat layout of every trainable tensor."""

    def __init__(self, input_dim: int, layers: list[Layer]):
        self.input_dim = int(input_dim)
        self.layers = list(layers)
        d = self.input_dim
        for layer in self.layers:
            d = layer.out_dim(d)
        self.output_dim = d
        self._build_layout()

    def _build_layout(self):
        self.layout = []
        off = 0
        for i, layer in enumerate(self.layers):
            for attr in layer.param_names:
                shape = getattr(layer, attr).shape
                entry = LayoutEntry(f"L{i}.{attr}", i, attr, shape, off)
                self.layout.append(entry)
                off += entry.size
        self.size = off

    def copy(self) -> "NetworkSpec":
        return copy.deepcopy(self)

    def get_flat(self) -> np.ndarray:
        out = np.empty(self.size)
        for e in self.layout:
            out[e.offset:e.offset + e.size] = getattr(self.layers[e.layer], e.attr).ravel()
        return out

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        for e in self.layout:
            getattr(self.layers[e.layer], e.attr)[...] = vec[e.offset:e.offset + e.size].reshape(e.shape)

    def entry(self, name) -> LayoutEntry:
        for e in self.layout:
            if e.name == name:
                return e
        raise KeyError(name)

    def param_name_at(self, index: int) -> str:
        for e in self.layout:
            if e.offset <= index < e.offset + e.size:
                return e.name
        raise IndexError(index)

    def sites(self) -> list[int]:
        """Indices of stochastic layers."""
        return [i for i, layer in enumerate(self.layers) if layer.stochastic]

    def site_width(self, i: int) -> int:
        layer = self.layers[i]
        return layer.width if isinstance(layer, BinaryLinear) else int(layer.width)

    def sign_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, SignActivation)]

    def buffers(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNormAffine):
                out[f"L{i}.running_mean"] = layer.running_mean
                out[f"L{i}.running_var"] = layer.running_var
        return out


@dataclass
class ForwardTape:
    net: NetworkSpec
    input: np.ndarray
    records: list
    output: np.ndarray
    mode: str
    start: int = 0
    loss_value: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def batch(self):
        return self.output.shape[0]

    def states(self, i):
        """Sampled states of stochastic layer ``i`` (activations or weights)."""
        rec = self.records[i]
        return rec["x"] if "x" in rec else rec["w"]


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def _run(net: NetworkSpec, x, *, mode, rng=None, forced=None, relax_tau=None,
         retain_noise=False, bn_mode="train", start=0, stop=None):
    """Shared forward engine.

    ``mode`` is ``"sample"`` or ``"det"``.  ``forced`` maps a stochastic layer
    index to the states to use instead of sampling.  ``relax_tau`` switches
    sign layers to the Gumbel-Softmax relaxation (logistic noise only).
    """
    forced = forced or {}
    h = _as_batch(x)
    B = h.shape[0]
    layers = net.layers
    stop = len(layers) if stop is None else stop
    records = [None] * len(layers)
    for i in range(start, stop):
        layer = layers[i]
        rec = {"in": h}
        if isinstance(layer, RealLinear):
            h = h @ layer.W.T + layer.b
        elif isinstance(layer, BinaryLinear):
            theta = noise_mod.cdf(layer.noise, layer.eta)
            rec["theta"] = theta
            if i in forced:
                w = np.asarray(forced[i], dtype=float).reshape((-1,) + layer.eta.shape)
                if w.shape[0] == 1 and B > 1:
                    w = np.broadcast_to(w, (B,) + layer.eta.shape)
            elif mode == "det":
                w = np.broadcast_to(sign_pm(layer.eta), (B,) + layer.eta.shape)
            else:
                u = noise_mod.uniform_open(rng, (B,) + layer.eta.shape)
                rec["u"] = u
                w = np.where(u <= theta, 1.0, -1.0)
            rec["w"] = w
            h = np.einsum("bi,boi->bo", h, w)
        elif isinstance(layer, BatchNormAffine):
            if bn_mode == "train":
                mean = h.mean(axis=0)
                var = h.var(axis=0)
            else:
                mean, var = layer.running_mean, layer.running_var
            inv = 1.0 / np.sqrt(var + layer.eps)
            xhat = (h - mean) * inv
            rec.update(mean=mean, var=var, inv=inv, xhat=xhat, bn_mode=bn_mode)
            h = xhat * layer.scale + layer.shift
        elif isinstance(layer, SignActivation):
            a = h
            p = noise_mod.cdf(layer.noise, a)
            rec.update(a=a, p=p)
            if i in forced:
                x_state = np.broadcast_to(np.asarray(forced[i], dtype=float), a.shape)
                xs = x_state if layer.encoding == "pm_one" else 2.0 * x_state - 1.0
            elif mode == "det":
                xs = sign_pm(a)
            else:
                u = noise_mod.uniform_open(rng, a.shape)
                rec["u"] = u
                xs = np.where(u <= p, 1.0, -1.0)
                if retain_noise or relax_tau is not None:
                    rec["z"] = np.asarray(noise_mod.quantile(layer.noise, u), dtype=float)
            x_state = xs if layer.encoding == "pm_one" else (xs + 1.0) / 2.0
            rec["x"] = x_state
            if relax_tau is not None:
                if layer.noise.kind != "logistic":
                    raise ValueError("Gumbel-Softmax relaxation needs logistic noise")
                if "z" not in rec:
                    raise ValueError("relaxed forward needs sampled noise")
                k = 2.0 / (layer.noise.scale * relax_tau)
                y = _stable_sigmoid(k * (a - rec["z"]))
                rec.update(y=y, relax_k=k)
                h = y if layer.encoding == "zero_one" else 2.0 * y - 1.0
            else:
                h = x_state
        elif isinstance(layer, NoiseCdfTransform):
            rec["a"] = h
            h = 2.0 * noise_mod.cdf(layer.noise, h) - 1.0
        elif isinstance(layer, Relu):
            rec["mask"] = h > 0
            h = np.where(h > 0, h, 0.0)
        elif isinstance(layer, Softmax):
            z = h - h.max(axis=1, keepdims=True)
            e = np.exp(z)
            h = e / e.sum(axis=1, keepdims=True)
            rec["out"] = h
        else:
            raise TypeError(f"unsupported layer {type(layer).__name__}")
        if not np.all(np.isfinite(h)):
            raise ValueError(f"non-finite activation at layer {i}")
        records[i] = rec
    return ForwardTape(net, _as_batch(x), records, h, mode, start=start)


def _stable_sigmoid(t):
    from scipy.special import expit
    return expit(t)


def forward_sample(net: NetworkSpec, input, rng, retain_noise: bool = False, *,
                   forced=None, relax_tau=None, bn_mode="train") -> ForwardTape:
    """One stochastic forward pass; every random draw is kept on the tape."""
    _check_input(net, input)
    return _run(net, input, mode="sample", rng=rng, forced=forced, relax_tau=relax_tau,
                retain_noise=retain_noise, bn_mode=bn_mode)


def forward_forced(net: NetworkSpec, input, states: dict, bn_mode="eval") -> ForwardTape:
    """Forward pass with every stochastic layer clamped to ``states``."""
    _check_input(net, input)
    missing = set(net.sites()) - set(states)
    if missing:
        raise ValueError(f"states missing for stochastic layers {sorted(missing)}")
    return _run(net, input, mode="forced", forced=states, bn_mode=bn_mode)


def forward_tail(net: NetworkSpec, start: int, h, bn_mode="eval") -> ForwardTape:
    """Run layers ``start..`` on ``h`` (which must stay deterministic)."""
    if any(net.layers[i].stochastic for i in range(start, len(net.layers))):
        raise ValueError("tail of the network contains stochastic layers")
    return _run(net, h, mode="det", start=start, bn_mode=bn_mode)


def forward_det(net: NetworkSpec, input):
    """Zero-noise pass: ``x = sign(a)``, ``w = sign(eta)``, batch norm on running stats."""
    _check_input(net, input)
    tape = _run(net, input, mode="det", bn_mode="eval")
    return tape.output, tape


def forward_ensemble(net: NetworkSpec, input, k: int, rng, bn_mode="eval") -> np.ndarray:
    """Mean of ``k`` stochastic forward outputs (a predictive distribution for softmax heads)."""
    if k < 1:
        raise ValueError("ensemble size must be at least 1")
    acc = None
    for _ in range(k):
        out = forward_sample(net, input, rng, bn_mode=bn_mode).output
        acc = out.copy() if acc is None else acc + out
    return acc / k


def _check_input(net, input):
    x = _as_batch(input)
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input dim {x.shape[1]} does not match network input dim {net.input_dim}")


def update_running_stats(net: NetworkSpec, tape: ForwardTape):
    """Fold the batch statistics of a train-mode tape into the BN running averages."""
    for i, layer in enumerate(net.layers):
        rec = tape.records[i]
        if isinstance(layer, BatchNormAffine) and rec is not None and rec["bn_mode"] == "train":
            m = layer.momentum
            n = rec["in"].shape[0]
            unbiased = rec["var"] * n / max(n - 1, 1)
            layer.running_mean[...] = (1 - m) * layer.running_mean + m * rec["mean"]
            layer.running_var[...] = (1 - m) * layer.running_var + m * unbiased


# ---------------------------------------------------------------------------
# skeletons and initialization


def parse_skeleton(text: str) -> list[tuple]:
    """Parse ``"linear:64,relu,sign:logistic:zero_one"`` into layer tuples."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        parts = tok.split(":")
        name, args = parts[0], parts[1:]
        if name in ("linear", "binary"):
            if not args:
                raise ValueError(f"{name} layer needs a width: {tok!r}")
            out.append((name, int(args[0]), *args[1:]))
        elif name in ("bn", "relu", "softmax"):
            out.append((name,))
        elif name == "sign":
            out.append(("sign", *args))
        else:
            raise ValueError(f"unknown layer {name!r}")
    return out


def init_network(input_dim: int, skeleton, rng: np.random.Generator) -> NetworkSpec:
    """Random initialization.

    Real weights ``U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` (biases likewise),
    binary-weight probabilities ``theta ~ U(0, 1)`` mapped through the noise
    quantile, batch norm ``s = 1, b = 0``, all noises unit-slope normalized.
    """
    if isinstance(skeleton, str):
        skeleton = parse_skeleton(skeleton)
    layers = []
    d = int(input_dim)
    for spec in skeleton:
        kind = spec[0]
        if kind == "linear":
            out = int(spec[1])
            bound = 1.0 / np.sqrt(d)
            layers.append(RealLinear(rng.uniform(-bound, bound, (out, d)), rng.uniform(-bound, bound, out)))
            d = out
        elif kind == "binary":
            out = int(spec[1])
            nz = noise_mod.normalize_unit_slope(NoiseModel(spec[2] if len(spec) > 2 else "logistic"))
            theta = np.clip(rng.uniform(0.0, 1.0, (out, d)), THETA_CLIP, 1.0 - THETA_CLIP)
            layers.append(BinaryLinear(noise_mod.quantile(nz, theta), nz))
            d = out
        elif kind == "bn":
            layers.append(BatchNormAffine(d))
        elif kind == "sign":
            nz = noise_mod.normalize_unit_slope(NoiseModel(spec[1] if len(spec) > 1 else "logistic"))
            layers.append(SignActivation(nz, spec[2] if len(spec) > 2 else "pm_one"))
        elif kind == "relu":
            layers.append(Relu())
        elif kind == "softmax":
            layers.append(Softmax())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return NetworkSpec(input_dim, layers)
