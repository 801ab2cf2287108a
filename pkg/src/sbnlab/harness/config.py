"""Experiment configuration in a small ``[section]`` / ``key = value`` format.

Lines starting with ``#`` or ``;`` are comments.  A key may also be written
with its section as a dotted prefix (``optim.lr = 0.01``) anywhere, and keys
outside any section belong to ``[experiment]``.  Unknown sections, unknown
keys, duplicates and values of the wrong type are errors naming the key and
the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..estimators.kinds import EstimatorKind
from ..noise import KINDS as NOISE_KINDS
from ..optim import KINDS as OPTIM_KINDS

EXPERIMENTS = ("autoenc", "accuracy", "gumbel", "bayesbinn", "verify", "tiny_classifier")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _strings(text):
    return [t.strip() for t in _split_top(text) if t.strip()]


def _split_top(text):
    """Split on commas outside parentheses."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def _estimator(text):
    return str(EstimatorKind.parse(text))


def _estimators(text):
    return [_estimator(t) for t in _strings(text)]


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _nonneg_float(text):
    v = float(text)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


# section -> key -> (type parser, default)
SCHEMA = {
    "experiment": {
        "kind": (_choice(EXPERIMENTS), "autoenc"),
        "estimator": (_estimator, "st"),
        "candidates": (_estimators, ["exact_enum", "st", "identity_st", "det_st"]),
        "reference": (_estimator, "local_expectations_avg(K=10)"),
        "train_epochs": (_nonneg_int, 200),
        "correction_epochs": (_nonneg_int, 100),
        "checkpoint_every": (_positive_int, 20),
        "trials": (_positive_int, 100),
        "batch_size": (_positive_int, 16),
        "base_seed": (int, 0),
        "output": (str, "out"),
        "reference_K": (_positive_int, 1000),
        "exact_max_bits": (_nonneg_int, 14),
    },
    "network": {
        "bits": (_positive_int, 8),
        "hidden": (_positive_int, 64),
        "encoding": (_choice(("zero_one", "pm_one")), "zero_one"),
        "skeleton": (str, "binary:32,bn,sign,binary:32,bn,sign,linear:3,softmax"),
    },
    "noise": {
        "kind": (_choice(NOISE_KINDS), "logistic"),
        "scale": (_positive_float, None),
    },
    "data": {
        "source": (str, "synthetic(256,500,8,0)"),
        "top_words": (_positive_int, None),
    },
    "optim": {
        "kind": (_choice(OPTIM_KINDS), "adam"),
        "lr": (_positive_float, 1e-3),
        "lambda": (_nonneg_float, 0.0),
        "alpha": (_nonneg_float, 0.05),
        "tau": (_positive_float, 1e-10),
        "eps_gs": (_positive_float, 1e-10),
        "N": (_positive_float, 1000.0),
    },
    "gumbel": {
        "taus": (_floats, [1.0, 0.5, 0.1, 0.05]),
        "eta": (float, 0.0),
        "draws": (_positive_int, 10**6),
        "eps": (_positive_float, 1e-4),
    },
    "bayesbinn": {
        "steps": (_positive_int, 1000),
        "dim": (_positive_int, 16),
        "runs": (_strings, ["1e-10:1000", "1e-10:100000", "1:1000"]),
    },
    "classifier": {
        "samples": (_positive_int, 256),
        "features": (_positive_int, 8),
        "classes": (_positive_int, 3),
        "epochs": (_nonneg_int, 30),
        "ensemble": (_positive_int, 10),
    },
}

_SECTION = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
_ENTRY = re.compile(r"^([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(.*)$")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    path: str | None = None

    def get(self, section, key):
        return self.values[section][key]

    def section(self, name) -> dict:
        return dict(self.values[name])

    def set(self, section, key, value):
        if key not in SCHEMA.get(section, {}):
            raise ConfigError(f"unknown key {section}.{key}")
        self.values[section][key] = value

    @property
    def experiment(self):
        return self.values["experiment"]["kind"]


def defaults() -> ExperimentConfig:
    return ExperimentConfig({s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()}
                             for s, keys in SCHEMA.items()})


def parse_config_text(text: str, path=None) -> ExperimentConfig:
    cfg = defaults()
    cfg.path = path
    seen = {}
    section = "experiment"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        m = _ENTRY.match(line)
        if not m:
            raise ConfigError(f"cannot parse {line!r}", lineno)
        key, value = m.group(1), m.group(2).strip()
        sec = section
        if "." in key:
            sec, key = key.split(".", 1)
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section {sec!r} in key {sec}.{key}", lineno)
        if key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {sec}.{key}", lineno)
        full = f"{sec}.{key}"
        if full in seen:
            raise ConfigError(f"duplicate key {full} (first set on line {seen[full]})", lineno)
        seen[full] = lineno
        parser = SCHEMA[sec][key][0]
        try:
            cfg.values[sec][key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value {value!r} for {full}: {exc}", lineno) from None
    return cfg


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))
