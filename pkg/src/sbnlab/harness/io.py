"""CSV output, text checkpoints and JSON sidecars."""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np

CKPT_HEADER = "sbnlab-ckpt v1"


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def write_csv(records, path, columns=None):
    """Header plus one line per record, ``\\n`` endings, 17 significant digits."""
    records = list(records)
    if columns is None:
        if not records:
            raise ValueError("columns are required for an empty table")
        columns = list(records[0].keys())
    lines = [",".join(columns)]
    for rec in records:
        missing = [c for c in columns if c not in rec]
        if missing:
            raise ValueError(f"record is missing columns {missing}")
        lines.append(",".join(format_value(rec[c]) for c in columns))
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    header, body = rows[0], rows[1:]
    return [dict(zip(header, r)) for r in body]


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def save_checkpoint(tensors: dict, path):
    """One line per tensor: ``name shape values``; ``shape`` is ``d1xd2`` or ``scalar``."""
    lines = [CKPT_HEADER]
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        a = np.asarray(arr, dtype=float)
        shape = "scalar" if a.ndim == 0 else "x".join(str(d) for d in a.shape)
        vals = " ".join("%.17g" % v for v in a.ravel())
        lines.append(f"{name} {shape} {vals}".rstrip())
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return file_sha256(path)


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != CKPT_HEADER:
        raise ValueError(f"{path}: missing checkpoint header {CKPT_HEADER!r}")
    out = {}
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"{path}: line {lineno}: expected name and shape")
        name, shape_tok = parts[0], parts[1]
        try:
            shape = () if shape_tok == "scalar" else tuple(int(d) for d in shape_tok.split("x"))
            vals = np.array([float(v) for v in parts[2:]])
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: malformed tensor {name}") from None
        if vals.size != int(np.prod(shape)):
            raise ValueError(f"{path}: line {lineno}: tensor {name} has {vals.size} values for shape {shape_tok}")
        out[name] = vals.reshape(shape)
    return out


def network_tensors(net) -> dict:
    out = {e.name: getattr(net.layers[e.layer], e.attr) for e in net.layout}
    out.update(net.buffers())
    return out


def restore_network(net, tensors: dict):
    for e in net.layout:
        if e.name not in tensors:
            raise KeyError(f"checkpoint is missing tensor {e.name}")
        getattr(net.layers[e.layer], e.attr)[...] = tensors[e.name]
    for name, buf in net.buffers().items():
        if name in tensors:
            buf[...] = tensors[name]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_json(obj, path):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
