"""Deterministic random streams derived from a base seed and string labels."""

import hashlib

import numpy as np


def _digest(base_seed, labels) -> list[int]:
    h = hashlib.blake2b(digest_size=16)
    h.update(repr(int(base_seed)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    d = h.digest()
    return [int.from_bytes(d[i:i + 4], "little") for i in range(0, 16, 4)]


def child(base_seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``(base_seed, *labels)``.

    The stream depends only on the label values, never on the order in which
    streams are created, so trial cells can be evaluated in any order.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_digest(base_seed, labels))))


def child_seed(base_seed: int, *labels) -> int:
    """A 63-bit integer seed derived like :func:`child`."""
    w = _digest(base_seed, labels)
    return ((w[0] << 32) | w[1]) & ((1 << 63) - 1)
