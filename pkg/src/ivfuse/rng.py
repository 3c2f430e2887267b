"""Deterministic, splittable random streams.

Every stochastic choice in the package (weight init, crop windows, noise
injection) draws from a counter-based Philox generator whose key is derived
from a root seed plus a path of string/int labels. Streams derived from the
same (seed, labels) are bit-identical across runs on one platform, and
derivation is stateless, so a training run can be resumed mid-stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive(seed: int, *labels) -> np.random.Generator:
    """Return a Generator keyed by ``seed`` and a label path.

    Labels may be strings or ints; they are folded into the Philox key via
    SHA-256, so unrelated label paths give independent streams.
    """
    msg = str(int(seed)) + "".join("/" + str(lab) for lab in labels)
    digest = hashlib.sha256(msg.encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def truncated_normal(gen: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) samples with |x| > 2*std resampled (float64)."""
    out = gen.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = gen.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out
