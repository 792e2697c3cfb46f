"""Scalar primitives and random number plumbing shared by every model.

All arrays are ``float64`` numpy arrays. Randomness goes through
:func:`make_rng`, which builds a numpy ``Generator`` on the PCG64 bit
generator seeded via ``SeedSequence``. PCG64 output for a given seed is
stable across platforms and numpy releases, so seeds are portable.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12

# Named sub-streams derived from one root seed.
STREAM_SPLIT = 1
STREAM_INIT = 2
STREAM_TRAIN = 3


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and an optional sub-stream key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *stream])))


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input.

    Only ``exp(-|x|)`` is ever computed, so the exponent is never positive.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out if out.ndim else float(out)


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0)
    return out if out.ndim else float(out)


def relu_grad(x):
    """Subgradient of ReLU, taking 0 at exactly 0."""
    return (np.asarray(x) > 0).astype(np.float64)


def cross_entropy(target, pred):
    """Binary cross entropy with ``pred`` clamped to ``[EPS, 1 - EPS]``."""
    t = np.asarray(target, dtype=np.float64)
    p = np.clip(np.asarray(pred, dtype=np.float64), EPS, 1.0 - EPS)
    out = -t * np.log(p) - (1.0 - t) * np.log1p(-p)
    return out if out.ndim else float(out)


def bernoulli_mask(dim: int, keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Binary vector whose entries are independently 1 with probability ``keep_prob``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(dim)
    return (rng.random(dim) < keep_prob).astype(np.float64)


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")
