"""Deterministic counter-based random streams.

Every random draw in this package is a pure function of a seed plus a
few integer coordinates, hashed through splitmix64.  There is no
sequential generator state, which keeps data generation reproducible
across platforms (and across languages, for anyone re-implementing the
three xor/multiply rounds below), order-independent, and cheap to
vectorize.

Streams are separated by folding a string tag into the hash:

    u01(seed, tag("synth.label"), impression_id)

The vector variants (`mix_vec`, `u01_vec`) produce bit-identical values
to their scalar counterparts; a property test pins that equivalence.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

__all__ = [
    "MASK64",
    "splitmix64",
    "mix",
    "u01",
    "tag",
    "mix_vec",
    "u01_vec",
    "pick",
    "pick_vec",
]

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One splitmix64 finalizer round on a 64-bit integer."""
    x = (x + _GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * _MUL1) & MASK64
    x = ((x ^ (x >> 27)) * _MUL2) & MASK64
    return x ^ (x >> 31)


def mix(*parts: int) -> int:
    """Fold integers into one 64-bit hash.

    Order matters: mix(a, b) != mix(b, a) in general.  Negative inputs
    are masked to their 64-bit two's-complement pattern.
    """
    h = 0
    for p in parts:
        h = splitmix64(h ^ (p & MASK64))
    return h


def u01(*parts: int) -> float:
    """Uniform float in [0, 1) derived from mix(*parts)."""
    return mix(*parts) / 2.0**64


def tag(name: str) -> int:
    """Stable 64-bit stream tag for a short ASCII name."""
    h = 0
    for b in name.encode("utf-8"):
        h = splitmix64(h ^ b)
    return h


def pick(u: float, n: int) -> int:
    """Map a [0,1) uniform to an index in [0, n)."""
    i = int(u * n)
    return n - 1 if i >= n else i


# --- vector variants -------------------------------------------------------
# numpy uint64 arithmetic wraps modulo 2**64, matching the scalar masks.
# errstate guards against the overflow warning numpy emits for 0-d inputs.


def _splitmix64_vec(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(_GAMMA)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(_MUL1)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(_MUL2)
        return x ^ (x >> np.uint64(31))


def mix_vec(*parts: int | np.ndarray) -> np.ndarray:
    """Vectorized mix(); scalar and array parts broadcast together."""
    h: np.ndarray | None = None
    for p in parts:
        arr = np.asarray(p).astype(np.uint64)
        h = _splitmix64_vec(arr if h is None else h ^ arr)
    if h is None:
        raise ValueError("mix_vec needs at least one part")
    return h


def u01_vec(*parts: int | np.ndarray) -> np.ndarray:
    """Vectorized u01(); returns float64 in [0, 1)."""
    return mix_vec(*parts).astype(np.float64) / 2.0**64


def pick_vec(u: np.ndarray, n: int) -> np.ndarray:
    """Vectorized pick(): uniform array to indices in [0, n)."""
    return np.minimum((u * n).astype(np.int64), n - 1)
