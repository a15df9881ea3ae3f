"""Counter-based deterministic random numbers.

Every stochastic artifact in this package (random-field draws, query-point
sampling, parameter initialisation, Monte-Carlo noise) comes from the
SplitMix64 finaliser evaluated in counter mode, so a (seed, counter) pair
fully determines each value on every platform and in every language that
reimplements the four lines below.

Raw stream: output(seed, i) for i = 0, 1, 2, ... is

    z = (seed + (i + 1) * 0x9E3779B97F4A7C15)  mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB   mod 2**64
    z = z ^ (z >> 31)

Uniforms are the top 53 bits of a raw output divided by 2**53, in [0, 1).
Normals use Box-Muller on consecutive uniform pairs: pair j consumes raw
outputs (2j, 2j+1) and yields

    r  = sqrt(-2 ln(1 - U_{2j}))        argument lies in (0, 1]
    z0 = r cos(2 pi U_{2j+1})
    z1 = r sin(2 pi U_{2j+1})

Independent substreams are derived by seed-splitting: the child seed for
stream k of a parent seed is simply output(seed, k).
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

_INV_2_53 = 2.0 ** -53
_TWO_PI = 2.0 * np.pi


def _finalize(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def raw(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Raw outputs ``start .. start+count-1`` of the stream, as uint64."""
    if count < 0 or start < 0:
        raise ValueError("count and start must be non-negative")
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(seed) & _MASK) + idx * _GAMMA
    return _finalize(z)


def uniforms(seed: int, count: int, start: int = 0) -> np.ndarray:
    """Uniform floats in [0, 1), one per raw output."""
    return (raw(seed, count, start) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def standard_normals(seed: int, count: int) -> np.ndarray:
    """``count`` i.i.d. standard-normal draws via Box-Muller pairs."""
    if count < 0:
        raise ValueError("count must be non-negative")
    pairs = (count + 1) // 2
    u = uniforms(seed, 2 * pairs)
    r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    angle = _TWO_PI * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(angle)
    out[1::2] = r * np.sin(angle)
    return out[:count]


def split(seed: int, key: int) -> int:
    """Child seed for substream ``key`` of ``seed``."""
    return int(raw(seed, 1, start=int(key))[0])


def index_sample(seed: int, n: int, k: int) -> np.ndarray:
    """First ``k`` entries of a Fisher-Yates shuffle of range(n).

    Swap j uses uniform j to pick a partner in [j, n); the draw order is
    part of the documented format, so datasets built from it are
    reproducible across implementations.
    """
    if not 0 <= k <= n:
        raise ValueError(f"cannot draw {k} distinct indices from {n}")
    idx = np.arange(n)
    u = uniforms(seed, k)
    for j in range(k):
        r = j + int(u[j] * (n - j))
        idx[j], idx[r] = idx[r], idx[j]
    return idx[:k]
