"""Deterministic seeded randomness for perturbation streams.

All optimizer-side randomness flows through two primitives:

* ``mix64`` — an avalanche mixer that derives independent 64-bit seeds
  from a master seed plus arbitrary integer tags (step index, purpose
  tag, ...).  No global RNG state exists anywhere in the package.
* ``normals`` — a Gaussian stream that is a pure function of its seed,
  built from a splitmix64 counter sequence fed through the polar
  Box-Muller transform.  Regenerating from the same seed reproduces the
  exact same doubles, which is what makes the store-nothing perturbation
  trick work: the same direction vector is recreated for the +mu, -2mu,
  +mu passes and again for the parameter update.

The concrete streams are part of the package's reproducibility contract
and are frozen by golden tests; changing any constant here is a breaking
change for recorded runs.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_PHI = 0x9E3779B97F4A7C15  # splitmix64 counter increment (golden-ratio gamma)
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INIT = 0x243F6A8885A308D3  # first 64 fractional bits of pi


def _finalize_int(x: int) -> int:
    x &= _MASK
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK
    return x ^ (x >> 31)


def mix64(*parts: int) -> int:
    """Avalanche-combine integers into a single 64-bit seed.

    Absorbs each part into a running hash with the splitmix64 finalizer.
    Small or correlated inputs (master seed, step counter, tag bytes)
    come out statistically independent.
    """
    h = _INIT
    for p in parts:
        h = _finalize_int((h + _PHI + (int(p) & _MASK)) & _MASK)
    return h


def _splitmix_block(seed: int, start: int, count: int) -> np.ndarray:
    """uint64 outputs ``start .. start+count-1`` of the splitmix64 stream."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    x = np.uint64(seed & _MASK) + idx * np.uint64(_PHI)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def uniforms(seed: int, n: int, start: int = 0) -> np.ndarray:
    """First ``n`` doubles in [0, 1) of the stream for ``seed``.

    Each double takes the top 53 bits of one splitmix64 output.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    u = _splitmix_block(seed, start, n)
    return (u >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normals(seed: int, n: int) -> np.ndarray:
    """First ``n`` standard normals of the Gaussian stream for ``seed``.

    Polar Box-Muller: uniform pairs are consumed strictly in stream
    order; a pair (u1, u2) maps to v = (2*u1-1, 2*u2-1) and is accepted
    when 0 < |v|^2 < 1, yielding two normals.  The output sequence is
    independent of internal chunking, so callers that ask for the same
    seed always see bit-identical values.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.empty(0, dtype=np.float64)
    out = []
    have = 0
    pair_pos = 0  # uniforms consumed so far (2 per candidate pair)
    while have < n:
        need_pairs = (n - have + 1) // 2
        # acceptance rate is pi/4; oversample a little to usually finish
        # in one round
        draw = max(8, int(need_pairs / 0.78) + 4)
        u = uniforms(seed, 2 * draw, start=pair_pos)
        pair_pos += 2 * draw
        v1 = 2.0 * u[0::2] - 1.0
        v2 = 2.0 * u[1::2] - 1.0
        s = v1 * v1 + v2 * v2
        ok = (s > 0.0) & (s < 1.0)
        s_ok = s[ok]
        f = np.sqrt(-2.0 * np.log(s_ok) / s_ok)
        z = np.empty(2 * s_ok.size, dtype=np.float64)
        z[0::2] = v1[ok] * f
        z[1::2] = v2[ok] * f
        out.append(z)
        have += z.size
    return np.concatenate(out)[:n] if len(out) > 1 else out[0][:n]


def permutation(seed: int, n: int) -> np.ndarray:
    """Deterministic Fisher-Yates permutation of ``0..n-1`` for ``seed``."""
    perm = np.arange(n, dtype=np.int64)
    if n < 2:
        return perm
    # one splitmix64 word per swap, mapped to [0, i] by multiply-shift
    words = _splitmix_block(seed, 0, n - 1)
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = (int(words[k]) * (i + 1)) >> 64
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def choice_index(seed: int, probabilities: np.ndarray) -> int:
    """Sample one index from a probability vector, seeded.

    Uses a single uniform against the cumulative distribution; the last
    index absorbs any floating-point shortfall.
    """
    u = float(uniforms(seed, 1)[0])
    cum = np.cumsum(probabilities)
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, len(probabilities) - 1)
