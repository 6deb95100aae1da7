"""Deterministic, replayable uniform-variate streams.

Every variate is a pure function of a 64-bit key built from
(master_seed, namespace, sample_set, block, counter).  Blocks can be
regenerated bit-identically at any time, which is what makes the seed
save/restore of the chain x block sampler trivially correct and lets
coupled chains consume identical numbers regardless of scheduling.

The construction is a splitmix64 stream: the key fields are folded into
a 64-bit prefix with the splitmix64 finalizer, and variate ``k`` of a
stream is ``fin(prefix + (k + 1) * GOLDEN)``.  Frozen test vectors live
in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1E3553B9
_MIX2 = 0x94D049BB133111EB

# Stream namespaces.  Distinct subsystems never share a key.
NS_HMC_BLOCK = 1      # trajectory random-number matrices (chain x block sampler)
NS_ROUNDING = 2       # rounding rows r_ro (chain x block sampler)
NS_START = 3          # +-6 diagonal starting points
NS_CFTP = 4           # from-the-past trajectory rows, keyed by offset from the end
NS_CFTP_ROUNDING = 5  # the single CFTP rounding row per run
NS_ROCFTP = 6         # read-once forward blocks
NS_ROCFTP_ROUNDING = 7
NS_START_SET = 8      # random +-6 coordinates of CFTP extreme points (d > 5)

# Inverse-normal clamp bound; ndtri of the most extreme representable
# uniform is ~ +-8.37, anything past 8.2 is clamped and counted.
NORMAL_CLAMP = 8.2


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int (scalar path)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def stream_prefix(master_seed: int, *fields: int) -> int:
    """Fold (namespace, set, block, ...) into a 64-bit stream prefix."""
    h = mix64(master_seed)
    for f in fields:
        h = mix64(h ^ mix64((f + _GOLDEN) & _MASK))
    return h


def uniforms(prefix: int, count: int, offset: int = 0) -> np.ndarray:
    """`count` uniforms in the open interval (0, 1) from one stream.

    Variate k of a stream is independent of how many of its neighbours
    were ever generated: same key, same value.
    """
    ks = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    z = np.uint64(prefix) + ks * np.uint64(_GOLDEN)
    bits = _mix64_vec(z)
    # 53-bit mantissa, shifted to the cell centre: strictly inside (0, 1).
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniform_at(prefix: int, k: int) -> float:
    """Single variate k of a stream (scalar convenience)."""
    bits = mix64((prefix + (k + 1) * _GOLDEN) & _MASK)
    return ((bits >> 11) + 0.5) * 2.0**-53


@dataclass
class RandomBlock:
    """One block's worth of random numbers, shared by all coupled chains.

    ``values`` is the n_T x d_R trajectory matrix (one row per
    trajectory); ``rounding_row`` is the (d+1)-vector for the final
    rounding step.
    """

    values: np.ndarray
    rounding_row: np.ndarray


def block_uniforms(seed: int, sample_set: int, block: int, n_T: int, d_R: int) -> RandomBlock:
    """RandomBlock for (seed, sample_set, block); bit-identical on replay."""
    d = (d_R - 10) // 2
    values = uniforms(stream_prefix(seed, NS_HMC_BLOCK, sample_set, block), n_T * d_R)
    rounding = uniforms(stream_prefix(seed, NS_ROUNDING, sample_set, block), d + 1)
    return RandomBlock(values.reshape(n_T, d_R), rounding)


def cftp_rows(seed: int, run: int, n_it: int, d_R: int) -> np.ndarray:
    """n_it trajectory rows for from-the-past coupling.

    Rows are keyed by their offset from the end of the notional
    N_it-row matrix, so row ``[-1]`` of the returned array is the same
    row for every n_it: every replay ends at the same final row.
    """
    rows = np.empty((n_it, d_R))
    for j in range(n_it):
        end_offset = n_it - j  # first executed row is furthest in the past
        rows[j] = uniforms(stream_prefix(seed, NS_CFTP, run, end_offset), d_R)
    return rows


def cftp_rounding_row(seed: int, run: int, d: int) -> np.ndarray:
    return uniforms(stream_prefix(seed, NS_CFTP_ROUNDING, run, 0), d + 1)


def rocftp_block(seed: int, block: int, n_it: int, d_R: int) -> RandomBlock:
    d = (d_R - 10) // 2
    values = uniforms(stream_prefix(seed, NS_ROCFTP, 0, block), n_it * d_R)
    rounding = uniforms(stream_prefix(seed, NS_ROCFTP_ROUNDING, 0, block), d + 1)
    return RandomBlock(values.reshape(n_it, d_R), rounding)


@dataclass
class ClampDiagnostics:
    """Counts inverse-CDF inputs extreme enough to hit the +-8.2 clamp."""

    count: int = 0


_clamp_diag = ClampDiagnostics()


def clamp_diagnostics() -> ClampDiagnostics:
    return _clamp_diag


def uniform_to_normal(u):
    """Inverse standard-normal CDF of uniforms in (0, 1).

    Accepts a scalar or array; outputs are clamped to +-8.2 (a
    diagnostics counter records how often that fires, which for stream
    output is at most once per ~1e16 variates).
    """
    z = ndtri(u)
    clipped = np.abs(z) > NORMAL_CLAMP
    n_clip = int(np.count_nonzero(clipped))
    if n_clip:
        _clamp_diag.count += n_clip
        z = np.clip(z, -NORMAL_CLAMP, NORMAL_CLAMP)
    return z
