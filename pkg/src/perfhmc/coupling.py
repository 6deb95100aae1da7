"""The perfect-simulation layer.

``hmc_round`` runs one block (n_T trajectories plus a rounding step to
a random congruence) -- the coupling unit.  On top of it sit
exploratory coupling from the past, read-once CFTP, the block-length
calibrator, and the chain x block sampler that turns unbiased coupling
into perfect samples: each chain starts at its diagonal block, adjacent
chains form lag-one coupled pairs, and a chain's final point is
certified by bitwise equality with the chain below it at the deadline.

Coalescence is bitwise equality of doubles: the rounding step maps
near-equal chains to identical representable values and every operation
here has a fixed arithmetic order, so equality, once reached, is closed
under further blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import KineticEnergy, sample_momentum
from .errors import CalibrationError, ConfigError, PerfHmcError, RocftpTimeoutError
from .metrics import EvalMetrics, merge
from .randomness import (
    NS_START,
    RandomBlock,
    block_uniforms,
    cftp_rounding_row,
    cftp_rows,
    rocftp_block,
    stream_prefix,
    uniforms,
)
from .trajectories import TrajectoryBuffer, d_R_for, sampler_capacity, MAX_POINTS

ACTIVE = -1  # c-pointer value for a chain that is running its own blocks


@dataclass
class BlockResult:
    """Outcome of one chain's block: end position, coalescence, rounding."""

    end_position: np.ndarray
    coalesced_to: Optional[int]
    rounding_accepted: bool


@dataclass
class ChainBlockState:
    """State of one sample set's chain x block matrix.

    ``Q`` holds current chain positions, ``Q0`` the diagonal starting
    points (reused to save chain 1's block ends for the lower
    triangle), ``c`` the coalescence pointers (ACTIVE = running).
    """

    Q: np.ndarray
    Q0: np.ndarray
    c: list
    stored_seed_prefix: tuple
    error_flag: bool = False
    stretch_start: list = field(default_factory=list)


def _mh_accept(r: float, delta: float) -> bool:
    """Metropolis-Hastings test r <= exp(delta), overflow-safe."""
    if math.isnan(delta):
        raise PerfHmcError("non-finite Hamiltonian in Metropolis-Hastings test")
    return delta >= 0.0 or r <= math.exp(delta)


def hmc_round(q_start, n_T, block: RandomBlock, w, target, kin, dt, sampler,
              metrics: EvalMetrics, buf: TrajectoryBuffer) -> np.ndarray:
    """One block: n_T HMC trajectories, then one rounding step.

    Each trajectory resamples the momentum from its row, runs the
    sampler, and applies the M-H test from the row's dedicated column.
    The rounding step snaps every coordinate to its own uniformly
    shifted congruence of width w and applies a final M-H test; chains
    already within the same cell become bitwise identical when both
    accept.
    """
    d = target.d
    mh_col = 2 * d + 9
    q0 = np.array(q_start, dtype=np.float64, copy=True)
    for i_T in range(n_T):
        row = block.values[i_T]
        p0 = sample_momentum(row[:d], kin.beta)
        H0 = target.U(q0) + kin.energy(p0)
        res = sampler(q0, p0, row, target, kin, dt, buf)
        H = target.U(res.q) + kin.energy(res.p)
        metrics.u_evals_trajectory += 2
        metrics.trajectories += 1
        metrics.points_total += res.point_count
        metrics.du_evals_used += res.du_used
        metrics.du_evals_discarded += res.du_discarded
        if _mh_accept(row[mh_col], H0 - H):
            q0 = res.q
            metrics.mh_accepts += 1
        else:
            metrics.mh_rejects += 1
    q_ro = w * (np.floor(q0 / w) + block.rounding_row[:d])
    metrics.u_evals_rounding += 2
    if _mh_accept(block.rounding_row[d], target.U(q0) - target.U(q_ro)):
        q0 = q_ro
        metrics.rounding_accepts += 1
    else:
        metrics.rounding_rejects += 1
    metrics.blocks_run += 1
    return q0


def _make_buffer(target, sampler) -> TrajectoryBuffer:
    return TrajectoryBuffer(target.d, max(MAX_POINTS, sampler_capacity(sampler)))


def sample_chain_starts(target, seed: int, i_S: int, n_B: int) -> np.ndarray:
    """Diagonal starting points: each coordinate randomly at its extreme."""
    d = target.d
    u = uniforms(stream_prefix(seed, NS_START, i_S, 0), n_B * d).reshape(n_B, d)
    return np.where(u >= 0.5, target.start_hi, target.start_lo)


@dataclass
class SampleSetResult:
    points: np.ndarray
    error: bool
    metrics: EvalMetrics
    block_results: Optional[list] = None


def run_sample_set(target, sampler, kin: KineticEnergy, dt, n_T, n_B, w, seed,
                   i_S, collect_block_results: bool = False) -> SampleSetResult:
    """One sample set's chain x block matrix: n_B certified points.

    Upper triangle: chain i starts at block i and runs with the common
    random blocks; a chain that becomes bitwise equal to a
    lower-indexed active chain coalesces and is copied from then on.
    The lower triangle regenerates the same blocks (pure keyed streams
    stand in for the seed restore), restores chain 1's saved block ends
    as the historical reference, and lets the remaining chains finish
    their wrapped tours; chains entering a block at equal positions
    share one run (exact-coalescence closure makes this a pure
    optimization).  Adjacent-chain equality at each chain's deadline is
    the certification check; any failure sets the error flag for the
    whole set.
    """
    d = target.d
    d_R = d_R_for(d)
    buf = _make_buffer(target, sampler)
    metrics = EvalMetrics()
    starts = sample_chain_starts(target, seed, i_S, n_B)
    state = ChainBlockState(
        Q=np.zeros((n_B, d)),
        Q0=starts.copy(),
        c=[ACTIVE] * n_B,
        stored_seed_prefix=(seed, i_S),
        stretch_start=[0] * n_B,
    )
    Q, Q0, c, stretch = state.Q, state.Q0, state.c, state.stretch_start
    points = np.zeros((n_B, d))
    block_results = [] if collect_block_results else None

    def run_block(key_block, global_block, chains, historical_from):
        """Run/copy the given chains through one block, in ascending order.

        ``key_block`` addresses the random numbers (the lower triangle
        restores the upper triangle's keys); ``historical_from`` is the
        first chain index eligible as a coalescence partner besides the
        always-eligible chain 1.
        """
        block = block_uniforms(seed, i_S, key_block, n_T, d_R)
        memo = {}
        for i_C in chains:
            if c[i_C] != ACTIVE:
                Q[i_C] = Q[c[i_C]]
                if block_results is not None:
                    block_results.append(
                        (global_block, i_C, BlockResult(Q[i_C].copy(), c[i_C], False)))
                continue
            key = Q[i_C].tobytes()
            out = memo.get(key)
            accepted = None
            if out is None:
                before = metrics.rounding_accepts
                out = hmc_round(Q[i_C], n_T, block, w, target, kin, dt, sampler, metrics, buf)
                accepted = metrics.rounding_accepts > before
                memo[key] = out
            Q[i_C] = out
            candidates = [j for j in range(historical_from, i_C) if c[j] == ACTIVE]
            if historical_from > 0:
                candidates.insert(0, 0)
            newly = None
            for j_C in candidates:
                if np.array_equal(Q[i_C], Q[j_C]):
                    c[i_C] = j_C
                    newly = j_C
                    metrics.blocks_to_coalesce.append(global_block - stretch[i_C] + 1)
                    break
            if block_results is not None:
                block_results.append(
                    (global_block, i_C, BlockResult(Q[i_C].copy(), newly, bool(accepted))))

    # upper triangle
    for i_B in range(n_B):
        Q[i_B] = Q0[i_B]
        stretch[i_B] = i_B
        run_block(i_B, i_B, range(i_B + 1), 0)
        Q0[i_B] = Q[0]
    points[0] = Q[0]

    # lower triangle: same block keys, chain 1 restored as the historical
    # reference for each block
    for b in range(n_B - 1):
        state.error_flag |= not np.array_equal(Q[b], Q[b + 1])
        _rework(c, Q, b, stretch, n_B + b)
        Q[0] = Q0[b]
        run_block(b, n_B + b, range(b + 1, n_B), b + 1)
        points[b + 1] = Q[b + 1]
    state.error_flag |= not np.array_equal(Q[n_B - 1], Q[0])

    return SampleSetResult(points, state.error_flag, metrics, block_results)


def _rework(c, Q, retiring, stretch, global_block):
    """Re-point chains off the retiring chain before a lower-triangle block.

    Chains pointing at a chain that was itself a copy chase to its
    target; chains pointing at an active retiring chain lose their
    anchor: the lowest of them is reactivated at the retiring chain's
    final position (a fresh coalescence stretch) and the rest point at
    it.
    """
    pointers = [i for i in range(retiring + 1, len(c)) if c[i] == retiring]
    if not pointers:
        return
    tgt = c[retiring]
    if tgt == ACTIVE:
        m = pointers[0]
        c[m] = ACTIVE
        Q[m] = Q[retiring]
        # a reactivated chain starts a fresh stretch: events measure blocks
        # for one chain to coalesce, so they never exceed a chain's own tour
        stretch[m] = global_block
        for i in pointers[1:]:
            c[i] = m
    else:
        for i in pointers:
            c[i] = tgt


def unbiased_perfect(target, sampler, kin, dt, n_S, n_B, n_T, w, seed,
                     sets=None):
    """Run n_S independent sample sets; n_S * n_B points plus error flag.

    ``sets`` restricts execution to the given sample-set indices (used
    by the worker pool); results are bitwise independent of how sets
    are partitioned because every variate is keyed by (seed, set,
    block).
    """
    if sets is None:
        sets = range(n_S)
    points = []
    metrics = EvalMetrics()
    error = False
    for i_S in sets:
        res = run_sample_set(target, sampler, kin, dt, n_T, n_B, w, seed, i_S)
        points.append(res.points)
        metrics = merge(metrics, res.metrics)
        error |= res.error
    samples = np.vstack(points) if points else np.zeros((0, target.d))
    return samples, error, metrics


def run_coupled_pair(target, sampler, kin, dt, n_T, n_blocks, w, seed, pair_id=0,
                     x_start=None, y_start=None):
    """Two coupled chains with the one-block offset of unbiased sampling.

    X's transition from X_t to X_{t+1} uses block t; Y's from Y_{t-1}
    to Y_t uses the same block t, so Y trails X by one iteration on
    common random numbers.  Returns (X values 0..n_blocks, Y values
    0..n_blocks-1).
    """
    d_R = d_R_for(target.d)
    buf = _make_buffer(target, sampler)
    metrics = EvalMetrics()
    starts = sample_chain_starts(target, seed, pair_id, 2)
    x = np.array(starts[0] if x_start is None else x_start, dtype=np.float64)
    y = np.array(starts[1] if y_start is None else y_start, dtype=np.float64)
    xs, ys = [x.copy()], [y.copy()]
    for t in range(n_blocks):
        block = block_uniforms(seed, pair_id, t, n_T, d_R)
        x = hmc_round(x, n_T, block, w, target, kin, dt, sampler, metrics, buf)
        xs.append(x.copy())
        if t >= 1:
            y = hmc_round(y, n_T, block, w, target, kin, dt, sampler, metrics, buf)
            ys.append(y.copy())
    return xs, ys, metrics


def unbiased_string(chain_x, chain_y, k):
    """Weighted point string of the telescoping unbiased estimator.

    With tau the first time X_t equals Y_{t-1}, the string is
    (X_k, +1), (Y_k, -1), (X_{k+1}, +1), ..., (X_{tau-1}, +1); it is
    the single point (X_k, +1) whenever coalescence happened by k.
    Weights alternate +1/-1 by construction.
    """
    if k < 0 or k >= len(chain_x):
        raise ConfigError(f"k = {k} outside chain length {len(chain_x)}")
    tau = None
    for t in range(1, len(chain_x)):
        if t - 1 < len(chain_y) and np.array_equal(chain_x[t], chain_y[t - 1]):
            tau = t
            break
    if tau is None:
        tau = len(chain_x)  # diagnostic use: truncate at the available length
    string = [(chain_x[k], 1)]
    for i in range(k + 1, tau):
        string.append((chain_y[i - 1], -1))
        string.append((chain_x[i], 1))
    return string


def string_estimate(string, g) -> float:
    """Apply a test function to a weighted string."""
    return float(sum(wt * g(pt) for pt, wt in string))


def cftp(target, sampler, kin, dt, start_points, n_it, N_it, w, seed, run=0,
         metrics: EvalMetrics | None = None):
    """Exploratory coupling from the past over a fixed start set.

    Every start runs through the last n_it rows of the notional
    N_it-row random matrix (rows are keyed by offset from the end, so
    the final trajectory row is the same for every n_it) and through
    one shared rounding row.  Returns the end points and the count of
    outcomes equal to their predecessor's.  The caller increases n_it
    and reruns until n_coal equals the number of starts.
    """
    if n_it > N_it:
        raise ConfigError(f"n_it = {n_it} exceeds N_it = {N_it}")
    d = target.d
    d_R = d_R_for(d)
    if metrics is None:
        metrics = EvalMetrics()
    buf = _make_buffer(target, sampler)
    rows = cftp_rows(seed, run, n_it, d_R)
    block = RandomBlock(rows, cftp_rounding_row(seed, run, d))
    m = start_points.shape[0]
    ends = np.zeros((m, d))
    memo = {}
    n_coal = 1
    for i in range(m):
        key = start_points[i].tobytes()
        out = memo.get(key)
        if out is None:
            out = hmc_round(start_points[i], n_it, block, w, target, kin, dt,
                            sampler, metrics, buf)
            memo[key] = out
        ends[i] = out
        if i >= 1 and np.array_equal(ends[i], ends[i - 1]):
            n_coal += 1
    return ends, n_coal


def _calibration_grid(cap: int):
    """n_it values scanned by the calibrator: fine early, coarser later."""
    grid = list(range(1, 17))
    step, upper = 4, 64
    while grid[-1] < cap:
        nxt = grid[-1] + step
        while nxt <= min(upper, cap):
            grid.append(nxt)
            nxt += step
        step *= 4
        upper *= 4
    return grid


def calibrate_block_length(target, sampler, kin, dt, w, seed, runs=20,
                           cap=2**14, fraction=0.9):
    """Exploratory-CFTP block-length calibration (the 90% rule).

    Scans n_it upward per run until all starting points coalesce,
    recording the fraction of (run, start) combinations coalesced at
    each n_it; the block length is the smallest n_it at which the
    pooled fraction reaches 90%.  Raises CalibrationError if any run
    fails to fully coalesce within the cap.
    """
    from .targets import cftp_start_points

    starts = cftp_start_points(target, seed=seed, run=0).points
    m = starts.shape[0]
    grid = _calibration_grid(cap)
    coal = np.zeros((runs, len(grid)), dtype=int)
    n_full = []
    metrics = EvalMetrics()
    for r in range(runs):
        full_at = None
        for gi, n_it in enumerate(grid):
            _, n_coal = cftp(target, sampler, kin, dt, starts, n_it, cap, w,
                             seed, run=r, metrics=metrics)
            coal[r, gi] = n_coal
            if n_coal == m:
                full_at = n_it
                coal[r, gi:] = m  # full coalescence is monotone in n_it
                break
        if full_at is None:
            raise CalibrationError(
                f"run {r}: no full coalescence within {cap} trajectories "
                f"({int(coal[r].max())}/{m} starts)"
            )
        n_full.append(full_at)
    fractions = coal.sum(axis=0) / (runs * m)
    idx = int(np.argmax(fractions >= fraction))
    if fractions[idx] < fraction:
        raise CalibrationError("90% coalescence level never reached on the grid")
    n_T = grid[idx]
    record = {
        "target": target.label,
        "runs": runs,
        "m_starts": int(m),
        "seed": seed,
        "n_T": int(n_T),
        "fraction_rule": fraction,
        "n_full_per_run": [int(v) for v in n_full],
        "n_full_max": int(max(n_full)),
        "grid": [int(g) for g in grid[: idx + 5]],
        "fractions": [float(f) for f in fractions[: idx + 5]],
        "du_evals": metrics.du_evals_total,
    }
    return n_T, record


def rocftp(target, sampler, kin, dt, start_points, n_it, N_S, w, seed,
           max_blocks=None):
    """Read-once coupling from the past: forward blocks of fixed length.

    Tracked starts are reset every block; a persistent carried chain
    runs alongside.  A block where all tracked starts agree is
    coalesced; the carried chain's entry value into each coalesced
    block after the first is a perfect sample.
    """
    d = target.d
    d_R = d_R_for(d)
    buf = _make_buffer(target, sampler)
    metrics = EvalMetrics()
    m = start_points.shape[0]
    if max_blocks is None:
        max_blocks = 20 * (N_S + 2)
    carry = np.array(start_points[-1], dtype=np.float64)
    samples = np.zeros((N_S, d))
    n_samples = 0
    coalesced_blocks = 0
    blk = 0
    while n_samples < N_S:
        if blk >= max_blocks:
            raise RocftpTimeoutError(blk, coalesced_blocks, n_samples)
        block = rocftp_block(seed, blk, n_it, d_R)
        entry = carry.copy()
        ends = np.zeros((m, d))
        memo = {}
        n_coal = 1
        for i in range(m):
            key = start_points[i].tobytes()
            out = memo.get(key)
            if out is None:
                out = hmc_round(start_points[i], n_it, block, w, target, kin,
                                dt, sampler, metrics, buf)
                memo[key] = out
            ends[i] = out
            if i >= 1 and np.array_equal(ends[i], ends[i - 1]):
                n_coal += 1
        carry = hmc_round(carry, n_it, block, w, target, kin, dt, sampler,
                          metrics, buf)
        if n_coal == m:
            coalesced_blocks += 1
            if coalesced_blocks >= 2:
                samples[n_samples] = entry
                n_samples += 1
        blk += 1
    return samples, metrics
