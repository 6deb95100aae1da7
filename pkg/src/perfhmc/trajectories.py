"""The four trajectory generators: raw HMC, NUTS, NUTS4 and FRUTS.

Each maps (q0, p0, one row of uniforms) to a destination phase point
with the momentum advanced back to integer time.  All four read their
variates from fixed row positions (see :class:`RowLayout`) so that
coupled chains driven by the same row consume identical numbers no
matter which sampler or code path runs; the destination index is drawn
from one uniform shared by construction across chains.

Point numbering increases in the forward time direction; momenta are
stored at integer-plus-a-half time offsets (index 0 holds the
integer-time initial momentum).  FRUTS stores integer-time momenta and
orders destination selection by dot product with its direction vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteStateError
from .randomness import uniform_to_normal

N_FLOP = 8                     # flop sizes 1, 2, 4, ..., 128
MAX_POINTS = 2 ** N_FLOP       # 256-point cap for NUTS/NUTS4
MIN_POINTS = 16                # NUTS4 ignores U-turns until 16 points exist
RAW_SIDE = 10                  # raw HMC: 10 points each way, 21 total
FRUTS_DEFAULT_LIMIT = 256      # FRUTS per-side point limit N


@dataclass(frozen=True)
class RowLayout:
    """Column layout of one trajectory's random-number row (d_R = 2d + 10).

    Momentum uniforms, FRUTS direction uniforms, flop directions,
    destination selection, M-H test.  Samplers that do not need a group
    still leave it in place so all samplers consume identical blocks.
    """

    d: int

    @property
    def d_R(self) -> int:
        return 2 * self.d + 10

    @property
    def momentum(self) -> slice:
        return slice(0, self.d)

    @property
    def direction(self) -> slice:
        return slice(self.d, 2 * self.d)

    def flop(self, i_flop: int) -> int:
        return 2 * self.d + (i_flop - 1)

    @property
    def select(self) -> int:
        return 2 * self.d + 8

    @property
    def mh(self) -> int:
        return 2 * self.d + 9


def d_R_for(d: int) -> int:
    return 2 * d + 10


class TrajectoryBuffer:
    """Doubly-extensible store of points q and momenta p, indexed i- .. i+."""

    def __init__(self, d: int, cap: int = MAX_POINTS):
        self.cap = cap
        self.off = cap
        self.q = np.empty((2 * cap + 1, d))
        self.p = np.empty((2 * cap + 1, d))
        self.i_minus = 0
        self.i_plus = 0


@dataclass
class TrajectoryResult:
    """Destination phase point plus accounting for one trajectory."""

    q: np.ndarray
    p: np.ndarray              # momentum advanced to integer time
    du_used: int
    du_discarded: int
    point_count: int
    uturn_terminated: bool
    i_dest: int
    i_minus: int
    i_plus: int


def _check_finite(q: np.ndarray, p: np.ndarray) -> None:
    if not np.isfinite(q).all():
        raise NonFiniteStateError("position", int(np.flatnonzero(~np.isfinite(q))[0]))
    if not np.isfinite(p).all():
        raise NonFiniteStateError("momentum", int(np.flatnonzero(~np.isfinite(p))[0]))


def _finish(buf, i_dest, cache, target, half_dt, used, discarded, uturn, i_minus, i_plus):
    """Copy the destination out and advance its momentum to integer time.

    Uses the gradient cached during construction when the destination's
    was already evaluated, else one fresh (counted) evaluation.
    """
    off = buf.off
    q = buf.q[off + i_dest].copy()
    if i_dest == 0:
        p = buf.p[off].copy()
    else:
        pdot = cache.get(i_dest)
        if pdot is None:
            pdot = -target.DU(q)
            used += 1
        if i_dest > 0:
            p = buf.p[off + i_dest] + half_dt * pdot
        else:
            p = buf.p[off + i_dest] - half_dt * pdot
    buf.i_minus, buf.i_plus = i_minus, i_plus
    return TrajectoryResult(
        q=q, p=p, du_used=used, du_discarded=discarded,
        point_count=i_plus - i_minus + 1, uturn_terminated=uturn,
        i_dest=i_dest, i_minus=i_minus, i_plus=i_plus,
    )


def _setup(buf, q0, p0, target, half_dt):
    """Store the origin, evaluate its gradient, offset the momentum by dt/2."""
    off = buf.off
    buf.q[off] = q0
    buf.p[off] = p0
    pdot0 = -target.DU(q0)
    p_plus = p0 + half_dt * pdot0
    p_minus = p0 - half_dt * pdot0
    return pdot0, p_plus, p_minus


def raw_trajectory(q0, p0, row, target, kin, dt, buf) -> TrajectoryResult:
    """Original fixed-length HMC: 10 points each way, 21 points total."""
    half_dt = 0.5 * dt
    off = buf.off
    pdot0, p_plus, p_minus = _setup(buf, q0, p0, target, half_dt)
    cache = {0: pdot0}
    used, discarded = 1, 0

    q_cur, p_cur = buf.q[off], p_plus
    for i in range(1, RAW_SIDE + 1):
        if i > 1:
            pdot = -target.DU(q_cur)
            used += 1
            cache[i - 1] = pdot
            p_cur = p_cur + dt * pdot
        q_cur = q_cur + dt * kin.gradient(p_cur)
        _check_finite(q_cur, p_cur)
        buf.q[off + i] = q_cur
        buf.p[off + i] = p_cur

    q_cur, p_cur = buf.q[off], p_minus
    for i in range(-1, -RAW_SIDE - 1, -1):
        if i < -1:
            pdot = -target.DU(q_cur)
            used += 1
            cache[i + 1] = pdot
            p_cur = p_cur - dt * pdot
        q_cur = q_cur - dt * kin.gradient(p_cur)
        _check_finite(q_cur, p_cur)
        buf.q[off + i] = q_cur
        buf.p[off + i] = p_cur

    n_pt = 2 * RAW_SIDE + 1
    i_dest = -RAW_SIDE + int(n_pt * row[2 * target.d + 8])
    return _finish(buf, i_dest, cache, target, half_dt, used, discarded,
                   False, -RAW_SIDE, RAW_SIDE)


def nuts4_trajectory(q0, p0, row, target, kin, dt, buf) -> TrajectoryResult:
    """Four-point-segment No-U-Turn variant, 16 to 256 points.

    Grows the trajectory by flops of 2^(k-1) points in a random
    direction; tests for U-turns every fourth point against the start
    of every previous segment (using the half-step momenta, skipping
    the integer-time slot at the origin); ignores U-turns until 16
    points exist; on a later U-turn the partial flop is discarded.
    """
    d = target.d
    half_dt = 0.5 * dt
    off = buf.off
    Q, P = buf.q, buf.p
    pdot0, p_plus, p_minus = _setup(buf, q0, p0, target, half_dt)
    cache = {0: pdot0}
    used, discarded = 1, 0
    q_plus = Q[off].copy()
    q_minus = Q[off].copy()
    i_minus = i_plus = 0
    uturn = False
    terminated = False

    for k in range(1, N_FLOP + 1):
        size = 1 << (k - 1)
        evals_flop = 0
        aborted = False
        if row[2 * d + k - 1] >= 0.5:
            i_new = i_plus + size
            for i in range(i_plus + 1, i_new + 1):
                if i > 1:
                    pdot = -target.DU(q_plus)
                    evals_flop += 1
                    cache[i - 1] = pdot
                    p_plus = p_plus + dt * pdot
                q_plus = q_plus + dt * kin.gradient(p_plus)
                _check_finite(q_plus, p_plus)
                if (i - i_plus) % 4 == 0:
                    ts = np.arange(i_minus, i - 2, 4)
                    if ts.size:  # empty loop leaves the flag untouched
                        spans = q_plus - Q[ts + off]
                        seg_p = P[ts + (ts >= 0) + off]
                        uturn = bool(
                            np.any(spans @ p_plus < 0.0)
                            or np.any(np.einsum("ij,ij->i", spans, seg_p) < 0.0)
                        )
                if uturn and k > 4:
                    aborted = True
                    break
                Q[off + i] = q_plus
                P[off + i] = p_plus
            if not aborted:
                i_plus = i_new
        else:
            i_new = i_minus - size
            for i in range(i_minus - 1, i_new - 1, -1):
                if i < -1:
                    pdot = -target.DU(q_minus)
                    evals_flop += 1
                    cache[i + 1] = pdot
                    p_minus = p_minus - dt * pdot
                q_minus = q_minus - dt * kin.gradient(p_minus)
                _check_finite(q_minus, p_minus)
                if (i_minus - i) % 4 == 0:
                    ts = np.arange(i_plus, i + 2, -4)
                    if ts.size:
                        spans = Q[ts + off] - q_minus
                        seg_p = P[ts - (ts <= 0) + off]
                        uturn = bool(
                            np.any(spans @ p_minus < 0.0)
                            or np.any(np.einsum("ij,ij->i", spans, seg_p) < 0.0)
                        )
                if uturn and k > 4:
                    aborted = True
                    break
                Q[off + i] = q_minus
                P[off + i] = p_minus
            if not aborted:
                i_minus = i_new
        if aborted:
            discarded += evals_flop
            terminated = True
            break
        used += evals_flop
        if uturn and k == 4:
            terminated = True
            break

    n_pt = i_plus - i_minus + 1
    i_dest = i_minus + int(n_pt * row[2 * d + 8])
    return _finish(buf, i_dest, cache, target, half_dt, used, discarded,
                   terminated, i_minus, i_plus)


def _segment_momentum(P, off, i):
    """Stored momentum of the segment (i, i+1); skips the origin's slot."""
    return P[off + i + (1 if i >= 0 else 0)]


def nuts_trajectory(q0, p0, row, target, kin, dt, buf) -> TrajectoryResult:
    """Doubling NUTS in the form used for comparison.

    Standard tree doubling with balanced-subtree U-turn checks inside
    each new half (the half is discarded when one fires) and a
    whole-trajectory check after each successful doubling; destination
    uniform over the retained points.  Momenta are kept at half steps
    like NUTS4, so subtree checks use the inward half-step momenta at
    the subtree ends.
    """
    d = target.d
    half_dt = 0.5 * dt
    off = buf.off
    Q, P = buf.q, buf.p
    pdot0, p_plus, p_minus = _setup(buf, q0, p0, target, half_dt)
    cache = {0: pdot0}
    used, discarded = 1, 0
    q_plus = Q[off].copy()
    q_minus = Q[off].copy()
    i_minus = i_plus = 0
    terminated = False

    for k in range(1, N_FLOP + 1):
        size = 1 << (k - 1)
        evals_half = 0
        aborted = False
        forward = row[2 * d + k - 1] >= 0.5
        for m in range(1, size + 1):
            if forward:
                i = i_plus + m
                if i > 1:
                    pdot = -target.DU(q_plus)
                    evals_half += 1
                    cache[i - 1] = pdot
                    p_plus = p_plus + dt * pdot
                q_plus = q_plus + dt * kin.gradient(p_plus)
                _check_finite(q_plus, p_plus)
                Q[off + i] = q_plus
                P[off + i] = p_plus
            else:
                i = i_minus - m
                if i < -1:
                    pdot = -target.DU(q_minus)
                    evals_half += 1
                    cache[i + 1] = pdot
                    p_minus = p_minus - dt * pdot
                q_minus = q_minus - dt * kin.gradient(p_minus)
                _check_finite(q_minus, p_minus)
                Q[off + i] = q_minus
                P[off + i] = p_minus
            # balanced-subtree U-turn checks over the completed part of the half
            width = 2
            while width <= m and m % width == 0:
                lo, hi = (i - width + 1, i) if forward else (i, i + width - 1)
                span = Q[off + hi] - Q[off + lo]
                if (span @ _segment_momentum(P, off, lo) < 0.0
                        or span @ _segment_momentum(P, off, hi - 1) < 0.0):
                    aborted = True
                    break
                width *= 2
            if aborted:
                break
        if aborted:
            discarded += evals_half
            terminated = True
            break
        used += evals_half
        if forward:
            i_plus += size
        else:
            i_minus -= size
        span = Q[off + i_plus] - Q[off + i_minus]
        if (span @ _segment_momentum(P, off, i_minus) < 0.0
                or span @ _segment_momentum(P, off, i_plus - 1) < 0.0):
            terminated = True
            break

    n_pt = i_plus - i_minus + 1
    i_dest = i_minus + int(n_pt * row[2 * d + 8])
    return _finish(buf, i_dest, cache, target, half_dt, used, discarded,
                   terminated, i_minus, i_plus)


def _sgn(x: float) -> int:
    return 1 if x > 0.0 else (-1 if x < 0.0 else 0)


def direction_vector(uniform_row: np.ndarray) -> np.ndarray:
    """Unit vector uniform on the sphere from d uniforms (inverse-CDF normals)."""
    z = np.atleast_1d(np.asarray(uniform_to_normal(uniform_row), dtype=np.float64))
    norm = float(np.linalg.norm(z))
    if norm == 0.0:
        b = np.zeros(z.shape[0])
        b[0] = 1.0
        return b
    return z / norm


def fruts_eligible(avail_minus, avail_plus, N):
    """Apply the per-side point limit and extension rules of FRUTS.

    ``avail_plus``/``avail_minus`` are the points available until the
    side's natural sign-flip termination (``inf`` when it never flips).
    Returns (eligible backward count, eligible forward count, limited)
    where ``limited`` means the 1/(2N+1) selection rule is in force.
    """
    n_p = min(avail_plus, N)
    term_p = avail_plus <= N
    n_m = min(avail_minus, N)
    term_m = avail_minus <= N
    if term_p and not term_m:
        cap_m = 2 * N - n_p
        n_m = min(avail_minus, cap_m)
        term_m = avail_minus <= cap_m
    elif term_m and not term_p:
        cap_p = 2 * N - n_m
        n_p = min(avail_plus, cap_p)
        term_p = avail_plus <= cap_p
    if term_p and term_m:
        return int(n_m), int(n_p), False
    return int(min(n_m, N)), int(min(n_p, N)), True


def fruts_selection_probabilities(n_minus, n_plus, limited, N):
    """Destination probabilities by index for a built FRUTS trajectory.

    Plain uniform when both sides terminated; otherwise every
    non-origin eligible point gets 1/(2N+1) and the origin absorbs the
    balance, which keeps the transition matrix over the maximal
    trajectory doubly stochastic.
    """
    idx = list(range(-n_minus, n_plus + 1))
    if not limited:
        w = 1.0 / len(idx)
        return {i: w for i in idx}
    w = 1.0 / (2 * N + 1)
    probs = {i: w for i in idx if i != 0}
    probs[0] = 1.0 - (len(idx) - 1) * w
    return probs


def fruts_limited_select(n_minus, n_plus, limited, N, ascending, r):
    """Destination index from one uniform under the FRUTS selection rule.

    Points are walked in dot-product order (ascending or descending by
    index); each owns an interval of its selection probability and the
    uniform lands in one of them, so coupled chains sharing the variate
    make aligned choices.
    """
    n_pt = n_minus + n_plus + 1
    if not limited:
        step = int(n_pt * r)
        return -n_minus + step if ascending else n_plus - step
    probs = fruts_selection_probabilities(n_minus, n_plus, limited, N)
    order = range(-n_minus, n_plus + 1) if ascending else range(n_plus, -n_minus - 1, -1)
    cum = 0.0
    last = 0
    for idx in order:
        cum += probs[idx]
        last = idx
        if r < cum:
            return idx
    return last


def fruts_trajectory(q0, p0, row, target, kin, dt, buf,
                     n_limit: int = FRUTS_DEFAULT_LIMIT) -> TrajectoryResult:
    """Full Random Uniform Trajectory Sampler (direction-vector stopping).

    A direction b is drawn uniformly on the sphere, independently of
    the trajectory.  A side is built only while sgn(b . p) keeps the
    sign it started with; the boundary point is included only if its
    half-step-retarded (integer-time) momentum keeps the sign, so at
    most one point is discarded per end.  Stored momenta are already at
    integer time.  Selection is uniform over the points ordered by
    b . q; the per-side limit engages only on pathological inputs.
    """
    d = target.d
    half_dt = 0.5 * dt
    off = buf.off
    Q, P = buf.q, buf.p
    if buf.cap < 2 * n_limit:
        raise ValueError(f"buffer capacity {buf.cap} below FRUTS extension reach {2 * n_limit}")
    b = direction_vector(row[d:2 * d])
    pdot0, p0_plus, p0_minus = _setup(buf, q0, p0, target, half_dt)
    used, discarded = 1, 0
    s_plus = _sgn(float(b @ p0_plus))
    s_minus = _sgn(float(b @ p0_minus))
    s_zero = _sgn(float(b @ p0))
    build_fwd = s_plus in (s_minus, s_zero)
    build_bwd = s_minus in (s_plus, s_zero)

    def build(sign, s_ref, p_start, start_count, cap):
        """Extend one side until the sign flips or `cap` points exist."""
        nonlocal used, discarded
        count = start_count
        q_cur = Q[off + sign * count].copy()
        p_cur = p_start
        terminated = False
        while count < cap:
            q_cur = q_cur + (sign * dt) * kin.gradient(p_cur)
            pdot = -target.DU(q_cur)
            p_cur = p_cur + (sign * dt) * pdot
            _check_finite(q_cur, p_cur)
            p_ret = p_cur - (sign * half_dt) * pdot
            include = (_sgn(float(b @ p_cur)) == s_ref
                       or _sgn(float(b @ p_ret)) == s_ref)
            if include:
                count += 1
                used += 1
                Q[off + sign * count] = q_cur
                P[off + sign * count] = p_ret
            else:
                discarded += 1
            if _sgn(float(b @ p_cur)) != s_ref:
                terminated = True
                break
        return count, terminated, p_cur

    n_plus = n_minus = 0
    term_p = term_m = True
    p_state_plus, p_state_minus = p0_plus, p0_minus
    if build_fwd:
        n_plus, term_p, p_state_plus = build(+1, s_plus, p0_plus, 0, n_limit)
    if build_bwd:
        n_minus, term_m, p_state_minus = build(-1, s_minus, p0_minus, 0, n_limit)
    if term_p and not term_m:
        n_minus, term_m, _ = build(-1, s_minus, p_state_minus, n_minus, 2 * n_limit - n_plus)
    elif term_m and not term_p:
        n_plus, term_p, _ = build(+1, s_plus, p_state_plus, n_plus, 2 * n_limit - n_minus)

    if term_p and term_m:
        elig_minus, elig_plus, limited = n_minus, n_plus, False
    else:
        elig_minus, elig_plus = min(n_minus, n_limit), min(n_plus, n_limit)
        limited = True
        # points built past the eligible window were probing only
        over = (n_plus - elig_plus) + (n_minus - elig_minus)
        used -= over
        discarded += over
    ascending = float(b @ Q[off - elig_minus]) <= float(b @ Q[off + elig_plus])
    i_dest = fruts_limited_select(elig_minus, elig_plus, limited, n_limit,
                                  ascending, row[2 * d + 8])

    buf.i_minus, buf.i_plus = -elig_minus, elig_plus
    return TrajectoryResult(
        q=Q[off + i_dest].copy(), p=P[off + i_dest].copy(),
        du_used=used, du_discarded=discarded,
        point_count=elig_plus + elig_minus + 1,
        uturn_terminated=term_p and term_m,
        i_dest=i_dest, i_minus=-elig_minus, i_plus=elig_plus,
    )


class FrutsSampler:
    """FRUTS with a configurable per-side point limit."""

    name = "fruts"

    def __init__(self, n_limit: int = FRUTS_DEFAULT_LIMIT):
        self.n_limit = n_limit
        self.cap = 2 * n_limit

    def __call__(self, q0, p0, row, target, kin, dt, buf):
        return fruts_trajectory(q0, p0, row, target, kin, dt, buf, self.n_limit)


def get_sampler(name: str, fruts_n_limit: int = FRUTS_DEFAULT_LIMIT):
    """Sampler callable by name; raises KeyError on unknown names."""
    table = {
        "raw": raw_trajectory,
        "nuts": nuts_trajectory,
        "nuts4": nuts4_trajectory,
    }
    if name == "fruts":
        return FrutsSampler(fruts_n_limit)
    return table[name]


def sampler_capacity(sampler) -> int:
    return getattr(sampler, "cap", MAX_POINTS)
