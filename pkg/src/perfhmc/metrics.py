"""Derivative-evaluation counters and run-level reporting.

The gradient of the negative log-likelihood is the comparison currency
between sampling algorithms.  Counters are plain per-worker objects,
merged at joins; nothing here is shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class EvalMetrics:
    """Counters accumulated over trajectories, blocks and chains.

    ``du_evals_used`` counts gradient evaluations for retained
    trajectory points (plus destination half-kicks); ``du_evals_discarded``
    counts evaluations for points excluded by U-turn breaks (NUTS,
    NUTS4) or sign-flip exclusion (FRUTS).  ``blocks_to_coalesce``
    holds one entry per coalescence event: the number of blocks the
    chain actively ran before merging with another chain's path.
    """

    du_evals_used: int = 0
    du_evals_discarded: int = 0
    trajectories: int = 0
    points_total: int = 0
    mh_accepts: int = 0
    mh_rejects: int = 0
    u_evals_trajectory: int = 0
    u_evals_rounding: int = 0
    rounding_accepts: int = 0
    rounding_rejects: int = 0
    blocks_run: int = 0
    blocks_to_coalesce: list = field(default_factory=list)

    @property
    def du_evals_total(self) -> int:
        return self.du_evals_used + self.du_evals_discarded


def merge(a: EvalMetrics, b: EvalMetrics) -> EvalMetrics:
    """Componentwise sum; associative and commutative."""
    return EvalMetrics(
        du_evals_used=a.du_evals_used + b.du_evals_used,
        du_evals_discarded=a.du_evals_discarded + b.du_evals_discarded,
        trajectories=a.trajectories + b.trajectories,
        points_total=a.points_total + b.points_total,
        mh_accepts=a.mh_accepts + b.mh_accepts,
        mh_rejects=a.mh_rejects + b.mh_rejects,
        u_evals_trajectory=a.u_evals_trajectory + b.u_evals_trajectory,
        u_evals_rounding=a.u_evals_rounding + b.u_evals_rounding,
        rounding_accepts=a.rounding_accepts + b.rounding_accepts,
        rounding_rejects=a.rounding_rejects + b.rounding_rejects,
        blocks_run=a.blocks_run + b.blocks_run,
        blocks_to_coalesce=a.blocks_to_coalesce + b.blocks_to_coalesce,
    )


def report(metrics: EvalMetrics, run_config: dict, certified_points: int, error: bool) -> dict:
    """Run-level summary with the per-perfect-point evaluation cost.

    ``du_per_perfect_point`` is the marginal cost of each certified
    point: average blocks a chain takes to coalesce, times the block
    length, times the average evaluations per trajectory.  The shared
    reference chain's full tour is deliberately excluded (it is the
    fixed overhead of a sample set, not a per-point cost); the literal
    total-evaluations / certified-points ratio is reported alongside as
    ``du_per_point_total``.
    """
    n_t = run_config.get("n_t")
    traj = metrics.trajectories
    du_total = metrics.du_evals_total
    du_per_traj = du_total / traj if traj else 0.0
    events = metrics.blocks_to_coalesce
    mean_blocks = sum(events) / len(events) if events else 0.0
    max_blocks = max(events) if events else 0
    hist: dict = {}
    for b in events:
        hist[b] = hist.get(b, 0) + 1
    du_per_point = mean_blocks * (n_t or 0) * du_per_traj
    rep = {
        "error": bool(error),
        "certified_points": int(certified_points if not error else 0),
        "du_evals_used": metrics.du_evals_used,
        "du_evals_discarded": metrics.du_evals_discarded,
        "du_evals_total": du_total,
        "du_per_trajectory": du_per_traj,
        "du_used_per_trajectory": metrics.du_evals_used / traj if traj else 0.0,
        "trajectories": traj,
        "points_total": metrics.points_total,
        "mean_trajectory_points": metrics.points_total / traj if traj else 0.0,
        "mh_accept_rate": metrics.mh_accepts / max(1, metrics.mh_accepts + metrics.mh_rejects),
        "rounding_accept_rate": metrics.rounding_accepts
        / max(1, metrics.rounding_accepts + metrics.rounding_rejects),
        "u_evals_trajectory": metrics.u_evals_trajectory,
        "u_evals_rounding": metrics.u_evals_rounding,
        "blocks_run": metrics.blocks_run,
        "mean_blocks_to_coalesce": mean_blocks,
        "max_blocks_to_coalesce": max_blocks,
        "blocks_to_coalesce_histogram": {str(k): hist[k] for k in sorted(hist)},
        "du_per_perfect_point": du_per_point,
        "du_per_point_total": du_total / certified_points if certified_points else 0.0,
    }
    if error:
        rep["du_per_perfect_point"] = 0.0
        rep["du_per_point_total"] = 0.0
    return rep
