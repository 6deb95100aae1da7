"""Kinetic energy, momentum sampling, leapfrog steps and the time-step formula.

Everything here is a pure function of its inputs; derivative-evaluation
counting is owned by the caller (the trajectory generators pass their
own counters).  All arithmetic is double precision with a fixed
evaluation order, because downstream coalescence tests rely on bitwise
equality of identically-driven chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteStateError, SingularMomentumError, UnsupportedConfigError
from .randomness import uniform_to_normal


def log_gamma(x: float) -> float:
    """Natural log of the gamma function (shared by the time-step formula)."""
    return math.lgamma(x)


@dataclass(frozen=True)
class KineticEnergy:
    """|p|^beta / beta kinetic energy; beta = 2 is the validated setting."""

    beta: float = 2.0

    def energy(self, p: np.ndarray) -> float:
        return kinetic_energy(p, self.beta)

    def gradient(self, p: np.ndarray) -> np.ndarray:
        return kinetic_gradient(p, self.beta)


def kinetic_energy(p: np.ndarray, beta: float = 2.0) -> float:
    if beta == 2.0:
        return 0.5 * float(p @ p)
    norm = float(np.linalg.norm(p))
    return norm**beta / beta


def kinetic_gradient(p: np.ndarray, beta: float = 2.0) -> np.ndarray:
    """dK/dp = |p|^(beta-2) p; the particle velocity."""
    if beta == 2.0:
        return p
    norm = float(np.linalg.norm(p))
    if norm == 0.0:
        if beta < 2.0:
            raise SingularMomentumError(f"kinetic gradient singular at p = 0 for beta = {beta}")
        return np.zeros_like(p)
    return norm ** (beta - 2.0) * p


def sample_momentum(uniform_row: np.ndarray, beta: float = 2.0) -> np.ndarray:
    """Momentum draw from exp(-K) via componentwise inverse normal CDF.

    Consumes exactly d uniforms and is deterministic given them, which
    is what keeps coupled chains aligned.  Only beta = 2 is supported:
    general beta would need a gamma inverse CDF with no reference
    values to validate against.
    """
    if beta != 2.0:
        raise UnsupportedConfigError(f"momentum sampling implemented for beta = 2 only, got {beta}")
    return np.asarray(uniform_to_normal(uniform_row), dtype=np.float64)


@dataclass
class PhaseState:
    """Position and momentum; time_index tracks the half-step convention.

    Inside trajectories the momentum lives at integer-plus-a-half time
    offsets; at the trajectory origin and destination it is at integer
    time.
    """

    q: np.ndarray
    p: np.ndarray
    time_index: float = 0.0


def _check_finite(vec: np.ndarray, what: str) -> None:
    if not np.isfinite(vec).all():
        bad = int(np.flatnonzero(~np.isfinite(vec))[0])
        raise NonFiniteStateError(what, bad)


def leapfrog_half_kick(state: PhaseState, target, dt: float, direction: int, counter=None) -> PhaseState:
    """Advance the momentum by +-dt/2 using the gradient at the current q.

    Takes integer-time momentum to the adjacent half step (direction
    +1) or the mirrored offset (direction -1).  Exactly one gradient
    evaluation.
    """
    pdot = -target.DU(state.q)
    if counter is not None:
        counter.du_evals_used += 1
    p = state.p + (direction * 0.5 * dt) * pdot
    _check_finite(p, "momentum")
    return PhaseState(state.q, p, state.time_index + 0.5 * direction)


def leapfrog_step(state: PhaseState, target, kin: KineticEnergy, dt: float, direction: int, counter=None) -> PhaseState:
    """One full leapfrog step with half-step momentum: drift then kick.

    Forward: q advances a full step using the current half-step
    momentum, then p advances a full step using the gradient at the new
    q.  Backward mirrors both updates.  One gradient evaluation.
    """
    if direction >= 0:
        q = state.q + dt * kin.gradient(state.p)
        pdot = -target.DU(q)
        p = state.p + dt * pdot
        t = state.time_index + 1.0
    else:
        q = state.q - dt * kin.gradient(state.p)
        pdot = -target.DU(q)
        p = state.p - dt * pdot
        t = state.time_index - 1.0
    if counter is not None:
        counter.du_evals_used += 1
    _check_finite(q, "position")
    _check_finite(p, "momentum")
    return PhaseState(q, p, t)


@dataclass(frozen=True)
class TimeStepConfig:
    """Inputs of the analytic time-step formula.

    h is the reciprocal of the desired number of points per trajectory,
    alpha the tail parameter of the target, beta the kinetic-energy
    exponent.
    """

    d: int
    h: float = 0.05
    alpha: float = 2.0
    beta: float = 2.0


def time_step(cfg: TimeStepConfig) -> float:
    """Analytic time step for ~1/h points per trajectory.

    Evaluated through log-gamma so d = 100 stays finite; for
    alpha = beta = 2 it is exactly pi * h * d-dependent ratios with no
    dependence on the Hamiltonian level.
    """
    d, h, a, b = cfg.d, cfg.h, cfg.alpha, cfg.beta
    if h <= 0 or a <= 0 or b <= 0:
        raise ValueError(f"h, alpha, beta must be positive, got {h}, {a}, {b}")
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    lg = (
        log_gamma(d / b)
        - log_gamma((d - 1) / b + 1.0)
        + log_gamma((d - 1) / b + d / a + 1.0)
        - log_gamma((d - 1) / b + (d - 1) / a + 1.0)
    )
    dt = 2.0 * h * b ** (1.0 / b - 1.0) * a ** (1.0 / a) * math.exp(lg)
    if not math.isfinite(dt) or dt <= 0:
        raise ValueError(f"time step came out non-finite or non-positive: {dt}")
    return dt


def time_step_for(d: int, alpha: float = 2.0, beta: float = 2.0, h: float = 0.05) -> float:
    return time_step(TimeStepConfig(d=d, h=h, alpha=alpha, beta=beta))
