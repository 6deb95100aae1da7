"""Target distributions behind a single interface.

Each factory returns a :class:`TargetDistribution`: the negative
log-likelihood ``U`` (calibrated to 0 at the centre where feasible),
its gradient ``DU``, the tail parameter used by the time-step formula,
the Hessian at the maximum-likelihood point (for the scaling
transform), and the coordinate ranges the coupling layer uses for its
extreme starting points.  Instances are immutable after construction
and safe to share across workers; evaluation has no hidden state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import ConfigError, NonPositiveDefiniteError
from .randomness import NS_START_SET, stream_prefix, uniforms

EXTREME_COORD = 6.0  # extreme starting points sit at +-6 in scaled coordinates


def _exp(x: float) -> float:
    """exp saturating to inf; diverging states must flow to the
    non-finite checks instead of raising OverflowError mid-evaluation."""
    return math.exp(x) if x < 709.0 else math.inf


@dataclass
class TargetDistribution:
    """Negative log-likelihood, gradient and sampling metadata."""

    d: int
    U: Callable[[np.ndarray], float]
    DU: Callable[[np.ndarray], np.ndarray]
    alpha: float = 2.0
    label: str = ""
    mode: Optional[np.ndarray] = None
    ml_points: tuple = ()  # extra equal-maximum-likelihood points (mixtures)
    start_lo: Optional[np.ndarray] = None
    start_hi: Optional[np.ndarray] = None
    hessian_mode: Optional[np.ndarray] = None
    to_original: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.mode is None:
            self.mode = np.zeros(self.d)
        if self.start_lo is None:
            self.start_lo = np.full(self.d, -EXTREME_COORD)
        if self.start_hi is None:
            self.start_hi = np.full(self.d, EXTREME_COORD)


@dataclass(frozen=True)
class CorrelatedNormalSpec:
    """Equicorrelated normal: unit marginals, pairwise correlation rho."""

    d: int
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")

    @property
    def aspect_ratio(self) -> float:
        """Variance-ellipsoid aspect ratio {1 + (d-1) rho} / (1 - rho)."""
        return (1.0 + (self.d - 1) * self.rho) / (1.0 - self.rho)


@dataclass(frozen=True)
class MixtureSpec:
    """Two equal-weight standard normals, second mode at mu in coordinate 1."""

    d: int
    mu: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")


@dataclass(frozen=True)
class StartPointSet:
    """CFTP starting points: extreme corners plus maximum-likelihood points."""

    points: np.ndarray

    @property
    def m(self) -> int:
        return self.points.shape[0]


def make_standard_normal(d: int) -> TargetDistribution:
    """U(q) = |q|^2 / 2."""
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")

    def U(q):
        return 0.5 * float(q @ q)

    def DU(q):
        return q

    return TargetDistribution(
        d=d, U=U, DU=DU, alpha=2.0, label=f"standard_normal(d={d})",
        hessian_mode=np.eye(d),
    )


def make_correlated_normal(spec: CorrelatedNormalSpec) -> TargetDistribution:
    """Equicorrelation quadratic form via the rank-one (Sherman-Morrison) inverse."""
    d, rho = spec.d, spec.rho
    a = 1.0 / (1.0 - rho)
    b = -rho / ((1.0 - rho) * (1.0 + (d - 1) * rho))

    def U(q):
        s = float(np.sum(q))
        return 0.5 * (a * float(q @ q) + b * s * s)

    def DU(q):
        return a * q + (b * float(np.sum(q)))

    cov_inv = a * np.eye(d) + b * np.ones((d, d))
    return TargetDistribution(
        d=d, U=U, DU=DU, alpha=2.0,
        label=f"correlated_normal(d={d}, rho={rho})",
        hessian_mode=cov_inv,
    )


def make_t_distribution(d: int, nu: float) -> TargetDistribution:
    """U(q) = ((nu+d)/2) log(1 + |q|^2/nu); bounded gradient in the tails."""
    if nu <= 0:
        raise ConfigError(f"degrees of freedom must be positive, got {nu}")
    c = 0.5 * (nu + d)

    def U(q):
        return c * math.log1p(float(q @ q) / nu)

    def DU(q):
        return (nu + d) / (nu + float(q @ q)) * q

    return TargetDistribution(
        d=d, U=U, DU=DU, alpha=2.0, label=f"t_distribution(d={d}, nu={nu})",
        hessian_mode=((nu + d) / nu) * np.eye(d),
    )


def make_normal_mixture(spec: MixtureSpec) -> TargetDistribution:
    """Equal mixture of N(0, I) and N(mu e1, I), log-sum-exp stabilized.

    U is calibrated so both component centres sit at ~0; the true modes
    are offset from the centres by a negligible amount for mu >= 4, so
    the centre is used as the mode throughout (including the Hessian,
    taken as the identity).
    """
    d, mu = spec.d, spec.mu

    def _logliks(q):
        n2 = float(q @ q)
        l1 = -0.5 * n2
        l2 = -0.5 * (n2 - 2.0 * mu * float(q[0]) + mu * mu)
        return l1, l2

    def U(q):
        l1, l2 = _logliks(q)
        m = l1 if l1 > l2 else l2
        return -(m + math.log(math.exp(l1 - m) + math.exp(l2 - m)))

    def DU(q):
        l1, l2 = _logliks(q)
        m = l1 if l1 > l2 else l2
        e1, e2 = math.exp(l1 - m), math.exp(l2 - m)
        w2 = e2 / (e1 + e2)
        g = q.copy()
        g[0] -= w2 * mu
        return g

    hi = np.full(d, EXTREME_COORD)
    hi[0] = mu + EXTREME_COORD
    second_centre = np.zeros(d)
    second_centre[0] = mu
    return TargetDistribution(
        d=d, U=U, DU=DU, alpha=2.0, label=f"normal_mixture(d={d}, mu={mu})",
        ml_points=(second_centre,),
        start_hi=hi,
        hessian_mode=np.eye(d),
    )


def make_lasso(X: np.ndarray, y: np.ndarray, lam: float) -> TargetDistribution:
    """Bayesian Lasso negative log-likelihood over (beta_1..J, beta_0, log sigma).

    X must be standardized (zero mean, unit variance per column).  With
    the log-sigma parameterization the 1/sigma prior factor cancels, so
    U = (n + J) log sigma + S/(2 sigma^2) + lambda T / sigma - J log(lambda/2)
    for lambda > 0, and the plain OLS likelihood for lambda = 0.  The
    subgradient of |beta_j| at 0 is taken as 0 (leapfrog lands exactly
    on 0 with probability zero, and this keeps DU deterministic).
    U is measured relative to its value at the OLS point.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    n, J = X.shape
    if y.shape != (n,):
        raise ConfigError(f"response length {y.shape} does not match {n} rows")
    col_means = X.mean(axis=0)
    col_vars = X.var(axis=0)
    if np.max(np.abs(col_means)) > 1e-8 or np.max(np.abs(col_vars - 1.0)) > 1e-6:
        raise ConfigError("design matrix must be standardized to mean 0, variance 1")
    d = J + 2

    Xt1 = np.column_stack([X, np.ones(n)])
    gram = Xt1.T @ Xt1
    eigs = np.linalg.eigvalsh(gram)
    if eigs[0] <= 1e-10 * eigs[-1]:
        raise ConfigError("singular design matrix")
    gram_chol = cholesky(gram, lower=True)
    coef = solve_triangular(
        gram_chol.T, solve_triangular(gram_chol, Xt1.T @ y, lower=True), lower=False
    )
    resid = y - Xt1 @ coef
    s_ols = float(resid @ resid)
    log_sigma_hat = 0.5 * math.log(s_ols / n)
    ols_point = np.concatenate([coef, [log_sigma_hat]])

    # Hessian of U at the OLS point: block-diagonal (cross terms vanish
    # because the residual is orthogonal to the design there).
    hess = np.zeros((d, d))
    hess[: J + 1, : J + 1] = math.exp(-2.0 * log_sigma_hat) * gram
    hess[J + 1, J + 1] = 2.0 * n

    log_pen = J * math.log(lam / 2.0) if lam > 0 else 0.0

    def _raw_U(theta):
        beta, beta0, s = theta[:J], theta[J], theta[J + 1]
        r = y - beta0 - X @ beta
        S = float(r @ r)
        u = (n * s if lam == 0 else (n + J) * s) + 0.5 * S * _exp(-2.0 * s)
        if lam > 0:
            T = float(np.sum(np.abs(beta)))
            u += lam * T * _exp(-s) - log_pen
        return u

    u0 = _raw_U(ols_point)

    def U(theta):
        return _raw_U(theta) - u0

    def DU(theta):
        beta, beta0, s = theta[:J], theta[J], theta[J + 1]
        r = y - beta0 - X @ beta
        S = float(r @ r)
        inv_s2 = _exp(-2.0 * s)
        g = np.empty(d)
        g[:J] = -(X.T @ r) * inv_s2
        g[J] = -float(np.sum(r)) * inv_s2
        g[J + 1] = (n if lam == 0 else n + J) - S * inv_s2
        if lam > 0:
            inv_s = _exp(-s)
            T = float(np.sum(np.abs(beta)))
            g[:J] += lam * inv_s * np.sign(beta)
            g[J + 1] -= lam * T * inv_s
        return g

    return TargetDistribution(
        d=d, U=U, DU=DU, alpha=2.0, label=f"lasso(J={J}, n={n}, lambda={lam})",
        mode=ols_point, hessian_mode=hess,
    )


def lasso_T(points: np.ndarray, J: int) -> np.ndarray:
    """Sum of absolute regression coefficients per sample point."""
    return np.sum(np.abs(points[:, :J]), axis=1)


def lasso_S(points: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Residual sum of squares per sample point."""
    J = X.shape[1]
    resid = y[None, :] - points[:, J][:, None] - points[:, :J] @ X.T
    return np.sum(resid * resid, axis=1)


def scale_transform(target: TargetDistribution) -> TargetDistribution:
    """Rewrap a target in coordinates scaled by the root of its mode Hessian.

    The working coordinates are x = L^T (q - mode) with H = L L^T, so
    the wrapped U has an approximately identity Hessian at 0.  Targets
    whose Hessian is already the identity are returned unchanged.
    """
    H = target.hessian_mode
    if H is None:
        raise ConfigError(f"target {target.label} has no Hessian at the mode")
    d = target.d
    if np.array_equal(H, np.eye(d)):
        return target
    eigs = np.linalg.eigvalsh(H)
    if eigs[0] <= 0:
        raise NonPositiveDefiniteError(float(eigs[0]))
    L = cholesky(H, lower=True)
    L_inv = solve_triangular(L, np.eye(d), lower=True)
    mode = target.mode
    inner_U, inner_DU = target.U, target.DU

    def to_q(x):
        return mode + L_inv.T @ x

    def U(x):
        return inner_U(to_q(x))

    def DU(x):
        return L_inv @ inner_DU(to_q(x))

    def to_original(samples):
        return mode + samples @ L_inv

    ml_scaled = tuple(L.T @ (p - mode) for p in target.ml_points)
    return TargetDistribution(
        d=d, U=U, DU=DU, alpha=target.alpha,
        label=target.label + " [scaled]",
        mode=np.zeros(d),
        ml_points=ml_scaled,
        start_lo=target.start_lo.copy(),
        start_hi=target.start_hi.copy(),
        hessian_mode=np.eye(d),
        to_original=to_original,
    )


def cftp_start_points(target: TargetDistribution, seed: int = 0, run: int = 0) -> StartPointSet:
    """min(2^d + 1, 33) challenging starting points for exploratory CFTP.

    Extreme corners at the target's +-6 coordinates (full factorial up
    to d = 5; beyond that the first five coordinates are factorial and
    the rest are set randomly from the master stream), plus the
    maximum-likelihood point and, for mixtures, the second
    equal-likelihood centre.
    """
    d = target.d
    lo, hi = target.start_lo, target.start_hi
    n_fact = min(d, 5)
    n_extreme = 2**n_fact
    points = np.empty((n_extreme, d))
    for i in range(n_extreme):
        for j in range(n_fact):
            points[i, j] = hi[j] if (i >> j) & 1 else lo[j]
    if d > 5:
        u = uniforms(stream_prefix(seed, NS_START_SET, run, 0), n_extreme * (d - 5))
        picks = u.reshape(n_extreme, d - 5) >= 0.5
        points[:, 5:] = np.where(picks, hi[5:], lo[5:])
    rows = [points, target.mode[None, :]]
    for extra in target.ml_points:
        rows.append(extra[None, :])
    return StartPointSet(np.vstack(rows))


def load_diabetes(path=None):
    """Read the diabetes regression dataset from delimited text.

    Expects a header row and 442 data rows of 11 columns (10 predictors
    then the response).  Predictor columns are standardized to mean 0,
    variance 1 at load time; the applied constants are returned so runs
    can report them.
    """
    if path is None:
        path = resources.files("perfhmc").joinpath("data/diabetes.txt")
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"dataset {path}: empty file")
    delim = "," if "," in lines[0] else None
    header = lines[0].split(delim)
    if len(header) != 11:
        raise ConfigError(f"dataset {path}: expected 11 columns, header has {len(header)}")
    try:
        data = np.array([[float(v) for v in ln.split(delim)] for ln in lines[1:]])
    except ValueError as exc:
        raise ConfigError(f"dataset {path}: non-numeric entry ({exc})") from exc
    if data.shape != (442, 11):
        raise ConfigError(f"dataset {path}: expected 442 x 11 data rows, got {data.shape}")
    X_raw, y = data[:, :10], data[:, 10]
    means = X_raw.mean(axis=0)
    stds = X_raw.std(axis=0)
    if np.any(stds == 0):
        raise ConfigError(f"dataset {path}: constant predictor column")
    X = (X_raw - means) / stds
    info = {
        "n": 442,
        "J": 10,
        "columns": header,
        "predictor_means": means.tolist(),
        "predictor_stds": stds.tolist(),
    }
    return X, y, info
