"""Bootstrap covariance estimation for fitted coefficients.

Two estimators are provided.  The full bootstrap refits on every resample.
The plug-in bootstrap keeps the original estimate fixed, bootstraps the
gradient of the objective there to estimate its covariance ``A`` and pairs it
with the analytic Hessian ``B`` on the original data, giving the sandwich
``B^{-1} A B^{-1}``.  Resampling is i.i.d. over rows or moving-block for
serially dependent data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ecf import WeightSpec
from .errors import DomainError, InferenceError, NumericalError, PhaseEIVError
from .estimator import FitOptions, FitResult, PhaseObjective, RegressionData

__all__ = [
    "BootstrapConfig",
    "CovarianceEstimate",
    "replicate_rng",
    "resample_indices",
    "resample",
    "full_bootstrap",
    "plugin_bootstrap",
    "robust_spread",
]


@dataclass(frozen=True)
class BootstrapConfig:
    """Resampling settings.

    ``mode`` is ``"iid"`` or ``"block"``; block mode needs ``block_length``.
    ``fix_t_star`` keeps the original truncation frequency when evaluating
    plug-in gradients instead of re-selecting it on each resample.
    ``n_jobs`` other than 1 runs replicates through joblib; results do not
    depend on it.
    """

    B: int = 100
    seed: int = 0
    block_length: int | None = None
    mode: str = "iid"
    fix_t_star: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.B < 1:
            raise DomainError("B must be at least 1")
        if self.mode not in ("iid", "block"):
            raise DomainError(f"unknown bootstrap mode {self.mode!r}")
        if self.mode == "block":
            if self.block_length is None or self.block_length < 1:
                raise DomainError("block mode needs block_length >= 1")


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    method: str
    B_used: int
    failures: int = 0
    replicates: np.ndarray | None = field(default=None, repr=False)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "matrix": self.matrix.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "B_used": int(self.B_used),
            "failures": int(self.failures),
        }


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replicate ``index``; identical for serial and parallel runs."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(index),)))


def resample_indices(n: int, config: BootstrapConfig, replicate_index: int) -> np.ndarray:
    """Row indices of one bootstrap sample of size ``n``."""
    if n < 1:
        raise DomainError("n must be positive")
    rng = replicate_rng(config.seed, replicate_index)
    if config.mode == "iid":
        return rng.integers(0, n, size=n)
    L = config.block_length
    if L > n:
        raise DomainError(f"block_length {L} exceeds n={n}")
    n_blocks = -(-n // L)
    starts = rng.integers(0, n - L + 1, size=n_blocks)
    return (starts[:, None] + np.arange(L)[None, :]).ravel()[:n]


def resample(data: RegressionData, config: BootstrapConfig, replicate_index: int) -> RegressionData:
    return data.take(resample_indices(data.n, config, replicate_index))


def _map(fn, items, n_jobs):
    if n_jobs == 1:
        return [fn(i) for i in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(i) for i in items)


def _population_cov(X: np.ndarray) -> np.ndarray:
    """``(1/B) sum (x_b - x_bar)(x_b - x_bar)'``, two-pass, symmetrised."""
    D = X - X.mean(axis=0)
    C = D.T @ D / X.shape[0]
    return 0.5 * (C + C.T)


def full_bootstrap(data: RegressionData, fit: Callable[[RegressionData], FitResult],
                   config: BootstrapConfig) -> CovarianceEstimate:
    """Refit on ``B`` resamples; covariance of the replicates with 1/B.

    Replicates whose fit raises a package error or reports non-convergence are
    dropped and counted.
    """

    def one(b):
        try:
            res = fit(resample(data, config, b))
        except PhaseEIVError:
            return None
        return res.theta if res.converged else None

    out = _map(one, range(config.B), config.n_jobs)
    good = [t for t in out if t is not None]
    if len(good) < 2:
        raise InferenceError(f"only {len(good)} of {config.B} bootstrap refits succeeded")
    reps = np.vstack(good)
    return CovarianceEstimate(_population_cov(reps), "full_bootstrap", len(good),
                              failures=config.B - len(good), replicates=reps)


def plugin_bootstrap(data: RegressionData, fitted: FitResult, config: BootstrapConfig,
                     options: FitOptions | None = None) -> CovarianceEstimate:
    """Sandwich ``B^{-1} A B^{-1}`` from bootstrapped gradients at the estimate.

    ``A = (1/B) sum_b g_b g_b'`` with ``g_b`` the objective gradient at
    ``fitted`` on resample ``b``; ``B`` is the objective Hessian at ``fitted`` on
    ``data``.  Kernel, quadrature size and the intercept pin come from
    ``options``; the original ``t*`` is taken from ``fitted``.  Pinned
    coordinates get zero rows and columns.
    """
    opts = options or FitOptions()
    if fitted.t_star is None:
        raise DomainError("plug-in bootstrap needs a phase fit with a truncation frequency")
    theta = fitted.theta
    free = np.ones(theta.size, dtype=bool)
    if not opts.intercept:
        free[0] = False
    idx = np.flatnonzero(free)
    w0 = WeightSpec(opts.kernel, fitted.t_star, opts.n_nodes)
    H = PhaseObjective(data, w0).hessian(theta)[np.ix_(idx, idx)]
    try:
        cond = np.linalg.cond(H)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(f"condition number {cond:.3g}")
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Hessian at the estimate is singular ({exc}); use the full bootstrap") from exc

    def one(b):
        rs = resample(data, config, b)
        try:
            w = w0 if config.fix_t_star else opts.weights_for(rs.y)
            return PhaseObjective(rs, w).gradient(theta)[idx]
        except PhaseEIVError:
            return None

    out = _map(one, range(config.B), config.n_jobs)
    good = [g for g in out if g is not None]
    if len(good) < 1:
        raise InferenceError("no bootstrap gradient could be evaluated")
    G = np.vstack(good)
    A = G.T @ G / G.shape[0]
    S = Hinv @ A @ Hinv
    S = 0.5 * (S + S.T)
    full = np.zeros((theta.size, theta.size))
    full[np.ix_(idx, idx)] = S
    return CovarianceEstimate(full, "plugin_bootstrap", len(good), failures=config.B - len(good),
                              replicates=G)


def robust_spread(samples) -> float:
    """Interquartile range with linearly interpolated (type 7) quartiles."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DomainError("need at least 2 values")
    q75, q25 = np.percentile(x, [75, 25], method="linear")
    return float(q75 - q25)
