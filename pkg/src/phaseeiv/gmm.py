"""Third-order method-of-moments comparator for the univariate model.

Parameters ``theta = (mu_X, beta0, beta1, sigma2_X, sigma2_U, sigma2_eps, mu_X3)``.
With X, U and eps independent and U, eps symmetric about zero, the joint
centred moments of (W, Y) up to order three are

    nu_10 = nu_01 = 0
    nu_20 = sigma2_X + sigma2_U       nu_11 = beta1 sigma2_X
    nu_02 = beta1^2 sigma2_X + sigma2_eps
    nu_30 = mu_X3                     nu_21 = beta1 mu_X3
    nu_12 = beta1^2 mu_X3             nu_03 = beta1^3 mu_X3

The estimator minimises ``A' S^{-1} A`` where ``A`` stacks the nine scaled
moment gaps and ``S`` is the sample covariance of the moment conditions,
estimated once from the data and held fixed (one-step GMM).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import linalg, optimize

from .errors import DomainError, NumericalError, UnsupportedError
from .estimator import CoefficientVector, FitResult, RegressionData

__all__ = [
    "ThetaK",
    "MomentIndex",
    "MOMENT_ORDER",
    "GMMOptions",
    "model_moment",
    "sample_joint_moments",
    "moment_vector",
    "estimate_sigma_K",
    "gmm_objective",
    "fit_gmm",
]

K_SUPPORTED = 3
#: objective value below which a start counts as an exact moment fit
EXACT_FIT_ATOL = 1e-12


@dataclass(frozen=True)
class ThetaK:
    mu_X: float
    beta0: float
    beta1: float
    sigma2_X: float
    sigma2_U: float
    sigma2_eps: float
    mu_X3: float

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        if min(self.sigma2_X, self.sigma2_U, self.sigma2_eps) < 0:
            raise DomainError("variance parameters must be non-negative")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])

    @classmethod
    def from_array(cls, a) -> "ThetaK":
        return cls(*np.asarray(a, dtype=float).tolist())

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class MomentIndex:
    j: int
    k: int

    def __post_init__(self):
        if self.j < 0 or self.k < 0:
            raise DomainError("moment indices must be non-negative")

    @property
    def order(self) -> int:
        return self.j + self.k


MOMENT_ORDER = tuple(MomentIndex(j, k) for j, k in
                     ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)))


def _idx(idx):
    if isinstance(idx, MomentIndex):
        return idx.j, idx.k
    j, k = idx
    return int(j), int(k)


def model_moment(theta: ThetaK, idx) -> float:
    """Model-implied centred joint moment ``nu_{j,k}(theta)`` for ``1 <= j + k <= 3``."""
    j, k = _idx(idx)
    b = theta.beta1
    table = {
        (1, 0): 0.0,
        (0, 1): 0.0,
        (2, 0): theta.sigma2_X + theta.sigma2_U,
        (1, 1): b * theta.sigma2_X,
        (0, 2): b * b * theta.sigma2_X + theta.sigma2_eps,
        (3, 0): theta.mu_X3,
        (2, 1): b * theta.mu_X3,
        (1, 2): b * b * theta.mu_X3,
        (0, 3): b**3 * theta.mu_X3,
    }
    try:
        return table[(j, k)]
    except KeyError:
        raise DomainError(f"moment index ({j}, {k}) outside the K={K_SUPPORTED} range") from None


def _univariate(data: RegressionData):
    if data.p1 != 1 or data.p2 != 0:
        raise DomainError("GMM comparator needs one error-prone covariate and no Z")
    return data.W[:, 0], data.y


def sample_joint_moments(data: RegressionData, max_order: int = 2 * K_SUPPORTED) -> dict:
    """All ``nu_hat[(j, k)] = mean((W - W_bar)^j (Y - Y_bar)^k)`` with ``j + k <= max_order``."""
    if max_order < 2:
        raise DomainError("max_order must be at least 2")
    w, y = _univariate(data)
    dw = w - w.mean()
    dy = y - y.mean()
    pw = [np.ones_like(dw)]
    py = [np.ones_like(dy)]
    for _ in range(max_order):
        pw.append(pw[-1] * dw)
        py.append(py[-1] * dy)
    out = {}
    for j in range(max_order + 1):
        for k in range(max_order + 1 - j):
            out[(j, k)] = 0.0 if (j, k) in ((1, 0), (0, 1)) else float(np.mean(pw[j] * py[k]))
    return out


def moment_vector(data: RegressionData, theta: ThetaK) -> np.ndarray:
    """Scaled moment gaps ``A_jk = n^{-1/2} sum_i [(W_i - mu_X)^j (Y_i - beta0 - beta1 mu_X)^k - nu_jk]``."""
    w, y = _univariate(data)
    dw = w - theta.mu_X
    dy = y - theta.beta0 - theta.beta1 * theta.mu_X
    n = w.size
    out = np.empty(len(MOMENT_ORDER))
    for a, m in enumerate(MOMENT_ORDER):
        out[a] = (np.sum(dw**m.j * dy**m.k) - n * model_moment(theta, m)) / np.sqrt(n)
    return out


def estimate_sigma_K(data: RegressionData) -> np.ndarray:
    """Covariance of the moment conditions, ``nu_hat_{j+j', k+k'} - nu_hat_jk nu_hat_j'k'``."""
    nu = sample_joint_moments(data, 2 * K_SUPPORTED)
    m = len(MOMENT_ORDER)
    S = np.empty((m, m))
    for a, p in enumerate(MOMENT_ORDER):
        for b in range(a, m):
            q = MOMENT_ORDER[b]
            S[a, b] = S[b, a] = nu[(p.j + q.j, p.k + q.k)] - nu[(p.j, p.k)] * nu[(q.j, q.k)]
    return S


def _weight_factor(S: np.ndarray, ridge: float):
    m = S.shape[0]
    R = S + ridge * np.trace(S) / m * np.eye(m)
    try:
        return linalg.cho_factor(R, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"moment covariance is not positive definite after ridge: {exc}") from exc


def gmm_objective(data: RegressionData, theta: ThetaK, sigma=None, ridge: float = 1e-8) -> float:
    """Quadratic form ``A' S^{-1} A`` (``S`` ridged by ``ridge * trace(S) / 9``)."""
    S = estimate_sigma_K(data) if sigma is None else np.asarray(sigma, dtype=float)
    A = moment_vector(data, theta)
    return float(A @ linalg.cho_solve(_weight_factor(S, ridge), A))


@dataclass(frozen=True)
class GMMOptions:
    """Search settings for :func:`fit_gmm`.

    ``xatol`` is looser than the phase fit's because a 1e-8 simplex diameter
    in seven dimensions sits below the rounding noise of the quadratic form.
    """

    n_starts: int = 9
    perturb_scale: float = 0.5
    seed: int = 0
    xatol: float = 1e-7
    fatol: float = 1e-12
    maxiter: int | None = None
    coarse_xatol: float | None = 1e-4
    ridge: float = 1e-8
    intercept: bool = True


class _Moments:
    """Moment gaps from centred sample moments by binomial expansion.

    With ``d = W_bar - mu_X`` and ``e = Y_bar - beta0 - beta1 mu_X`` the raw
    means of ``(W - mu_X)^j (Y - beta0 - beta1 mu_X)^k`` are polynomials in
    ``(d, e)`` with centred-moment coefficients, so each evaluation is O(1).
    """

    def __init__(self, nu, w_bar, y_bar, n):
        self.nu = nu
        self.w_bar, self.y_bar = w_bar, y_bar
        self.root_n = np.sqrt(n)

    def gaps(self, mu, b0, b1, s2x, s2u, s2e, m3):
        nu = self.nu
        d = self.w_bar - mu
        e = self.y_bar - b0 - b1 * mu
        means = np.array([
            d,
            e,
            nu[(2, 0)] + d * d,
            nu[(1, 1)] + d * e,
            nu[(0, 2)] + e * e,
            nu[(3, 0)] + 3 * d * nu[(2, 0)] + d**3,
            nu[(2, 1)] + 2 * d * nu[(1, 1)] + e * nu[(2, 0)] + d * d * e,
            nu[(1, 2)] + 2 * e * nu[(1, 1)] + d * nu[(0, 2)] + d * e * e,
            nu[(0, 3)] + 3 * e * nu[(0, 2)] + e**3,
        ])
        model = np.array([0.0, 0.0, s2x + s2u, b1 * s2x, b1 * b1 * s2x + s2e,
                          m3, b1 * m3, b1 * b1 * m3, b1**3 * m3])
        return self.root_n * (means - model)


def _to_free(theta: np.ndarray) -> np.ndarray:
    z = theta.copy()
    z[3:6] = np.log(np.maximum(theta[3:6], 1e-300))
    return z


def _from_free(z: np.ndarray, log_floor=None) -> np.ndarray:
    th = z.copy()
    lz = z[3:6] if log_floor is None else np.maximum(z[3:6], log_floor)
    th[3:6] = np.exp(np.clip(lz, -700.0, 700.0))
    return th


def _start_from_slope(nu, w_bar, y_bar, b1, intercept):
    s2w, swy, s2y = nu[(2, 0)], nu[(1, 1)], nu[(0, 2)]
    s2x = swy / b1 if b1 != 0 else 0.5 * s2w
    # keep both variance shares positive but allow near-noiseless starts
    s2x = float(np.clip(s2x, 1e-3 * s2w, (1 - 1e-3) * s2w))
    s2u = s2w - s2x
    s2e = max(s2y - b1 * b1 * s2x, 1e-3 * s2y)
    b0 = y_bar - b1 * w_bar if intercept else 0.0
    return np.array([w_bar, b0, b1, s2x, s2u, s2e, nu[(3, 0)]])


def fit_gmm(data: RegressionData, K: int = 3, options: GMMOptions | None = None) -> FitResult:
    """One-step GMM with fixed data-estimated weight, multi-start simplex search.

    Starts: the naive-regression-implied parameters, the third-moment ratio
    slope ``nu_21 / nu_30`` when defined, and random perturbations of the
    naive start in the log-variance parameterisation.
    A start reaching ``G <= EXACT_FIT_ATOL`` (an exact moment fit) ends the
    search early.
    """
    if K != K_SUPPORTED:
        if K < 3:
            raise UnsupportedError("K < 3 leaves the model under-identified; use K = 3")
        raise UnsupportedError("only K = 3 is implemented")
    opts = options or GMMOptions()
    w, y = _univariate(data)
    nu = sample_joint_moments(data, 2 * K_SUPPORTED)
    S = estimate_sigma_K(data)
    factor = _weight_factor(S, opts.ridge)
    mom = _Moments(nu, w.mean(), y.mean(), w.size)
    weight = linalg.cho_solve(factor, np.eye(len(MOMENT_ORDER)))
    free = np.ones(7, dtype=bool)
    if not opts.intercept:
        free[1] = False

    # variances below 1e-12 of the sample scale are treated as zero so that
    # boundary solutions sit on a flat plateau the simplex can contract on
    log_floor = np.log(1e-12 * np.array([nu[(2, 0)], nu[(2, 0)], max(nu[(0, 2)], 1e-300)]))

    def G(z_free, base):
        z = base.copy()
        z[free] = z_free
        th = _from_free(z, log_floor)
        A = mom.gaps(*th)
        val = float(A @ weight @ A)
        return val if np.isfinite(val) else np.inf

    if nu[(2, 0)] <= 0:
        raise DomainError("W has zero variance")
    if opts.intercept:
        b1_naive = nu[(1, 1)] / nu[(2, 0)]
    else:
        b1_naive = float(w @ y / (w @ w))
    starts = [_start_from_slope(nu, w.mean(), y.mean(), b1_naive, opts.intercept)]
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
    base_free = _to_free(starts[0])
    scale = opts.perturb_scale * np.maximum(np.abs(base_free), 1.0)
    # the third-moment start goes second: it is the one that finds the basin
    # when the naive start does not (skewed or multimodal X)
    if abs(nu[(3, 0)]) > 1e-12 * nu[(2, 0)] ** 1.5:
        starts.append(_start_from_slope(nu, w.mean(), y.mean(), nu[(2, 1)] / nu[(3, 0)], opts.intercept))
    for _ in range(max(0, opts.n_starts - 1)):
        z = base_free + np.where(free, scale * rng.standard_normal(7), 0.0)
        starts.append(_from_free(z))

    dim = int(free.sum())
    maxiter = opts.maxiter or 1000 * dim

    def search(z0, xatol, fatol):
        f0 = G(z0[free], z0)
        res = optimize.minimize(
            G, z0[free], args=(z0,), method="Nelder-Mead",
            options={"xatol": xatol * (1.0 + np.max(np.abs(z0))),
                     "fatol": fatol * (1.0 + (f0 if np.isfinite(f0) else 0.0)),
                     "maxiter": maxiter, "maxfev": 2 * maxiter, "adaptive": True},
        )
        z = z0.copy()
        z[free] = res.x
        return z, float(res.fun), bool(res.success), int(res.nfev)

    coarse = opts.coarse_xatol is not None
    results = []
    diags = []
    with np.errstate(over="ignore", invalid="ignore"):
        for i, th0 in enumerate(starts):
            if coarse:
                z, fval, ok, nfev = search(_to_free(th0), opts.coarse_xatol, 1e3 * opts.fatol)
            else:
                z, fval, ok, nfev = search(_to_free(th0), opts.xatol, opts.fatol)
            diags.append({"start": i, "objective": fval, "converged": ok, "nfev": nfev})
            if np.isfinite(fval):
                results.append((not ok and not coarse, fval, i, z))
            if fval <= EXACT_FIT_ATOL and (ok or coarse):
                # G >= 0, so an exact fit cannot be beaten by a later start
                if coarse:
                    z, fval, ok, nfev = search(z, opts.xatol, opts.fatol)
                    diags.append({"start": i, "stage": "refine", "objective": fval,
                                  "converged": ok, "nfev": nfev})
                if ok:
                    results = [(False, fval, i, z)]
                    coarse = False
                    break
        if not results:
            raise NumericalError("GMM objective was not finite at any start")
        results.sort(key=lambda r: (r[0], r[1], r[2]))
        failed, fval, i, z = results[0]
        if coarse:
            z, fval, ok, nfev = search(z, opts.xatol, opts.fatol)
            failed = not ok
            diags.append({"start": i, "stage": "refine", "objective": fval, "converged": ok, "nfev": nfev})
    theta = ThetaK.from_array(_from_free(z, log_floor))
    return FitResult(
        CoefficientVector(theta.beta0, [theta.beta1]),
        fval,
        "gmm",
        starts_tried=len(starts),
        converged=not failed,
        diagnostics={"best_start": i, "starts": diags},
        extras={"theta": theta.as_dict()},
    )
