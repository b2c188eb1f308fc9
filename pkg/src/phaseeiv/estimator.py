"""Phase-function minimum-distance estimation and baseline estimators.

The production objective is the O(n)-per-frequency form

    D(b) = int_0^{t*} [S_y(t) C_v(t) - C_y(t) S_v(t)]^2 K(t/t*) dt,

with ``C_y, S_y`` the cosine/sine sums of the outcome and ``C_v, S_v`` those
of the fitted linear predictor ``v_j = b0 + W_j'b1 + Z_j'b2``.  The bracket
equals the double sine sum ``sum_ij sin(t (y_i - v_j))``.

Derivatives.  Write ``x_j = (1, W_j, Z_j)`` for the design row and
``a_ij = y_i - v_j``.  Then ``ds/db_p = -t sum_ij x_jp cos(t a_ij)`` and
``d2s/db_p db_q = -t^2 sum_ij x_jp x_jq sin(t a_ij)``, so

    dD/db_p      = -2 int t K s c_p dt
    d2D/db_p db_q =  2 int t^2 K (c_p c_q - s s_pq) dt

where ``c_p = sum_ij x_jp cos(t a_ij) = C_y Cx_p + S_y Sx_p`` and
``s_pq = sum_ij x_jp x_jq sin(t a_ij) = S_y Cxx_pq - C_y Sxx_pq``, with
``Cx_p = sum_j x_jp cos(t v_j)`` and so on.  The univariate case (p = 0, 1)
reproduces the textbook pair; the multivariate components follow by
replacing ``W_j`` with the matching design coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .ecf import (
    DEFAULT_NODES,
    MODULUS_FLOOR,
    WeightKernel,
    WeightSpec,
    empirical_phase,
    empirical_phase_lincomb,
    phi_K,
    phi_K_closed,
    select_t_star,
)
from .errors import ConvergenceError, DomainError, NumericalError, ResourceError

__all__ = [
    "RegressionData",
    "CoefficientVector",
    "FitOptions",
    "FitResult",
    "PhaseObjective",
    "distance_simplified",
    "distance_quadsum",
    "distance_direct",
    "gradient",
    "hessian",
    "fit_phase",
    "fit_naive",
    "fit_disattenuated",
    "variance_components",
    "sample_odd_cumulants",
    "QUADSUM_CAP",
    "QUADSUM_CONSTANT",
]

QUADSUM_CAP = 400
#: distance_quadsum == QUADSUM_CONSTANT * distance_simplified
QUADSUM_CONSTANT = 4.0
#: objective / int K below which a start counts as an exact fit
EXACT_FIT_RTOL = 1e-24


def _matrix(a, n=None, name="array"):
    if a is None:
        return np.zeros((0 if n is None else n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DomainError(f"{name} must be one- or two-dimensional")
    return a


@dataclass(frozen=True)
class RegressionData:
    """Observed sample: error-prone ``W`` (n x p1), error-free ``Z`` (n x p2), outcome ``y``."""

    W: np.ndarray
    y: np.ndarray
    Z: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        W = _matrix(self.W, name="W")
        Z = _matrix(self.Z, n=y.size, name="Z")
        if Z.shape[0] == 0 and Z.shape[1] == 0:
            Z = np.zeros((y.size, 0))
        if not (W.shape[0] == y.size == Z.shape[0]):
            raise DomainError("W, Z and y must have equal row counts")
        if y.size < 3:
            raise DomainError("need at least 3 observations")
        if W.shape[1] + Z.shape[1] == 0:
            raise DomainError("need at least one covariate")
        for name, arr in (("W", W), ("Z", Z), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite values")
            arr.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p1(self) -> int:
        return self.W.shape[1]

    @property
    def p2(self) -> int:
        return self.Z.shape[1]

    @property
    def n_coef(self) -> int:
        return 1 + self.p1 + self.p2

    @property
    def covariates(self) -> np.ndarray:
        return np.hstack([self.W, self.Z])

    @property
    def design(self) -> np.ndarray:
        return np.hstack([np.ones((self.n, 1)), self.W, self.Z])

    def take(self, idx) -> "RegressionData":
        """Rows ``idx`` (with repetition) as a new dataset; n >= 3 is not re-checked."""
        idx = np.asarray(idx, dtype=np.intp)
        new = object.__new__(RegressionData)
        for name in ("W", "Z", "y"):
            arr = getattr(self, name)[idx]
            arr.setflags(write=False)
            object.__setattr__(new, name, arr)
        return new

    def with_y(self, y) -> "RegressionData":
        return RegressionData(self.W, y, self.Z)


@dataclass(frozen=True)
class CoefficientVector:
    """Intercept ``b0``, error-prone slopes ``b1`` and error-free slopes ``b2``."""

    b0: float
    b1: np.ndarray
    b2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "b0", float(self.b0))
        object.__setattr__(self, "b1", np.atleast_1d(np.asarray(self.b1, dtype=float)))
        object.__setattr__(self, "b2", np.atleast_1d(np.asarray(self.b2, dtype=float)))
        if not np.all(np.isfinite(self.to_array())):
            raise DomainError("coefficients must be finite")

    def to_array(self) -> np.ndarray:
        return np.concatenate([[self.b0], self.b1, self.b2])

    @classmethod
    def from_array(cls, theta, p1: int) -> "CoefficientVector":
        theta = np.asarray(theta, dtype=float).ravel()
        return cls(theta[0], theta[1:1 + p1], theta[1 + p1:])

    def as_dict(self) -> dict:
        return {"b0": self.b0, "b1": self.b1.tolist(), "b2": self.b2.tolist()}


def _theta(coef, data: RegressionData) -> np.ndarray:
    if isinstance(coef, CoefficientVector):
        theta = coef.to_array()
    else:
        theta = np.asarray(coef, dtype=float).ravel()
    if theta.size != data.n_coef:
        raise DomainError(f"expected {data.n_coef} coefficients, got {theta.size}")
    return theta


@dataclass(frozen=True)
class FitOptions:
    """Settings for :func:`fit_phase`.

    ``n_starts`` counts the naive start plus ``n_starts - 1`` random
    perturbations of relative scale ``perturb_scale``.  With ``prescan`` on, the
    best point of a coarse profile scan is tried as one more start.

    When ``coarse_xatol`` is set, every start is first run with that looser
    simplex tolerance and only the winner is refined to ``xatol``/``fatol``.
    Set it to ``None`` to run every start at full tolerance.
    """

    kernel: WeightKernel | str = WeightKernel.K1
    tstar_step: float | None = None
    tstar_max: float | None = None
    t_star: float | None = None
    n_nodes: int = DEFAULT_NODES
    n_starts: int = 9
    perturb_scale: float = 0.5
    prescan: bool = True
    xatol: float = 1e-8
    fatol: float = 1e-12
    grad_tol: float = 1e-6
    maxiter: int | None = None
    coarse_xatol: float | None = 1e-4
    seed: int = 0
    intercept: bool = True
    local_method: str = "nelder-mead"
    start: np.ndarray | None = None

    def weights_for(self, y) -> WeightSpec:
        if self.t_star is not None:
            return WeightSpec(self.kernel, float(self.t_star), self.n_nodes)
        return WeightSpec(WeightKernel.coerce(self.kernel),
                          select_t_star(y, self.tstar_step, self.tstar_max), self.n_nodes)


@dataclass(frozen=True)
class FitResult:
    coefficients: CoefficientVector
    objective: float
    method: str
    starts_tried: int = 0
    converged: bool = True
    t_star: float | None = None
    diagnostics: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.coefficients.to_array()

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "coefficients": self.coefficients.as_dict(),
            "objective": float(self.objective),
            "starts_tried": int(self.starts_tried),
            "converged": bool(self.converged),
            "t_star": None if self.t_star is None else float(self.t_star),
        }
        if self.extras:
            out["extras"] = _jsonable(self.extras)
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class PhaseObjective:
    """Precomputed state for evaluating D and its derivatives on one dataset.

    Outcome sums are computed once; each evaluation costs O(n * n_nodes).
    ``scale`` (``n^-4``) is applied by the ``*_scaled`` methods used inside the
    optimizer so that tolerances are sample-size free.
    """

    def __init__(self, data: RegressionData, weights: WeightSpec):
        self.data = data
        self.weights = weights
        grid = weights.grid
        self.t = grid.nodes
        self.wk = grid.weights * weights.kernel_values
        arg = np.multiply.outer(self.t, data.y)
        self.Cy = np.cos(arg).sum(axis=1)
        self.Sy = np.sin(arg).sum(axis=1)
        self.X = data.design
        self.scale = float(data.n) ** -4
        self._cache_key = None

    def _trig(self, theta):
        key = theta.tobytes()
        if key != self._cache_key:
            v = self.X @ theta
            arg = np.multiply.outer(self.t, v)
            self._cos, self._sin = np.cos(arg), np.sin(arg)
            self._cache_key = key
        return self._cos, self._sin

    def residual_sine(self, theta) -> np.ndarray:
        """``s(t) = sum_ij sin(t (y_i - v_j))`` at the quadrature nodes."""
        cv, sv = self._trig(theta)
        return self.Sy * cv.sum(axis=1) - self.Cy * sv.sum(axis=1)

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        s = self.residual_sine(theta)
        vals = s * s
        if not np.all(np.isfinite(vals)):
            k = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise NumericalError(f"integrand is not finite at t={self.t[k]:.6g}", node=float(self.t[k]))
        return float(self.wk @ vals)

    def _first(self, theta):
        cv, sv = self._trig(theta)
        Cx = cv @ self.X
        Sx = sv @ self.X
        s = self.Sy * Cx[:, 0] - self.Cy * Sx[:, 0]
        c = self.Cy[:, None] * Cx + self.Sy[:, None] * Sx
        return cv, sv, s, c

    def gradient(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        _, _, s, c = self._first(theta)
        return -2.0 * ((self.wk * self.t * s) @ c)

    def hessian(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        cv, sv, s, c = self._first(theta)
        P = self.X.shape[1]
        w2 = self.wk * self.t**2
        H = np.empty((P, P))
        for p in range(P):
            for q in range(p, P):
                xx = self.X[:, p] * self.X[:, q]
                s_pq = self.Sy * (cv @ xx) - self.Cy * (sv @ xx)
                H[p, q] = H[q, p] = 2.0 * (w2 @ (c[:, p] * c[:, q] - s * s_pq))
        return H

    # scaled versions for the optimizer
    def value_scaled(self, theta):
        return self.value(theta) * self.scale

    def gradient_scaled(self, theta):
        return self.gradient(theta) * self.scale

    def hessian_scaled(self, theta):
        return self.hessian(theta) * self.scale


def _objective(data: RegressionData, weights: WeightSpec) -> PhaseObjective:
    if not isinstance(data, RegressionData):
        raise DomainError("data must be a RegressionData")
    if not isinstance(weights, WeightSpec):
        raise DomainError("weights must be a WeightSpec")
    return PhaseObjective(data, weights)


def distance_simplified(data: RegressionData, coef, weights: WeightSpec) -> float:
    """Phase distance D at ``coef`` in its O(n)-per-node computational form."""
    return _objective(data, weights).value(_theta(coef, data))


def gradient(data: RegressionData, coef, weights: WeightSpec) -> np.ndarray:
    """Analytic gradient of :func:`distance_simplified` w.r.t. ``(b0, b1, b2)``."""
    return _objective(data, weights).gradient(_theta(coef, data))


def hessian(data: RegressionData, coef, weights: WeightSpec) -> np.ndarray:
    """Analytic Hessian of :func:`distance_simplified` (double-sum form)."""
    return _objective(data, weights).hessian(_theta(coef, data))


def distance_quadsum(data: RegressionData, coef, weights: WeightSpec, *,
                     cap: int = QUADSUM_CAP, phi: str = "closed", chunk: int = 2_000_000) -> float:
    """Integral-free quadruple-sum form for univariate data.

    Returns ``sum_{i,j,k,l} [phi(y_i - y_k - b1 (W_j - W_l))
    - phi(y_i + y_k - 2 b0 - b1 (W_j + W_l))]`` with ``phi = phi_{K,t*}``.
    Product-to-sum on the squared double sine sum and
    ``int_0^{t*} cos(a t) K(t/t*) dt = phi(a) / 2`` give

        distance_quadsum = 4 * distance_simplified.

    Parameters
    ----------
    phi : {"closed", "quadrature"}
        How ``phi_{K,t*}`` is evaluated.  The closed form keeps this path free
        of any frequency-domain quadrature.

    Notes
    -----
    Cost is O(n^4); ``n > cap`` raises :class:`ResourceError`.
    """
    if data.p1 != 1 or data.p2 != 0:
        raise DomainError("distance_quadsum is defined for one error-prone covariate only")
    if data.n > cap:
        raise ResourceError(f"n={data.n} exceeds quadruple-sum cap {cap}")
    b0, b1 = _theta(coef, data)
    y = data.y
    w = data.W[:, 0]
    h = weights.t_star
    if phi == "closed":
        ph = lambda a: phi_K_closed(weights.kernel, h, a)  # noqa: E731
    elif phi == "quadrature":
        ph = lambda a: phi_K(weights.kernel, h, a, n_nodes=weights.n_nodes)  # noqa: E731
    else:
        raise DomainError("phi must be 'closed' or 'quadrature'")
    # phi is even, so swapping i and k leaves the first term's inner sum over
    # (j, l) unchanged, and the second term is symmetric in both pairs; sum
    # over i < k (twice) plus the diagonal
    iu, ku = np.triu_indices(y.size, 1)
    jd, ld = np.triu_indices(y.size)
    dy = y[iu] - y[ku]
    sy = y[jd] + y[ld] - 2.0 * b0
    m_sy = np.where(jd == ld, 1.0, 2.0)
    dw = b1 * (w[:, None] - w[None, :]).ravel()
    sw = b1 * (w[jd] + w[ld])
    total = y.size * ph(dw).sum()
    rows = max(1, chunk // dw.size)
    for start in range(0, dy.size, rows):
        total += 2.0 * ph(dy[start:start + rows, None] - dw[None, :]).sum()
    rows = max(1, chunk // sw.size)
    for start in range(0, sy.size, rows):
        sl = slice(start, start + rows)
        total -= m_sy[sl] @ (ph(sy[sl, None] - sw[None, :]) @ m_sy)
    return float(total)


def distance_direct(data: RegressionData, coef, weights: WeightSpec, *,
                    floor: float = MODULUS_FLOOR) -> float:
    """Phase-difference integral ``int |rho_y(t) - e^{itb0} rho_v(t)|^2 K(t/t*) dt``.

    Integrates over ``[-t*, t*]`` using evenness of the integrand.  This is a
    validation path: both phases are normalised explicitly, so it fails where
    either empirical CF modulus drops below ``floor``.
    """
    theta = _theta(coef, data)
    t = weights.grid.nodes
    rho_y = empirical_phase(data.y, t, floor=floor)
    rho_v = empirical_phase_lincomb(data.W, data.Z, theta[1:1 + data.p1], theta[1 + data.p1:], t,
                                    floor=floor)
    diff = rho_y - np.exp(1j * t * theta[0]) * rho_v
    return float(2.0 * ((weights.grid.weights * weights.kernel_values) @ (np.abs(diff) ** 2)))


# ---------------------------------------------------------------------------
# fitting


def fit_naive(data: RegressionData) -> FitResult:
    """Ordinary least squares of ``y`` on ``(1, W, Z)``."""
    X = data.design
    coef, _, rank, _ = np.linalg.lstsq(X, data.y, rcond=None)
    if rank < X.shape[1]:
        raise DomainError("design matrix [1 W Z] is rank deficient")
    resid = data.y - X @ coef
    return FitResult(CoefficientVector.from_array(coef, data.p1), float(resid @ resid), "naive")


def fit_disattenuated(data: RegressionData, sigma2_U: float, sigma2_X: float) -> FitResult:
    """Attenuation-corrected OLS slope for one error-prone covariate.

    ``slope = naive_slope * (sigma2_X + sigma2_U) / sigma2_X`` and the intercept
    is re-solved as ``mean(y) - slope * mean(W)``.
    """
    if data.p1 != 1 or data.p2 != 0:
        raise DomainError("disattenuation needs exactly one error-prone covariate")
    if not sigma2_X > 0:
        raise DomainError("sigma2_X must be positive")
    if sigma2_U < 0:
        raise DomainError("sigma2_U must be non-negative")
    naive = fit_naive(data)
    slope = naive.coefficients.b1[0] * (sigma2_X + sigma2_U) / sigma2_X
    b0 = data.y.mean() - slope * data.W[:, 0].mean()
    resid = data.y - b0 - slope * data.W[:, 0]
    return FitResult(CoefficientVector(b0, [slope]), float(resid @ resid), "disattenuated",
                     extras={"sigma2_U": float(sigma2_U), "sigma2_X": float(sigma2_X)})


def variance_components(data: RegressionData, beta1_hat: float):
    """Second-moment variance decomposition given a slope estimate.

    Returns ``(sigma2_X, sigma2_U, sigma2_eps)`` with ``sigma2_X = s_WY / b1``,
    ``sigma2_U = max(0, s_W^2 - sigma2_X)`` and
    ``sigma2_eps = max(0, s_Y^2 - b1^2 sigma2_X)`` (denominator n - 1).
    """
    if data.p1 != 1 or data.p2 != 0:
        raise DomainError("variance_components needs exactly one error-prone covariate")
    if beta1_hat == 0 or not np.isfinite(beta1_hat):
        raise DomainError("beta1_hat must be finite and non-zero")
    S = np.cov(data.W[:, 0], data.y, ddof=1)
    s2x = S[0, 1] / beta1_hat
    return float(s2x), float(max(0.0, S[0, 0] - s2x)), float(max(0.0, S[1, 1] - beta1_hat**2 * s2x))


def sample_odd_cumulants(x):
    """Mean and third k-statistic ``k3 = n^2 m3 / ((n-1)(n-2))``.

    ``m3`` is the third central sample moment with denominator n.  Deviations
    are summed in mirrored sorted pairs so a symmetric sample gives 0 exactly.
    """
    x = np.sort(np.asarray(x, dtype=float).ravel())
    n = x.size
    if n < 3:
        raise DomainError("need at least 3 values")
    k1 = float(x.mean())
    d3 = (x - k1) ** 3
    h = n // 2
    s3 = (d3[:h] + d3[::-1][:h]).sum() + (d3[h] if n % 2 else 0.0)
    m3 = s3 / n
    return k1, float(n * n * m3 / ((n - 1) * (n - 2)))


def _iqr(v):
    q75, q25 = np.percentile(v, [75, 25])
    return q75 - q25


def _prescan(obj: PhaseObjective, free: np.ndarray, theta_fixed: np.ndarray, rng,
             n_slope: int = 57, n_intercept: int = 201, n_random: int = 128):
    """Coarse profile scan over slopes with the intercept profiled out.

    For fixed slopes the intercept only rotates the predictor ECF, so
    ``s(t) = Im(conj(phi_y) phi_v e^{i t b0})`` and D over a whole grid of
    intercepts costs O(n_intercept * n_nodes) after one O(n * n_nodes) pass.
    """
    data = obj.data
    covs = data.covariates
    y = data.y
    iqr_y = _iqr(y)
    slope_idx = np.arange(1, data.n_coef)
    ranges = []
    for j in range(covs.shape[1]):
        iq = _iqr(covs[:, j])
        ranges.append(2.0 * iqr_y / iq if iq > 0 else 1.0)
    ranges = np.asarray(ranges)
    k = slope_idx.size
    if k == 1:
        cands = np.linspace(-ranges[0], ranges[0], n_slope)[:, None]
    elif k == 2:
        g = [np.linspace(-r, r, 15) for r in ranges]
        cands = np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        cands = rng.uniform(-1.0, 1.0, size=(n_random, k)) * ranges
    phi_y = obj.Cy + 1j * obj.Sy
    t = obj.t
    with_b0 = free[0]
    best_val, best_theta = np.inf, None
    for slopes in cands:
        theta = theta_fixed.copy()
        theta[slope_idx] = np.where(free[slope_idx], slopes, theta_fixed[slope_idx])
        v = covs @ theta[slope_idx]
        A = np.conj(phi_y) * np.exp(1j * np.multiply.outer(t, v)).sum(axis=1)
        if with_b0:
            centre = np.median(y) - np.median(v)
            b0 = centre + np.linspace(-2.0, 2.0, n_intercept) * max(iqr_y, 1e-12)
        else:
            b0 = np.array([theta[0]])
        E = (np.exp(1j * np.multiply.outer(b0, t)) * A).imag
        vals = (E * E) @ obj.wk
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = vals[i]
            theta[0] = b0[i]
            best_theta = theta
    return best_theta


def _local_search(obj: PhaseObjective, start: np.ndarray, free: np.ndarray, opts: FitOptions,
                  coarse: bool = False):
    theta_full = start.copy()
    idx = np.flatnonzero(free)

    def expand(z):
        th = theta_full.copy()
        th[idx] = z
        return th

    z0 = start[idx]
    dim = idx.size
    maxiter = opts.maxiter or 1000 * dim
    if opts.local_method == "nelder-mead":
        f0 = obj.value_scaled(start)
        res = optimize.minimize(
            lambda z: obj.value_scaled(expand(z)), z0, method="Nelder-Mead",
            options={
                "xatol": (opts.coarse_xatol if coarse else opts.xatol) * (1.0 + np.max(np.abs(z0))),
                "fatol": (1e3 if coarse else 1.0) * opts.fatol * (1.0 + f0),
                "maxiter": maxiter,
                "maxfev": 2 * maxiter,
                "adaptive": dim > 2,
            },
        )
    elif opts.local_method == "trust-exact":
        res = optimize.minimize(
            lambda z: obj.value_scaled(expand(z)), z0, method="trust-exact",
            jac=lambda z: obj.gradient_scaled(expand(z))[idx],
            hess=lambda z: obj.hessian_scaled(expand(z))[np.ix_(idx, idx)],
            options={"gtol": opts.grad_tol * 1e-4, "maxiter": maxiter},
        )
    else:
        raise DomainError(f"unknown local_method {opts.local_method!r}")
    theta = expand(res.x)
    fval = obj.value_scaled(theta)
    gnorm = float(np.max(np.abs(obj.gradient_scaled(theta)[idx])))
    ok = bool(res.success) and np.isfinite(fval) and gnorm <= opts.grad_tol
    return theta, fval, ok, {"nfev": int(res.nfev), "nit": int(res.get("nit", 0)),
                             "message": str(res.message), "grad_norm": gnorm}


def fit_phase(data: RegressionData, options: FitOptions | None = None) -> FitResult:
    """Minimise the phase distance by multi-start local search.

    Starts are the naive OLS estimate (or ``options.start``), then
    ``n_starts - 1`` Gaussian perturbations with per-coordinate scale
    ``perturb_scale * max(|b_j|, 1)``, then the profile pre-scan minimiser.  The
    lowest objective wins; near-ties (``1e-12`` relative) go to the earlier
    start.  In coarse mode the ranking uses the coarse objectives and the
    winner is refined; if refinement fails the runner-up is tried.

    The objective is bounded below by 0 and above by ``int K``.  A start whose
    objective falls under ``EXACT_FIT_RTOL`` times that bound is an exact fit
    and ends the search early; the pre-scan is only run when needed.

    Raises
    ------
    TStarSelectionError
        When ``t*`` cannot be selected from ``data.y``.
    ConvergenceError
        When no start converges.
    """
    opts = options or FitOptions()
    weights = opts.weights_for(data.y)
    obj = PhaseObjective(data, weights)
    free = np.ones(data.n_coef, dtype=bool)
    if not opts.intercept:
        free[0] = False
    if opts.start is not None:
        base = np.asarray(opts.start, dtype=float).ravel().copy()
        if base.size != data.n_coef:
            raise DomainError("start has the wrong number of coefficients")
    else:
        X = data.design if opts.intercept else data.design[:, 1:]
        base_free, *_ = np.linalg.lstsq(X, data.y, rcond=None)
        base = base_free if opts.intercept else np.concatenate([[0.0], base_free])
    if not opts.intercept:
        base[0] = 0.0
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
    starts = [base]
    scale = opts.perturb_scale * np.maximum(np.abs(base), 1.0)
    for _ in range(max(0, opts.n_starts - 1)):
        starts.append(np.where(free, base + scale * rng.standard_normal(base.size), base))

    coarse = opts.coarse_xatol is not None and opts.local_method == "nelder-mead"
    exact = EXACT_FIT_RTOL * float(np.sum(weights.grid.weights * weights.kernel_values))
    results = []
    diags = []
    best = None
    scanned = not opts.prescan
    i = 0
    while best is None:
        if i == len(starts):
            if scanned:
                break
            scanned = True
            ps = _prescan(obj, free, base, rng)
            if ps is None:
                break
            starts.append(ps)
        s0 = starts[i]
        try:
            theta, fval, ok, info = _local_search(obj, s0, free, opts, coarse=coarse)
        except (NumericalError, FloatingPointError) as exc:
            diags.append({"start": i, "error": str(exc), "converged": False})
            i += 1
            continue
        info.update(start=i, objective_scaled=fval, converged=ok)
        diags.append(info)
        if ok or coarse:
            results.append((fval, i, theta))
        if fval <= exact and (ok or coarse):
            # no other start can do better than an exact fit
            if coarse:
                try:
                    theta, fval, ok, info = _local_search(obj, theta, free, opts)
                    diags.append(dict(info, start=i, stage="refine", objective_scaled=fval, converged=ok))
                except (NumericalError, FloatingPointError):
                    ok = False
            if ok:
                best = (theta, fval, i)
        i += 1
    if best is not None:
        return _phase_result(data, obj, weights, best, len(starts), diags)
    # lowest objective first; near-ties keep start order
    ranked = []
    if results:
        fmin = min(r[0] for r in results)
        tol = 1e-12 * abs(fmin)
        ranked = sorted(results, key=lambda r: (0.0, r[1]) if r[0] - fmin <= tol else (r[0], r[1]))
    for fval, i, theta in ranked:
        if coarse:
            try:
                theta, fval, ok, info = _local_search(obj, theta, free, opts)
            except (NumericalError, FloatingPointError):
                continue
            diags.append(dict(info, start=i, stage="refine", objective_scaled=fval, converged=ok))
            if not ok:
                continue
        best = (theta, fval, i)
        break
    if best is None:
        raise ConvergenceError(f"none of {len(starts)} starts converged", diagnostics=diags)
    return _phase_result(data, obj, weights, best, len(starts), diags)


def _phase_result(data, obj, weights, best, n_starts, diags) -> FitResult:
    theta, fval, i = best
    return FitResult(
        CoefficientVector.from_array(theta, data.p1),
        fval / obj.scale,
        "phase",
        starts_tried=n_starts,
        converged=True,
        t_star=weights.t_star,
        diagnostics={"best_start": i, "starts": diags, "kernel": weights.kernel.value,
                     "n_nodes": weights.n_nodes},
    )


def refit_options(fitted: FitResult, base: FitOptions | None = None) -> FitOptions:
    """Options for a warm-started single local refit near ``fitted``.

    Used by bootstrap loops: one trust-region Newton search from the original
    estimate using the analytic gradient and Hessian.
    """
    base = base or FitOptions()
    return replace(base, start=fitted.theta, n_starts=1, prescan=False, local_method="trust-exact")

