"""Empirical characteristic and phase functions, weight kernels and quadrature.

Everything here is a pure function of its inputs.  Frequencies may be given
as scalars or arrays; scalar input gives a Python ``complex``/``float`` back,
array input gives an ndarray of matching shape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateFrequencyError, DomainError, NumericalError, TStarSelectionError

__all__ = [
    "MODULUS_FLOOR",
    "WeightKernel",
    "FrequencyGrid",
    "WeightSpec",
    "ecf",
    "empirical_phase",
    "empirical_phase_lincomb",
    "select_t_star",
    "default_tstar_scan",
    "kernel_weight",
    "integrate",
    "phi_K",
    "phi_K_closed",
]

MODULUS_FLOOR = 1e-8
DEFAULT_NODES = 128
DEFAULT_SCAN_POINTS = 2048
DEFAULT_TMAX_IQR = 50.0


class WeightKernel(str, enum.Enum):
    """Polynomial kernels supported on [-1, 1].

    ``K1 = (1-|u|)^2``, ``K2 = 1-|u|``, ``K3 = 1-u^2``.
    """

    K1 = "k1"
    K2 = "k2"
    K3 = "k3"

    @classmethod
    def coerce(cls, kernel) -> "WeightKernel":
        if isinstance(kernel, cls):
            return kernel
        try:
            return cls(str(kernel).lower())
        except ValueError:
            raise DomainError(f"unknown kernel {kernel!r}; expected one of k1, k2, k3") from None

    def __call__(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        inside = u < 1.0
        if self is WeightKernel.K1:
            val = (1.0 - u) ** 2
        elif self is WeightKernel.K2:
            val = 1.0 - u
        else:
            val = 1.0 - u * u
        out = np.where(inside, val, 0.0)
        return float(out) if out.ndim == 0 else out


def _as_sample(sample) -> np.ndarray:
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("sample must be non-empty")
    if not np.all(np.isfinite(x)):
        raise DomainError("sample contains non-finite values")
    return x


def _sums(x_sorted: np.ndarray, t: np.ndarray):
    """Cosine and sine sums of a sorted sample at each frequency in ``t``.

    Sine terms are added in mirrored pairs (smallest with largest), so a
    sample that is symmetric about zero gives an imaginary part of exactly 0.
    """
    arg = np.multiply.outer(t, x_sorted)
    c = np.cos(arg).sum(axis=-1)
    s_all = np.sin(arg)
    n = x_sorted.size
    h = n // 2
    paired = s_all[..., :h] + s_all[..., ::-1][..., :h]
    s = paired.sum(axis=-1)
    if n % 2:
        s = s + s_all[..., h]
    return c, s


def ecf(sample, t):
    """Empirical characteristic function ``n^-1 sum exp(i t x_j)``.

    Parameters
    ----------
    sample : array_like
        Finite, non-empty sample.
    t : float or array_like
        Frequency or frequencies.

    Returns
    -------
    complex or ndarray of complex
    """
    x = np.sort(_as_sample(sample))
    tt = np.asarray(t, dtype=float)
    c, s = _sums(x, tt)
    out = (c + 1j * s) / x.size
    return complex(out) if out.ndim == 0 else out


def _normalise(phi, t, floor):
    mod = np.abs(phi)
    bad = mod <= floor
    if np.any(bad):
        tt = np.broadcast_to(np.asarray(t, dtype=float), np.shape(phi))
        idx = np.flatnonzero(np.atleast_1d(bad))[0]
        t_bad = float(np.atleast_1d(tt)[idx])
        m_bad = float(np.atleast_1d(mod)[idx])
        raise DegenerateFrequencyError(
            f"ECF modulus {m_bad:.3g} below floor {floor:g} at t={t_bad:.6g}",
            t=t_bad,
            modulus=m_bad,
        )
    return phi / mod


def empirical_phase(sample, t, *, floor: float = MODULUS_FLOOR):
    """Empirical phase function ``ecf / |ecf|`` (unit modulus).

    Raises
    ------
    DegenerateFrequencyError
        If ``|ecf(sample, t)| <= floor`` at any requested frequency.
    """
    phi = np.asarray(ecf(sample, t))
    out = _normalise(phi, t, floor)
    return complex(out) if out.ndim == 0 else out


def empirical_phase_lincomb(W, Z, b1, b2, t, *, floor: float = MODULUS_FLOOR):
    """Empirical phase of the derived sample ``W_j' b1 + Z_j' b2``.

    The denominator is computed from the double sum
    ``sum_j sum_k exp(i t (V_j - V_k))`` rather than from ``|sum_j exp(i t V_j)|``.
    The two agree mathematically; the double sum is kept as a literal
    evaluation path for cross-checking (cost O(n^2) per frequency).
    """
    W = np.asarray(W, dtype=float)
    Z = np.asarray(Z, dtype=float) if Z is not None else None
    if W.ndim == 1:
        W = W[:, None]
    n = W.shape[0]
    if Z is None or Z.size == 0:
        Z = np.zeros((n, 0))
    elif Z.ndim == 1:
        Z = Z[:, None]
    b1 = np.atleast_1d(np.asarray(b1, dtype=float))
    b2 = np.atleast_1d(np.asarray(b2, dtype=float)) if b2 is not None else np.zeros(0)
    if Z.shape[0] != n:
        raise DomainError("W and Z must have the same number of rows")
    if W.shape[1] != b1.size or Z.shape[1] != b2.size:
        raise DomainError("coefficient lengths do not match covariate columns")
    if W.shape[1] + Z.shape[1] == 0:
        raise DomainError("at least one covariate column is required")
    v = W @ b1 + (Z @ b2 if Z.shape[1] else 0.0)
    tt = np.asarray(t, dtype=float)
    num = np.exp(1j * np.multiply.outer(tt, v)).sum(axis=-1)
    diff = v[:, None] - v[None, :]
    flat_t = np.atleast_1d(tt).ravel()
    den2 = np.empty(flat_t.size)
    for k, tk in enumerate(flat_t):
        # imaginary part cancels pairwise (antisymmetric differences)
        den2[k] = np.cos(tk * diff).sum()
    den = np.sqrt(np.clip(den2, 0.0, None)).reshape(np.shape(tt))
    if np.any(den <= floor * n):
        k = int(np.flatnonzero(np.atleast_1d(den <= floor * n))[0])
        raise DegenerateFrequencyError(
            f"phase denominator vanishes at t={flat_t[k]:.6g}",
            t=float(flat_t[k]),
            modulus=float(np.atleast_1d(den)[k] / n),
        )
    out = num / den
    return complex(out) if np.ndim(out) == 0 else out


def default_tstar_scan(y) -> tuple[float, float]:
    """Default ``(step, t_max)``: ``t_max = 50 / IQR(y)`` split into 2048 steps."""
    y = _as_sample(y)
    q75, q25 = np.percentile(y, [75, 25])
    iqr = q75 - q25
    if not iqr > 0:
        raise TStarSelectionError(
            "outcome has zero interquartile range; its ECF modulus does not decay",
            t_max=float("inf"),
            min_modulus=1.0,
        )
    t_max = DEFAULT_TMAX_IQR / iqr
    return t_max / DEFAULT_SCAN_POINTS, t_max


def select_t_star(y, step: float | None = None, t_max: float | None = None,
                  *, threshold: float | None = None, chunk: int = 64) -> float:
    """Smallest grid frequency ``k * step`` with ``|ecf(y, t)| <= n^(-1/4)``.

    Parameters
    ----------
    y : array_like
        Outcome sample.
    step, t_max : float, optional
        Scan mesh; both default to :func:`default_tstar_scan`.
    threshold : float, optional
        Override of the ``n^(-1/4)`` threshold.

    Raises
    ------
    TStarSelectionError
        If no grid point up to ``t_max`` satisfies the condition.
    """
    y = np.sort(_as_sample(y))
    n = y.size
    if step is None or t_max is None:
        d_step, d_tmax = default_tstar_scan(y)
        step = d_step if step is None else step
        t_max = d_tmax if t_max is None else t_max
    if not step > 0 or not t_max > step:
        raise DomainError("need step > 0 and t_max > step")
    thr = n ** -0.25 if threshold is None else float(threshold)
    # tolerance guards the n = 1 boundary where |ecf| == 1 == threshold
    thr_eff = thr + 1e-12
    k_max = int(np.floor(t_max / step * (1 + 1e-12)))
    min_mod = np.inf
    for k0 in range(1, k_max + 1, chunk):
        ks = np.arange(k0, min(k0 + chunk, k_max + 1))
        c, s = _sums(y, ks * step)
        mod = np.hypot(c, s) / n
        min_mod = min(min_mod, float(mod.min()))
        hit = np.flatnonzero(mod <= thr_eff)
        if hit.size:
            return float(ks[hit[0]] * step)
    raise TStarSelectionError(
        f"|ecf(y, t)| stayed above {thr:.4g} on (0, {t_max:.6g}]; min modulus {min_mod:.4g}",
        t_max=float(t_max),
        min_modulus=min_mod,
    )


def kernel_weight(kernel, t, t_star: float):
    """Scaled kernel ``K(t / t_star)``; zero for ``|t| >= t_star``."""
    if not t_star > 0:
        raise DomainError("t_star must be positive")
    return WeightKernel.coerce(kernel)(np.asarray(t, dtype=float) / t_star)


@dataclass(frozen=True)
class FrequencyGrid:
    """Fixed quadrature rule on ``[0, t_star]``."""

    t_star: float
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if not self.t_star > 0:
            raise DomainError("t_star must be positive")
        if self.nodes.shape != self.weights.shape:
            raise DomainError("nodes and weights differ in length")
        if self.nodes.size > 1 and not np.all(np.diff(self.nodes) > 0):
            raise DomainError("nodes must be strictly increasing")

    @classmethod
    def gauss_legendre(cls, t_star: float, n_nodes: int = DEFAULT_NODES) -> "FrequencyGrid":
        x, w = np.polynomial.legendre.leggauss(int(n_nodes))
        half = 0.5 * float(t_star)
        return cls(float(t_star), half * (x + 1.0), half * w)

    def __len__(self):
        return self.nodes.size


def integrate(grid: FrequencyGrid, f) -> float:
    """Fixed-node quadrature of ``f`` over ``[0, grid.t_star]``.

    ``f`` is called once with the full node vector and must return an array of
    the same length (a scalar is broadcast).

    Raises
    ------
    NumericalError
        If ``f`` is non-finite at any node; the first offending node is reported.
    """
    vals = np.broadcast_to(np.asarray(f(grid.nodes), dtype=float), grid.nodes.shape)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        node = float(grid.nodes[np.flatnonzero(bad)[0]])
        raise NumericalError(f"integrand is not finite at t={node:.6g}", node=node)
    return float(grid.weights @ vals)


@dataclass(frozen=True)
class WeightSpec:
    """Kernel family, truncation frequency and quadrature size."""

    kernel: WeightKernel
    t_star: float
    n_nodes: int = DEFAULT_NODES

    def __post_init__(self):
        object.__setattr__(self, "kernel", WeightKernel.coerce(self.kernel))
        if not (np.isfinite(self.t_star) and self.t_star > 0):
            raise DomainError("t_star must be a positive finite number")
        if int(self.n_nodes) < 2:
            raise DomainError("need at least two quadrature nodes")

    @cached_property
    def grid(self) -> FrequencyGrid:
        return FrequencyGrid.gauss_legendre(self.t_star, self.n_nodes)

    @cached_property
    def kernel_values(self) -> np.ndarray:
        return kernel_weight(self.kernel, self.grid.nodes, self.t_star)

    @classmethod
    def from_outcome(cls, y, kernel="k1", *, step=None, t_max=None,
                     n_nodes: int = DEFAULT_NODES) -> "WeightSpec":
        """Select ``t_star`` from the outcome sample and build the weight specification."""
        return cls(WeightKernel.coerce(kernel), select_t_star(y, step, t_max), n_nodes)


_UNIT_GRID = {}


def _unit_rule(n_nodes: int):
    rule = _UNIT_GRID.get(n_nodes)
    if rule is None:
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        rule = _UNIT_GRID[n_nodes] = (0.5 * (x + 1.0), 0.5 * w)
    return rule


def phi_K(kernel, h: float, alpha, *, n_nodes: int = DEFAULT_NODES):
    """``int_{-h}^{h} cos(alpha t) K(t/h) dt`` by Gauss-Legendre quadrature.

    Uses evenness of the kernel: ``2 h int_0^1 cos(alpha h u) K(u) du``.
    """
    if not h > 0:
        raise DomainError("h must be positive")
    k = WeightKernel.coerce(kernel)
    u, w = _unit_rule(int(n_nodes))
    a = np.asarray(alpha, dtype=float)
    vals = np.cos(np.multiply.outer(a * h, u)) @ (w * k(u))
    out = 2.0 * h * vals
    return float(out) if out.ndim == 0 else out


def phi_K_closed(kernel, h: float, alpha):
    """Closed form of :func:`phi_K` for the three polynomial kernels.

    With ``a = alpha h``::

        K1: 4h (a - sin a) / a^3
        K2: 2h (1 - cos a) / a^2
        K3: 4h (sin a - a cos a) / a^3

    A short Taylor series replaces the ratios for ``|a| < 1e-2``.
    """
    if not h > 0:
        raise DomainError("h must be positive")
    k = WeightKernel.coerce(kernel)
    a = np.abs(np.asarray(alpha, dtype=float) * h)
    out = np.empty_like(a)
    small = a < 1e-2
    big = ~small
    a2 = a[small] ** 2
    b = a[big]
    if k is WeightKernel.K1:
        out[small] = 2.0 * (1 / 6 - a2 / 120 + a2 * a2 / 5040)
        out[big] = 2.0 * (b - np.sin(b)) / (b * b * b)
    elif k is WeightKernel.K2:
        out[small] = 0.5 - a2 / 24 + a2 * a2 / 720
        out[big] = (1.0 - np.cos(b)) / (b * b)
    else:
        out[small] = 2.0 * (1 / 3 - a2 / 30 + a2 * a2 / 840)
        out[big] = 2.0 * (np.sin(b) - b * np.cos(b)) / (b * b * b)
    out *= 2.0 * h
    return float(out) if out.ndim == 0 else out
