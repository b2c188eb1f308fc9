"""Monte Carlo data generators and scenario runner.

Variates are drawn per replicate from an independent stream keyed by
``(seed, replicate_index)``:

* exponential, Cauchy and Laplace by inverse CDF of a uniform,
* normal by numpy's default Gaussian sampler,
* Student t as ``N / sqrt(chi2_df / df)``,
* half-normal as ``|N|``; the two-component mixture by a fair coin then a normal.

Error scales are set from a target standard deviation ``sigma``: normal uses
``sigma``, t(2.5) uses ``sigma / sqrt(5)``, Laplace ``sigma / sqrt(2)`` and
Cauchy ``sigma / 2`` (so its IQR equals ``sigma``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError, PhaseEIVError
from .estimator import (
    CoefficientVector,
    FitOptions,
    FitResult,
    RegressionData,
    fit_disattenuated,
    fit_naive,
    fit_phase,
)
from .gmm import GMMOptions, fit_gmm
from .inference import replicate_rng, robust_spread

__all__ = [
    "X_DISTS",
    "ERR_DISTS",
    "ScenarioConfig",
    "ScenarioReport",
    "x_variance",
    "x_mean",
    "error_sigmas",
    "calibrate_errors",
    "draw_x",
    "draw_errors",
    "generate",
    "run_scenario",
    "load_scenarios",
]

X_DISTS = ("half_normal", "exponential1", "bimodal")
ERR_DISTS = ("normal", "t_2_5", "cauchy", "laplace")
BIVARIATE_ERR_DISTS = ("normal", "laplace")
NOISE_CONVENTIONS = ("squared_signal", "linear_slope")
T_DF = 2.5

_MIX_W = 0.5
_MIX_MU = (5.0, 2.5)
_MIX_SD = (1.0, 0.6)


def x_variance(x_dist: str) -> float:
    """Population variance of the latent covariate distribution."""
    if x_dist == "half_normal":
        return 1.0 - 2.0 / math.pi
    if x_dist == "exponential1":
        return 1.0
    if x_dist == "bimodal":
        m = _MIX_W * _MIX_MU[0] + (1 - _MIX_W) * _MIX_MU[1]
        return sum(p * (s * s + (mu - m) ** 2) for p, mu, s in zip((_MIX_W, 1 - _MIX_W), _MIX_MU, _MIX_SD))
    raise DomainError(f"unknown x_dist {x_dist!r}")


def x_mean(x_dist: str) -> float:
    if x_dist == "half_normal":
        return math.sqrt(2.0 / math.pi)
    if x_dist == "exponential1":
        return 1.0
    if x_dist == "bimodal":
        return _MIX_W * _MIX_MU[0] + (1 - _MIX_W) * _MIX_MU[1]
    raise DomainError(f"unknown x_dist {x_dist!r}")


def _scale_from_sigma(err_dist: str, sigma: float) -> float:
    if err_dist == "normal":
        return sigma
    if err_dist == "t_2_5":
        return sigma / math.sqrt(T_DF / (T_DF - 2.0))
    if err_dist == "laplace":
        return sigma / math.sqrt(2.0)
    if err_dist == "cauchy":
        return sigma / 2.0
    raise DomainError(f"unknown err_dist {err_dist!r}")


def _slope(truth: CoefficientVector) -> float:
    if truth.b1.size < 1:
        raise DomainError("truth needs an error-prone slope")
    return float(truth.b1[0])


def error_sigmas(x_dist, truth: CoefficientVector, p_W, p_Y, noise_convention="squared_signal"):
    """Target ``(sigma_U, sigma_eps)`` from the noise-to-signal ratios.

    ``sigma_U^2 = p_W sigma_X^2``.  Under ``"squared_signal"``
    ``sigma_eps^2 = p_Y (beta1 sigma_X)^2``; ``"linear_slope"`` uses
    ``p_Y |beta1| sigma_X^2`` instead (kept for diagnostics).
    """
    if p_W < 0 or p_Y < 0:
        raise DomainError("noise-to-signal ratios must be non-negative")
    s2x = x_variance(x_dist)
    b1 = _slope(truth)
    if noise_convention == "squared_signal":
        s2e = p_Y * (b1 * b1 * s2x)
    elif noise_convention == "linear_slope":
        s2e = p_Y * abs(b1) * s2x
    else:
        raise DomainError(f"unknown noise convention {noise_convention!r}")
    return math.sqrt(p_W * s2x), math.sqrt(s2e)


def calibrate_errors(x_dist, err_dist, truth: CoefficientVector, p_W, p_Y,
                     noise_convention="squared_signal"):
    """Distribution scale parameters ``(scale_U, scale_eps)`` for the error draws."""
    if err_dist not in ERR_DISTS:
        raise DomainError(f"unsupported error distribution {err_dist!r}")
    su, se = error_sigmas(x_dist, truth, p_W, p_Y, noise_convention)
    return _scale_from_sigma(err_dist, su), _scale_from_sigma(err_dist, se)


def _bimodal_ppf(u):
    """Mixture quantiles by vectorised bisection on the CDF."""
    lo = np.full(u.shape, min(m - 12 * s for m, s in zip(_MIX_MU, _MIX_SD)))
    hi = np.full(u.shape, max(m + 12 * s for m, s in zip(_MIX_MU, _MIX_SD)))
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        cdf = (_MIX_W * special.ndtr((mid - _MIX_MU[0]) / _MIX_SD[0])
               + (1 - _MIX_W) * special.ndtr((mid - _MIX_MU[1]) / _MIX_SD[1]))
        below = cdf < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _x_from_normal(x_dist, z):
    """Map standard normal scores to the covariate distribution (copula marginals)."""
    if x_dist == "half_normal":
        return special.ndtri(0.5 + 0.5 * special.ndtr(z))
    if x_dist == "exponential1":
        return -special.log_ndtr(-z)
    if x_dist == "bimodal":
        return _bimodal_ppf(special.ndtr(z))
    raise DomainError(f"unknown x_dist {x_dist!r}")


def draw_x(x_dist: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if x_dist == "half_normal":
        return np.abs(rng.standard_normal(n))
    if x_dist == "exponential1":
        return -np.log1p(-rng.random(n))
    if x_dist == "bimodal":
        comp = rng.random(n) < _MIX_W
        z = rng.standard_normal(n)
        return np.where(comp, _MIX_MU[0] + _MIX_SD[0] * z, _MIX_MU[1] + _MIX_SD[1] * z)
    raise DomainError(f"unknown x_dist {x_dist!r}")


def draw_errors(err_dist: str, scale: float, size, rng: np.random.Generator) -> np.ndarray:
    if err_dist == "normal":
        return scale * rng.standard_normal(size)
    if err_dist == "t_2_5":
        z = rng.standard_normal(size)
        return scale * z / np.sqrt(rng.chisquare(T_DF, size) / T_DF)
    if err_dist == "cauchy":
        return scale * np.tan(np.pi * (rng.random(size) - 0.5))
    if err_dist == "laplace":
        u = rng.random(size) - 0.5
        return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    raise DomainError(f"unknown err_dist {err_dist!r}")


def _default_truth():
    return CoefficientVector(1.0, [3.0])


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo design.

    In bivariate mode (``correlated_z``) the truth needs one W-slope and one
    Z-slope; X and Z share the marginal ``x_dist`` and are linked by a normal
    copula with correlation ``rho``.  Only X is observed with error.
    """

    x_dist: str = "half_normal"
    err_dist: str = "normal"
    n: int = 500
    p_W: float = 0.25
    p_Y: float = 0.40
    truth: CoefficientVector = field(default_factory=_default_truth)
    replicates: int = 500
    seed: int = 0
    correlated_z: bool = False
    rho: float = 0.5
    noise_convention: str = "squared_signal"
    scenario_id: str = ""

    def __post_init__(self):
        if isinstance(self.truth, Mapping):
            object.__setattr__(self, "truth", CoefficientVector(**self.truth))
        elif not isinstance(self.truth, CoefficientVector):
            arr = np.asarray(self.truth, dtype=float).ravel()
            object.__setattr__(self, "truth", CoefficientVector.from_array(arr, 1))
        if self.x_dist not in X_DISTS:
            raise DomainError(f"unknown x_dist {self.x_dist!r}")
        if self.err_dist not in ERR_DISTS:
            raise DomainError(f"unknown err_dist {self.err_dist!r}")
        if self.p_W < 0 or self.p_Y < 0:
            raise DomainError("p_W and p_Y must be non-negative")
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        if self.n < 3:
            raise DomainError("n must be at least 3")
        if self.noise_convention not in NOISE_CONVENTIONS:
            raise DomainError(f"unknown noise convention {self.noise_convention!r}")
        if self.correlated_z:
            if self.err_dist not in BIVARIATE_ERR_DISTS:
                raise DomainError("bivariate scenarios support normal and laplace errors only")
            if self.truth.b1.size != 1 or self.truth.b2.size != 1:
                raise DomainError("bivariate truth needs one W-slope and one Z-slope")
            if not -1.0 < self.rho < 1.0:
                raise DomainError("rho must lie in (-1, 1)")
        elif self.truth.b1.size != 1 or self.truth.b2.size != 0:
            raise DomainError("univariate truth needs exactly one slope")
        if not self.scenario_id:
            object.__setattr__(self, "scenario_id", self.default_id())

    def default_id(self) -> str:
        kind = "biv" if self.correlated_z else "uni"
        return f"{kind}-{self.x_dist}-{self.err_dist}-n{self.n}-pW{self.p_W:g}-pY{self.p_Y:g}"

    @property
    def sigma2_X(self) -> float:
        return x_variance(self.x_dist)

    @property
    def sigma2_U(self) -> float:
        return error_sigmas(self.x_dist, self.truth, self.p_W, self.p_Y, self.noise_convention)[0] ** 2

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["truth"] = self.truth.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        try:
            return cls(**dict(d))
        except (TypeError, DomainError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc


def generate(config: ScenarioConfig, replicate_index: int) -> RegressionData:
    """Simulated sample for one replicate; a pure function of ``(config, index)``."""
    rng = replicate_rng(config.seed, replicate_index)
    n = config.n
    scale_u, scale_e = calibrate_errors(config.x_dist, config.err_dist, config.truth,
                                        config.p_W, config.p_Y, config.noise_convention)
    t = config.truth
    if config.correlated_z:
        z1, z2 = _copula_scores(rng, n, config.rho)
        x = _x_from_normal(config.x_dist, z1)
        zc = _x_from_normal(config.x_dist, z2)
        u = draw_errors(config.err_dist, scale_u, n, rng)
        eps = draw_errors(config.err_dist, scale_e, n, rng)
        y = t.b0 + t.b1[0] * x + t.b2[0] * zc + eps
        return RegressionData(x + u, y, zc)
    x = draw_x(config.x_dist, n, rng)
    u = draw_errors(config.err_dist, scale_u, n, rng)
    eps = draw_errors(config.err_dist, scale_e, n, rng)
    return RegressionData(x + u, t.b0 + t.b1[0] * x + eps)


def latent_normals(config: ScenarioConfig, replicate_index: int):
    """Copula scores ``(z1, z2)`` used by :func:`generate` in bivariate mode."""
    return _copula_scores(replicate_rng(config.seed, replicate_index), config.n, config.rho)


def _copula_scores(rng, n, rho):
    z1 = rng.standard_normal(n)
    z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    return z1, z2


Method = Callable[[RegressionData, ScenarioConfig], FitResult]


def _builtin_methods(fit_options: FitOptions | None, gmm_options: GMMOptions | None) -> dict:
    def phase(data, cfg):
        return fit_phase(data, fit_options)

    def naive(data, cfg):
        return fit_naive(data)

    def disattenuated(data, cfg):
        if cfg.err_dist == "cauchy":
            raise DomainError("disattenuation needs finite error variances")
        return fit_disattenuated(data, cfg.sigma2_U, cfg.sigma2_X)

    def gmm(data, cfg):
        return fit_gmm(data, 3, gmm_options)

    return {"phase": phase, "naive": naive, "disattenuated": disattenuated, "gmm": gmm}


def coefficient_names(truth: CoefficientVector) -> list:
    names = ["b0"]
    names += ["b1"] if truth.b1.size == 1 else [f"b1_{i + 1}" for i in range(truth.b1.size)]
    if truth.b2.size == 1:
        names.append("b2")
    else:
        names += [f"b2_{i + 1}" for i in range(truth.b2.size)]
    return names


@dataclass
class ScenarioReport:
    """Per-method, per-coefficient summaries of ``n (b_hat - b)^2``.

    ``estimates[m]`` holds one row per replicate (NaN for failures).
    """

    scenario_id: str
    config: ScenarioConfig
    reference: str | None
    rows: list
    estimates: dict
    failures: dict
    failed_methods: list

    def row(self, method: str, coefficient: str) -> dict:
        for r in self.rows:
            if r["method"] == method and r["coefficient"] == coefficient:
                return r
        raise KeyError((method, coefficient))

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "config": self.config.to_dict(),
            "reference": self.reference,
            "rows": [{k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                      for k, v in r.items()} for r in self.rows],
            "failures": dict(self.failures),
            "failed_methods": list(self.failed_methods),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n")

    CSV_FIELDS = ("scenario_id", "method", "coefficient", "median_scaled_se", "iqr_scaled_se",
                  "ratio", "n_ok", "failures")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            write_report_rows(fh, [self])


def write_report_rows(fh, reports: Iterable[ScenarioReport]) -> None:
    w = csv.writer(fh)
    w.writerow(ScenarioReport.CSV_FIELDS)
    for rep in reports:
        for r in rep.rows:
            w.writerow([_fmt(r[k]) for k in ScenarioReport.CSV_FIELDS])


def _fmt(v):
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return v


def _one_replicate(config, methods, index):
    data = generate(config, index)
    out = {}
    for name, fn in methods.items():
        try:
            res = fn(data, config)
        except PhaseEIVError:
            out[name] = None
            continue
        theta = res.theta
        out[name] = theta if (res.converged and np.all(np.isfinite(theta))) else None
    return out


def run_scenario(config: ScenarioConfig, methods=("phase", "naive", "disattenuated", "gmm"), *,
                 reference: str | None = "disattenuated", fit_options: FitOptions | None = None,
                 gmm_options: GMMOptions | None = None, n_jobs: int = 1,
                 progress: Callable[[int], None] | None = None) -> ScenarioReport:
    """Run every replicate and summarise scaled squared errors.

    ``methods`` is an iterable of built-in names (``phase``, ``naive``,
    ``disattenuated``, ``gmm``) or a mapping from name to a callable
    ``(data, config) -> FitResult``.  A replicate failing for a method is
    excluded for that method only.  The ratio column divides by the
    reference method's median and is NaN when that is unavailable or zero.
    """
    builtin = _builtin_methods(fit_options, gmm_options)
    if isinstance(methods, Mapping):
        table = dict(methods)
    else:
        table = {}
        for m in methods:
            if m not in builtin:
                raise ConfigError(f"unknown method {m!r}")
            table[m] = builtin[m]
    if not table:
        raise ConfigError("at least one method is required")

    if n_jobs == 1:
        results = []
        for i in range(config.replicates):
            results.append(_one_replicate(config, table, i))
            if progress is not None:
                progress(i)
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_one_replicate)(config, table, i) for i in range(config.replicates))

    truth = config.truth.to_array()
    names = coefficient_names(config.truth)
    estimates, failures, failed = {}, {}, []
    for m in table:
        est = np.full((config.replicates, truth.size), np.nan)
        for i, r in enumerate(results):
            if r[m] is not None:
                est[i] = r[m]
        estimates[m] = est
        failures[m] = int(np.sum(~np.all(np.isfinite(est), axis=1)))
        if failures[m] == config.replicates:
            failed.append(m)

    medians = {}
    spread = {}
    for m, est in estimates.items():
        ok = np.all(np.isfinite(est), axis=1)
        se = config.n * (est[ok] - truth) ** 2
        medians[m] = np.median(se, axis=0) if ok.sum() else np.full(truth.size, np.nan)
        spread[m] = (np.array([robust_spread(se[:, j]) for j in range(truth.size)])
                     if ok.sum() >= 2 else np.full(truth.size, np.nan))
    ref = medians.get(reference) if reference else None
    rows = []
    for m in table:
        for j, name in enumerate(names):
            ratio = math.nan
            if ref is not None and np.isfinite(ref[j]) and ref[j] > 0:
                ratio = float(medians[m][j] / ref[j])
            rows.append({
                "scenario_id": config.scenario_id,
                "method": m,
                "coefficient": name,
                "median_scaled_se": float(medians[m][j]),
                "iqr_scaled_se": float(spread[m][j]),
                "ratio": ratio,
                "n_ok": config.replicates - failures[m],
                "failures": failures[m],
            })
    return ScenarioReport(config.scenario_id, config, reference if reference in table else None,
                          rows, estimates, failures, failed)


def load_scenarios(path) -> list:
    """Scenario configs from a JSON file holding one object or a list of them.

    Keys are :class:`ScenarioConfig` field names; ``truth`` is an object with
    ``b0``, ``b1`` and optionally ``b2``.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"cannot parse scenario file {path}: {exc}") from exc
    items = raw if isinstance(raw, list) else [raw]
    if not all(isinstance(d, Mapping) for d in items):
        raise ConfigError("scenario file must hold an object or a list of objects")
    return [ScenarioConfig.from_dict(d) for d in items]
