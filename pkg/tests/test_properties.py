"""Randomised invariants across the package."""

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phaseeiv import RegressionData, WeightSpec, distance_simplified, ecf, empirical_phase
from phaseeiv.cli import Dataset, detrend_hourly
from phaseeiv.ecf import select_t_star
from phaseeiv.errors import DegenerateFrequencyError, TStarSelectionError
from phaseeiv.estimator import fit_naive
from phaseeiv.gmm import ThetaK, gmm_objective
from phaseeiv.inference import BootstrapConfig, full_bootstrap, resample_indices

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
samples = arrays(np.float64, st.integers(3, 30), elements=finite)
freqs = st.floats(0.01, 3.0)
fast = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def phase_or_reject(x, t):
    try:
        return empirical_phase(x, np.atleast_1d(t))[0]
    except DegenerateFrequencyError:
        assume(False)


@fast
@given(samples, st.floats(-5.0, 5.0))
def test_ecf_bounded_and_conjugate(x, t):
    v = ecf(x, np.array([t, -t]))
    assert abs(v[0]) <= 1 + 1e-12
    assert v[1] == np.conj(v[0])


@fast
@given(samples, freqs)
def test_phase_unit_modulus(x, t):
    assert abs(abs(phase_or_reject(x, t)) - 1) <= 1e-12


@fast
@given(samples, freqs, st.floats(-20, 20))
def test_phase_shift(x, t, c):
    a = phase_or_reject(x, t)
    b = phase_or_reject(x + c, t)
    assert abs(b - np.exp(1j * t * c) * a) <= 1e-10


@fast
@given(samples, freqs, st.floats(0.1, 5.0))
def test_phase_scale(x, t, b):
    a = phase_or_reject(b * x, t)
    c = phase_or_reject(x, b * t)
    assert abs(a - c) <= 1e-10


@fast
@given(arrays(np.float64, st.integers(1, 15), elements=st.floats(0, 50)), st.booleans(), freqs)
def test_symmetric_sample_real_ecf(half, with_zero, t):
    x = np.concatenate([half, -half, [0.0] if with_zero else []])
    np.random.default_rng(0).shuffle(x)
    assert ecf(x, np.array([t]))[0].imag == 0.0


@fast
@given(arrays(np.float64, st.integers(5, 60), elements=finite, unique=True),
       st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_tstar_monotone_in_threshold(y, a, b):
    lo, hi = sorted((a, b))
    try:
        t_hi = select_t_star(y, threshold=hi)
        t_lo = select_t_star(y, threshold=lo)
    except TStarSelectionError:
        assume(False)
    assert t_lo >= t_hi


regression = st.integers(3, 25).flatmap(
    lambda n: st.tuples(arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite)))


@fast
@given(regression, st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3.0), st.sampled_from(["k1", "k2", "k3"]))
def test_distance_nonnegative_and_permutation_invariant(wy, b0, b1, tstar, kernel):
    w, y = wy
    d = RegressionData(w, y)
    ws = WeightSpec(kernel, tstar, 32)
    v = distance_simplified(d, [b0, b1], ws)
    assert v >= 0
    perm = np.random.default_rng(len(w)).permutation(len(w))
    assert distance_simplified(d.take(perm), [b0, b1], ws) == pytest.approx(v, rel=1e-9, abs=1e-9 * len(w) ** 4)


@fast
@given(regression, st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 5), st.floats(0, 5), st.floats(0, 5),
       st.floats(-5, 5))
def test_gmm_objective_nonnegative(wy, b0, b1, s2x, s2u, s2e, m3):
    w, y = wy
    assume(np.ptp(w) > 1e-3 and np.ptp(y) > 1e-3)
    th = ThetaK(float(np.mean(w)), b0, b1, s2x, s2u, s2e, m3)
    assert gmm_objective(RegressionData(w, y), th) >= 0


@fast
@given(st.integers(1, 200), st.integers(0, 2**31), st.integers(0, 50))
def test_iid_indices_in_range_and_deterministic(n, seed, i):
    cfg = BootstrapConfig(seed=seed)
    a = resample_indices(n, cfg, i)
    assert a.size == n and a.min() >= 0 and a.max() < n
    assert np.array_equal(a, resample_indices(n, cfg, i))


@fast
@given(st.integers(2, 200).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))), st.integers(0, 1000))
def test_block_indices_keep_order(nl, seed):
    n, L = nl
    idx = resample_indices(n, BootstrapConfig(seed=seed, mode="block", block_length=L), 0)
    assert idx.size == n
    for s in range(0, n, L):
        assert np.all(np.diff(idx[s:s + L]) == 1)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(10, 60))
def test_bootstrap_psd_and_deterministic(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.exponential(size=n)
    d = RegressionData(x + 0.3 * rng.standard_normal(n), 1 + 2 * x + rng.standard_normal(n))
    cfg = BootstrapConfig(B=20, seed=seed)

    def fit(dd):
        return fit_naive(dd)

    try:
        a = full_bootstrap(d, fit, cfg)
    except Exception:
        assume(False)
    b = full_bootstrap(d, fit, cfg)
    assert np.array_equal(a.matrix, b.matrix)
    assert np.array_equal(a.matrix, a.matrix.T)
    assert np.min(np.linalg.eigvalsh(a.matrix)) >= -1e-10 * np.trace(a.matrix)


@fast
@given(st.integers(1, 4).flatmap(lambda days: arrays(np.float64, 24 * days, elements=st.floats(-1e3, 1e3))))
def test_detrend_idempotent_zero_means(x):
    h = np.arange(x.size) % 24 + 1
    once = detrend_hourly(Dataset({"x": x}, h), "x")
    twice = detrend_hourly(Dataset({"x": once}, h), "x")
    scale = max(1.0, np.max(np.abs(x)))
    np.testing.assert_allclose(twice, once, atol=1e-12 * scale)
    for k in range(1, 25):
        assert abs(once[h == k].mean()) <= 1e-12 * scale
