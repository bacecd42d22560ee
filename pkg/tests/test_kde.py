import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from disparitybayes.errors import (
    BandwidthFallbackWarning,
    DegenerateConditioning,
    DegenerateData,
    InsufficientData,
)
from disparitybayes.kde import (
    ConditionalKernelDensity,
    KernelDensity,
    ResidualDensity,
    bandwidth_silverman,
    bandwidth_sheather_jones,
    log_kernel_sum,
    select_bandwidth,
    sheather_jones,
)
from scipy.special import logsumexp

finite = st.floats(-50, 50, allow_nan=False)


def test_single_point_is_the_kernel():
    assert KernelDensity([0.0], 1.0).evaluate(0.0) == pytest.approx(0.3989422804014327, abs=1e-12)


def test_two_points_symmetric():
    g = KernelDensity([-1.0, 1.0], 1.0)
    assert g.evaluate(0.0) == pytest.approx(stats.norm.pdf(1.0), abs=1e-12)
    assert g.evaluate(0.0) == pytest.approx(0.24197, abs=1e-5)


def test_integrates_to_one(normal20):
    g = KernelDensity(normal20, select_bandwidth(normal20))
    lo, hi = normal20.min() - 10, normal20.max() + 10
    total, _ = integrate.quad(g.evaluate, lo, hi, limit=400, points=sorted(normal20))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_weights_are_normalized():
    g = KernelDensity([0.0, 3.0], 0.5, weights=[2.0, 6.0])
    np.testing.assert_allclose(g.weights, [0.25, 0.75])
    expected = 0.25 * stats.norm.pdf(1.0, 0, 0.5) + 0.75 * stats.norm.pdf(1.0, 3, 0.5)
    assert g.evaluate(1.0) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_bandwidth_must_be_positive(bad):
    with pytest.raises(ValueError):
        KernelDensity([0.0, 1.0], bad)


def test_empty_points():
    with pytest.raises(InsufficientData):
        KernelDensity([], 1.0)


def test_sample_single_point():
    z = KernelDensity([0.0], 1.0).sample(100_000, 7)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_sample_mixture_variance():
    z = KernelDensity([-1.0, 1.0], 0.5).sample(100_000, 3)
    assert z.var() == pytest.approx(1.25, abs=0.03)
    assert KernelDensity([-1.0, 1.0], 0.5).variance() == pytest.approx(1.25)


def test_sample_deterministic():
    g = KernelDensity([0.0, 2.0, 5.0], 0.3)
    np.testing.assert_array_equal(g.sample(50, 11), g.sample(50, 11))


def test_draws_follow_moving_centres():
    g = KernelDensity([0.0, 1.0], 0.2)
    d = g.draws(10, 4)
    np.testing.assert_allclose(d.locations([1.0, 2.0]) - d.locations([0.0, 1.0]), 1.0)


@given(st.lists(finite, min_size=1, max_size=8), st.floats(0.05, 5.0), finite)
def test_logpdf_matches_log_of_evaluate(points, h, x):
    g = KernelDensity(points, h)
    dens = g.evaluate(x)
    if dens > 1e-250:
        assert g.logpdf(x) == pytest.approx(math.log(dens), rel=1e-9, abs=1e-9)


def test_logpdf_far_tail_is_finite():
    g = KernelDensity([0.0, 1.0], 0.1)
    # exp underflows here; the log must not
    val = g.logpdf(100.0)
    assert np.isfinite(val)
    assert val == pytest.approx(-0.5 * (99.0 / 0.1) ** 2 - math.log(2 * 0.1) - 0.5 * math.log(2 * math.pi), rel=1e-10)


@given(st.lists(st.floats(-800, 10), min_size=2, max_size=6), st.integers(0, 3))
def test_log_kernel_sum_against_logsumexp(row, zero_at):
    a = np.array([row, row[::-1]])
    w = np.full(len(row), 1.0)
    w[zero_at % len(row)] = 0.0
    w /= w.sum()
    with np.errstate(divide="ignore"):
        expected = logsumexp(a + np.log(w), axis=1)
    np.testing.assert_allclose(log_kernel_sum(a, w), expected, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(log_kernel_sum(a), logsumexp(a, axis=1), rtol=1e-10, atol=1e-10)


# --- bandwidths ---------------------------------------------------------------

def test_silverman_formula():
    x = np.random.default_rng(0).normal(size=100)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    assert bandwidth_silverman(x) == pytest.approx(0.9 * min(sd, iqr / 1.34) * 100 ** -0.2, rel=1e-12)
    assert bandwidth_silverman(x) == pytest.approx(0.357, abs=0.05)


def test_silverman_rate():
    # same spread statistics, four times the size: the bandwidth shrinks by 4^(-1/5)
    x = np.random.default_rng(1).normal(size=50)
    big = np.tile(x, 4)

    def spread(v):
        return min(np.std(v, ddof=1), np.subtract(*np.percentile(v, [75, 25])) / 1.34)

    ratio = bandwidth_silverman(big) / bandwidth_silverman(x)
    assert ratio == pytest.approx(4 ** -0.2 * spread(big) / spread(x), rel=1e-12)


def test_silverman_degenerate():
    with pytest.raises(DegenerateData):
        bandwidth_silverman([1.0, 1.0, 1.0])


@given(st.floats(0.01, 100.0))
def test_bandwidths_scale_equivariant(c):
    x = np.random.default_rng(2).normal(size=60)
    assert bandwidth_silverman(c * x) == pytest.approx(c * bandwidth_silverman(x), rel=1e-10)
    assert bandwidth_sheather_jones(c * x) == pytest.approx(c * bandwidth_sheather_jones(x), rel=1e-8)


def test_sheather_jones_normal_reference():
    x = np.random.default_rng(3).normal(size=1000)
    ref = 1.06 * 1000 ** -0.2
    assert 0.7 * ref <= bandwidth_sheather_jones(x) <= 1.3 * ref


def _naive_sj(x):
    """Direct transcription of the solve-the-equation relation with dense loops."""
    n = x.size
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    scale = min(sd, iqr / 1.349)
    a = 1.24 * scale * n ** (-1 / 7)
    b = 1.23 * scale * n ** (-1 / 9)
    d = x[:, None] - x[None, :]

    def phi_r(u, r):
        return stats.norm.pdf(u) * {4: u**4 - 6 * u**2 + 3, 6: u**6 - 15 * u**4 + 45 * u**2 - 15}[r]

    sda = np.sum(phi_r(d / a, 4)) / (n * (n - 1) * a**5)
    tdb = -np.sum(phi_r(d / b, 6)) / (n * (n - 1) * b**7)

    def eq(h):
        alpha2 = 1.357 * (sda / tdb) ** (1 / 7) * h ** (5 / 7)
        s = np.sum(phi_r(d / alpha2, 4)) / (n * (n - 1) * alpha2**5)
        return (1 / (2 * math.sqrt(math.pi) * s * n)) ** 0.2 - h

    from scipy.optimize import brentq
    return brentq(eq, 1e-4 * np.ptp(x), np.ptp(x), xtol=1e-12)


@pytest.mark.parametrize("seed", [4, 5])
def test_sheather_jones_matches_naive_oracle(seed):
    x = np.random.default_rng(seed).normal(size=80)
    assert bandwidth_sheather_jones(x) == pytest.approx(_naive_sj(x), rel=1e-3)


def test_sheather_jones_smaller_than_silverman_for_bimodal():
    rng = np.random.default_rng(6)
    x = np.concatenate([rng.normal(-3, 1, 200), rng.normal(3, 1, 200)])
    assert bandwidth_sheather_jones(x) < bandwidth_silverman(x)


def test_sheather_jones_needs_five_points():
    with pytest.raises(InsufficientData):
        sheather_jones([1.0, 2.0, 3.0])
    with pytest.warns(BandwidthFallbackWarning):
        assert select_bandwidth([1.0, 2.0, 3.0]) == bandwidth_silverman([1.0, 2.0, 3.0])


def test_sheather_jones_degenerate():
    with pytest.raises(DegenerateData):
        sheather_jones([2.0] * 10)


def test_unknown_selector():
    with pytest.raises(ValueError):
        select_bandwidth([1.0, 2.0, 3.0], "magic")


def test_l1_error_shrinks_with_n():
    rng = np.random.default_rng(8)
    grid = np.linspace(0, 10, 2001)
    true = stats.norm.pdf(grid, 5, 1)
    medians = []
    for n in (50, 200, 800):
        errs = []
        for _ in range(50):
            x = rng.normal(5, 1, n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BandwidthFallbackWarning)
                g = KernelDensity(x, select_bandwidth(x))
            errs.append(integrate.trapezoid(np.abs(g.evaluate(grid) - true), grid))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


# --- conditional and residual densities --------------------------------------

def test_conditional_single_observation():
    c = ConditionalKernelDensity([2.0], [[0.0]], 0.7, 1.0)
    y = np.linspace(-1, 5, 7)
    np.testing.assert_allclose(c.evaluate(y, [0.0]), stats.norm.pdf(y, 2.0, 0.7), rtol=1e-12)


def test_conditional_single_level_equals_group_kde():
    y = np.array([0.3, 1.2, -0.4, 2.2])
    c = ConditionalKernelDensity(y, np.zeros((4, 1)), 0.5, 1.0)
    grid = np.linspace(-3, 4, 15)
    np.testing.assert_allclose(c.evaluate(grid, [0.0]), KernelDensity(y, 0.5).evaluate(grid), rtol=1e-13)


def test_conditional_discrete_levels_nearly_separate():
    y = np.array([0.0, 0.5, 10.0, 10.5])
    x = np.array([[0.0], [0.0], [100.0], [100.0]])
    c = ConditionalKernelDensity(y, x, 0.5, 1.0)
    grid = np.linspace(-2, 3, 11)
    np.testing.assert_allclose(c.evaluate(grid, [0.0]), KernelDensity(y[:2], 0.5).evaluate(grid), rtol=1e-10)


def test_conditional_matches_brute_force():
    rng = np.random.default_rng(9)
    y = rng.normal(size=12)
    x = rng.normal(size=(12, 2))
    c = ConditionalKernelDensity(y, x, 0.4, 0.8)
    q, yq = np.array([0.2, -0.3]), 0.1
    num = den = 0.0
    for i in range(12):
        kx = stats.norm.pdf(math.dist(q, x[i]) / 0.8)
        num += kx * stats.norm.pdf((yq - y[i]) / 0.4) / 0.4
        den += kx
    assert c.evaluate(yq, q) == pytest.approx(num / den, rel=1e-12)


def test_conditional_integrates_to_one():
    rng = np.random.default_rng(10)
    c = ConditionalKernelDensity.from_data(rng.normal(size=30), rng.normal(size=(30, 2)))
    total, _ = integrate.quad(lambda t: float(c.evaluate(t, [0.5, 0.5])), -15, 15, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_conditional_degenerate_far_away():
    c = ConditionalKernelDensity([0.0, 1.0], [[0.0], [1.0]], 0.5, 0.1)
    with pytest.raises(DegenerateConditioning):
        c.evaluate(0.0, [1e4])


def test_residual_density_concentrates_near_error_law():
    rng = np.random.default_rng(11)
    ks = []
    for _ in range(50):
        x = rng.normal(size=200)
        y = 1.0 + 2.0 * x + rng.normal(size=200)
        r = ResidualDensity(lambda th: y - th[0] - th[1] * x, 1.0, select_bandwidth(y - 1 - 2 * x))
        grid = np.linspace(-5, 5, 1001)
        cdf = integrate.cumulative_trapezoid(r.evaluate(grid, (1.0, 2.0)), grid, initial=0.0)
        ks.append(np.max(np.abs(cdf - stats.norm.cdf(grid))))
    assert np.median(ks) < 0.15


def test_residual_density_rescales():
    r = ResidualDensity(lambda th: np.array([th[0], -th[0]]), 2.0, 0.5)
    np.testing.assert_allclose(r.at((4.0,)).points, [2.0, -2.0])
    np.testing.assert_allclose(r.at((4.0,), scale=4.0).points, [1.0, -1.0])
