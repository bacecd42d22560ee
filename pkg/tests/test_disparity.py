import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from disparitybayes.disparity import (
    DisparityKind,
    EmpiricalKL,
    GaussHermiteDisparity,
    GFunction,
    MonteCarloDisparity,
    QuadratureDisparity,
    as_gfunction,
    curvature_weight,
    disparity_exact_quadrature,
    disparity_gh,
    disparity_mc,
    gauss_hermite,
    gaussian_pairs,
    make_estimator,
)
from disparitybayes.inference import NormalDensity
from disparitybayes.kde import KernelDensity
from disparitybayes.models import Normal, NormalMean

KINDS = ["kl", "hd", "ned"]
# independent oracles: closed forms, and scipy.quad on the raw definition
HD_N01_N11 = 4.0 * (1.0 - math.exp(-1.0 / 8.0))          # 0.47002...
NED_N05_N01 = 0.11718126703991068                          # g = N(0.5, 1), f = N(0, 1)
NED_N01_N015 = 0.1154842932703995                          # g = N(0, 1), f = N(0, 1.5^2)
HD_N01_N015 = 4.0 - 4.0 * math.sqrt(2 * 1.5 / (1 + 2.25))  # 0.15692...


# --- G functions -------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_standardization(kind):
    g = as_gfunction(kind)
    assert float(g.eval(0.0)) == pytest.approx(0.0, abs=1e-15)
    assert float(g.deriv1(0.0)) == pytest.approx(0.0, abs=1e-15)
    assert float(g.deriv2(0.0)) == pytest.approx(1.0, abs=1e-15)
    h = 1e-4
    fd1 = (g.eval(h) - g.eval(-h)) / (2 * h)
    fd2 = (g.eval(h) - 2 * g.eval(0.0) + g.eval(-h)) / h**2
    assert abs(fd1) < 1e-6
    assert fd2 == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_strictly_convex_on_grid(kind):
    d = np.linspace(-0.99, 50, 2000)
    assert np.all(as_gfunction(kind).deriv2(d) > 0)


@pytest.mark.parametrize("kind", KINDS)
@given(st.floats(-0.95, 30.0))
def test_derivatives_match_finite_differences(kind, d):
    g = as_gfunction(kind)
    h = 1e-6 * (1 + abs(d))
    assert float(g.deriv1(d)) == pytest.approx(float((g.eval(d + h) - g.eval(d - h)) / (2 * h)), rel=1e-5, abs=1e-7)
    assert float(g.deriv2(d)) == pytest.approx(float((g.deriv1(d + h) - g.deriv1(d - h)) / (2 * h)), rel=1e-5,
                                               abs=1e-7)


@pytest.mark.parametrize("kind", KINDS)
def test_curvature_weight(kind):
    g = as_gfunction(kind)
    assert float(curvature_weight(g, 0.0)) == pytest.approx(0.0, abs=1e-15)
    h = 1e-5
    slope = (curvature_weight(g, h) - curvature_weight(g, -h)) / (2 * h)
    assert float(slope) == pytest.approx(-1.0, abs=1e-6)


def test_hellinger_curvature_closed_form():
    d = np.linspace(-0.9, 20, 50)
    r = np.sqrt(1 + d)
    # A = 2 (r - 1)^2 - 2 r^2 (1 - 1 / r) = 2 (1 - r)
    np.testing.assert_allclose(as_gfunction("hd").curvature(d), 2 * (1 - r), atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@given(st.floats(-0.99, 40.0))
def test_uncentered_forms_differ_by_linear_term(kind, d):
    c, u = GFunction(kind), GFunction(kind, centered=False)
    diff = float(u.eval(d) - c.eval(d))
    slope = {"kl": 1.0, "hd": 0.0, "ned": -1.0}[kind]
    const = {"kl": 0.0, "hd": -2.0, "ned": 0.0}[kind]
    assert diff == pytest.approx(slope * d + const, abs=1e-9 * (1 + abs(d)))


def test_ned_uncentered_bound_at_minus_one():
    u = GFunction("ned", centered=False)
    assert float(u.eval(-1.0)) == pytest.approx(math.e - 1.0, abs=1e-9)
    assert float(u.eval(-1.0)) < math.e


def test_delta_is_clamped():
    g = as_gfunction("kl")
    assert np.isfinite(g.eval(-1.0)) and np.isfinite(g.eval(1e300))


def test_kind_parsing():
    assert DisparityKind.parse("Hellinger") is DisparityKind.HELLINGER
    assert DisparityKind.parse("negative-exponential") is DisparityKind.NED
    with pytest.raises(ValueError):
        DisparityKind.parse("tv")


# --- Gauss-Hermite ----------------------------------------------------------

def test_gauss_hermite_against_numpy():
    x, w = gauss_hermite(40)
    xr, wr = np.polynomial.hermite.hermgauss(40)
    np.testing.assert_allclose(np.sort(x), np.sort(xr), atol=1e-12)
    np.testing.assert_allclose(w[np.argsort(x)], wr[np.argsort(xr)], rtol=1e-10, atol=1e-300)


@pytest.mark.parametrize("kind", KINDS)
def test_gh_zero_at_match(kind):
    est = GaussHermiteDisparity(NormalDensity(0.0, 1.0), kind, n_nodes=80)
    assert est.at(0.0, 1.0) == pytest.approx(0.0, abs=1e-10)


def test_gh_hellinger_closed_form():
    est = GaussHermiteDisparity(NormalDensity(1.0, 1.0), "hd", n_nodes=80)
    assert disparity_gh(est, None, 0.0, 1.0) == pytest.approx(HD_N01_N11, abs=1e-6)


def test_gh_ned_oracle():
    est = GaussHermiteDisparity(NormalDensity(0.5, 1.0), "ned", n_nodes=80)
    assert est.at(0.0, 1.0) == pytest.approx(NED_N05_N01, abs=1e-6)
    est = GaussHermiteDisparity(NormalDensity(0.0, 1.0), "ned", n_nodes=80)
    assert est.at(0.0, 1.5) == pytest.approx(NED_N01_N015, abs=1e-6)


def test_gh_direct_and_specialized_forms_agree():
    g = NormalDensity(0.3, 1.2)
    for kind in KINDS:
        a = GaussHermiteDisparity(g, kind, form="specialized").at(0.0, 1.0)
        b = GaussHermiteDisparity(g, kind, form="direct").at(0.0, 1.0)
        assert a == pytest.approx(b, abs=1e-6)


def test_gh_rejects_few_nodes_and_non_gaussian():
    with pytest.raises(ValueError):
        GaussHermiteDisparity(NormalDensity(0, 1), "hd", n_nodes=5)
    from disparitybayes.models import ExpGamma
    est = GaussHermiteDisparity(NormalDensity(0, 1), "hd")
    with pytest.raises(TypeError):
        est.evaluate(ExpGamma(), np.array([2.0, 1.0]))
    assert est.at(0.0, -1.0) == math.inf


def test_gh_swaps_density():
    est = GaussHermiteDisparity(NormalDensity(0.0, 1.0), "hd")
    assert disparity_gh(est, NormalDensity(1.0, 1.0), 0.0, 1.0) == pytest.approx(HD_N01_N11, abs=1e-6)


# --- exact quadrature oracle ------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_quadrature_zero_at_match(kind):
    assert disparity_exact_quadrature(NormalDensity(1, 2), Normal(), np.array([1.0, 2.0]), kind) == \
        pytest.approx(0.0, abs=1e-10)


def test_quadrature_closed_forms():
    assert disparity_exact_quadrature(NormalDensity(0, 1), NormalMean(), np.array([1.0]), "hd") == \
        pytest.approx(HD_N01_N11, abs=1e-8)
    assert disparity_exact_quadrature(NormalDensity(0, 1), Normal(), np.array([0.0, 1.5]), "hd") == \
        pytest.approx(HD_N01_N015, abs=1e-8)
    assert disparity_exact_quadrature(NormalDensity(0.5, 1), NormalMean(), np.array([0.0]), "ned") == \
        pytest.approx(NED_N05_N01, abs=1e-8)


def test_quadrature_kl_matches_direct_kl():
    g = NormalDensity(0.4, 0.8)
    theta = np.array([0.0, 1.3])
    direct, _ = integrate.quad(lambda x: stats.norm.pdf(x, 0.4, 0.8) * (stats.norm.logpdf(x, 0.4, 0.8)
                                                                         - stats.norm.logpdf(x, 0, 1.3)),
                               -20, 20, epsabs=1e-13, limit=200)
    assert disparity_exact_quadrature(g, Normal(), theta, "kl") == pytest.approx(direct, abs=1e-8)


def test_quadrature_hellinger_affinity_identity():
    g = NormalDensity(0.2, 0.7)
    theta = np.array([-0.5, 1.1])
    aff, _ = integrate.quad(lambda x: math.sqrt(stats.norm.pdf(x, 0.2, 0.7) * stats.norm.pdf(x, -0.5, 1.1)),
                            -20, 20, epsabs=1e-14, limit=200)
    assert disparity_exact_quadrature(g, Normal(), theta, "hd") == pytest.approx(4 - 4 * aff, abs=1e-8)


# --- Monte Carlo -----------------------------------------------------------

def test_mc_kde_of_own_law_is_near_zero():
    x = np.random.default_rng(0).normal(size=100_000)
    g = KernelDensity(x, 0.05)
    est = MonteCarloDisparity(g, "hd", n_samples=5000, seed=1)
    assert abs(disparity_mc(est, NormalMean(), np.array([0.0]))) < 0.02


def test_mc_orthogonal_hellinger_is_four():
    g = KernelDensity(np.random.default_rng(1).normal(size=200), 0.3)
    est = MonteCarloDisparity(g, "hd", n_samples=1000, seed=2)
    assert est.evaluate(NormalMean(), np.array([100.0])) == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["hd", "ned"])
def test_mc_error_shrinks_with_samples(kind):
    g_true = NormalDensity(0.0, 1.0)
    theta = np.array([0.4, 1.2])
    ref = disparity_exact_quadrature(g_true, Normal(), theta, kind)
    medians = []
    for n in (100, 1000, 10_000):
        errs = []
        for r in range(50):
            z = np.random.default_rng([r, n]).normal(size=n)
            errs.append(abs(MonteCarloDisparity(g_true, kind, samples=z).evaluate(Normal(), theta) - ref))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def test_mc_frozen_samples_are_smooth():
    g = KernelDensity(np.random.default_rng(3).normal(size=20), 0.4)
    est = MonteCarloDisparity(g, "hd", n_samples=1000, seed=4)
    grid = np.linspace(-0.5, 0.5, 201)
    vals = np.array([est.evaluate(NormalMean(), np.array([t])) for t in grid])
    second = np.diff(vals, 2)
    # a smooth convex-ish bowl: second differences are tiny relative to the slope scale
    assert np.max(np.abs(second)) < 10 * np.max(np.abs(np.diff(vals))) * (grid[1] - grid[0]) + 1e-8
    np.testing.assert_array_equal(vals, [est.evaluate(NormalMean(), np.array([t])) for t in grid])


def test_mc_samples_are_frozen_and_read_only():
    est = MonteCarloDisparity(KernelDensity([0.0, 1.0], 0.5), "hd", n_samples=10, seed=0)
    with pytest.raises(ValueError):
        est.samples[0] = 1.0


def test_mc_far_theta_gives_finite_or_inf():
    est = MonteCarloDisparity(KernelDensity([0.0, 1.0], 0.5), "ned", n_samples=100, seed=0)
    v = est.evaluate(Normal(), np.array([1e6, 1e-3]))
    assert not math.isnan(v)


# --- quadrature estimator and KL ------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_quadrature_estimator_matches_oracle(kind):
    g = NormalDensity(0.3, 0.9)
    est = QuadratureDisparity(g, kind, intervals=[(-12, 12)], panel_width=0.2)
    theta = np.array([0.0, 1.1])
    assert est.evaluate(Normal(), theta) == pytest.approx(disparity_exact_quadrature(g, Normal(), theta, kind),
                                                          abs=1e-9)


def test_empirical_kl_is_negative_mean_loglik():
    x = np.array([0.1, -0.4, 1.3])
    est = EmpiricalKL(x)
    assert est.evaluate(NormalMean(), np.array([0.2])) == pytest.approx(-np.mean(stats.norm.logpdf(x, 0.2)))


def test_make_estimator_defaults():
    g = KernelDensity([0.0, 1.0, 2.0], 0.5)
    assert make_estimator(g, "hd", seed=0).method == "mc"
    assert make_estimator(g, "ned").method == "gh"
    with pytest.raises(ValueError):
        make_estimator(g, "ned", method="bogus")


def test_second_order_agreement_with_fisher_information():
    # D(f_theta0, f_theta) ~ (theta - theta0)^2 / 2 * I(theta0), I = 1 for N(theta, 1)
    g = NormalDensity(0.0, 1.0)
    for kind in KINDS:
        est = GaussHermiteDisparity(g, kind)
        h = 1e-3
        curv = (est.at(h, 1.0) - 2 * est.at(0.0, 1.0) + est.at(-h, 1.0)) / h**2
        assert curv == pytest.approx(1.0, rel=0.02)


# --- properties ---------------------------------------------------------

@given(st.floats(-3, 3), st.floats(0.3, 3.0), st.floats(-3, 3), st.floats(0.3, 3.0))
def test_hellinger_bounded_and_nonnegative(mg, sg, mf, sf):
    est = GaussHermiteDisparity(NormalDensity(mg, sg), "hd", n_nodes=80)
    v = est.at(mf, sf)
    assert -1e-6 <= v <= 4.0 + 1e-12


@given(st.floats(-2, 2), st.floats(0.5, 2.0), st.floats(-2, 2), st.floats(0.5, 2.0))
def test_centered_disparities_nonnegative(mg, sg, mf, sf):
    g = NormalDensity(mg, sg)
    for kind in KINDS:
        v = disparity_exact_quadrature(g, Normal(), np.array([mf, sf]), kind)
        assert v >= -1e-9


def test_gaussian_pairs_reproducible():
    a, b = gaussian_pairs(5, 3), gaussian_pairs(5, 3)
    np.testing.assert_array_equal(a, b)
    assert np.all(a[:, 1] > 0) and np.all(a[:, 3] > 0)
    assert np.all(np.abs(a[:, 2] - a[:, 0]) <= 0.5 * a[:, 1])
