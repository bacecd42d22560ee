import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from disparitybayes import simharness as sh
from disparitybayes.models import GammaPrior, IndependentPrior, NormalPrior
from disparitybayes.simharness import (
    HUBER_80,
    HUBER_99,
    TUKEY_C,
    Band,
    Contamination,
    Replicate,
    RobustLoss,
    Scenario,
    aggregate,
    generate_data,
    huber_minimum,
    huber_tukey_logpdf,
    parse_table_id,
    run_scenario,
    run_table,
    table_scenarios,
)


def test_critical_values():
    assert HUBER_80 == pytest.approx(1.2815515655446004)
    assert HUBER_99 == pytest.approx(2.5758293035489004)
    assert TUKEY_C == 4.685


@pytest.mark.parametrize("kind,c", [("huber", 1.345), ("tukey", 4.685)])
@given(r=st.floats(-8, 8))
def test_loss_derivatives(kind, c, r):
    loss = RobustLoss(kind, c)
    h = 1e-6
    assert loss.psi(r) == pytest.approx((loss.rho(r + h) - loss.rho(r - h)) / (2 * h), abs=1e-5)
    if abs(abs(r) - c) > 1e-3:
        assert loss.dpsi(r) == pytest.approx((loss.psi(r + h) - loss.psi(r - h)) / (2 * h), abs=1e-4)


def test_loss_shapes():
    tukey = RobustLoss("tukey", 4.685)
    assert tukey.rho(10.0) == tukey.rho(100.0) == pytest.approx(4.685 ** 2 / 6)
    assert tukey.psi(5.0) == 0.0
    huber = RobustLoss("huber", 1.0)
    assert huber.rho(3.0) == pytest.approx(2.5)
    assert huber.psi(-3.0) == -1.0
    assert RobustLoss("huber", 1e6).rho(2.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        RobustLoss("cauchy", 1.0)
    with pytest.raises(ValueError):
        RobustLoss("huber", 0.0)


def test_robust_logpdf_formula():
    x = np.array([4.0, 5.5, -10.0])
    loss = RobustLoss("tukey", TUKEY_C)
    prior = IndependentPrior(NormalPrior(0.0, 5.0), GammaPrior(2.0, 1.0))
    got = huber_tukey_logpdf(x, [5.0, 2.0], loss, prior)
    expected = -loss.rho((x - 5.0) / 2.0).sum() - 3 * math.log(2.0) + prior.logpdf([5.0, 2.0])
    assert got == pytest.approx(expected)
    assert huber_tukey_logpdf(x, [5.0, -1.0], loss) == -math.inf
    assert huber_tukey_logpdf(x, [5.0], loss, sigma=1.0) == pytest.approx(-loss.rho(x - 5.0).sum())


def test_robust_logpdf_with_covariates():
    x = np.array([[0.0], [1.0], [2.0]])
    y = np.array([1.0, 3.0, 5.0])
    loss = RobustLoss("huber", 1.0)
    assert huber_tukey_logpdf(y, [1.0, 2.0, 1.0], loss, covariates=x) == pytest.approx(0.0)


def test_huber_minimum_matches_direct_minimization():
    y = np.array([4.1, 5.3, 4.8, 5.9, 5.0, -10.0, -10.0])
    fit = huber_minimum(y, cutoff=HUBER_80, sigma=1.0)
    loss = RobustLoss("huber", HUBER_80)
    direct = optimize.minimize_scalar(lambda m: loss.rho(y - m).sum(), bounds=(-10, 10), method="bounded",
                                      options={"xatol": 1e-10})
    assert fit.coef[0] == pytest.approx(direct.x, abs=1e-6)
    assert fit.se[0] > 0


def test_huber_minimum_regression_without_outliers_is_least_squares():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 2))
    y = 1.0 + x @ [2.0, -1.0] + 0.01 * rng.normal(size=40)
    fit = huber_minimum(y, x, cutoff=1e6)
    beta, *_ = np.linalg.lstsq(np.column_stack([np.ones(40), x]), y, rcond=None)
    np.testing.assert_allclose(fit.coef, beta, atol=1e-8)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario("x", "normal-mean", "hd", n=5, contamination=Contamination(5, -10))
    with pytest.raises(ValueError):
        Scenario("x", "normal-mean", "hd", replications=0)
    with pytest.raises(ValueError):
        Scenario("x", "exp-gamma", "tukey-mcmc", true_theta=(5.0, 0.25))
    with pytest.raises(ValueError):
        Scenario("x", "poisson", "hd")
    with pytest.raises(ValueError):
        Scenario("x", "normal-mean", "hd", bandwidth="scott")
    with pytest.raises(ValueError):
        Contamination(-1)


def test_scenario_dict_round_trip():
    s = Scenario("x", "linreg", "hd-marg", n=30, true_theta=(1.0, 1.0, 1.0), contamination=Contamination(2, 5.0),
                 proposal_scale=(0.1, 0.1, 0.1, 0.1))
    d = json.loads(json.dumps(s.to_dict()))
    assert Scenario.from_dict(d) == s


def test_generate_data_is_deterministic_and_shared_across_methods():
    a = Scenario("a", "normal-mean", "likelihood", seed=3)
    b = Scenario("b", "normal-mean", "hd", seed=3, contamination=Contamination(2, -10.0))
    xa, xb = generate_data(a, 7), generate_data(b, 7)
    np.testing.assert_array_equal(xa, generate_data(a, 7))
    np.testing.assert_array_equal(xb[:20], xa)
    np.testing.assert_array_equal(xb[20:], [-5.0, -5.0])
    assert not np.array_equal(xa, generate_data(a, 8))


def test_generate_data_families():
    eg = Scenario("e", "exp-gamma", "ned", true_theta=(5.0, 0.25),
                  contamination=Contamination(1, math.log(20.0), relative=False))
    x = generate_data(eg, 0)
    assert x.size == 21 and x[-1] == pytest.approx(math.log(20.0))
    re = Scenario("r", "random-effects", "hd-latent", n=5, groups=10, true_theta=(0.0, 0.2, 1.0),
                  contamination=Contamination(1, 40.0, relative=False))
    y = generate_data(re, 0)
    assert y.shape == (11, 5) and abs(y[-1].mean() - 40.0) < 1.0
    lr = Scenario("l", "linreg", "hd", n=30, true_theta=(1.0, 1.0, 1.0, 1.0, 1.0))
    y, x = generate_data(lr, 0)
    assert y.shape == (30,) and x.shape == (30, 3)
    np.testing.assert_array_equal(x, generate_data(lr, 5)[1])


def test_run_scenario_deterministic():
    s = Scenario("x", "normal-mean", "hd", replications=4, steps=1000, seed=2)
    assert run_scenario(s).rows == run_scenario(s).rows


def test_aggregate_is_order_independent():
    s = Scenario("x", "normal-mean", "likelihood", replications=3)
    reps = [Replicate(i, np.array([5.0 + i]), np.array([4.0]), np.array([6.0 + i])) for i in range(3)]
    a = aggregate(s, reps)
    b = aggregate(s, reps[::-1])
    assert a.rows == b.rows
    assert a.row.bias == pytest.approx(1.0)
    assert a.row.coverage == 1.0


def test_failed_replications_are_excluded(monkeypatch):
    real = sh._RUNNERS["normal-mean"]

    def flaky(s, x, chain_seed, est_seed):
        # entropy is [seed, replication, 1]
        if chain_seed.entropy[1] == 1:
            raise sh._Stuck("acceptance rate 0.0000")
        return real(s, x, chain_seed, est_seed)

    monkeypatch.setitem(sh._RUNNERS, "normal-mean", flaky)
    res = run_scenario(Scenario("x", "normal-mean", "likelihood", replications=3, steps=500))
    assert res.excluded == 1
    assert res.row.replications == 2
    assert res.failures[0][0] == 1


def test_all_failures_raise(monkeypatch):
    def broken(*args):
        raise sh._Stuck("no")

    monkeypatch.setitem(sh._RUNNERS, "normal-mean", broken)
    with pytest.raises(sh.InsufficientData):
        run_scenario(Scenario("x", "normal-mean", "likelihood", replications=2))


def test_hellinger_redescends_across_outlier_locations():
    bias = {}
    for loc in (-3.0, -10.0):
        s = Scenario("x", "normal-mean", "hd", replications=20, steps=4000, seed=1,
                     contamination=Contamination(5, loc))
        bias[loc] = abs(run_scenario(s).row.bias)
    assert bias[-10.0] <= bias[-3.0]


def test_huber_99_bias_under_far_outliers():
    s = Scenario("x", "normal-mean", "huber-mcmc", cutoff=HUBER_99, replications=30, steps=4000, seed=2,
                 contamination=Contamination(5, -10.0))
    assert -0.9 < run_scenario(s).row.bias < -0.5


def test_huber_min_rows_have_intervals():
    s = Scenario("x", "normal-mean", "huber-min", cutoff=HUBER_80, replications=10)
    row = run_scenario(s).row
    assert 0.0 <= row.coverage <= 1.0 and row.interval_length > 0


def test_table_ids_and_layout():
    assert parse_table_id("NormalClean") == "normal-clean"
    assert parse_table_id("rand_effects") == "randeffects"
    with pytest.raises(ValueError):
        parse_table_id("table9")
    assert len(table_scenarios("normal-clean")) == 8
    assert len(table_scenarios("normal-outliers")) == 8 * 9
    assert len(table_scenarios("expgamma")) == 6
    assert len(table_scenarios("linreg")) == 9
    assert len(table_scenarios("randeffects")) == 8
    assert table_scenarios("expgamma", scale=0.1)[0][1].replications == 30
    with pytest.raises(ValueError):
        table_scenarios("linreg", scale=0.0)


def test_band_widening():
    band = Band(-0.1, 0.1, reps=200)
    assert band.bounds(200) == (-0.1, 0.1)
    lo, hi = band.bounds(50)
    assert hi == pytest.approx(0.2) and lo == pytest.approx(-0.2)
    assert Band(-math.inf, 0.02).bounds(10) == (-math.inf, 0.02)
    assert Band(0.9, math.inf).admits(0.95, 5)


def test_table_outputs_and_relative_cost():
    res = run_table("normal-clean", scale=0.05, seed=0, labels=["Posterior", "Hellinger", "Freq 80"])
    lines = sh.table_lines(res)
    assert lines[0] == sh.TABLE_COLUMNS and len(lines) == 4
    assert lines[1][11] == "-0.014999999999999999"
    diff = sh.diff_lines(res)
    assert diff[0] == sh.DIFF_COLUMNS and len(diff) == 1 + 3 * 4
    manifest = sh.manifest_dict(res)
    assert manifest["seeding"]["chain"] == "SeedSequence([seed, replication, 1])"
    assert set(manifest["relative_cost"]) == {"Posterior", "Hellinger"}
    json.loads(sh.dumps_manifest(manifest))


def test_disparity_rows_cost_more_than_likelihood():
    res = run_table("normal-clean", scale=0.05, seed=1, labels=["Posterior", "Hellinger", "Negative Exponential"])
    cost = res.relative_cost()
    for label in ("Hellinger", "Negative Exponential"):
        assert 1.5 <= cost[label] <= 12.0, cost
