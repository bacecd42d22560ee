"""End-to-end acceptance checks, one test per numbered criterion.

Every test records a verdict line that the terminal summary prints as
``criterion N PASS|FAIL``.  Simulation tables run at their base desk-scale
replication counts and are cached per module so that criteria sharing a table
do not recompute it.
"""

import json
import math
import os
from dataclasses import replace

import numpy as np

from disparitybayes import cli
from disparitybayes.disparity import (
    GaussHermiteDisparity,
    MonteCarloDisparity,
    disparity_exact_quadrature,
    disparity_gh,
    disparity_mc,
    gaussian_pairs,
)
from disparitybayes.inference import (
    NormalDensity,
    ZeroDensity,
    breakdown_limit_check,
    edap_mde_gap,
    t_functional,
)
from disparitybayes.models import LikelihoodPosterior, Normal, NormalMean, NormalPrior, build_iid_dposterior
from disparitybayes.simharness import CHECKS, run_scenario, run_table, table_scenarios

PRIOR = NormalPrior(0.0, 5.0)
G = NormalDensity(5.0, 1.0)
HD_CLOSED_FORM = 4.0 * (1.0 - math.exp(-1.0 / 8.0))

_tables = {}


def table(table_id, labels):
    key = (table_id, tuple(labels))
    if key not in _tables:
        _tables[key] = run_table(table_id, scale=1.0, seed=0, labels=labels)
    return _tables[key]


def row(result, label, parameter="mu"):
    for lab, res in result.entries:
        if lab == label:
            return res.by_parameter(parameter)
    raise KeyError(label)


def band_report(result, keys):
    """Evaluate the harness bands for ``keys`` and describe them."""
    ok, parts = True, []
    for label, parameter, stat in keys:
        r = row(result, label, parameter)
        band = CHECKS[(result.table, label, parameter, stat)]
        value = getattr(r, stat)
        lo, hi = band.bounds(r.replications)
        inside = band.admits(value, r.replications)
        ok &= inside
        parts.append(f"{label} {parameter} {stat}={value:.3f} in [{lo:.3g}, {hi:.3g}]{'' if inside else ' NO'}")
    return ok, "; ".join(parts)


# ---------------------------------------------------------------------------
# Disparity oracles
# ---------------------------------------------------------------------------

def test_criterion_01_estimator_equivalence(verdict):
    pairs = gaussian_pairs(20, 2024)
    model = Normal()
    ok, parts = True, []
    for kind in ("hd", "ned"):
        mc_err, gh_err = [], []
        for i, (mg, sg, mf, sf) in enumerate(pairs):
            g, theta = NormalDensity(mg, sg), np.array([mf, sf])
            ref = disparity_exact_quadrature(g, model, theta, kind)
            draws = np.random.default_rng([2024, i]).normal(mg, sg, 10_000)
            mc = disparity_mc(MonteCarloDisparity(g, kind, samples=draws), model, theta)
            gh = disparity_gh(GaussHermiteDisparity(g, kind, n_nodes=80), None, mf, sf)
            mc_err.append(abs(mc - ref))
            gh_err.append(abs(gh - ref))
        med, worst = float(np.median(mc_err)), float(np.max(gh_err))
        ok &= med < 0.01 and worst < 1e-5
        parts.append(f"{kind}: MC median {med:.4f}, GH max {worst:.1e}")
    verdict(1, ok, "; ".join(parts))


def test_criterion_02_hellinger_closed_form(verdict):
    quad = disparity_exact_quadrature(NormalDensity(0.0, 1.0), NormalMean(1.0), np.array([1.0]), "hd")
    gh = disparity_gh(GaussHermiteDisparity(NormalDensity(1.0, 1.0), "hd", n_nodes=80), None, 0.0, 1.0)
    ok = abs(quad - HD_CLOSED_FORM) < 1e-8 and abs(gh - HD_CLOSED_FORM) < 1e-5
    verdict(2, ok, f"exact {HD_CLOSED_FORM:.10f}, quadrature err {abs(quad - HD_CLOSED_FORM):.1e}, "
                   f"GH err {abs(gh - HD_CLOSED_FORM):.1e}")


def test_criterion_03_kl_matches_likelihood(verdict, normal20):
    model = NormalMean(1.0)
    dpost = build_iid_dposterior(normal20, model, PRIOR, "kl", method="empirical")
    lpost = LikelihoodPosterior(model, PRIOR, normal20)
    grid = np.linspace(2.0, 8.0, 61)
    d = np.array([dpost.log_target(model.to_unconstrained(np.array([t]))) for t in grid])
    ll = np.array([lpost.log_target(model.to_unconstrained(np.array([t]))) for t in grid])
    worst = float(np.max(np.abs((d - d[0]) - (ll - ll[0]))))
    verdict(3, worst < 1e-6, f"max |difference| over {grid.size} grid points {worst:.1e}")


# ---------------------------------------------------------------------------
# Simulation tables
# ---------------------------------------------------------------------------

CLEAN_LABELS = ["Posterior", "Hellinger", "Negative Exponential"]


def test_criterion_04_normal_clean(verdict):
    res = table("normal-clean", CLEAN_LABELS)
    ok, detail = band_report(res, [("Posterior", "mu", "bias"), ("Posterior", "mu", "coverage"),
                                   ("Hellinger", "mu", "coverage"), ("Negative Exponential", "mu", "coverage")])
    cost = res.relative_cost()
    detail += "; relative cost " + ", ".join(f"{k} {v:.2f}" for k, v in cost.items() if k != "Posterior")
    verdict(4, ok, detail)


def test_criterion_04_bandwidth_selector_insensitivity(verdict):
    # same data sets, Hellinger row, Silverman in place of Sheather-Jones
    sj = row(table("normal-clean", CLEAN_LABELS), "Hellinger")
    scen = dict(table_scenarios("normal-clean"))["Hellinger"]
    silverman = run_scenario(replace(scen, bandwidth="silverman")).row
    band = CHECKS[("normal-clean", "Hellinger", "mu", "coverage")]
    se = math.sqrt(2.0) * sj.sd / math.sqrt(sj.replications)
    ok = band.admits(silverman.coverage, silverman.replications) and abs(silverman.bias - sj.bias) < se
    verdict(4, ok, f"Hellinger sj bias {sj.bias:.4f} cov {sj.coverage:.3f}; "
                   f"silverman bias {silverman.bias:.4f} cov {silverman.coverage:.3f}; bias tolerance {se:.3f}")


OUTLIER_KEYS = [
    ("Posterior | 5 at -10", "mu", "bias"), ("Posterior | 5 at -10", "mu", "coverage"),
    ("Hellinger | 5 at -10", "mu", "bias"), ("Negative Exponential | 5 at -10", "mu", "bias"),
    ("Biweight | 5 at -10", "mu", "bias"), ("Biweight | 5 at -3", "mu", "bias"),
    ("Hellinger | 5 at -3", "mu", "bias"),
]


def test_criterion_05_normal_outliers(verdict):
    res = table("normal-outliers", sorted({k[0] for k in OUTLIER_KEYS}))
    verdict(5, *band_report(res, OUTLIER_KEYS))


def test_criterion_06_exp_gamma(verdict):
    labels = ["Posterior | Outlier at 20", "Negative Exponential | Outlier at 20"]
    res = table("expgamma", labels)
    verdict(6, *band_report(res, [(labels[0], "shape", "bias"), (labels[0], "shape", "coverage"),
                                  (labels[1], "shape", "bias"), (labels[1], "shape", "coverage")]))


def test_criterion_07_random_effects(verdict):
    labels = ["Likelihood | Outlying random effect", "HD - latent | Outlying random effect"]
    res = table("randeffects", labels)
    ok, detail = band_report(res, [(labels[1], "mu", "bias"), (labels[0], "mu", "bias")])
    tau = row(res, labels[0], "tau")
    verdict(7, ok and tau.mean >= 5.0, f"{detail}; likelihood mean tau {tau.mean:.2f} (needs >= 5)")


# ---------------------------------------------------------------------------
# Functional properties
# ---------------------------------------------------------------------------

def test_criterion_08_breakdown_limit(verdict):
    report = breakdown_limit_check(G, NormalMean(1.0), PRIOR, 20, 0.2, [1250.0], steps=40_000, seed=8,
                                   check_scaling=False)
    r = report.rows[0]
    verdict(8, report.within(3.0)[0],
            f"|T(h) - T((1-a)g)| = {r.difference[0]:.4f}, combined SE {r.combined_se[0]:.4f}")


def test_criterion_09_edap_approaches_mde(verdict):
    n = np.array([50, 200, 800])
    ok, parts = True, []
    for kind in ("hd", "ned"):
        gaps = edap_mde_gap(n, NormalMean(1.0), PRIOR, kind=kind, seeds=range(30), steps=4000)
        med = np.median(n[:, None] * gaps, axis=1)
        ok &= bool(np.all(np.diff(med) <= 0))
        parts.append(f"{kind} median n*gap " + " > ".join(f"{m:.4f}" for m in med))
    verdict(9, ok, "; ".join(parts))


def test_criterion_10_zero_density_gives_prior_mean(verdict):
    prior = NormalPrior(2.0, 1.5)
    val = t_functional(ZeroDensity(), NormalMean(1.0), prior, 20, steps=40_000, seed=10, proposal_scale=3.0)
    d = abs(val.edap[0] - 2.0)
    verdict(10, d < 3 * val.mc_se[0], f"|EDAP - prior mean| = {d:.4f}, 3 SE = {3 * val.mc_se[0]:.4f}")


def test_criterion_11_efficiency(verdict):
    res = table("normal-clean", CLEAN_LABELS)
    base = row(res, "Posterior").sd ** 2
    ratios = {lab: row(res, lab).sd ** 2 / base for lab in ("Hellinger", "Negative Exponential")}
    ok = all(abs(r - 1.0) <= 0.15 for r in ratios.values())
    verdict(11, ok, ", ".join(f"{k} variance ratio {v:.3f}" for k, v in ratios.items()))


# ---------------------------------------------------------------------------
# Determinism
# ---------------------------------------------------------------------------

def _csvs(path):
    return {name: open(os.path.join(path, name), "rb").read() for name in sorted(os.listdir(path))
            if name.endswith(".csv")}


def test_criterion_12_reruns_are_byte_identical(verdict, tmp_path, normal20):
    data = tmp_path / "x.csv"
    data.write_text("x\n" + "\n".join(repr(float(v)) for v in normal20) + "\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 3000}))
    commands = {
        "fit": ["fit", str(data), "normal-mean", "ned", "--config", str(cfg)],
        "table": ["table", "normal-clean", "--scale", "0.02"],
        "influence": ["influence", "normal-mean", "hd", "--z", "0:10:5", "--steps", "2000"],
        "breakdown": ["breakdown", "normal-mean", "hd", "--z", "50", "--steps", "2000"],
        "bench": ["bench", "--pairs", "3", "--mc-samples", "2000"],
    }
    mismatched = []
    for name, argv in commands.items():
        first, again = tmp_path / f"{name}-a", tmp_path / f"{name}-b"
        assert cli.main(argv + ["--seed", "12", "--out", str(first)]) == 0
        assert cli.main(["rerun", str(first / "manifest.json"), "--out", str(again)]) == 0
        a, b = _csvs(first), _csvs(again)
        if not a or a != b:
            mismatched.append(name)
    verdict(12, not mismatched, f"{len(commands)} commands rerun from manifest; mismatched: {mismatched or 'none'}")
