"""Replication engine for the simulation tables.

A :class:`Scenario` fixes a data generator, a contamination pattern, a
posterior (or estimator) and chain settings.  :func:`run_scenario` repeats it
over independent data sets and aggregates bias, spread, interval coverage and
cost into one :class:`TableRow` per reported parameter.  :func:`run_table`
assembles the scenarios of a whole table and attaches reference values.

Seeding: replication ``r`` of a scenario with master seed ``s`` draws its data
from ``SeedSequence([s, r])`` and its chain from ``SeedSequence([s, r, 1])``;
disparity estimators get ``SeedSequence([s, r, 2])``.  Scenarios that differ
only in method or contamination therefore see the same clean data sets.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from .errors import BandwidthFallbackWarning, DisparityBayesError, InsufficientData, StuckChainWarning
from .models import (
    Chi2Prior,
    ExpGamma,
    HierarchicalSpec,
    IndependentPrior,
    InverseGammaPrior,
    LikelihoodPosterior,
    LinearRegression,
    NormalMean,
    NormalPrior,
    RandomEffectsPosterior,
    SquaredPrior,
    _Posterior,
    build_iid_dposterior,
    mad_sigma,
    two_step_sigma,
)
from .models import ConditionalRegressionPosterior, HomoscedasticRegressionPosterior, MarginalRegressionPosterior
from .sampler import ChainConfig, as_seed_sequence, run_metropolis, summarize, tune_scales

# two-sided 80% and 99% normal critical values
HUBER_80 = float(stats.norm.ppf(0.9))
HUBER_99 = float(stats.norm.ppf(0.995))
TUKEY_C = 4.685

FAMILIES = ("normal-mean", "exp-gamma", "linreg", "random-effects")


# ---------------------------------------------------------------------------
# Huber and Tukey baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RobustLoss:
    """Huber or Tukey-biweight ``rho`` with cut point ``cutoff``."""

    kind: str
    cutoff: float

    def __post_init__(self):
        if self.kind not in ("huber", "tukey"):
            raise ValueError(f"unknown loss {self.kind!r}")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")

    def rho(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        c = self.cutoff
        if self.kind == "huber":
            return np.where(r <= c, 0.5 * r * r, c * r - 0.5 * c * c)
        t = np.minimum(r / c, 1.0)
        return c * c / 6.0 * (1.0 - (1.0 - t * t) ** 3)

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        c = self.cutoff
        if self.kind == "huber":
            return np.clip(r, -c, c)
        return np.where(np.abs(r) <= c, r * (1.0 - (r / c) ** 2) ** 2, 0.0)

    def dpsi(self, r):
        r = np.asarray(r, dtype=float)
        c = self.cutoff
        if self.kind == "huber":
            return (np.abs(r) <= c).astype(float)
        t2 = (r / c) ** 2
        return np.where(t2 <= 1.0, (1.0 - t2) * (1.0 - 5.0 * t2), 0.0)


def huber_tukey_logpdf(data, theta, loss: RobustLoss, prior=None, covariates=None, sigma: float = 1.0) -> float:
    """``-sum rho((x_i - m_i) / s) - n log s + log pi(theta)``.

    Without ``covariates`` the location is ``theta[0]`` and the scale is
    ``theta[1]`` when present, else the fixed ``sigma``.  With covariates
    ``theta = (b0, ..., bp, sigma)`` and ``m_i = b0 + x_i' b``.
    """
    x = np.asarray(data, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if covariates is not None:
        mean = LinearRegression(covariates).mean(theta)
        s = theta[-1]
    else:
        mean = theta[0]
        s = theta[1] if theta.size > 1 else sigma
    if not s > 0:
        return -math.inf
    value = -float(np.sum(loss.rho((x - mean) / s))) - x.size * math.log(s)
    if prior is not None:
        value += float(np.sum(prior.logpdf(theta)))
    return value


@dataclass
class RobustPosterior(_Posterior):
    """Pseudo-posterior with the log-likelihood replaced by ``-sum rho``."""

    model: object
    prior: object
    data: np.ndarray
    loss: RobustLoss

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self._regression = isinstance(self.model, LinearRegression)

    def log_likelihood(self, theta) -> float:
        if self._regression:
            mean, s = self.model.mean(theta), theta[-1]
        else:
            mean, s = theta[0], getattr(self.model, "sigma", 1.0)
        return -float(np.sum(self.loss.rho((self.data - mean) / s))) - self.data.size * math.log(s)


@dataclass(frozen=True)
class HuberFit:
    coef: np.ndarray
    sigma: float
    se: np.ndarray


def huber_minimum(y, covariates=None, cutoff: float = HUBER_80, sigma: float | None = None) -> HuberFit:
    """Minimizer of the Huber loss with a fixed scale.

    The scale is ``sigma`` when given, otherwise the MAD of least-squares
    residuals.  ``scipy``'s ``huber`` loss with ``f_scale = cutoff * scale``
    is exactly ``scale^2 sum rho(r / scale)``.  Standard errors use the
    sandwich ``s^2 mean(psi^2) / mean(psi')^2 (X'X)^{-1}``.
    """
    y = np.asarray(y, dtype=float)
    design = np.ones((y.size, 1)) if covariates is None else LinearRegression(covariates).design
    beta0, *_ = np.linalg.lstsq(design, y, rcond=None)
    if sigma is None:
        sigma = mad_sigma(y - design @ beta0)
        if not sigma > 0:
            sigma = float(np.std(y - design @ beta0)) or 1.0
    fit = optimize.least_squares(lambda b: y - design @ b, beta0, loss="huber", f_scale=cutoff * sigma,
                                 xtol=1e-12, ftol=1e-12, gtol=1e-12)
    loss = RobustLoss("huber", cutoff)
    r = (y - design @ fit.x) / sigma
    n, p = design.shape
    slope = max(float(np.mean(loss.dpsi(r))), 1.0 / n)
    spread = float(np.sum(loss.psi(r) ** 2)) / max(n - p, 1)
    cov = sigma ** 2 * spread / slope ** 2 * np.linalg.inv(design.T @ design)
    return HuberFit(fit.x, float(sigma), np.sqrt(np.diag(cov)))


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Contamination:
    """Outliers added to each clean data set.

    ``mode="append"`` adds ``count`` points (a whole group for random
    effects) at ``location``; ``mode="shift"`` moves the last ``count``
    points by ``location`` instead.  With ``relative`` the appended location
    is measured from the true mean.
    """

    count: int = 0
    location: float = 0.0
    relative: bool = True
    mode: str = "append"

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("contamination count must be non-negative")
        if self.mode not in ("append", "shift"):
            raise ValueError("mode must be 'append' or 'shift'")


@dataclass(frozen=True)
class Scenario:
    """One cell of a simulation table.

    ``method`` is ``likelihood``, a disparity kind (``hd``, ``ned``, ``kl``),
    ``huber-mcmc``, ``tukey-mcmc`` or ``huber-min``; regression adds
    ``hd-hom``/``ned-hom`` and ``hd-marg``/``ned-marg``, random effects use
    ``hd-obs``/``hd-latent``/``hd-both``.  ``n`` counts clean observations
    (observations per group for random effects).  ``bandwidth`` names the
    kernel bandwidth selector (``"sj"`` or ``"silverman"``).
    """

    name: str
    family: str
    method: str
    n: int = 20
    true_theta: tuple = (5.0,)
    contamination: Contamination = Contamination()
    cutoff: float | None = None
    steps: int = 10_000
    proposal_scale: tuple | None = None
    thinning: int = 2
    replications: int = 200
    seed: int = 0
    groups: int = 10
    level: float = 0.95
    bandwidth: str = "sj"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.contamination.count >= self.n:
            raise ValueError("contamination count must be smaller than n")
        if self.bandwidth not in ("sj", "silverman"):
            raise ValueError(f"unknown bandwidth selector {self.bandwidth!r}")
        _check_method(self.family, self.method)

    @property
    def parameters(self) -> tuple:
        return {
            "normal-mean": ("mu",),
            "exp-gamma": ("shape", "scale"),
            "linreg": tuple(f"beta{j}" for j in range(len(self.true_theta) - 1)) + ("sigma",),
            "random-effects": ("mu", "sigma", "tau"),
        }[self.family]

    @property
    def loss(self) -> RobustLoss | None:
        if self.method.startswith("huber"):
            return RobustLoss("huber", self.cutoff or HUBER_80)
        if self.method.startswith("tukey"):
            return RobustLoss("tukey", self.cutoff or TUKEY_C)
        return None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if isinstance(d.get("contamination"), dict):
            d["contamination"] = Contamination(**d["contamination"])
        for key in ("true_theta", "proposal_scale"):
            if d.get(key) is not None:
                d[key] = tuple(np.atleast_1d(d[key]).tolist())
        return cls(**d)


_METHODS = {
    "normal-mean": {"likelihood", "hd", "ned", "kl", "huber-mcmc", "tukey-mcmc", "huber-min"},
    "exp-gamma": {"likelihood", "hd", "ned", "kl"},
    "linreg": {"likelihood", "hd", "ned", "hd-hom", "ned-hom", "hd-marg", "ned-marg", "huber-mcmc", "huber-min"},
    "random-effects": {"likelihood", "hd-obs", "hd-latent", "hd-both", "ned-obs", "ned-latent", "ned-both"},
}


def _check_method(family: str, method: str) -> None:
    if method not in _METHODS[family]:
        raise ValueError(f"method {method!r} not available for {family}; choose from {sorted(_METHODS[family])}")


@dataclass(frozen=True)
class TableRow:
    """Aggregate over replications for one parameter of one scenario.

    Timings are excluded from equality so that reruns compare equal.
    """

    scenario: str
    parameter: str
    truth: float
    bias: float
    sd: float
    coverage: float
    interval_length: float
    replications: int
    excluded: int
    cpu_seconds: float = field(default=0.0, compare=False)
    setup_seconds: float = field(default=0.0, compare=False)

    @property
    def mean(self) -> float:
        return self.truth + self.bias


@dataclass
class Replicate:
    index: int
    estimate: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sample_seconds: float = 0.0
    setup_seconds: float = 0.0
    acceptance_rate: float = float("nan")
    failure: str | None = None
    fallbacks: int = 0


@dataclass
class ScenarioResult:
    scenario: Scenario
    rows: tuple
    excluded: int
    failures: tuple
    fallbacks: int

    @property
    def row(self) -> TableRow:
        return self.rows[0]

    def by_parameter(self, name: str) -> TableRow:
        for r in self.rows:
            if r.parameter == name:
                return r
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Data generators
# ---------------------------------------------------------------------------

def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _contaminate(x: np.ndarray, c: Contamination, center: float) -> np.ndarray:
    if c.count == 0:
        return x
    if c.mode == "shift":
        x = x.copy()
        x[-c.count:] += c.location
        return x
    loc = center + c.location if c.relative else c.location
    return np.concatenate([x, np.full(c.count, loc)])


def fixed_covariates(seed: int, n: int = 30, p: int = 3, rho: float = 0.5) -> np.ndarray:
    """Equicorrelated standard normal covariates, shared by every replication."""
    cov = np.full((p, p), rho) + (1.0 - rho) * np.eye(p)
    return _rng(seed).multivariate_normal(np.zeros(p), cov, size=n)


def generate_data(s: Scenario, rep: int):
    """Data set ``rep`` of scenario ``s`` (clean draw, then contamination)."""
    rng = _rng(s.seed, rep)
    c = s.contamination
    if s.family == "normal-mean":
        mu = s.true_theta[0]
        return _contaminate(rng.normal(mu, 1.0, s.n), c, mu)
    if s.family == "exp-gamma":
        k, scale = s.true_theta
        x = np.log(rng.gamma(k, scale, s.n))
        center = float(special.digamma(k) + math.log(scale))
        return _contaminate(x, c, center)
    if s.family == "linreg":
        beta, sigma = np.asarray(s.true_theta[:-1]), s.true_theta[-1]
        x = fixed_covariates(s.seed, s.n, len(beta) - 1)
        y = beta[0] + x @ beta[1:] + rng.normal(0.0, sigma, s.n)
        return _contaminate(y, c, 0.0), x
    # random effects: true_theta = (mu, sigma, tau)
    mu, sigma, tau = s.true_theta
    z = rng.normal(mu, tau, s.groups)
    y = z[:, None] + rng.normal(0.0, sigma, (s.groups, s.n))
    if c.count:
        loc = mu + c.location if c.relative else c.location
        y = np.vstack([y, loc + rng.normal(0.0, sigma, (c.count, s.n))])
    return y


# ---------------------------------------------------------------------------
# One replication
# ---------------------------------------------------------------------------

def expgamma_start(x) -> np.ndarray:
    """Moment start: ``var X = trigamma(k)``, ``E X = digamma(k) + log s``."""
    v = max(float(np.var(x, ddof=1)), 1e-6)
    k = optimize.brentq(lambda a: special.polygamma(1, a) - v, 1e-4, 1e8)
    return np.array([k, math.exp(float(np.mean(x)) - special.digamma(k))])


def _sample(post, u0, scales, chain_seed, steps, thinning, tune=False):
    t0 = time.perf_counter()
    if tune:
        tune_seed, chain_seed = as_seed_sequence(chain_seed).spawn(2)
        scales, u0 = tune_scales(post.log_target, u0, scales, tune_seed)
    chain = run_metropolis(post.log_target, u0, ChainConfig(steps, tuple(np.atleast_1d(scales)),
                                                            seed=chain_seed, thinning=thinning))
    elapsed = time.perf_counter() - t0
    if chain.stuck:
        raise _Stuck(f"acceptance rate {chain.acceptance_rate:.4f}")
    return summarize(chain, post), elapsed


class _Stuck(DisparityBayesError):
    pass


def _posterior_iid(s: Scenario, x, model, prior, est_seed):
    if s.method == "likelihood":
        return LikelihoodPosterior(model, prior, x)
    if s.loss is not None:
        return RobustPosterior(model, prior, x, s.loss)
    return build_iid_dposterior(x, model, prior, s.method, bandwidth=s.bandwidth, seed=est_seed)


def _run_normal_mean(s: Scenario, x, chain_seed, est_seed):
    if s.method == "huber-min":
        t0 = time.perf_counter()
        fit = huber_minimum(x, cutoff=s.cutoff or HUBER_80, sigma=1.0)
        elapsed = time.perf_counter() - t0
        return fit.coef, fit.coef - 2 * fit.se, fit.coef + 2 * fit.se, elapsed, 0.0, float("nan")
    t0 = time.perf_counter()
    prior = IndependentPrior(NormalPrior(0.0, 5.0))
    post = _posterior_iid(s, x, NormalMean(), prior, est_seed)
    setup = time.perf_counter() - t0
    scales = s.proposal_scale or (0.5,)
    summ, elapsed = _sample(post, np.array([np.median(x)]), scales, chain_seed, s.steps, s.thinning)
    return summ.edap, summ.lower, summ.upper, elapsed, setup, summ.acceptance_rate


def _run_exp_gamma(s: Scenario, x, chain_seed, est_seed):
    t0 = time.perf_counter()
    model = ExpGamma()
    prior = IndependentPrior(Chi2Prior(3.0), Chi2Prior(0.3))
    post = _posterior_iid(s, x, model, prior, est_seed)
    u0 = model.to_unconstrained(expgamma_start(x))
    setup = time.perf_counter() - t0
    scales = s.proposal_scale or (0.2, 0.2)
    summ, elapsed = _sample(post, u0, scales, chain_seed, s.steps, s.thinning)
    return summ.edap, summ.lower, summ.upper, elapsed, setup, summ.acceptance_rate


def linreg_prior(p: int) -> IndependentPrior:
    """``beta_j ~ N(0, 10^2)`` and ``sigma^2 ~ IG(1, 1)``."""
    return IndependentPrior(*[NormalPrior(0.0, 10.0)] * (p + 1), SquaredPrior(InverseGammaPrior(1.0, 1.0)))


def _run_linreg(s: Scenario, data, chain_seed, est_seed):
    y, x = data
    model = LinearRegression(x)
    p1 = model.design.shape[1]
    if s.method == "huber-min":
        t0 = time.perf_counter()
        fit = huber_minimum(y, x, cutoff=s.cutoff or HUBER_80)
        elapsed = time.perf_counter() - t0
        est = np.append(fit.coef, fit.sigma)
        nan = np.array([np.nan])
        return (est, np.append(fit.coef - 2 * fit.se, nan), np.append(fit.coef + 2 * fit.se, nan),
                elapsed, 0.0, float("nan"))
    t0 = time.perf_counter()
    prior = linreg_prior(p1 - 1)
    beta_ls, resid = model.least_squares(y)
    s_ls = float(np.sqrt(resid @ resid / (y.size - p1)))
    se = s_ls * np.sqrt(np.diag(np.linalg.inv(model.design.T @ model.design)))
    u0 = np.append(beta_ls, math.log(s_ls))
    scales = s.proposal_scale or tuple(np.append(se, 1.0 / math.sqrt(2.0 * y.size)))
    kind, _, variant = s.method.partition("-")
    if variant == "marg":
        post = MarginalRegressionPosterior(y, x, IndependentPrior(*prior.components[:-1]), kind,
                                           selector=s.bandwidth)
        setup = time.perf_counter() - t0
        summ, elapsed = _sample(post, beta_ls, scales[:-1], chain_seed, s.steps, s.thinning)
        t1 = time.perf_counter()
        sig = two_step_sigma((y, x), model, prior.components[-1], summ.edap, kind, steps=s.steps,
                             seed=as_seed_sequence(chain_seed).spawn(1)[0], thinning=s.thinning)
        elapsed += time.perf_counter() - t1
        return (np.append(summ.edap, sig.edap), np.append(summ.lower, sig.lower),
                np.append(summ.upper, sig.upper), elapsed, setup, summ.acceptance_rate)
    if s.method == "likelihood":
        post = LikelihoodPosterior(model, prior, y)
    elif s.loss is not None:
        post = RobustPosterior(model, prior, y, s.loss)
    elif variant == "hom":
        post = HomoscedasticRegressionPosterior(y, x, prior, kind, selector=s.bandwidth)
    else:
        post = ConditionalRegressionPosterior(y, x, prior, kind, selector=s.bandwidth)
    setup = time.perf_counter() - t0
    summ, elapsed = _sample(post, u0, scales, chain_seed, s.steps, s.thinning)
    return summ.edap, summ.lower, summ.upper, elapsed, setup, summ.acceptance_rate


def _run_random_effects(s: Scenario, y, chain_seed, est_seed):
    t0 = time.perf_counter()
    spec = HierarchicalSpec.parse(s.method)
    post = RandomEffectsPosterior(y, spec, seed=est_seed, selector=s.bandwidth)
    u0 = post.initial_state()
    setup = time.perf_counter() - t0
    scales = s.proposal_scale or tuple([0.3, 0.1, 0.2] + [0.08] * post.m)
    summ, elapsed = _sample(post, u0, scales, chain_seed, s.steps, s.thinning, tune=True)
    return summ.edap[:3], summ.lower[:3], summ.upper[:3], elapsed, setup, summ.acceptance_rate


_RUNNERS = {
    "normal-mean": _run_normal_mean,
    "exp-gamma": _run_exp_gamma,
    "linreg": _run_linreg,
    "random-effects": _run_random_effects,
}


def run_replicate(s: Scenario, rep: int) -> Replicate:
    """Replication ``rep``; failures are captured, not raised."""
    out = Replicate(rep)
    chain_seed = np.random.SeedSequence([s.seed, rep, 1])
    est_seed = np.random.SeedSequence([s.seed, rep, 2])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BandwidthFallbackWarning)
        warnings.simplefilter("ignore", StuckChainWarning)
        try:
            data = generate_data(s, rep)
            est, lo, hi, elapsed, setup, acc = _RUNNERS[s.family](s, data, chain_seed, est_seed)
            est = np.asarray(est, dtype=float)
            if not np.all(np.isfinite(est)):
                raise _Stuck("non-finite estimate")
            out.estimate, out.lower, out.upper = est, np.asarray(lo, float), np.asarray(hi, float)
            out.sample_seconds, out.setup_seconds, out.acceptance_rate = elapsed, setup, acc
        except (DisparityBayesError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            out.failure = f"{type(exc).__name__}: {exc}"
    out.fallbacks = sum(issubclass(w.category, BandwidthFallbackWarning) for w in caught)
    return out


def _replicate_star(args):
    return run_replicate(*args)


def aggregate(s: Scenario, reps: Sequence[Replicate]) -> ScenarioResult:
    """Order-independent summary of replications (sorted by index first)."""
    reps = sorted(reps, key=lambda r: r.index)
    ok = [r for r in reps if r.failure is None]
    failures = tuple((r.index, r.failure) for r in reps if r.failure is not None)
    truth = np.asarray(s.true_theta, dtype=float)[:len(s.parameters)]
    rows = []
    if ok:
        est = np.vstack([r.estimate for r in ok])
        lo = np.vstack([r.lower for r in ok])
        hi = np.vstack([r.upper for r in ok])
        cpu = float(np.mean([r.sample_seconds for r in ok]))
        setup = float(np.mean([r.setup_seconds for r in ok]))
        for k, name in enumerate(s.parameters):
            has_interval = np.all(np.isfinite(lo[:, k]))
            cover = float(np.mean((lo[:, k] <= truth[k]) & (truth[k] <= hi[:, k]))) if has_interval else float("nan")
            length = float(np.mean(hi[:, k] - lo[:, k])) if has_interval else float("nan")
            rows.append(TableRow(
                scenario=s.name, parameter=name, truth=float(truth[k]),
                bias=float(np.mean(est[:, k]) - truth[k]),
                sd=float(np.std(est[:, k], ddof=1)) if len(ok) > 1 else 0.0,
                coverage=cover, interval_length=length,
                replications=len(ok), excluded=len(failures),
                cpu_seconds=cpu, setup_seconds=setup))
    return ScenarioResult(s, tuple(rows), len(failures), failures, sum(r.fallbacks for r in reps))


def run_scenario(s: Scenario, jobs: int = 1) -> ScenarioResult:
    """Run every replication of ``s`` (in a process pool when ``jobs > 1``)."""
    tasks = [(s, r) for r in range(s.replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reps = list(pool.map(_replicate_star, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        reps = [run_replicate(*t) for t in tasks]
    result = aggregate(s, reps)
    if not result.rows:
        raise InsufficientData(f"every replication of {s.name!r} failed: {result.failures[:3]}")
    return result


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

TABLES = ("normal-clean", "normal-outliers", "expgamma", "linreg", "randeffects")
_TABLE_ALIASES = {
    "normalclean": "normal-clean", "normaloutliers": "normal-outliers", "expgamma": "expgamma",
    "linreg": "linreg", "randeffects": "randeffects",
}
BASE_REPLICATIONS = {"normal-clean": 200, "normal-outliers": 200, "expgamma": 300, "linreg": 100, "randeffects": 200}


def parse_table_id(table_id: str) -> str:
    key = str(table_id).lower().replace("-", "").replace("_", "")
    if key not in _TABLE_ALIASES:
        raise ValueError(f"unknown table {table_id!r}; choose from {', '.join(TABLES)}")
    return _TABLE_ALIASES[key]


_NORMAL_METHODS = (
    ("Posterior", "likelihood", None),
    ("Hellinger", "hd", None),
    ("Negative Exponential", "ned", None),
    ("Biweight", "tukey-mcmc", TUKEY_C),
    ("Bayes 80", "huber-mcmc", HUBER_80),
    ("Bayes 99", "huber-mcmc", HUBER_99),
    ("Freq 80", "huber-min", HUBER_80),
    ("Freq 99", "huber-min", HUBER_99),
)


def _reps(table: str, scale: float) -> int:
    if not 0.0 < scale <= 1.0:
        raise ValueError("scale must lie in (0, 1]")
    return max(2, int(round(BASE_REPLICATIONS[table] * scale)))


def table_scenarios(table_id: str, scale: float = 1.0, seed: int = 0) -> list[tuple[str, Scenario]]:
    """Labelled scenarios making up a table."""
    table = parse_table_id(table_id)
    reps = _reps(table, scale)
    out = []
    if table == "normal-clean":
        for label, method, cut in _NORMAL_METHODS:
            out.append((label, Scenario(label, "normal-mean", method, cutoff=cut, replications=reps, seed=seed)))
    elif table == "normal-outliers":
        for label, method, cut in _NORMAL_METHODS:
            for loc in (-3.0, -5.0, -10.0):
                for count in (1, 2, 5):
                    name = f"{label} | {count} at {loc:g}"
                    out.append((name, Scenario(name, "normal-mean", method, cutoff=cut, replications=reps,
                                               seed=seed, contamination=Contamination(count, loc))))
    elif table == "expgamma":
        outlier = Contamination(1, math.log(20.0), relative=False)
        for tag, cont in (("No outliers", Contamination()), ("Outlier at 20", outlier)):
            for label, method in (("Posterior", "likelihood"), ("Hellinger", "hd"), ("Negative Exponential", "ned")):
                name = f"{label} | {tag}"
                out.append((name, Scenario(name, "exp-gamma", method, true_theta=(5.0, 0.25),
                                           contamination=cont, replications=reps, seed=seed)))
    elif table == "linreg":
        rows = (("Likelihood", "likelihood"), ("HD", "hd"), ("NED", "ned"), ("HD hom", "hd-hom"),
                ("NED hom", "ned-hom"), ("HD marg", "hd-marg"), ("NED marg", "ned-marg"),
                ("Huber EAP", "huber-mcmc"), ("Huber min", "huber-min"))
        for label, method in rows:
            out.append((label, Scenario(label, "linreg", method, n=30, true_theta=(1.0, 1.0, 1.0, 1.0, 1.0),
                                        cutoff=HUBER_80 if "huber" in method else None, thinning=5,
                                        replications=reps, seed=seed)))
    else:
        outlier = Contamination(1, 40.0, relative=False)
        for tag, cont in (("No outliers", Contamination()), ("Outlying random effect", outlier)):
            for label, method in (("Likelihood", "likelihood"), ("HD - obs", "hd-obs"),
                                  ("HD - latent", "hd-latent"), ("HD - both", "hd-both")):
                name = f"{label} | {tag}"
                out.append((name, Scenario(name, "random-effects", method, n=5, groups=10,
                                           true_theta=(0.0, 0.2, 1.0), contamination=cont, thinning=5,
                                           replications=reps, seed=seed)))
    return out


# Reference values: {(label, parameter): {statistic: value}}.  Normal-table
# lengths/SDs are as printed; exp-gamma variances become SDs; regression
# means become biases against 1.
def _normal_reference():
    ref = {}
    clean = {
        "Posterior": (-0.015, 0.222, 0.956, 0.873), "Hellinger": (-0.015, 0.225, 0.954, 0.920),
        "Negative Exponential": (-0.018, 0.229, 0.973, 1.022), "Biweight": (-0.017, 0.228, 0.977, 1.007),
        "Bayes 80": (-0.017, 0.229, 0.973, 0.978), "Bayes 99": (-0.015, 0.223, 0.956, 0.877),
        "Freq 80": (-0.004, 0.229, 0.948, 0.894), "Freq 99": (-0.004, 0.223, 0.960, 0.894),
    }
    for label, (b, sd, cov, length) in clean.items():
        ref[("normal-clean", label, "mu")] = {"bias": b, "sd": sd, "coverage": cov, "interval_length": length}
    # (bias, sd, coverage) for 1, 2, 5 outliers at -3, -5, -10
    outliers = {
        "Posterior": [[(-0.164, 0.219, 0.883), (-0.300, 0.206, 0.722), (-0.637, 0.182, 0.100)],
                      [(-0.264, 0.219, 0.778), (-0.490, 0.206, 0.375), (-1.053, 0.182, 0.001)],
                      [(-0.513, 0.219, 0.360), (-0.965, 0.207, 0.004), (-2.093, 0.182, 0.000)]],
        "Hellinger": [[(-0.109, 0.246, 0.920), (-0.194, 0.275, 0.859), (-0.237, 0.299, 0.770)],
                      [(-0.027, 0.238, 0.942), (-0.040, 0.257, 0.928), (-0.024, 0.305, 0.865)],
                      [(-0.014, 0.234, 0.948), (-0.019, 0.249, 0.935), (0.018, 0.286, 0.883)]],
        "Negative Exponential": [[(-0.080, 0.256, 0.959), (-0.133, 0.279, 0.933), (-0.166, 0.308, 0.893)],
                                 [(-0.020, 0.238, 0.977), (-0.025, 0.243, 0.968), (-0.015, 0.264, 0.948)],
                                 [(-0.017, 0.237, 0.973), (-0.020, 0.241, 0.970), (-0.007, 0.260, 0.952)]],
        "Biweight": [[(-0.091, 0.246, 0.954), (-0.175, 0.252, 0.915), (-0.443, 0.275, 0.645)],
                     [(-0.018, 0.237, 0.974), (-0.019, 0.236, 0.972), (-0.022, 0.243, 0.967)],
                     [(-0.017, 0.236, 0.977), (-0.018, 0.234, 0.971), (-0.018, 0.236, 0.969)]],
        "Bayes 80": [[(-0.102, 0.237, 0.948), (-0.188, 0.235, 0.904), (-0.450, 0.241, 0.584)],
                     [(-0.101, 0.237, 0.950), (-0.188, 0.235, 0.907), (-0.451, 0.241, 0.582)],
                     [(-0.101, 0.237, 0.946), (-0.188, 0.236, 0.907), (-0.450, 0.241, 0.574)]],
        "Bayes 99": [[(-0.149, 0.228, 0.894), (-0.282, 0.221, 0.757), (-0.635, 0.192, 0.153)],
                     [(-0.151, 0.231, 0.893), (-0.290, 0.228, 0.754), (-0.704, 0.231, 0.147)],
                     [(-0.151, 0.231, 0.887), (-0.290, 0.228, 0.760), (-0.704, 0.231, 0.148)]],
        "Freq 80": [[(-0.087, 0.238, 0.922), (-0.172, 0.236, 0.872), (-0.429, 0.242, 0.454)]] * 3,
        "Freq 99": [[(-0.140, 0.230, 0.898), (-0.275, 0.223, 0.753), (-0.633, 0.188, 0.115)],
                    [(-0.140, 0.231, 0.897), (-0.279, 0.229, 0.751), (-0.693, 0.231, 0.115)],
                    [(-0.140, 0.231, 0.897), (-0.279, 0.229, 0.751), (-0.693, 0.231, 0.115)]],
    }
    for label, grid in outliers.items():
        for loc, row in zip((-3.0, -5.0, -10.0), grid):
            for count, (b, sd, cov) in zip((1, 2, 5), row):
                ref[("normal-outliers", f"{label} | {count} at {loc:g}", "mu")] = {"bias": b, "sd": sd, "coverage": cov}
    return ref


def _other_reference():
    ref = {}
    eg = {
        "No outliers": {"Posterior": ((-0.088, 0.571, 0.9516), (0.004, 0.0005, 0.9562)),
                        "Hellinger": ((-0.081, 1.005, 0.850), (0.010, 0.0011, 0.839)),
                        "Negative Exponential": ((-0.182, 0.739, 0.9436), (0.008, 0.0007, 0.9556))},
        "Outlier at 20": {"Posterior": ((-3.068, 0.001, 0.0), (0.988, 0.00006, 0.0)),
                          "Hellinger": ((-0.013, 1.046, 0.8508), (0.010, 0.0011, 0.8440)),
                          "Negative Exponential": ((-0.210, 0.725, 0.9496), (0.010, 0.0008, 0.9586))},
    }
    for tag, rows in eg.items():
        for label, pair in rows.items():
            for name, (b, var, cov) in zip(("shape", "scale"), pair):
                ref[("expgamma", f"{label} | {tag}", name)] = {"bias": b, "sd": math.sqrt(var), "coverage": cov}
    lr = {
        "Likelihood": [(1.030, 0.137), (0.996, 0.186), (0.993, 0.194), (0.998, 0.217), (1.006, 0.301)],
        "HD": [(0.974, 0.154), (1.000, 0.213), (0.993, 0.204), (0.994, 0.239), (0.980, 0.301)],
        "NED": [(0.926, 0.136), (0.997, 0.201), (0.994, 0.206), (1.001, 0.224), (0.964, 0.294)],
        "HD hom": [(0.881, 0.181), (0.995, 0.338), (0.987, 0.198), (0.995, 0.217), (0.980, 0.296)],
        "NED hom": [(0.829, 0.157), (0.993, 0.235), (0.988, 0.211), (0.996, 0.228), (0.974, 0.313)],
        "HD marg": [(1.062, 0.133), (0.997, 0.193), (0.994, 0.203), (0.997, 0.225), (1.003, 0.309)],
        "NED marg": [(1.087, 0.137), (1.000, 0.199), (0.994, 0.210), (0.998, 0.232), (1.005, 0.321)],
        "Huber EAP": [(0.878, 0.123), (0.998, 0.192), (0.994, 0.198), (1.000, 0.221), (1.005, 0.306)],
        "Huber min": [(0.919, 0.207), (0.999, 0.191), (0.995, 0.198), (1.000, 0.222), (1.006, 0.307)],
    }
    for label, cols in lr.items():
        names = ("sigma", "beta0", "beta1", "beta2", "beta3")
        for name, (m, sd) in zip(names, cols):
            ref[("linreg", label, name)] = {"bias": m - 1.0, "sd": sd}
    # the robust latent-term rows are printed under the "obs" label and the
    # observation-term rows under "rand"; keyed here by what they replace
    re_rows = {
        "No outliers": {
            "Likelihood": [(0.0013, 0.286, 0.947), (0.200, 0.0230, 0.940), (0.979, 0.234, 0.919)],
            "HD - latent": [(0.0035, 0.285, 0.937), (0.200, 0.0231, 0.939), (1.070, 0.342, 0.900)],
            "HD - obs": [(0.0021, 0.286, 0.936), (0.191, 0.0259, 0.686), (0.982, 0.231, 0.928)],
            "HD - both": [(0.0024, 0.291, 0.933), (0.191, 0.0258, 0.692), (1.068, 0.342, 0.899)],
        },
        "Outlying random effect": {
            "Likelihood": [(0.365, 0.197, 1.000), (0.200, 0.0222, 0.930), (10.11, 0.163, 0.000)],
            "HD - latent": [(0.002, 0.288, 0.926), (0.200, 0.0223, 0.922), (1.088, 0.389, 0.887)],
            "HD - obs": [(0.353, 0.252, 1.000), (0.191, 0.0249, 0.684), (10.13, 0.196, 0.000)],
            "HD - both": [(0.002, 0.295, 0.917), (0.191, 0.0249, 0.674), (1.066, 0.325, 0.885)],
        },
    }
    truth = {"mu": 0.0, "sigma": 0.2, "tau": 1.0}
    for tag, rows in re_rows.items():
        for label, cols in rows.items():
            for name, (m, sd, cov) in zip(("mu", "sigma", "tau"), cols):
                ref[("randeffects", f"{label} | {tag}", name)] = {"bias": m - truth[name], "sd": sd, "coverage": cov}
    return ref


REFERENCE = {**_normal_reference(), **_other_reference()}


@dataclass(frozen=True)
class Band:
    """Acceptance interval for a statistic, calibrated at ``reps`` replications.

    Two-sided bands widen by ``sqrt(reps / used)`` when fewer replications
    are run; one-sided bands are used as given.
    """

    lo: float
    hi: float
    reps: int = 200

    def bounds(self, used: int) -> tuple[float, float]:
        if math.isfinite(self.lo) and math.isfinite(self.hi):
            mid, half = 0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo)
            half *= max(1.0, math.sqrt(self.reps / max(used, 1)))
            return mid - half, mid + half
        return self.lo, self.hi

    def admits(self, value: float, used: int) -> bool:
        lo, hi = self.bounds(used)
        return bool(lo <= value <= hi)


_INF = math.inf
CHECKS = {
    ("normal-clean", "Posterior", "mu", "bias"): Band(-0.065, 0.035),
    ("normal-clean", "Posterior", "mu", "coverage"): Band(0.906, 1.006),
    ("normal-clean", "Hellinger", "mu", "coverage"): Band(0.894, 1.014),
    ("normal-clean", "Negative Exponential", "mu", "coverage"): Band(0.913, 1.033),
    ("normal-outliers", "Posterior | 5 at -10", "mu", "bias"): Band(-2.3, -1.9),
    ("normal-outliers", "Posterior | 5 at -10", "mu", "coverage"): Band(-_INF, 0.02),
    ("normal-outliers", "Hellinger | 5 at -10", "mu", "bias"): Band(-0.10, 0.10),
    ("normal-outliers", "Negative Exponential | 5 at -10", "mu", "bias"): Band(-0.06, 0.06),
    ("normal-outliers", "Biweight | 5 at -10", "mu", "bias"): Band(-0.06, 0.06),
    ("normal-outliers", "Biweight | 5 at -3", "mu", "bias"): Band(-0.55, -0.33),
    ("normal-outliers", "Hellinger | 5 at -3", "mu", "bias"): Band(-0.35, -0.12),
    ("expgamma", "Posterior | Outlier at 20", "shape", "bias"): Band(-_INF, -2.5, 300),
    ("expgamma", "Posterior | Outlier at 20", "shape", "coverage"): Band(-_INF, 0.02, 300),
    ("expgamma", "Negative Exponential | Outlier at 20", "shape", "bias"): Band(-0.35, -0.05, 300),
    ("expgamma", "Negative Exponential | Outlier at 20", "shape", "coverage"): Band(0.90, _INF, 300),
    ("randeffects", "HD - latent | Outlying random effect", "mu", "bias"): Band(-0.05, 0.05),
    ("randeffects", "Likelihood | Outlying random effect", "mu", "bias"): Band(0.30, 0.43),
    ("randeffects", "Likelihood | Outlying random effect", "tau", "bias"): Band(4.0, _INF),
}
for _j in range(4):
    for _label in ("Likelihood", "HD", "NED", "HD hom", "NED hom", "HD marg", "NED marg", "Huber EAP", "Huber min"):
        CHECKS[("linreg", _label, f"beta{_j}", "bias")] = Band(-0.1, 0.1, 100)

STATISTICS = ("bias", "sd", "coverage", "interval_length")


@dataclass
class TableResult:
    table: str
    scale: float
    seed: int
    entries: list = field(default_factory=list)

    def rows(self) -> list[tuple[str, TableRow]]:
        return [(label, row) for label, res in self.entries for row in res.rows]

    def reference_diff(self) -> list[dict]:
        """Observed vs reference per statistic, with acceptance bands where defined."""
        out = []
        for label, row in self.rows():
            ref = REFERENCE.get((self.table, label, row.parameter), {})
            for stat in STATISTICS:
                observed = getattr(row, stat)
                reference = ref.get(stat, float("nan"))
                band = CHECKS.get((self.table, label, row.parameter, stat))
                lo, hi = band.bounds(row.replications) if band else (float("nan"), float("nan"))
                out.append({
                    "label": label, "parameter": row.parameter, "statistic": stat,
                    "observed": observed, "reference": reference, "difference": observed - reference,
                    "lower_bound": lo, "upper_bound": hi,
                    "within": "" if band is None else str(band.admits(observed, row.replications)).lower(),
                })
        return out

    def check_failures(self) -> list[dict]:
        return [d for d in self.reference_diff() if d["within"] == "false"]

    def relative_cost(self) -> dict:
        """Sampling time of each MCMC row relative to the likelihood row of the same cell."""
        base = {}
        for label, res in self.entries:
            if res.scenario.method == "likelihood":
                base[label.split(" | ", 1)[1] if " | " in label else ""] = res.row.cpu_seconds
        out = {}
        for label, res in self.entries:
            key = label.split(" | ", 1)[1] if " | " in label else ""
            if res.scenario.method != "huber-min" and base.get(key):
                out[label] = res.row.cpu_seconds / base[key]
        return out


def run_table(table_id: str, scale: float = 1.0, seed: int = 0, jobs: int = 1,
              labels: Sequence[str] | None = None) -> TableResult:
    """Run the scenarios of a table (optionally only those in ``labels``)."""
    table = parse_table_id(table_id)
    result = TableResult(table, scale, seed)
    for label, scen in table_scenarios(table, scale, seed):
        if labels is not None and label not in labels:
            continue
        result.entries.append((label, run_scenario(scen, jobs=jobs)))
    return result


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _g17(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else format(x, ".17g")


TABLE_COLUMNS = ["table", "label", "method", "parameter", "truth", "replications", "excluded",
                 "bias", "sd", "coverage", "interval_length",
                 "ref_bias", "ref_sd", "ref_coverage", "ref_interval_length"]
DIFF_COLUMNS = ["label", "parameter", "statistic", "observed", "reference", "difference",
                "lower_bound", "upper_bound", "within"]


def table_lines(result: TableResult) -> list[list[str]]:
    lines = [TABLE_COLUMNS]
    for label, res in result.entries:
        for row in res.rows:
            ref = REFERENCE.get((result.table, label, row.parameter), {})
            lines.append([result.table, label, res.scenario.method, row.parameter, _g17(row.truth),
                          str(row.replications), str(row.excluded),
                          *(_g17(getattr(row, s)) for s in STATISTICS),
                          *(_g17(ref.get(s, float("nan"))) for s in STATISTICS)])
    return lines


def diff_lines(result: TableResult) -> list[list[str]]:
    lines = [DIFF_COLUMNS]
    for d in result.reference_diff():
        lines.append([d["label"], d["parameter"], d["statistic"], _g17(d["observed"]), _g17(d["reference"]),
                      _g17(d["difference"]), _g17(d["lower_bound"]), _g17(d["upper_bound"]), d["within"]])
    return lines


def manifest_dict(result: TableResult) -> dict:
    """Seeds, exclusions and timings (timings live here, not in the CSVs)."""
    from . import __version__

    return {
        "table": result.table,
        "scale": result.scale,
        "seed": result.seed,
        "version": __version__,
        "seeding": {"data": "SeedSequence([seed, replication])",
                    "chain": "SeedSequence([seed, replication, 1])",
                    "estimator": "SeedSequence([seed, replication, 2])"},
        "scenarios": [
            {
                "label": label,
                "scenario": res.scenario.to_dict(),
                "replications_used": res.row.replications if res.rows else 0,
                "excluded": res.excluded,
                "failures": [{"replication": i, "reason": why} for i, why in res.failures],
                "bandwidth_fallbacks": res.fallbacks,
                "cpu_seconds": res.row.cpu_seconds if res.rows else None,
                "setup_seconds": res.row.setup_seconds if res.rows else None,
            }
            for label, res in result.entries
        ],
        "relative_cost": result.relative_cost(),
    }


def dumps_manifest(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True, default=lambda o: list(o) if isinstance(o, tuple) else str(o))
