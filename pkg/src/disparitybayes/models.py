"""Parametric families, priors and D-posterior constructions.

Every posterior object exposes the same small surface used by the sampler:

* ``dim`` and ``names`` of the constrained parameter vector,
* ``to_constrained(u)`` / ``to_unconstrained(theta)`` and ``log_jacobian(u)``
  for the map from the sampler's unconstrained space,
* ``logpdf(theta)`` -- unnormalized log posterior in constrained coordinates,
  raising :class:`InvalidParam` outside the parameter space,
* ``log_target(u)`` -- the same density expressed on the unconstrained
  space, which is what the Metropolis sampler evaluates.

Scale parameters are sampled on the log scale, probabilities on the logit
scale; latent effects are sampled as they are.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import log_expit

from .disparity import (
    DisparityKind,
    EmpiricalKL,
    GaussHermiteDisparity,
    MonteCarloDisparity,
    QuadratureDisparity,
    _floor,
    _s_on_support,
    _s_over_p,
    as_gfunction,
    gauss_hermite,
    normal_logpdf,
)
from .errors import DegenerateData, InsufficientData, InvalidParam
from .sampler import as_seed_sequence
from .kde import (
    ConditionalKernelDensity,
    KernelDensity,
    LOG_SQRT_2PI,
    log_kernel_sum,
    select_bandwidth,
)

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalPrior:
    loc: float = 0.0
    scale: float = 1.0

    def logpdf(self, x) -> float:
        z = (x - self.loc) / self.scale
        return -0.5 * z * z - math.log(self.scale) - LOG_SQRT_2PI

    def sample(self, rng, size=None):
        return rng.normal(self.loc, self.scale, size)

    def mean(self) -> float:
        return self.loc


@dataclass(frozen=True)
class GammaPrior:
    """Gamma with shape ``a`` and scale ``s`` (mean ``a s``)."""

    shape: float
    scale: float

    def logpdf(self, x) -> float:
        if x <= 0:
            return -math.inf
        a, s = self.shape, self.scale
        return (a - 1.0) * math.log(x) - x / s - math.lgamma(a) - a * math.log(s)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size)

    def mean(self) -> float:
        return self.shape * self.scale


def Chi2Prior(df: float) -> GammaPrior:
    """Chi-square with ``df`` degrees of freedom, i.e. Gamma(df / 2, scale 2)."""
    return GammaPrior(df / 2.0, 2.0)


@dataclass(frozen=True)
class InverseGammaPrior:
    """Inverse gamma with shape ``a`` and scale ``b``: density prop. to ``x^-(a+1) e^(-b/x)``."""

    shape: float
    scale: float

    def logpdf(self, x) -> float:
        if x <= 0:
            return -math.inf
        a, b = self.shape, self.scale
        return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x

    def sample(self, rng, size=None):
        return self.scale / rng.gamma(self.shape, 1.0, size)

    def mean(self) -> float:
        return self.scale / (self.shape - 1.0) if self.shape > 1 else math.inf


@dataclass(frozen=True)
class SquaredPrior:
    """Prior on ``s > 0`` induced by a prior on ``s^2``.

    Lets a variance prior be attached to a standard-deviation coordinate.
    """

    base: object

    def logpdf(self, s) -> float:
        if s <= 0:
            return -math.inf
        return self.base.logpdf(s * s) + math.log(2.0 * s)

    def sample(self, rng, size=None):
        return np.sqrt(self.base.sample(rng, size))

    def mean(self) -> float:
        value, _ = integrate.quad(lambda s: s * math.exp(self.logpdf(s)), 0, np.inf)
        return value


@dataclass(frozen=True)
class IndependentPrior:
    """Product of scalar priors, one per coordinate."""

    components: tuple

    def __init__(self, *components):
        if len(components) == 1 and isinstance(components[0], (list, tuple)):
            components = tuple(components[0])
        object.__setattr__(self, "components", tuple(components))

    def logpdf(self, theta) -> float:
        total = 0.0
        for prior, value in zip(self.components, theta):
            total += prior.logpdf(value)
        return total

    def sample(self, rng) -> np.ndarray:
        return np.array([p.sample(rng) for p in self.components])

    def mean(self) -> np.ndarray:
        return np.array([p.mean() for p in self.components])


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------

class ParametricModel:
    """Base for parametric families ``f_theta``.

    Subclasses define ``names``, ``logpdf(theta, x)``, the transforms and,
    for Gaussian location-scale families, ``gaussian_params``.
    """

    names: tuple = ()
    log_coords: tuple = ()

    @property
    def dim(self) -> int:
        return len(self.names)

    def to_constrained(self, u) -> np.ndarray:
        theta = np.array(u, dtype=float)
        for k in self.log_coords:
            theta[k] = math.exp(theta[k])
        return theta

    def to_unconstrained(self, theta) -> np.ndarray:
        u = np.array(theta, dtype=float)
        for k in self.log_coords:
            u[k] = math.log(u[k])
        return u

    def log_jacobian(self, u) -> float:
        return float(sum(u[k] for k in self.log_coords))

    def validate(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidParam(f"expected {self.dim} parameters, got shape {theta.shape}")
        for k in self.log_coords:
            if not theta[k] > 0:
                raise InvalidParam(f"{self.names[k]} must be positive, got {theta[k]}")

    def gaussian_params(self, theta):
        return None

    def logpdf(self, theta, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class NormalMean(ParametricModel):
    """``N(mu, sigma^2)`` with ``sigma`` known."""

    sigma: float = 1.0
    names = ("mu",)

    def logpdf(self, theta, x):
        return normal_logpdf(x, theta[0], self.sigma)

    def gaussian_params(self, theta):
        return float(theta[0]), self.sigma


class Normal(ParametricModel):
    """``N(mu, sigma^2)`` with ``theta = (mu, sigma)``; ``sigma`` sampled on the log scale."""

    names = ("mu", "sigma")
    log_coords = (1,)

    def logpdf(self, theta, x):
        return normal_logpdf(x, theta[0], theta[1])

    def gaussian_params(self, theta):
        return float(theta[0]), float(theta[1])


class ExpGamma(ParametricModel):
    """Law of ``X = log W`` with ``W ~ Gamma(shape k, scale s)``.

    ``log f(x) = k x - e^x / s - lgamma(k) - k log s``; ``theta = (k, s)``,
    both sampled on the log scale.
    """

    names = ("shape", "scale")
    log_coords = (0, 1)

    def logpdf(self, theta, x):
        k, s = theta[0], theta[1]
        x = np.asarray(x, dtype=float)
        return k * x - np.exp(x) / s - math.lgamma(k) - k * math.log(s)

    def sample(self, theta, size, rng):
        return np.log(rng.gamma(theta[0], theta[1], size))


# ---------------------------------------------------------------------------
# Posteriors for i.i.d. data
# ---------------------------------------------------------------------------

class _Posterior:
    """Shared transform plumbing; ``model`` supplies the coordinates."""

    model: ParametricModel
    prior: object

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def names(self) -> tuple:
        return self.model.names

    def to_constrained(self, u):
        return self.model.to_constrained(u)

    def to_unconstrained(self, theta):
        return self.model.to_unconstrained(theta)

    def log_jacobian(self, u) -> float:
        return self.model.log_jacobian(u)

    def log_likelihood(self, theta) -> float:
        raise NotImplementedError

    def _logpdf(self, theta) -> float:
        # a scalar prior on a length-1 parameter returns a length-1 array
        lp = float(np.sum(self.prior.logpdf(theta)))
        if lp == -math.inf:
            return lp
        return self.log_likelihood(theta) + lp

    def logpdf(self, theta) -> float:
        self.model.validate(theta)
        return self._logpdf(np.asarray(theta, dtype=float))

    def log_target(self, u) -> float:
        value = self._logpdf(self.model.to_constrained(u)) + self.model.log_jacobian(u)
        return value if value == value else -math.inf


@dataclass
class LikelihoodPosterior(_Posterior):
    """Ordinary posterior ``sum log f(x_i) + log pi``."""

    model: ParametricModel
    prior: object
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)

    def log_likelihood(self, theta) -> float:
        return float(np.sum(self.model.logpdf(theta, self.data)))


@dataclass
class DPosterior(_Posterior):
    """``-n D(g_n, f_theta) + log pi(theta)`` for a frozen disparity estimator."""

    model: ParametricModel
    prior: object
    estimator: object
    n: float

    def log_likelihood(self, theta) -> float:
        return -self.n * self.estimator.evaluate(self.model, theta)


def iid_dposterior_logpdf(data, model, prior, estimator, theta) -> float:
    """Unnormalized log D-posterior ``-n D(g_n, f_theta) + log pi(theta)``."""
    n = len(np.atleast_1d(data))
    return DPosterior(model, prior, estimator, n).logpdf(theta)


def build_iid_dposterior(data, model, prior, kind, method: str | None = None,
                         bandwidth="sj", n_samples: int = 1000, n_nodes: int = 80,
                         seed=None) -> DPosterior:
    """KDE from ``data`` plus the default estimator for ``kind``.

    ``method`` is ``"mc"``, ``"gh"``, ``"quadrature"`` or ``"empirical"``
    (KL only).  The default is Monte Carlo for Hellinger and Gauss-Hermite
    for the other kinds when the family is Gaussian, otherwise a fixed
    quadrature grid on the support of the KDE.
    """
    data = np.asarray(data, dtype=float)
    gfun = as_gfunction(kind)
    if method == "empirical":
        if gfun.kind is not DisparityKind.KL:
            raise ValueError("the empirical form exists only for the KL kind")
        return DPosterior(model, prior, EmpiricalKL(data), data.size)
    c = select_bandwidth(data, bandwidth) if isinstance(bandwidth, str) else float(bandwidth)
    g = KernelDensity(data, c)
    gaussian = model.gaussian_params(model.to_constrained(np.zeros(model.dim))) is not None
    if method is None:
        if gfun.kind is DisparityKind.HELLINGER:
            method = "mc"
        else:
            method = "gh" if gaussian else "quadrature"
    if method == "mc":
        est = MonteCarloDisparity(g, gfun, n_samples=n_samples, seed=seed)
    elif method == "gh":
        est = GaussHermiteDisparity(g, gfun, n_nodes=n_nodes)
    elif method == "quadrature":
        est = kde_quadrature(g, gfun)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DPosterior(model, prior, est, data.size)


def kde_quadrature(g: KernelDensity, kind, reach: float = 9.0, panels_per_bandwidth: float = 2.0,
                   order: int = 8) -> QuadratureDisparity:
    """Fixed Gauss-Legendre grid covering a kernel density estimate."""
    c = g.bandwidth
    pts = np.sort(g.points)
    # merge the +-reach*c windows around the points into disjoint intervals
    intervals = []
    lo, hi = pts[0] - reach * c, pts[0] + reach * c
    for p in pts[1:]:
        if p - reach * c <= hi:
            hi = p + reach * c
        else:
            intervals.append((lo, hi))
            lo, hi = p - reach * c, p + reach * c
    intervals.append((lo, hi))
    return QuadratureDisparity(g, kind, intervals, panel_width=c / panels_per_bandwidth, order=order)


# ---------------------------------------------------------------------------
# Grouped kernel disparities against Gaussians
# ---------------------------------------------------------------------------

class GroupedDisparity:
    """``D(KDE(points_g), N(mu_g, sd_g^2))`` for many groups at once.

    All groups share the bandwidth and have the same number of points.  The
    kernel centres may change between calls (latent variables); Monte Carlo
    draws are then moved with them through frozen kernel noise and indices,
    Gauss-Hermite nodes follow the Gaussian.

    Parameters
    ----------
    kind : disparity kind
    bandwidth : float
    groups, size : int
        Shape of the ``points`` array passed to :meth:`__call__`.
    method : {"mc", "gh"}
    """

    def __init__(self, kind, bandwidth: float, groups: int, size: int, method: str | None = None,
                 n_samples: int = 500, n_nodes: int = 80, seed=None):
        self.gfun = as_gfunction(kind)
        self.kind = self.gfun.kind
        if method is None:
            method = "mc" if self.kind is DisparityKind.HELLINGER else "gh"
        if method not in ("mc", "gh"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.bandwidth = float(bandwidth)
        self.shape = (groups, size)
        self._log_norm = math.log(size * self.bandwidth) + LOG_SQRT_2PI
        if method == "mc":
            rng = np.random.default_rng(seed)
            self.noise = rng.standard_normal((groups, n_samples))
            self.index = rng.integers(0, size, (groups, n_samples))
            self._rows = np.arange(groups)[:, None]
        else:
            nodes, weights = gauss_hermite(n_nodes)
            self.nodes = nodes
            self.weights = weights / _SQRT_PI

    def _log_kde(self, x, points):
        u = (x[:, :, None] - points[:, None, :]) / self.bandwidth
        return log_kernel_sum(-0.5 * u * u) - self._log_norm

    def __call__(self, points, mu, sd) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(self.shape)
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (self.shape[0],))[:, None]
        sd = np.broadcast_to(np.asarray(sd, dtype=float), (self.shape[0],))[:, None]
        if self.method == "mc":
            z = self.bandwidth * self.noise + points[self._rows, self.index]
            lg = _floor(self._log_kde(z, points))
            lf = _floor(-0.5 * ((z - mu) / sd) ** 2 - np.log(sd) - LOG_SQRT_2PI)
            values = self.gfun.offset + _s_over_p(self.kind, lg, lf, lg).mean(axis=1)
        else:
            xi = mu + _SQRT2 * sd * self.nodes[None, :]
            lg = _floor(self._log_kde(xi, points))
            lf = _floor(-0.5 * ((xi - mu) / sd) ** 2 - np.log(sd) - LOG_SQRT_2PI)
            values = self.gfun.offset + _s_over_p(self.kind, lg, lf, lf) @ self.weights
        return np.where(np.isfinite(values), values, np.inf)


# ---------------------------------------------------------------------------
# Linear regression
# ---------------------------------------------------------------------------

class LinearRegression(ParametricModel):
    """``y_i ~ N(b0 + x_i' b, sigma^2)``; ``theta = (b0, b1, ..., bp, sigma)``."""

    def __init__(self, covariates):
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.covariates = x
        self.design = np.column_stack([np.ones(len(x)), x])
        p = x.shape[1]
        self.names = tuple(f"beta{j}" for j in range(p + 1)) + ("sigma",)
        self.log_coords = (p + 1,)

    def mean(self, theta) -> np.ndarray:
        return self.design @ np.asarray(theta[:-1], dtype=float)

    def logpdf(self, theta, y):
        return normal_logpdf(y, self.mean(theta), theta[-1])

    def least_squares(self, y) -> tuple[np.ndarray, np.ndarray]:
        beta, *_ = np.linalg.lstsq(self.design, np.asarray(y, dtype=float), rcond=None)
        return beta, np.asarray(y) - self.design @ beta


def mad_sigma(residuals) -> float:
    """Robust scale ``median |e - median(e)| / 0.674``."""
    e = np.asarray(residuals, dtype=float)
    return float(np.median(np.abs(e - np.median(e))) / 0.674)


def _response_grid(values, bandwidth: float, scale: float, reach: float = 10.0, order: int = 8):
    lo = float(np.min(values)) - reach * bandwidth
    hi = float(np.max(values)) + reach * bandwidth
    width = 0.5 * min(bandwidth, scale)
    panels = max(1, int(math.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    bx, bw = np.polynomial.legendre.leggauss(order)
    nodes = (mid[:, None] + half[:, None] * bx[None, :]).ravel()
    weights = (half[:, None] * bw[None, :]).ravel()
    return nodes, weights


@dataclass
class ConditionalRegressionPosterior(_Posterior):
    """``-sum_i D(g_n(. | X_i), N(eta_i, sigma^2)) + log pi``.

    The conditional densities do not depend on ``theta``; they are evaluated
    once on a fixed Gauss-Legendre grid in the response, and each step only
    evaluates the Gaussian densities on that grid.
    """

    y: np.ndarray
    covariates: np.ndarray
    prior: object
    kind: object = "hd"
    bandwidth_y: float | None = None
    bandwidth_x: float | None = None
    selector: str = "sj"
    covariate_bandwidth: str = "norms"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.model = LinearRegression(self.covariates)
        self.gfun = as_gfunction(self.kind)
        x = self.model.covariates
        _, resid = self.model.least_squares(self.y)
        if self.bandwidth_y is None:
            self.bandwidth_y = select_bandwidth(resid, self.selector)
        if self.bandwidth_x is None:
            if self.covariate_bandwidth == "norms":
                self.bandwidth_x = select_bandwidth(np.linalg.norm(x, axis=1), self.selector)
            elif self.covariate_bandwidth == "coordinates":
                self.bandwidth_x = float(np.mean([select_bandwidth(col, self.selector) for col in x.T]))
            else:
                raise ValueError("covariate_bandwidth must be 'norms' or 'coordinates'")
        self.density = ConditionalKernelDensity(self.y, x, self.bandwidth_y, self.bandwidth_x)
        scale = float(np.std(resid, ddof=x.shape[1] + 1))
        self.nodes, self.weights = _response_grid(self.y, self.bandwidth_y, scale)
        with np.errstate(divide="ignore"):
            log_g = np.vstack([self.density.at(xi).logpdf(self.nodes) for xi in x])
        self.log_g = _floor(log_g)
        self.offset = self.gfun.offset + (math.e if self.gfun.kind is DisparityKind.NED else 0.0)

    def disparities(self, theta) -> np.ndarray:
        eta = self.model.mean(theta)[:, None]
        sigma = theta[-1]
        lf = _floor(-0.5 * ((self.nodes[None, :] - eta) / sigma) ** 2 - math.log(sigma) - LOG_SQRT_2PI)
        return self.offset + _s_on_support(self.gfun.kind, self.log_g, lf) @ self.weights

    def log_likelihood(self, theta) -> float:
        return -float(np.sum(self.disparities(theta)))


def conditional_regression_logpdf(data, model, prior, theta, kind="hd") -> float:
    """Conditional D-posterior for ``data = (y, X)``; ``model`` is a :class:`LinearRegression`."""
    y, x = data
    post = ConditionalRegressionPosterior(y, x, prior, kind)
    return post.logpdf(theta)


@dataclass
class MarginalRegressionPosterior(_Posterior):
    """First step of the marginal formulation, over the coefficients only.

    ``-n D(phi_{0,1}, g_n^(m)(., beta, sigma_tilde)) + log pi(beta)`` where
    ``g_n^(m)`` is the KDE of residuals scaled by the fixed robust scale
    ``sigma_tilde``.  The standard normal plays the role of the data
    density, so Gauss-Hermite nodes of ``N(0, 1)`` are fixed.
    """

    y: np.ndarray
    covariates: np.ndarray
    prior: object
    kind: object = "hd"
    sigma_tilde: float | None = None
    bandwidth: float | None = None
    selector: str = "sj"
    n_nodes: int = 80

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        full = LinearRegression(self.covariates)
        self.design = full.design
        self._names = full.names[:-1]
        self.gfun = as_gfunction(self.kind)
        beta0, resid = full.least_squares(self.y)
        self.beta_ls = beta0
        if self.sigma_tilde is None:
            self.sigma_tilde = mad_sigma(resid)
        if self.bandwidth is None:
            self.bandwidth = select_bandwidth(resid / self.sigma_tilde, self.selector)
        nodes, weights = gauss_hermite(self.n_nodes)
        self.nodes = _SQRT2 * nodes
        self.weights = weights / _SQRT_PI
        self.log_phi = -0.5 * self.nodes ** 2 - LOG_SQRT_2PI
        self.n = self.y.size
        self._log_norm = math.log(self.n * self.bandwidth) + LOG_SQRT_2PI

    @property
    def dim(self) -> int:
        return self.design.shape[1]

    @property
    def names(self) -> tuple:
        return self._names

    def to_constrained(self, u):
        return np.asarray(u, dtype=float)

    def to_unconstrained(self, theta):
        return np.asarray(theta, dtype=float)

    def log_jacobian(self, u) -> float:
        return 0.0

    def disparity(self, beta) -> float:
        e = (self.y - self.design @ beta) / self.sigma_tilde
        u = (self.nodes[:, None] - e[None, :]) / self.bandwidth
        log_gm = _floor(log_kernel_sum(-0.5 * u * u) - self._log_norm)
        # phi is the data-side density here, g^(m) the model side
        terms = _s_over_p(self.gfun.kind, self.log_phi, log_gm, self.log_phi)
        return self.gfun.offset + float(terms @ self.weights)

    def log_likelihood(self, theta) -> float:
        return -self.n * self.disparity(theta)

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidParam(f"expected {self.dim} coefficients")
        return self._logpdf(theta)

    def log_target(self, u) -> float:
        value = self._logpdf(np.asarray(u, dtype=float))
        return value if value == value else -math.inf


def marginal_regression_logpdf(data, model, prior, sigma_plugin, theta, kind="hd") -> float:
    y, x = data
    return MarginalRegressionPosterior(y, x, prior, kind, sigma_tilde=sigma_plugin).logpdf(theta)


@dataclass
class MarginalSigmaPosterior:
    """Second step: ``-n D(g_n^(m)(., beta_hat, sigma), phi_{0,1}) + log pi(sigma)``.

    Sampled on ``log sigma``; the KDE bandwidth stays fixed while the
    residuals are rescaled by ``sigma``.
    """

    residuals: np.ndarray
    prior: object
    kind: object = "hd"
    bandwidth: float = 0.3
    n_nodes: int = 80
    names = ("sigma",)
    dim = 1

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=float)
        if self.residuals.size < 3:
            raise InsufficientData("need at least three residuals")
        self.gfun = as_gfunction(self.kind)
        nodes, weights = gauss_hermite(self.n_nodes)
        self.nodes = _SQRT2 * nodes
        self.weights = weights / _SQRT_PI
        self.log_phi = -0.5 * self.nodes ** 2 - LOG_SQRT_2PI
        self.n = self.residuals.size
        self._log_norm = math.log(self.n * self.bandwidth) + LOG_SQRT_2PI

    def disparity(self, sigma: float) -> float:
        e = self.residuals / sigma
        u = (self.nodes[:, None] - e[None, :]) / self.bandwidth
        log_g = _floor(log_kernel_sum(-0.5 * u * u) - self._log_norm)
        terms = _s_over_p(self.gfun.kind, log_g, self.log_phi, self.log_phi)
        return self.gfun.offset + float(terms @ self.weights)

    def to_constrained(self, u):
        return np.exp(np.asarray(u, dtype=float))

    def to_unconstrained(self, theta):
        return np.log(np.asarray(theta, dtype=float))

    def log_jacobian(self, u) -> float:
        return float(u[0])

    def logpdf(self, theta) -> float:
        sigma = float(np.asarray(theta).ravel()[0])
        if not sigma > 0:
            raise InvalidParam("sigma must be positive")
        return -self.n * self.disparity(sigma) + self.prior.logpdf(sigma)

    def log_target(self, u) -> float:
        sigma = math.exp(u[0])
        value = -self.n * self.disparity(sigma) + self.prior.logpdf(sigma) + u[0]
        return value if value == value else -math.inf


def two_step_sigma(data, model, prior, beta_hat, kind="hd", steps: int = 10_000, seed=0,
                   proposal_scale: float = 0.2, thinning: int = 5, bandwidth: float | None = None):
    """Posterior summary for ``sigma`` with the coefficients fixed at ``beta_hat``.

    ``model`` is a :class:`LinearRegression`; ``prior`` is a prior on sigma.
    """
    from .sampler import ChainConfig, run_metropolis, summarize

    y, x = data
    y = np.asarray(y, dtype=float)
    if y.size < 3:
        raise InsufficientData("two-step sigma needs at least three observations")
    if model is None:
        model = LinearRegression(x)
    resid = y - model.design @ np.asarray(beta_hat, dtype=float)
    scale = mad_sigma(resid)
    if not scale > 0:
        scale = float(np.std(resid)) or 1.0
    if bandwidth is None:
        bandwidth = select_bandwidth(resid / scale, "sj")
    post = MarginalSigmaPosterior(resid, prior, kind, bandwidth)
    cfg = ChainConfig(steps=steps, proposal_scales=(proposal_scale,), seed=seed, thinning=thinning)
    chain = run_metropolis(post.log_target, np.array([math.log(scale)]), cfg)
    return summarize(chain, post, thinning=thinning)


@dataclass
class HomoscedasticRegressionPosterior(_Posterior):
    """Conditional-homoscedastic formulation.

    Residuals ``r_j = y_j - m_n(X_j)`` from the Nadaraya-Watson mean share one
    KDE ``g_r``; observation ``i`` contributes
    ``D(g_r, N(eta_i - m_n(X_i), sigma^2))``.
    """

    y: np.ndarray
    covariates: np.ndarray
    prior: object
    kind: object = "hd"
    bandwidth_r: float | None = None
    bandwidth_x: float | None = None
    selector: str = "sj"
    covariate_bandwidth: str = "norms"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.model = LinearRegression(self.covariates)
        self.gfun = as_gfunction(self.kind)
        x = self.model.covariates
        if self.bandwidth_x is None:
            if self.covariate_bandwidth == "norms":
                self.bandwidth_x = select_bandwidth(np.linalg.norm(x, axis=1), self.selector)
            else:
                self.bandwidth_x = float(np.mean([select_bandwidth(col, self.selector) for col in x.T]))
        self.nw_mean = nadaraya_watson_mean(self.y, x, self.bandwidth_x)
        resid = self.y - self.nw_mean
        if self.bandwidth_r is None:
            self.bandwidth_r = select_bandwidth(resid, self.selector)
        self.residual_density = KernelDensity(resid, self.bandwidth_r)
        scale = float(np.std(resid, ddof=1))
        self.nodes, self.weights = _response_grid(resid, self.bandwidth_r, scale)
        self.log_g = _floor(self.residual_density.logpdf(self.nodes))
        self.offset = self.gfun.offset + (math.e if self.gfun.kind is DisparityKind.NED else 0.0)

    def disparities(self, theta) -> np.ndarray:
        shift = (self.model.mean(theta) - self.nw_mean)[:, None]
        sigma = theta[-1]
        lf = _floor(-0.5 * ((self.nodes[None, :] - shift) / sigma) ** 2 - math.log(sigma) - LOG_SQRT_2PI)
        return self.offset + _s_on_support(self.gfun.kind, self.log_g[None, :], lf) @ self.weights

    def log_likelihood(self, theta) -> float:
        return -float(np.sum(self.disparities(theta)))


def homoscedastic_regression_logpdf(data, model, prior, theta, kind="hd") -> float:
    y, x = data
    return HomoscedasticRegressionPosterior(y, x, prior, kind).logpdf(theta)


def nadaraya_watson_mean(y, covariates, bandwidth: float) -> np.ndarray:
    """Kernel-weighted mean of ``y`` at each observed covariate vector."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1) / bandwidth ** 2
    w = np.exp(-0.5 * (d2 - d2.min(axis=1, keepdims=True)))
    return (w @ y) / w.sum(axis=1)


# ---------------------------------------------------------------------------
# Hierarchical models
# ---------------------------------------------------------------------------

def _parse_term(term) -> DisparityKind | None:
    if term is None or str(term).lower() in ("likelihood", "lik", "none"):
        return None
    return DisparityKind.parse(term)


@dataclass(frozen=True)
class HierarchicalSpec:
    """Which factors of a complete-data likelihood are replaced by disparities.

    ``observation_term`` and ``latent_term`` are ``"likelihood"`` or a
    disparity kind (``"hd"``, ``"ned"``, ``"kl"``).
    """

    observation_term: str = "likelihood"
    latent_term: str = "likelihood"
    latent_dim: int = 0

    @property
    def observation_kind(self):
        return _parse_term(self.observation_term)

    @property
    def latent_kind(self):
        return _parse_term(self.latent_term)

    @classmethod
    def parse(cls, label: str, latent_dim: int = 0) -> "HierarchicalSpec":
        """From labels like ``"likelihood"``, ``"hd-latent"``, ``"hd-obs"``, ``"ned-both"``."""
        label = label.strip().lower()
        if label in ("likelihood", "lik", "posterior"):
            return cls("likelihood", "likelihood", latent_dim)
        kind, _, where = label.partition("-")
        DisparityKind.parse(kind)
        where = where or "latent"
        if where in ("latent", "rand", "random"):
            return cls("likelihood", kind, latent_dim)
        if where in ("obs", "observation"):
            return cls(kind, "likelihood", latent_dim)
        if where == "both":
            return cls(kind, kind, latent_dim)
        raise ValueError(f"unknown hierarchical label {label!r}")


def _sj_or_silverman(values, selector="sj") -> float:
    values = np.asarray(values, dtype=float)
    if np.ptp(values) == 0:
        raise DegenerateData("all values equal; cannot choose a bandwidth")
    return select_bandwidth(values, selector)


class RandomEffectsPosterior:
    """One-way random effects ``Y_ij = Z_i + e_ij``, ``Z_i ~ N(mu, tau^2)``.

    Sampler coordinates are ``(mu, log sigma, log tau, Z_1, ..., Z_m)``; the
    constrained vector replaces the logs by ``sigma`` and ``tau``.  Either
    factor of the complete-data likelihood may be replaced:

    * observation term: ``-sum_i n_i D(g_i, N(0, sigma^2))`` with ``g_i`` the
      KDE of ``Y_ij - Z_i`` within group ``i``;
    * latent term: ``-m D(g_m(.; Z), N(mu, tau^2))`` with ``g_m`` the KDE of
      the current latent values.

    Bandwidths are chosen once, by Sheather-Jones on the group means and on
    the pooled within-group residuals, and then held fixed.
    """

    def __init__(self, groups: Sequence, spec: HierarchicalSpec, prior: IndependentPrior | None = None,
                 n_samples: int = 500, n_nodes: int = 80, seed=None, selector: str = "sj",
                 bandwidth_latent: float | None = None, bandwidth_obs: float | None = None):
        y = np.asarray(groups, dtype=float)
        if y.ndim != 2:
            raise ValueError("groups must all have the same size")
        self.y = y
        self.m, self.k = y.shape
        if self.m < 2 or self.k < 2:
            raise InsufficientData("need at least two groups of two observations")
        self.spec = spec
        if prior is None:
            prior = default_random_effects_prior()
        self.prior = prior
        self.names = ("mu", "sigma", "tau") + tuple(f"Z{i + 1}" for i in range(self.m))
        self.dim = len(self.names)
        means = y.mean(axis=1)
        resid = (y - means[:, None]).ravel()
        ss = as_seed_sequence(seed if seed is not None else 0)
        s_obs, s_lat = ss.spawn(2)
        obs_kind, lat_kind = spec.observation_kind, spec.latent_kind
        self.obs_term = None
        self.lat_term = None
        if obs_kind is not None:
            c1 = bandwidth_obs or _sj_or_silverman(resid, selector)
            self.obs_term = GroupedDisparity(obs_kind, c1, self.m, self.k, n_samples=n_samples,
                                             n_nodes=n_nodes, seed=s_obs)
        if lat_kind is not None:
            c2 = bandwidth_latent or _sj_or_silverman(means, selector)
            self.lat_term = GroupedDisparity(lat_kind, c2, 1, self.m, n_samples=n_samples,
                                             n_nodes=n_nodes, seed=s_lat)

    def initial_state(self) -> np.ndarray:
        """Unconstrained start at per-group means and moment estimates."""
        means = self.y.mean(axis=1)
        sigma = float(np.sqrt(np.mean(np.var(self.y, axis=1, ddof=1))))
        tau = float(np.std(means, ddof=1))
        return np.concatenate([[means.mean(), math.log(max(sigma, 1e-3)), math.log(max(tau, 1e-3))], means])

    def to_constrained(self, u):
        theta = np.array(u, dtype=float)
        theta[1:3] = np.exp(theta[1:3])
        return theta

    def to_unconstrained(self, theta):
        u = np.array(theta, dtype=float)
        u[1:3] = np.log(u[1:3])
        return u

    def log_jacobian(self, u) -> float:
        return float(u[1] + u[2])

    def _logpdf(self, theta) -> float:
        mu, sigma, tau = theta[0], theta[1], theta[2]
        z = theta[3:]
        lp = self.prior.logpdf(theta[:3])
        if lp == -math.inf:
            return lp
        if self.obs_term is None:
            r = (self.y - z[:, None]) / sigma
            obs = -0.5 * float(np.sum(r * r)) - self.y.size * (math.log(sigma) + LOG_SQRT_2PI)
        else:
            d = self.obs_term(self.y - z[:, None], 0.0, sigma)
            obs = -self.k * float(np.sum(d))
        if self.lat_term is None:
            r = (z - mu) / tau
            lat = -0.5 * float(r @ r) - self.m * (math.log(tau) + LOG_SQRT_2PI)
        else:
            lat = -self.m * float(self.lat_term(z[None, :], mu, tau)[0])
        return obs + lat + lp

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidParam(f"expected {self.dim} coordinates")
        if not (theta[1] > 0 and theta[2] > 0):
            raise InvalidParam("sigma and tau must be positive")
        return self._logpdf(theta)

    def log_target(self, u) -> float:
        value = self._logpdf(self.to_constrained(u)) + self.log_jacobian(u)
        return value if value == value else -math.inf


def default_random_effects_prior() -> IndependentPrior:
    """``mu ~ N(0, 1)``, ``sigma^2 ~ IG(2, 0.04)``, ``tau^2 ~ IG(2, 1)``."""
    return IndependentPrior(NormalPrior(0.0, 1.0),
                            SquaredPrior(InverseGammaPrior(2.0, 0.04)),
                            SquaredPrior(InverseGammaPrior(2.0, 1.0)))


def random_effects_logpdf(spec: HierarchicalSpec, data, state, prior=None, **kwargs) -> float:
    """Log density of the (possibly disparity-replaced) complete-data posterior.

    ``state = (mu, sigma, tau, Z_1, ..., Z_m)`` in constrained coordinates.
    """
    return RandomEffectsPosterior(data, spec, prior, **kwargs).logpdf(state)


class BinomialLogitNormalPosterior:
    """``k_i ~ Bin(N_i, p_i)``, ``logit p_i ~ N(mu, sigma^2)``.

    Sampler coordinates ``(mu, log sigma, logit p_1, ..., logit p_n)``;
    constrained coordinates ``(mu, sigma, logit p_i)``.  With ``kind`` set the
    latent normal likelihood is replaced by ``-n D(g_n(.; logit p),
    N(mu, sigma^2))`` with a Sheather-Jones bandwidth fixed from the
    empirical logits.  Priors: ``mu ~ N(0, 5)`` (variance 5) and
    ``sigma^2 ~ IG(3, 0.5)``.
    """

    def __init__(self, successes, trials, kind=None, prior: IndependentPrior | None = None,
                 n_nodes: int = 80, n_samples: int = 500, method: str | None = None, seed=None,
                 bandwidth: float | None = None):
        k = np.asarray(successes, dtype=float)
        n_trials = np.asarray(trials, dtype=float)
        if k.shape != n_trials.shape:
            raise ValueError("successes and trials differ in length")
        if k.size < 2:
            raise InsufficientData("need at least two units")
        if np.any(k < 0) or np.any(k > n_trials):
            raise InvalidParam("counts must satisfy 0 <= k <= N")
        self.k, self.trials = k, n_trials
        self.n = k.size
        self.kind = None if kind is None else _parse_term(kind)
        if prior is None:
            prior = IndependentPrior(NormalPrior(0.0, math.sqrt(5.0)), SquaredPrior(InverseGammaPrior(3.0, 0.5)))
        self.prior = prior
        self.names = ("mu", "sigma") + tuple(f"logit_p{i + 1}" for i in range(self.n))
        self.dim = len(self.names)
        self.term = None
        if self.kind is not None:
            emp = self.empirical_logits()
            if k.size < 2 or np.ptp(emp) == 0:
                raise InsufficientData("empirical logits are degenerate")
            c = bandwidth or select_bandwidth(emp, "sj")
            self.bandwidth = c
            self.term = GroupedDisparity(self.kind, c, 1, self.n, method=method, n_samples=n_samples,
                                         n_nodes=n_nodes, seed=seed)

    def empirical_logits(self) -> np.ndarray:
        """Logits of ``(k + 0.5) / (N + 1)``, a continuity-corrected proportion."""
        p = (self.k + 0.5) / (self.trials + 1.0)
        return np.log(p / (1.0 - p))

    def initial_state(self) -> np.ndarray:
        lam = self.empirical_logits()
        return np.concatenate([[lam.mean(), math.log(max(np.std(lam, ddof=1), 1e-2))], lam])

    def to_constrained(self, u):
        theta = np.array(u, dtype=float)
        theta[1] = math.exp(theta[1])
        return theta

    def to_unconstrained(self, theta):
        u = np.array(theta, dtype=float)
        u[1] = math.log(u[1])
        return u

    def log_jacobian(self, u) -> float:
        return float(u[1])

    def _logpdf(self, theta) -> float:
        mu, sigma = theta[0], theta[1]
        lam = theta[2:]
        lp = self.prior.logpdf(theta[:2])
        if lp == -math.inf:
            return lp
        binom = float(self.k @ log_expit(lam) + (self.trials - self.k) @ log_expit(-lam))
        if self.term is None:
            r = (lam - mu) / sigma
            latent = -0.5 * float(r @ r) - self.n * (math.log(sigma) + LOG_SQRT_2PI)
        else:
            latent = -self.n * float(self.term(lam[None, :], mu, sigma)[0])
        return binom + latent + lp

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidParam(f"expected {self.dim} coordinates")
        if not theta[1] > 0:
            raise InvalidParam("sigma must be positive")
        return self._logpdf(theta)

    def logpdf_probabilities(self, mu, sigma, p) -> float:
        """Same density with the latent values given as probabilities in (0, 1)."""
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0) or np.any(p >= 1):
            raise InvalidParam("probabilities must lie strictly inside (0, 1)")
        return self.logpdf(np.concatenate([[mu, sigma], np.log(p / (1 - p))]))

    def log_target(self, u) -> float:
        value = self._logpdf(self.to_constrained(u)) + self.log_jacobian(u)
        return value if value == value else -math.inf


def binomial_logitnormal_logpdf(counts, state, kind="ned") -> float:
    """``state = (p_1, ..., p_n, mu, sigma)``; ``counts = (k, N)``."""
    k, n_trials = counts
    state = np.asarray(state, dtype=float)
    n = len(np.atleast_1d(k))
    post = BinomialLogitNormalPosterior(k, n_trials, kind)
    return post.logpdf_probabilities(state[n], state[n + 1], state[:n])


class RandomInterceptPosterior:
    """Random-intercept growth model for the income survey.

    ``Y_ijk = b_ij + beta_1j t_k + e_ijk`` with ``b_ij ~ N(beta_0j, tau0^2)``
    and ``e ~ N(0, sigma^2)``; ``t_k`` are the ages centred at 50.  Groups
    ``j`` are American (``a``) and foreign (``f``) students.

    Sampler coordinates: ``(beta_0a, beta_0f, beta_1a, beta_1f, log tau0,
    log sigma, b_1, ..., b_n)``.  Priors ``beta_0j ~ N(0, 150^2)``,
    ``beta_1j ~ N(0, 0.5^2)``, ``tau0^2 ~ Gamma(3, scale 0.5)``,
    ``sigma^2 ~ Gamma(3, scale 0.05)``.

    Replacements: the latent term becomes ``-N_b D(g(.), N(0, tau0^2))`` with
    ``g`` the pooled KDE of ``b_ij - beta_0j`` over both groups (``N_b``
    intercepts in total); the observation term becomes
    ``-sum_ij 4 D(g_ij, N(0, sigma^2))`` with ``g_ij`` the KDE of the four
    residuals of student ``ij``.
    """

    ages = np.array([35.0, 45.0, 55.0, 65.0])

    def __init__(self, status, incomes, spec: HierarchicalSpec, n_samples: int = 500, n_nodes: int = 80,
                 seed=None, prior: IndependentPrior | None = None):
        status = np.asarray(status)
        y = np.asarray(incomes, dtype=float)
        if y.ndim != 2 or y.shape[1] != 4:
            raise ValueError("incomes must have four columns")
        if np.ptp(y) == 0:
            raise DegenerateData("all incomes identical")
        self.group = (status == "f").astype(int)
        self.y = y
        self.t = self.ages - 50.0
        self.n = y.shape[0]
        self.spec = spec
        if prior is None:
            prior = IndependentPrior(NormalPrior(0.0, 150.0), NormalPrior(0.0, 150.0),
                                     NormalPrior(0.0, 0.5), NormalPrior(0.0, 0.5),
                                     SquaredPrior(GammaPrior(3.0, 0.5)), SquaredPrior(GammaPrior(3.0, 0.05)))
        self.prior = prior
        self.names = ("beta0_a", "beta0_f", "beta1_a", "beta1_f", "tau0", "sigma") + tuple(
            f"b{i + 1}" for i in range(self.n))
        self.dim = len(self.names)
        b_hat, slopes, resid, beta0 = self._least_squares()
        self.ls = dict(b=b_hat, slopes=slopes, resid=resid, beta0=beta0)
        ss = as_seed_sequence(seed if seed is not None else 0)
        s_obs, s_lat = ss.spawn(2)
        self.obs_term = self.lat_term = None
        if spec.observation_kind is not None:
            per_unit = []
            for row in resid:
                if np.ptp(row) > 0:
                    per_unit.append(select_bandwidth(row, "silverman"))
            if not per_unit:
                raise DegenerateData("all residuals vanish")
            self.bandwidth_obs = float(np.mean(per_unit))
            self.obs_term = GroupedDisparity(spec.observation_kind, self.bandwidth_obs, self.n, 4,
                                             n_samples=n_samples, n_nodes=n_nodes, seed=s_obs)
        if spec.latent_kind is not None:
            centred = b_hat - beta0[self.group]
            self.bandwidth_latent = _sj_or_silverman(centred)
            self.lat_term = GroupedDisparity(spec.latent_kind, self.bandwidth_latent, 1, self.n,
                                             n_samples=n_samples, n_nodes=n_nodes, seed=s_lat)

    def _least_squares(self):
        t = self.t
        b = np.empty(self.n)
        slopes = np.empty(2)
        for j in (0, 1):
            rows = self.group == j
            yj = self.y[rows]
            # common slope within a group, free intercepts
            tc = t - t.mean()
            slopes[j] = float(np.sum((yj - yj.mean(axis=1, keepdims=True)) * tc) / (yj.shape[0] * tc @ tc))
            b[rows] = yj.mean(axis=1) - slopes[j] * t.mean()
        resid = self.y - b[:, None] - slopes[self.group][:, None] * t[None, :]
        beta0 = np.array([b[self.group == j].mean() for j in (0, 1)])
        return b, slopes, resid, beta0

    def initial_state(self) -> np.ndarray:
        b, slopes, resid, beta0 = self.ls["b"], self.ls["slopes"], self.ls["resid"], self.ls["beta0"]
        sigma2 = float(np.sum(resid ** 2) / (resid.size - 1))
        tau2 = float(np.sum((b - beta0[self.group]) ** 2) / (self.n - 1))
        return np.concatenate([beta0, slopes, [0.5 * math.log(tau2), 0.5 * math.log(sigma2)], b])

    def to_constrained(self, u):
        theta = np.array(u, dtype=float)
        theta[4:6] = np.exp(theta[4:6])
        return theta

    def to_unconstrained(self, theta):
        u = np.array(theta, dtype=float)
        u[4:6] = np.log(u[4:6])
        return u

    def log_jacobian(self, u) -> float:
        return float(u[4] + u[5])

    def _logpdf(self, theta) -> float:
        beta0, beta1 = theta[0:2], theta[2:4]
        tau, sigma = theta[4], theta[5]
        b = theta[6:]
        lp = self.prior.logpdf(theta[:6])
        if lp == -math.inf:
            return lp
        resid = self.y - b[:, None] - beta1[self.group][:, None] * self.t[None, :]
        if self.obs_term is None:
            r = resid / sigma
            obs = -0.5 * float(np.sum(r * r)) - resid.size * (math.log(sigma) + LOG_SQRT_2PI)
        else:
            obs = -4.0 * float(np.sum(self.obs_term(resid, 0.0, sigma)))
        centred = b - beta0[self.group]
        if self.lat_term is None:
            r = centred / tau
            lat = -0.5 * float(r @ r) - self.n * (math.log(tau) + LOG_SQRT_2PI)
        else:
            lat = -self.n * float(self.lat_term(centred[None, :], 0.0, tau)[0])
        return obs + lat + lp

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidParam(f"expected {self.dim} coordinates")
        if not (theta[4] > 0 and theta[5] > 0):
            raise InvalidParam("tau0 and sigma must be positive")
        return self._logpdf(theta)

    def log_target(self, u) -> float:
        value = self._logpdf(self.to_constrained(u)) + self.log_jacobian(u)
        return value if value == value else -math.inf


def random_intercept_logpdf(survey, state, spec: HierarchicalSpec, **kwargs) -> float:
    status, incomes = survey
    return RandomInterceptPosterior(status, incomes, spec, **kwargs).logpdf(state)


# ---------------------------------------------------------------------------
# Shipped data
# ---------------------------------------------------------------------------

def _read_rows(path):
    if path is None:
        raise ValueError("path required")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _data_path(name: str):
    return resources.files("disparitybayes").joinpath("data", name)


def load_parasite(path=None) -> dict:
    """Egg counts: ``trials`` before treatment, ``successes`` after."""
    rows = _read_rows(path or _data_path("parasite.csv"))
    if not rows or set(rows[0]) != {"horse", "pre", "post"}:
        raise ValueError("parasite data needs columns horse, pre, post")
    return {
        "horse": np.array([int(r["horse"]) for r in rows]),
        "trials": np.array([float(r["pre"]) for r in rows]),
        "successes": np.array([float(r["post"]) for r in rows]),
    }


def load_survey(path=None) -> dict:
    """Log expected incomes at ages 35, 45, 55, 65 with status ``a`` or ``f``."""
    rows = _read_rows(path or _data_path("survey.csv"))
    cols = ["age35", "age45", "age55", "age65"]
    if not rows or set(rows[0]) != {"status", *cols}:
        raise ValueError("survey data needs columns status, age35, age45, age55, age65")
    status = np.array([r["status"].strip() for r in rows])
    if not set(status) <= {"a", "f"}:
        raise ValueError("status must be 'a' or 'f'")
    return {"status": status, "incomes": np.array([[float(r[c]) for c in cols] for r in rows])}
