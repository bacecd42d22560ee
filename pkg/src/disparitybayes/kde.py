"""Gaussian kernel density estimates and bandwidth selectors.

Four estimators live here:

* :class:`KernelDensity` -- the (optionally weighted) univariate estimate
  ``g_n(x) = sum_i w_i K((x - X_i) / c) / c``.
* :class:`ConditionalKernelDensity` -- a Nadaraya-Watson weighted estimate of
  ``y | x``; at a fixed ``x`` it is just a weighted :class:`KernelDensity`.
* :class:`ResidualDensity` -- a kernel estimate of standardized regression
  residuals, rebuilt for every parameter value.
* :class:`KernelDraws` -- frozen kernel noise and mixture indices, so draws
  from an estimate whose centres move (latent variables in an MCMC run)
  move smoothly with them.

The kernel is always the standard normal density.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import (
    BandwidthFallbackWarning,
    DegenerateConditioning,
    DegenerateData,
    InsufficientData,
)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
SQRT_2PI = math.sqrt(2.0 * math.pi)
_CHUNK = 2_000_000
_MIN_CONDITIONING = 1e-300


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Log-sum-exp over the last axis; lighter than the scipy version for small arrays."""
    peak = a.max(axis=-1)
    if not np.isfinite(peak).all():
        peak = np.where(np.isfinite(peak), peak, 0.0)
    return peak + np.log(np.exp(a - peak[..., None]).sum(axis=-1))


_UNDERFLOW = 1e-200


def log_kernel_sum(a: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """``log sum_j w_j exp(a_j)`` over the last axis for exponents ``a <= 0``.

    Sums directly through a matrix-vector product, which is much faster than
    a reduction over a short last axis; rows whose sum underflows are redone
    by log-sum-exp.
    """
    w = np.ones(a.shape[-1]) if weights is None else weights
    total = np.exp(a) @ w
    small = ~(total > _UNDERFLOW)
    with np.errstate(divide="ignore"):
        out = np.log(total)
    if small.any():
        with np.errstate(divide="ignore"):
            log_w = np.log(w) if weights is not None else 0.0
        out[small] = logsumexp_rows(a[small] + log_w)
    return out


def _as_1d(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr.ravel()


@dataclass(frozen=True)
class KernelDraws:
    """Frozen ingredients of ``z_i = c W_i + X_{N_i}``.

    ``noise`` holds the standard normal ``W_i`` and ``index`` the mixture
    components ``N_i``.  Calling :meth:`locations` with the current kernel
    centres gives the draws; holding these arrays fixed keeps Monte Carlo
    disparity estimates smooth in any parameter the centres depend on.
    """

    noise: np.ndarray
    index: np.ndarray
    bandwidth: float

    def locations(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return self.bandwidth * self.noise + points[self.index]

    def __len__(self) -> int:
        return len(self.noise)


@dataclass(frozen=True)
class KernelDensity:
    """Weighted Gaussian kernel density estimate.

    Parameters
    ----------
    points : array_like
        Kernel centres ``X_i``.
    bandwidth : float
        Kernel standard deviation ``c_n``; must be positive.
    weights : array_like, optional
        Non-negative mixture weights.  They are renormalized to sum to one;
        uniform when omitted.
    """

    points: np.ndarray
    bandwidth: float
    weights: np.ndarray | None = None
    _log_weights: np.ndarray = field(init=False, repr=False, compare=False)
    _uniform: bool = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        points = _as_1d(self.points)
        if points.size == 0:
            raise InsufficientData("kernel density needs at least one point")
        if not np.all(np.isfinite(points)):
            raise ValueError("kernel centres must be finite")
        bandwidth = float(self.bandwidth)
        if not (bandwidth > 0.0 and math.isfinite(bandwidth)):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")
        uniform = self.weights is None
        if uniform:
            weights = np.full(points.size, 1.0 / points.size)
        else:
            weights = _as_1d(self.weights)
            if weights.shape != points.shape:
                raise ValueError("weights and points differ in length")
            if np.any(weights < 0) or not np.isfinite(weights).all():
                raise ValueError("weights must be finite and non-negative")
            total = weights.sum()
            if total <= 0:
                raise ValueError("weights sum to zero")
            weights = weights / total
        with np.errstate(divide="ignore"):
            log_weights = np.log(weights)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "bandwidth", bandwidth)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_log_weights", log_weights)
        object.__setattr__(self, "_uniform", uniform)

    @property
    def n(self) -> int:
        return self.points.size

    def evaluate(self, x) -> np.ndarray:
        """Density at ``x`` (scalar or array); returns an array of the same shape."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty(flat.size)
        step = max(1, _CHUNK // self.n)
        h = self.bandwidth
        for start in range(0, flat.size, step):
            block = flat[start:start + step]
            u = (block[:, None] - self.points[None, :]) / h
            out[start:start + step] = np.exp(-0.5 * u * u) @ self.weights
        out /= h * SQRT_2PI
        return out.reshape(x.shape)

    __call__ = evaluate

    def logpdf(self, x) -> np.ndarray:
        """Log density, computed by log-sum-exp so far tails do not underflow."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        h = self.bandwidth
        if flat.size * self.n <= _CHUNK:
            u = (flat[:, None] - self.points) * (1.0 / h)
            a = -0.5 * u * u
            if self._uniform:
                out = log_kernel_sum(a) - (math.log(self.n * h) + LOG_SQRT_2PI)
            else:
                out = log_kernel_sum(a, self.weights) - (math.log(h) + LOG_SQRT_2PI)
            return out.reshape(x.shape)
        out = np.empty(flat.size)
        step = max(1, _CHUNK // self.n)
        for start in range(0, flat.size, step):
            block = flat[start:start + step]
            u = (block[:, None] - self.points[None, :]) / h
            out[start:start + step] = logsumexp_rows(-0.5 * u * u + self._log_weights)
        out -= math.log(h) + LOG_SQRT_2PI
        return out.reshape(x.shape)

    def draws(self, count: int, rng_seed=None) -> KernelDraws:
        """Frozen kernel noise and component indices for ``count`` draws."""
        if count < 1:
            raise ValueError("count must be at least 1")
        rng = np.random.default_rng(rng_seed)
        index = rng.choice(self.n, size=count, p=self.weights)
        noise = rng.standard_normal(count)
        return KernelDraws(noise=noise, index=index, bandwidth=self.bandwidth)

    def sample(self, count: int, rng_seed=None) -> np.ndarray:
        """I.i.d. draws from the estimate; deterministic for a fixed seed."""
        return self.draws(count, rng_seed).locations(self.points)

    def mean(self) -> float:
        return float(self.weights @ self.points)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.points - m) ** 2) + self.bandwidth ** 2


# ---------------------------------------------------------------------------
# Bandwidth selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandwidthChoice:
    value: float
    method: str
    fell_back: bool = False


def _spread(data: np.ndarray) -> tuple[float, float]:
    sd = float(np.std(data, ddof=1))
    q75, q25 = np.percentile(data, [75, 25])
    return sd, float(q75 - q25)


def bandwidth_silverman(data) -> float:
    """Silverman's rule of thumb, ``0.9 min(SD, IQR/1.34) n^(-1/5)``.

    Falls back to the standard deviation alone when the interquartile range
    is zero but the data are not constant.
    """
    data = _as_1d(data)
    if data.size < 2:
        raise InsufficientData("Silverman's rule needs at least two points")
    sd, iqr = _spread(data)
    if sd == 0.0:
        raise DegenerateData("all data points are equal")
    scale = min(sd, iqr / 1.34)
    if scale <= 0.0:
        scale = sd
    return 0.9 * scale * data.size ** (-0.2)


def _pair_differences(data: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(data.size, k=1)
    return data[i] - data[j]


def _phi4_sum(diffs: np.ndarray, n: int, h: float) -> float:
    # estimate of the integrated squared second derivative (psi_4)
    d2 = (diffs / h) ** 2
    total = 2.0 * np.sum(np.exp(-0.5 * d2) * (d2 * d2 - 6.0 * d2 + 3.0)) + 3.0 * n
    return total / (n * (n - 1) * h ** 5 * SQRT_2PI)


def _phi6_sum(diffs: np.ndarray, n: int, h: float) -> float:
    d2 = (diffs / h) ** 2
    poly = ((d2 - 15.0) * d2 + 45.0) * d2 - 15.0
    total = 2.0 * np.sum(np.exp(-0.5 * d2) * poly) - 15.0 * n
    return total / (n * (n - 1) * h ** 7 * SQRT_2PI)


class _NoRoot(Exception):
    pass


def _sheather_jones_root(data: np.ndarray) -> float:
    n = data.size
    sd, iqr = _spread(data)
    scale = min(sd, iqr / 1.349)
    if scale <= 0.0:
        raise _NoRoot("zero robust scale")
    diffs = _pair_differences(data)
    a = 1.24 * scale * n ** (-1.0 / 7.0)
    b = 1.23 * scale * n ** (-1.0 / 9.0)
    td = -_phi6_sum(diffs, n, b)
    sda = _phi4_sum(diffs, n, a)
    if not (td > 0 and sda > 0 and math.isfinite(td) and math.isfinite(sda)):
        raise _NoRoot("pilot functional estimates are not positive")
    alpha2 = 1.357 * (sda / td) ** (1.0 / 7.0)
    c1 = 1.0 / (2.0 * math.sqrt(math.pi) * n)

    def fixed_point(h: float) -> float:
        sd_h = _phi4_sum(diffs, n, alpha2 * h ** (5.0 / 7.0))
        if sd_h <= 0:
            return -h
        return (c1 / sd_h) ** 0.2 - h

    span = float(data.max() - data.min())
    lower, upper = 1e-4 * span, span
    f_lo, f_hi = fixed_point(lower), fixed_point(upper)
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or f_lo * f_hi > 0:
        raise _NoRoot("no sign change on [1e-4 range, range]")
    return optimize.bisect(fixed_point, lower, upper, xtol=1e-13 * span, rtol=4 * np.finfo(float).eps,
                           maxiter=500)


def sheather_jones(data) -> BandwidthChoice:
    """Solve-the-equation Sheather-Jones bandwidth with a Silverman fallback.

    The fixed-point relation is solved by bisection on ``[1e-4 R, R]`` where
    ``R`` is the data range.  If it has no sign change there (or the pilot
    estimates are degenerate) Silverman's rule is returned with
    ``fell_back=True`` and a :class:`BandwidthFallbackWarning` is issued.
    """
    data = _as_1d(data)
    if data.size < 5:
        raise InsufficientData("Sheather-Jones needs at least five points")
    if np.ptp(data) == 0.0:
        raise DegenerateData("all data points are equal")
    try:
        return BandwidthChoice(_sheather_jones_root(data), "sj")
    except _NoRoot as exc:
        warnings.warn(f"Sheather-Jones failed ({exc}); using Silverman's rule",
                      BandwidthFallbackWarning, stacklevel=2)
        return BandwidthChoice(bandwidth_silverman(data), "silverman", fell_back=True)


def bandwidth_sheather_jones(data) -> float:
    return sheather_jones(data).value


def select_bandwidth(data, method: str = "sj") -> float:
    """Bandwidth by name: ``"sj"`` or ``"silverman"``.

    ``"sj"`` degrades to Silverman's rule (with a warning) for fewer than
    five points, since the pilot estimates need more data than that.
    """
    method = method.lower()
    data = _as_1d(data)
    if method in ("sj", "sheather-jones", "sheather_jones"):
        if data.size < 5:
            warnings.warn("fewer than five points; using Silverman's rule",
                          BandwidthFallbackWarning, stacklevel=2)
            return bandwidth_silverman(data)
        return sheather_jones(data).value
    if method == "silverman":
        return bandwidth_silverman(data)
    raise ValueError(f"unknown bandwidth selector {method!r}")


# ---------------------------------------------------------------------------
# Conditional and residual densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionalKernelDensity:
    """Kernel estimate of the density of ``y`` given covariates ``x``.

    ``g(y | x) = sum_i K(|x - X_i| / c_x) K((y - Y_i) / c_y) / c_y
    / sum_i K(|x - X_i| / c_x)`` with the Euclidean norm.
    """

    responses: np.ndarray
    covariates: np.ndarray
    bandwidth_y: float
    bandwidth_x: float

    def __post_init__(self):
        y = _as_1d(self.responses)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != y.size:
            raise ValueError("responses and covariates differ in length")
        if not (self.bandwidth_y > 0 and self.bandwidth_x > 0):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "bandwidth_y", float(self.bandwidth_y))
        object.__setattr__(self, "bandwidth_x", float(self.bandwidth_x))

    @classmethod
    def from_data(cls, responses, covariates, method: str = "sj",
                  bandwidth_y: float | None = None, bandwidth_x: float | None = None):
        """Build with selector-chosen bandwidths (responses, covariate norms)."""
        y = _as_1d(responses)
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if bandwidth_y is None:
            bandwidth_y = select_bandwidth(y, method)
        if bandwidth_x is None:
            bandwidth_x = select_bandwidth(np.linalg.norm(x, axis=1), method)
        return cls(y, x, bandwidth_y, bandwidth_x)

    def log_weights(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dist = np.linalg.norm(self.covariates - x[None, :], axis=1) / self.bandwidth_x
        log_k = -0.5 * dist * dist - LOG_SQRT_2PI
        n = self.responses.size
        total = float(logsumexp_rows(log_k))
        log_denominator = total - math.log(n * self.bandwidth_x)
        if log_denominator < math.log(_MIN_CONDITIONING):
            raise DegenerateConditioning(
                f"covariate kernel sum {math.exp(log_denominator):.3g} at {x} is below 1e-300")
        return log_k - total

    def at(self, x) -> KernelDensity:
        """The conditional estimate at ``x`` as a weighted kernel density."""
        return KernelDensity(self.responses, self.bandwidth_y, np.exp(self.log_weights(x)))

    def evaluate(self, y, x) -> np.ndarray:
        return self.at(x).evaluate(y)


@dataclass(frozen=True)
class ResidualDensity:
    """Kernel estimate of standardized residuals ``e_i(theta) / scale``."""

    residual_fn: Callable[[np.ndarray], np.ndarray]
    scale: float
    bandwidth: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def at(self, theta, scale: float | None = None) -> KernelDensity:
        s = self.scale if scale is None else scale
        return KernelDensity(np.asarray(self.residual_fn(theta), dtype=float) / s, self.bandwidth)

    def evaluate(self, e, theta) -> np.ndarray:
        return self.at(theta).evaluate(e)
