"""Disparities between a density estimate and a parametric density.

A disparity is ``D(g, f) = int G(delta(x)) f(x) dx`` with
``delta = (g - f) / f`` and ``G`` convex, ``G(0) = G'(0) = 0``,
``G''(0) = 1``.  Three kinds are provided: Kullback-Leibler, Hellinger
(scaled by 2 so that ``D = 2 int (sqrt g - sqrt f)^2``) and negative
exponential.

For computation every kind is rewritten as ``c + int s(g, f) dx`` where the
pieces integrating to a constant (``int g = int f = 1``) are dropped:

==========  =====================  =====
kind        s(g, f)                c
==========  =====================  =====
Hellinger   -4 sqrt(g f)           4
NED         f exp(1 - g / f)       -1
KL          g log(g / f)           0
==========  =====================  =====

An estimator then integrates ``s`` against some reference density ``p``:
samples from ``g`` for Monte Carlo, Gauss-Hermite nodes of ``f`` when ``f``
is Gaussian, or a fixed Gauss-Legendre grid on the support of ``g`` for
analytic densities.  Everything is done with log densities floored at -700
so extreme parameter values give a large finite disparity rather than NaN.
"""

from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.linalg import eigh_tridiagonal
from scipy.special import xlogy

from .errors import NonConvergence
from .kde import KernelDensity

LOG_FLOOR = -700.0
DELTA_MIN = -1.0 + 1e-12
DELTA_MAX = 1e12
_SQRT_PI = math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)
_E = math.e


class DisparityKind(str, enum.Enum):
    KL = "kl"
    HELLINGER = "hd"
    NED = "ned"

    @classmethod
    def parse(cls, value) -> "DisparityKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "kl": cls.KL, "kullback-leibler": cls.KL, "kullbackleibler": cls.KL,
            "hd": cls.HELLINGER, "hellinger": cls.HELLINGER,
            "ned": cls.NED, "negative-exponential": cls.NED, "negativeexponential": cls.NED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown disparity kind {value!r}") from None


@dataclass(frozen=True)
class GFunction:
    """Convex function defining a disparity.

    Parameters
    ----------
    kind : DisparityKind or str
    centered : bool
        With the default ``True`` the forms satisfy ``G(0) = G'(0) = 0``:
        ``(d+1) log(d+1) - d`` (KL), ``2 (sqrt(d+1) - 1)^2`` (Hellinger),
        ``exp(-d) - 1 + d`` (NED).  ``False`` gives the uncentered versions
        ``(d+1) log(d+1)``, ``2 [(sqrt(d+1) - 1)^2 - 1]`` and ``exp(-d) - 1``,
        which differ by a multiple of ``d`` or a constant.
    """

    kind: DisparityKind
    centered: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", DisparityKind.parse(self.kind))

    @staticmethod
    def _clamp(delta):
        return np.clip(np.asarray(delta, dtype=float), DELTA_MIN, DELTA_MAX)

    def eval(self, delta):
        d = self._clamp(delta)
        if self.kind is DisparityKind.KL:
            out = xlogy(d + 1.0, d + 1.0) - (d if self.centered else 0.0)
        elif self.kind is DisparityKind.HELLINGER:
            out = 2.0 * (np.sqrt(d + 1.0) - 1.0) ** 2 - (0.0 if self.centered else 2.0)
        else:
            out = np.exp(-d) - 1.0 + (d if self.centered else 0.0)
        return out

    __call__ = eval

    def deriv1(self, delta):
        d = self._clamp(delta)
        if self.kind is DisparityKind.KL:
            return np.log1p(d) + (0.0 if self.centered else 1.0)
        if self.kind is DisparityKind.HELLINGER:
            return 2.0 * (1.0 - 1.0 / np.sqrt(1.0 + d))
        return (1.0 if self.centered else 0.0) - np.exp(-d)

    def deriv2(self, delta):
        d = self._clamp(delta)
        if self.kind is DisparityKind.KL:
            return 1.0 / (1.0 + d)
        if self.kind is DisparityKind.HELLINGER:
            return (1.0 + d) ** -1.5
        return np.exp(-d)

    def curvature(self, delta):
        """Residual adjustment ``A(d) = G(d) - (1 + d) G'(d)``."""
        d = self._clamp(delta)
        return self.eval(d) - (1.0 + d) * self.deriv1(d)

    def weighted(self, g, f):
        """``G((g - f) / f) f`` evaluated without forming the ratio.

        Stable where ``f`` underflows; used by the quadrature oracle.
        """
        g = np.asarray(g, dtype=float)
        f = np.asarray(f, dtype=float)
        if self.kind is DisparityKind.KL:
            core = xlogy(g, g) - xlogy(g, f)
            return core - (g - f) if self.centered else core
        if self.kind is DisparityKind.HELLINGER:
            core = 2.0 * (np.sqrt(g) - np.sqrt(f)) ** 2
            return core if self.centered else core - 2.0 * f
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            expo = np.where(f > 0, f * np.exp(-(g - f) / np.where(f > 0, f, 1.0)), 0.0)
        core = expo - f
        return core + (g - f) if self.centered else core

    @property
    def offset(self) -> float:
        """Constant added to the specialized form for unit-mass ``g``."""
        base = {DisparityKind.KL: 0.0, DisparityKind.HELLINGER: 4.0, DisparityKind.NED: -1.0}[self.kind]
        if not self.centered and self.kind is DisparityKind.HELLINGER:
            base -= 2.0
        return base


def curvature_weight(g: GFunction, delta):
    return g.curvature(delta)


def as_gfunction(kind) -> GFunction:
    return kind if isinstance(kind, GFunction) else GFunction(DisparityKind.parse(kind))


# ---------------------------------------------------------------------------
# Shared integrands
# ---------------------------------------------------------------------------

def _floor(log_values) -> np.ndarray:
    return np.maximum(np.asarray(log_values, dtype=float), LOG_FLOOR)


def _s_over_p(kind: DisparityKind, lg, lf, lp) -> np.ndarray:
    """``s(g, f) / p`` from log densities."""
    if kind is DisparityKind.HELLINGER:
        return -4.0 * np.exp(0.5 * (lg + lf) - lp)
    if kind is DisparityKind.NED:
        return np.exp(lf - lp + 1.0 - np.exp(np.minimum(lg - lf, 700.0)))
    return np.exp(lg - lp) * (lg - lf)


def _s_on_support(kind: DisparityKind, lg, lf) -> np.ndarray:
    """Integrand that vanishes where ``g = 0``; NED shifts ``c`` by ``e``."""
    if kind is DisparityKind.HELLINGER:
        return -4.0 * np.exp(0.5 * (lg + lf))
    if kind is DisparityKind.NED:
        return np.exp(lf) * (np.exp(1.0 - np.exp(np.minimum(lg - lf, 700.0))) - _E)
    return np.exp(lg) * (lg - lf)


def _finite_or_inf(value: float) -> float:
    return value if math.isfinite(value) else math.inf


def _log_density_fn(g) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(g, "logpdf"):
        return g.logpdf
    if callable(g):
        def log_g(x):
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(g(x), dtype=float))
        return log_g
    raise TypeError("density must expose logpdf or be callable")


# ---------------------------------------------------------------------------
# Gauss-Hermite nodes
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _gauss_hermite_cached(m: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, m)
    nodes, vectors = eigh_tridiagonal(np.zeros(m), np.sqrt(k / 2.0))
    weights = _SQRT_PI * vectors[0] ** 2
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``int exp(-x^2) h(x) dx`` by Golub-Welsch.

    The Jacobi matrix of the physicists' Hermite recurrence is symmetric
    tridiagonal with off-diagonal ``sqrt(k / 2)``; nodes are its eigenvalues
    and weights ``sqrt(pi)`` times the squared first eigenvector components.
    """
    if m < 1:
        raise ValueError("need at least one node")
    return _gauss_hermite_cached(int(m))


def normal_logpdf(x, mu, sigma):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

class MonteCarloDisparity:
    """Importance-sampling estimate with draws frozen from ``g``.

    ``D ~ c + mean(s(g, f)(z_i) / g(z_i))``, ``z_i ~ g``; for Hellinger this
    is ``4 - 4 mean(sqrt(f(z_i) / g(z_i)))``.  The draws and ``log g(z_i)``
    are computed once, so the estimate is a smooth function of ``theta``.
    """

    method = "mc"

    def __init__(self, g: KernelDensity, kind="hd", n_samples: int = 1000, seed=None,
                 samples=None):
        self.gfun = as_gfunction(kind)
        if samples is None:
            samples = g.sample(n_samples, seed)
        self.samples = np.asarray(samples, dtype=float)
        self.log_g = _floor(_log_density_fn(g)(self.samples))
        self.samples.setflags(write=False)
        self.log_g.setflags(write=False)

    @property
    def kind(self) -> DisparityKind:
        return self.gfun.kind

    def from_log_f(self, log_f) -> float:
        lf = _floor(log_f)
        terms = _s_over_p(self.kind, self.log_g, lf, self.log_g)
        return _finite_or_inf(self.gfun.offset + float(np.mean(terms)))

    def evaluate(self, model, theta) -> float:
        return self.from_log_f(model.logpdf(theta, self.samples))


class GaussHermiteDisparity:
    """Gauss-Hermite estimate for Gaussian ``f``.

    Nodes ``xi_i = mu + sqrt(2) sigma x_i`` with weights ``w_i / sqrt(pi)``.
    ``form="specialized"`` (default) sums ``s / f``; ``form="direct"`` sums
    ``G(delta(xi_i))`` literally.  Both agree up to quadrature error.
    """

    method = "gh"

    def __init__(self, g, kind="ned", n_nodes: int = 80, form: str = "specialized"):
        if n_nodes < 10:
            raise ValueError("use at least 10 Gauss-Hermite nodes")
        if form not in ("specialized", "direct"):
            raise ValueError("form must be 'specialized' or 'direct'")
        self.gfun = as_gfunction(kind)
        self.log_g = _log_density_fn(g)
        self.nodes, weights = gauss_hermite(n_nodes)
        self.weights = weights / _SQRT_PI
        self.form = form

    @property
    def kind(self) -> DisparityKind:
        return self.gfun.kind

    def at(self, mu: float, sigma: float) -> float:
        if not sigma > 0:
            return math.inf
        xi = mu + _SQRT2 * sigma * self.nodes
        lg = _floor(self.log_g(xi))
        lf = _floor(normal_logpdf(xi, mu, sigma))
        if self.form == "direct":
            delta = np.exp(np.minimum(lg - lf, 700.0)) - 1.0
            value = float(self.weights @ self.gfun.eval(delta))
        else:
            value = self.gfun.offset + float(self.weights @ _s_over_p(self.kind, lg, lf, lf))
        return _finite_or_inf(value)

    def evaluate(self, model, theta) -> float:
        params = model.gaussian_params(theta)
        if params is None:
            raise TypeError(f"{type(model).__name__} is not a Gaussian location-scale family")
        return self.at(*params)


def _partition(intervals) -> list[tuple[float, float]]:
    """Disjoint pieces of the union of ``intervals``, cut at every endpoint."""
    intervals = [(float(a), float(b)) for a, b in intervals if b > a]
    cuts = sorted({v for ab in intervals for v in ab})
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        if any(lo <= mid <= hi for lo, hi in intervals):
            pieces.append((a, b))
    return pieces


class QuadratureDisparity:
    """Composite Gauss-Legendre rule on the support of an analytic ``g``.

    Every integrand ``s`` is rewritten to vanish where ``g = 0``, so a grid
    covering ``g`` alone suffices and ``log g`` is evaluated once.  Used for
    contaminated and other analytic densities where sampling noise would
    mask the quantity of interest.

    Parameters
    ----------
    g : density with ``logpdf``
    kind : disparity kind
    intervals : sequence of (a, b)
        Intervals covering the support of ``g``.  They may overlap; their
        union is cut at every endpoint (so a density jump can be placed on a
        panel edge) and then into panels.
    panel_width : float
        Maximum panel width; choose it small relative to the scale of ``f``.
    order : int
        Gauss-Legendre nodes per panel.
    """

    method = "quadrature"

    def __init__(self, g, kind="hd", intervals: Sequence[tuple[float, float]] = (),
                 panel_width: float = 0.25, order: int = 12):
        self.gfun = as_gfunction(kind)
        base_x, base_w = np.polynomial.legendre.leggauss(order)
        xs, ws = [], []
        for a, b in _partition(intervals):
            panels = max(1, int(math.ceil((b - a) / panel_width)))
            edges = np.linspace(a, b, panels + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            xs.append((mid[:, None] + half[:, None] * base_x[None, :]).ravel())
            ws.append((half[:, None] * base_w[None, :]).ravel())
        self.nodes = np.concatenate(xs) if xs else np.empty(0)
        self.weights = np.concatenate(ws) if ws else np.empty(0)
        with np.errstate(divide="ignore"):
            lg = _log_density_fn(g)(self.nodes) if self.nodes.size else np.empty(0)
        keep = np.isfinite(lg) & (lg > LOG_FLOOR)
        self.nodes, self.weights, self.log_g = self.nodes[keep], self.weights[keep], lg[keep]
        shift = _E if self.gfun.kind is DisparityKind.NED else 0.0
        self.offset = self.gfun.offset + shift

    @property
    def kind(self) -> DisparityKind:
        return self.gfun.kind

    def from_log_f(self, log_f) -> float:
        if self.nodes.size == 0:
            return self.offset
        lf = _floor(log_f)
        value = self.offset + float(self.weights @ _s_on_support(self.kind, self.log_g, lf))
        return _finite_or_inf(value)

    def evaluate(self, model, theta) -> float:
        if self.nodes.size == 0:
            return self.offset
        return self.from_log_f(model.logpdf(theta, self.nodes))


class EmpiricalKL:
    """Kullback-Leibler disparity with ``g`` the empirical distribution.

    ``D = -mean(log f(x_i))`` up to a constant, so ``-n D`` is the
    log-likelihood exactly.
    """

    method = "empirical"
    kind = DisparityKind.KL

    def __init__(self, data):
        self.data = np.asarray(data, dtype=float)

    def from_log_f(self, log_f) -> float:
        return _finite_or_inf(-float(np.mean(log_f)))

    def evaluate(self, model, theta) -> float:
        return self.from_log_f(model.logpdf(theta, self.data))


def make_estimator(g, kind, method: str | None = None, n_samples: int = 1000,
                   n_nodes: int = 80, seed=None):
    """Estimator with the default method for each kind.

    Monte Carlo for Hellinger, Gauss-Hermite for NED and KL.
    """
    gfun = as_gfunction(kind)
    if method is None:
        method = "mc" if gfun.kind is DisparityKind.HELLINGER else "gh"
    if method == "mc":
        return MonteCarloDisparity(g, gfun, n_samples=n_samples, seed=seed)
    if method == "gh":
        return GaussHermiteDisparity(g, gfun, n_nodes=n_nodes)
    raise ValueError(f"unknown estimator method {method!r}")


def disparity_mc(est: MonteCarloDisparity, model, theta) -> float:
    return est.evaluate(model, theta)


def disparity_gh(est: GaussHermiteDisparity, g, mu: float, sigma: float) -> float:
    """Gauss-Hermite disparity of ``g`` against ``N(mu, sigma^2)``.

    ``g`` replaces the density bound to ``est`` for this call.
    """
    if g is not None:
        est = GaussHermiteDisparity(g, est.gfun, n_nodes=len(est.nodes), form=est.form)
    return est.at(mu, sigma)


def disparity_exact_quadrature(g, model, theta, kind, window: tuple[float, float] | None = None,
                               pieces: int = 64, epsabs: float = 1e-13, epsrel: float = 1e-11) -> float:
    """Adaptive quadrature of ``int G(delta) f dx``; a reference for the estimators.

    The window defaults to the union of ``+-14`` standard deviations of both
    densities when they expose them and is split into ``pieces`` subintervals
    integrated separately.
    """
    gfun = as_gfunction(kind)
    log_g = _log_density_fn(g)
    if window is None:
        window = _default_window(g, model, theta)
    lo, hi = window
    edges = np.linspace(lo, hi, pieces + 1)

    def integrand(x):
        gx = math.exp(max(float(log_g(np.array([x]))[0]), -745.0))
        fx = math.exp(max(float(model.logpdf(theta, np.array([x]))[0]), -745.0))
        return float(gfun.weighted(gx, fx))

    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            try:
                val, _ = integrate.quad(integrand, a, b, epsabs=epsabs / pieces, epsrel=epsrel, limit=200)
            except integrate.IntegrationWarning as exc:
                raise NonConvergence(f"quadrature on [{a:.4g}, {b:.4g}] did not converge: {exc}") from exc
            total += val
    return total


def _moments(density) -> tuple[float, float] | None:
    if isinstance(density, KernelDensity):
        return density.mean(), math.sqrt(density.variance())
    if hasattr(density, "mean") and hasattr(density, "std"):
        try:
            return float(density.mean()), float(density.std())
        except TypeError:
            return None
    return None


def _default_window(g, model, theta) -> tuple[float, float]:
    spans = []
    params = model.gaussian_params(theta) if hasattr(model, "gaussian_params") else None
    if params is not None:
        spans.append(params)
    if hasattr(g, "window"):
        return _union(g.window(), spans)
    mom = _moments(g)
    if mom is not None:
        spans.append(mom)
    if isinstance(g, KernelDensity):
        spans.append((g.points.min(), 0.0))
        spans.append((g.points.max(), 0.0))
        spans.append((g.points.min(), g.bandwidth))
        spans.append((g.points.max(), g.bandwidth))
    if not spans:
        raise ValueError("cannot infer an integration window; pass window=(lo, hi)")
    return _union(None, spans)


def _union(window, spans) -> tuple[float, float]:
    lo = min((m - 14.0 * s for m, s in spans), default=math.inf)
    hi = max((m + 14.0 * s for m, s in spans), default=-math.inf)
    if window is not None:
        lo, hi = min(lo, window[0]), max(hi, window[1])
    return float(lo), float(hi)


def gaussian_pairs(count: int, seed, shift: float = 0.5, log_ratio: float = 0.25) -> np.ndarray:
    """Random ``(mu_g, sigma_g, mu_f, sigma_f)`` rows for checking estimators.

    ``mu_g ~ N(0, 1)``, ``sigma_g = exp(U(-0.5, 0.5))``; ``f`` sits within
    ``shift * sigma_g`` of ``g`` in mean and within ``exp(+-log_ratio)`` of it
    in scale, the neighbourhood a sampler explores around the minimizer.
    """
    rng = np.random.default_rng(seed)
    mg = rng.normal(0.0, 1.0, count)
    sg = np.exp(rng.uniform(-0.5, 0.5, count))
    mf = mg + sg * rng.uniform(-shift, shift, count)
    sf = sg * np.exp(rng.uniform(-log_ratio, log_ratio, count))
    return np.column_stack([mg, sg, mf, sf])
