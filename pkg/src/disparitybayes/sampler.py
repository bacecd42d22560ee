"""Random-walk Metropolis sampling and chain summaries.

The sampler works on an unconstrained coordinate vector ``u`` and a target
``log p(u)``.  Posterior objects from :mod:`disparitybayes.models` supply
``log_target`` along with ``to_constrained`` and ``log_jacobian`` so that
summaries can be reported on the natural parameter scale.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyChain, InitInvalid, StuckChainWarning

_BLOCK = 8192
STUCK_RATE = 0.01


@dataclass(frozen=True)
class ChainConfig:
    """Settings for one Metropolis run.

    Parameters
    ----------
    steps : int
        Number of proposals.
    proposal_scales : sequence of float
        Standard deviation of the Gaussian increment for each coordinate
        (a single value is broadcast).
    seed : int or SeedSequence
        The only source of randomness.
    burn_in_fraction : float
        Leading fraction of the chain discarded by :func:`summarize`.
    thinning : int
        Keep every ``thinning``-th post-burn-in state.
    """

    steps: int
    proposal_scales: tuple
    seed: object = 0
    burn_in_fraction: float = 0.5
    thinning: int = 1

    def __post_init__(self):
        scales = tuple(float(s) for s in np.atleast_1d(self.proposal_scales))
        object.__setattr__(self, "proposal_scales", scales)
        if not 0.0 < self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in (0, 1)")
        if self.steps < 2.0 / self.burn_in_fraction:
            raise ValueError("steps too small for the burn-in fraction")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if not all(s > 0 and math.isfinite(s) for s in scales):
            raise ValueError("proposal scales must be finite and positive")


@dataclass
class Chain:
    """Metropolis output; ``states[t]`` is the state after proposal ``t``."""

    states: np.ndarray
    log_targets: np.ndarray
    accepted: np.ndarray
    config: ChainConfig
    initial: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.accepted)

    @property
    def acceptance_rate(self) -> float:
        return float(np.count_nonzero(self.accepted)) / self.steps

    @property
    def stuck(self) -> bool:
        return self.acceptance_rate < STUCK_RATE

    def retained_index(self, burn_in_fraction: float | None = None, thinning: int | None = None) -> np.ndarray:
        frac = self.config.burn_in_fraction if burn_in_fraction is None else burn_in_fraction
        thin = self.config.thinning if thinning is None else thinning
        start = int(math.floor(frac * self.steps))
        return np.arange(start + thin - 1, self.steps, thin)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """Fresh ``SeedSequence`` from an int, a list of ints or another sequence.

    A ``SeedSequence`` argument is copied, so spawning from the result never
    changes the caller's object.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    if seed is None:
        raise ValueError("a seed is required")
    if isinstance(seed, (list, tuple)):
        return np.random.SeedSequence([int(s) for s in seed])
    return np.random.SeedSequence(int(seed))


def run_metropolis(target: Callable[[np.ndarray], float], init, cfg: ChainConfig) -> Chain:
    """Random-walk Metropolis with independent Gaussian increments.

    Deterministic for a given ``cfg.seed``.  Raises :class:`InitInvalid` if
    the target is not finite at ``init`` and warns with
    :class:`StuckChainWarning` when fewer than 1% of proposals are accepted.
    """
    x = np.array(init, dtype=float).ravel()
    dim = x.size
    scales = np.broadcast_to(np.asarray(cfg.proposal_scales, dtype=float), (dim,)).copy()
    lp = float(target(x))
    if not math.isfinite(lp):
        raise InitInvalid(f"target is {lp} at the initial state")
    rng = np.random.default_rng(as_seed_sequence(cfg.seed))
    steps = cfg.steps
    states = np.empty((steps, dim))
    log_targets = np.empty(steps)
    accepted = np.zeros(steps, dtype=bool)
    initial = x.copy()
    for start in range(0, steps, _BLOCK):
        stop = min(steps, start + _BLOCK)
        increments = rng.standard_normal((stop - start, dim)) * scales
        log_u = np.log(rng.random(stop - start))
        for i in range(stop - start):
            proposal = x + increments[i]
            lp_new = target(proposal)
            # NaN compares false, so invalid proposals are rejected
            if log_u[i] < lp_new - lp:
                x = proposal
                lp = lp_new
                accepted[start + i] = True
            states[start + i] = x
            log_targets[start + i] = lp
    chain = Chain(states, log_targets, accepted, cfg, initial)
    if chain.stuck:
        warnings.warn(f"acceptance rate {chain.acceptance_rate:.4f} below {STUCK_RATE}",
                      StuckChainWarning, stacklevel=2)
    return chain


def tune_scales(target, init, scales, seed, rounds: int = 8, steps_per_round: int = 500,
                accept_range: tuple[float, float] = (0.2, 0.5)) -> tuple[np.ndarray, np.ndarray]:
    """Pilot runs that set proposal scales before a measured chain.

    Each round runs a short chain.  From the third round on, scales are set
    to ``2.38 / sqrt(p)`` times the pilot standard deviations; a global
    factor is then adjusted until the acceptance rate falls in
    ``accept_range``.  Returns the frozen scales and the last pilot state.
    """
    x = np.array(init, dtype=float).ravel()
    scales = np.broadcast_to(np.asarray(scales, dtype=float), x.shape).copy()
    children = as_seed_sequence(seed).spawn(rounds)
    dim = x.size
    lo, hi = accept_range
    history = []
    shaped = False
    for r in range(rounds):
        cfg = ChainConfig(steps=steps_per_round, proposal_scales=tuple(scales), seed=children[r])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StuckChainWarning)
            chain = run_metropolis(target, x, cfg)
        x = chain.states[-1]
        rate = chain.acceptance_rate
        history.append(chain.states[steps_per_round // 2:])
        if not shaped and r >= 2:
            sd = np.concatenate(history[-2:]).std(axis=0)
            if np.all(sd > 0):
                scales = np.maximum(2.38 / math.sqrt(dim) * sd, 1e-3 * scales)
                shaped = True
                continue
        if rate < lo:
            scales *= max(0.2, rate / 0.3)
        elif rate > hi:
            scales *= min(3.0, rate / 0.3)
        elif shaped:
            break
    return scales, x


def batch_means_se(values, n_batches: int = 20) -> np.ndarray:
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    b = min(n_batches, n)
    if b < 2:
        return np.full(v.shape[1], np.nan)
    size = n // b
    batches = v[: size * b].reshape(b, size, -1).mean(axis=1)
    return batches.std(axis=0, ddof=1) / math.sqrt(b)


@dataclass
class PosteriorSummary:
    """EDAP, MDAP, central credible interval and diagnostics."""

    names: tuple
    edap: np.ndarray
    mdap: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sd: np.ndarray
    mc_se: np.ndarray
    acceptance_rate: float
    level: float
    draws: np.ndarray = field(repr=False)

    def interval_length(self) -> np.ndarray:
        return self.upper - self.lower

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "edap": self.edap.tolist(),
            "mdap": self.mdap.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "sd": self.sd.tolist(),
            "mc_se": self.mc_se.tolist(),
            "acceptance_rate": self.acceptance_rate,
            "level": self.level,
        }


def _constrain(states, transform):
    if transform is None:
        return np.asarray(states, dtype=float)
    fn = transform.to_constrained if hasattr(transform, "to_constrained") else transform
    return np.array([fn(s) for s in states])


def summarize(chain: Chain, transform=None, burn_in_fraction: float | None = None,
              thinning: int | None = None, level: float = 0.95, names: Sequence[str] | None = None,
              n_batches: int = 20) -> PosteriorSummary:
    """Posterior summary from the thinned post-burn-in part of a chain.

    ``transform`` maps sampler coordinates to constrained parameters: a
    posterior object (with ``to_constrained`` and ``log_jacobian``), a plain
    callable, or ``None`` for the identity.  The MDAP is the post-burn-in
    state with the largest constrained-space density, i.e. ``log_target``
    minus the log-Jacobian of the transform.
    """
    frac = chain.config.burn_in_fraction if burn_in_fraction is None else burn_in_fraction
    idx = chain.retained_index(frac, thinning)
    if idx.size == 0:
        raise EmptyChain("no states left after burn-in and thinning")
    draws = _constrain(chain.states[idx], transform)
    start = int(math.floor(frac * chain.steps))
    tail = chain.states[start:]
    score = chain.log_targets[start:].copy()
    if transform is not None and hasattr(transform, "log_jacobian"):
        score -= np.array([transform.log_jacobian(s) for s in tail])
    best = int(np.argmax(score))
    mdap = _constrain(tail[best:best + 1], transform)[0]
    alpha = 0.5 * (1.0 - level)
    lower, upper = np.quantile(draws, [alpha, 1.0 - alpha], axis=0)
    if names is None:
        names = getattr(transform, "names", None) or tuple(f"theta{i}" for i in range(draws.shape[1]))
    return PosteriorSummary(
        names=tuple(names),
        edap=draws.mean(axis=0),
        mdap=mdap,
        lower=lower,
        upper=upper,
        sd=draws.std(axis=0, ddof=1) if len(draws) > 1 else np.zeros(draws.shape[1]),
        mc_se=batch_means_se(draws, n_batches),
        acceptance_rate=chain.acceptance_rate,
        level=level,
        draws=draws,
    )


def scores_fd(target, states, step: float = 1e-5) -> np.ndarray:
    """Gradient of ``target`` at each state by central differences."""
    states = np.asarray(states, dtype=float)
    out = np.empty_like(states)
    for i, u in enumerate(states):
        h = step * (1.0 + np.abs(u))
        for k in range(u.size):
            up = u.copy()
            dn = u.copy()
            up[k] += h[k]
            dn[k] -= h[k]
            out[i, k] = (target(up) - target(dn)) / (2.0 * h[k])
    return out


def zero_variance_series(values, states, scores, degree: int = 2) -> np.ndarray:
    """``values`` minus their fitted zero-variance control variates.

    Control variates are ``L P = Laplacian P + grad P . score`` for
    polynomials ``P`` in the sampler coordinates of degree one (the scores
    themselves) or two (adding ``2 delta_kl + u_k s_l + u_l s_k``).  In one
    dimension any degree is allowed.  Integration by parts gives them mean
    zero under the target, so regressing ``values`` on them removes most of
    the Monte Carlo noise when the target is close to Gaussian.  The
    corrected series has the same mean; its batch-means error is the error
    of the control-variate estimate.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    u = np.asarray(states, dtype=float)
    s = np.asarray(scores, dtype=float)
    cols = [s]
    if u.shape[1] == 1 and degree > 2:
        # one dimension: P = v^k gives k(k-1) v^(k-2) + k v^(k-1) s
        v = u[:, 0] - u[:, 0].mean()
        cols = [s]
        for k in range(2, degree + 1):
            cols.append((k * (k - 1) * v ** (k - 2) + k * v ** (k - 1) * s[:, 0])[:, None])
        degree = 0
    if degree >= 2:
        center = u.mean(axis=0)
        v = u - center
        d = u.shape[1]
        for k in range(d):
            for l in range(k, d):
                extra = v[:, k] * s[:, l] + v[:, l] * s[:, k]
                if k == l:
                    extra = extra + 2.0
                cols.append(extra[:, None])
    z = np.hstack(cols)
    # coefficients from centred columns; the correction uses the raw ones
    coef, *_ = np.linalg.lstsq(z - z.mean(axis=0), values - values.mean(axis=0), rcond=None)
    return values - z @ coef


def zero_variance_mean(values, states, scores, degree: int = 2) -> np.ndarray:
    """Zero-variance control-variate estimate of ``E[values]``."""
    return zero_variance_series(values, states, scores, degree).mean(axis=0)


def zero_variance_draws(chain: Chain, target, transform=None, degree: int = 2,
                        burn_in_fraction: float | None = None, thinning: int | None = None) -> np.ndarray:
    """Retained draws corrected by zero-variance control variates."""
    idx = chain.retained_index(burn_in_fraction, thinning)
    if idx.size == 0:
        raise EmptyChain("no states left after burn-in and thinning")
    states = chain.states[idx]
    draws = _constrain(states, transform)
    return zero_variance_series(draws, states, scores_fd(target, states), degree)


def zero_variance_edap(chain: Chain, target, transform=None, degree: int = 2,
                       burn_in_fraction: float | None = None, thinning: int | None = None) -> np.ndarray:
    """EDAP with zero-variance control variates; costs ``2 p`` target calls per draw."""
    return zero_variance_draws(chain, target, transform, degree, burn_in_fraction, thinning).mean(axis=0)


def write_chain_csv(chain: Chain, path, transform=None, names: Sequence[str] | None = None) -> None:
    """Dump every step: ``step, log_target, <constrained parameters>, accepted``."""
    theta = _constrain(chain.states, transform)
    if names is None:
        names = getattr(transform, "names", None) or tuple(f"theta{i}" for i in range(theta.shape[1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "log_target", *names, "accepted"])
        for t in range(chain.steps):
            writer.writerow([t + 1, format(chain.log_targets[t], ".17g"),
                             *(format(v, ".17g") for v in theta[t]), int(chain.accepted[t])])
