"""Command-line entry point.

Subcommands ``fit``, ``table``, ``influence``, ``breakdown`` and ``bench``
(plus ``rerun``, which replays a manifest).  Every run writes into a staging
directory first and moves the files into ``--out`` only on success, so a
failed run leaves no partial outputs.

Exit codes: 2 bad arguments, unreadable input or bad config; 3 model/kind
mismatch or unknown table; 4 sampler failure; 5 ``--check`` tolerance
exceeded.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .disparity import (DisparityKind, GaussHermiteDisparity, MonteCarloDisparity, as_gfunction,
                        disparity_exact_quadrature, gaussian_pairs)
from .errors import DisparityBayesError, EmptyChain, InitInvalid, StuckChainWarning
from .inference import (
    INFLUENCE_COLUMNS,
    NormalDensity,
    breakdown_limit_check,
    influence_alpha,
    write_breakdown_csv,
    write_influence_csv,
)
from .models import (
    BinomialLogitNormalPosterior,
    Chi2Prior,
    ExpGamma,
    HierarchicalSpec,
    IndependentPrior,
    InverseGammaPrior,
    LikelihoodPosterior,
    Normal,
    NormalMean,
    NormalPrior,
    RandomInterceptPosterior,
    SquaredPrior,
    build_iid_dposterior,
    load_parasite,
    load_survey,
)
from .sampler import ChainConfig, as_seed_sequence, run_metropolis, summarize, tune_scales, write_chain_csv
from . import simharness

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH, EXIT_SAMPLER, EXIT_CHECK = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

@dataclass
class FitConfig:
    """Schema of the ``fit`` config file (JSON object, every key optional).

    steps : int
        Metropolis proposals (default 20000).
    thinning : int
        Keep every ``thinning``-th post-burn-in state.
    burn_in_fraction : float
        Leading fraction of the chain discarded.
    proposal_scale : float or list, optional
        Increment SDs in sampler coordinates; tuned by pilot runs if omitted.
    tune : bool
        Run pilot rounds even when ``proposal_scale`` is given.
    level : float
        Credible level of the reported intervals.
    method : str, optional
        Disparity estimator for i.i.d. models: ``mc``, ``gh`` or ``quadrature``.
    bandwidth : str or float
        ``sj``, ``silverman`` or a fixed value (i.i.d. models).
    n_samples, n_nodes : int
        Monte Carlo draws and Gauss-Hermite nodes of the disparity estimators.
    """

    steps: int = 20_000
    thinning: int = 2
    burn_in_fraction: float = 0.5
    proposal_scale: object = None
    tune: bool = False
    level: float = 0.95
    method: str | None = None
    bandwidth: object = "sj"
    n_samples: int = 500
    n_nodes: int = 80

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        if not isinstance(d, dict):
            raise CliError(EXIT_USAGE, "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise CliError(EXIT_USAGE, f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        ints = ("steps", "thinning", "n_samples", "n_nodes")
        if any(not isinstance(getattr(cfg, k), int) or isinstance(getattr(cfg, k), bool) for k in ints):
            raise CliError(EXIT_USAGE, f"config keys {', '.join(ints)} must be integers")
        if not isinstance(cfg.tune, bool):
            raise CliError(EXIT_USAGE, "config key tune must be true or false")
        if cfg.method not in (None, "mc", "gh", "quadrature"):
            raise CliError(EXIT_USAGE, f"unknown method {cfg.method!r}")
        if not 0.0 < cfg.level < 1.0:
            raise CliError(EXIT_USAGE, "level must lie in (0, 1)")
        return cfg


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"config is not valid JSON: {exc}") from exc


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Output staging
# ---------------------------------------------------------------------------

class Staging:
    """Temporary directory next to ``out``; :meth:`commit` moves files over."""

    def __init__(self, out: str):
        self.out = os.path.abspath(out)
        parent = os.path.dirname(self.out) or "."
        os.makedirs(parent, exist_ok=True)
        self.dir = tempfile.mkdtemp(prefix=".staging-", dir=parent)
        self.files: list[str] = []

    def path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.dir, name)

    def commit(self) -> list[str]:
        os.makedirs(self.out, exist_ok=True)
        for name in self.files:
            os.replace(os.path.join(self.dir, name), os.path.join(self.out, name))
        self.discard()
        return [os.path.join(self.out, n) for n in self.files]

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def _g17(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else format(x, ".17g")


def write_rows(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

IID_MODELS = ("normal-mean", "normal", "exp-gamma")
MODELS = IID_MODELS + ("binomial-logitnormal", "random-intercept")
IID_KINDS = ("likelihood", "hd", "ned", "kl")


def _read_column(path) -> np.ndarray:
    """Numbers from a one-column CSV (a non-numeric first line is a header)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read data: {exc}") from exc
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    try:
        x = np.array([float(r[0]) for r in rows])
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"non-numeric value in {path}: {exc}") from exc
    if x.size < 2 or not np.all(np.isfinite(x)):
        raise CliError(EXIT_USAGE, f"{path}: need at least two finite values")
    return x


def _iid_posterior(model_name, kind, data, cfg: FitConfig, seed):
    if model_name == "normal-mean":
        model, prior = NormalMean(), IndependentPrior(NormalPrior(0.0, 5.0))
        init = np.array([np.median(data)])
    elif model_name == "normal":
        model = Normal()
        prior = IndependentPrior(NormalPrior(0.0, 10.0), SquaredPrior(InverseGammaPrior(1.0, 1.0)))
        init = np.array([np.median(data), max(np.std(data, ddof=1), 1e-3)])
    else:
        model, prior = ExpGamma(), IndependentPrior(Chi2Prior(3.0), Chi2Prior(0.3))
        init = simharness.expgamma_start(data)
    if kind == "likelihood":
        post = LikelihoodPosterior(model, prior, data)
    else:
        post = build_iid_dposterior(data, model, prior, kind, method=cfg.method, bandwidth=cfg.bandwidth,
                                    n_samples=cfg.n_samples, n_nodes=cfg.n_nodes, seed=seed)
    return post, model.to_unconstrained(init), 2.4 / math.sqrt(data.size)


def build_fit_posterior(data_path, model_name: str, kind: str, cfg: FitConfig, seed):
    """Posterior object, initial sampler state and a default proposal scale."""
    kind = kind.lower()
    if model_name not in MODELS:
        raise CliError(EXIT_MISMATCH, f"unknown model {model_name!r}; choose from {', '.join(MODELS)}")
    if model_name in IID_MODELS:
        if kind not in IID_KINDS:
            raise CliError(EXIT_MISMATCH, f"model {model_name} supports kinds {', '.join(IID_KINDS)}")
        return _iid_posterior(model_name, kind, _read_column(data_path), cfg, seed)
    if model_name == "binomial-logitnormal":
        if kind not in ("likelihood", "hd", "ned"):
            raise CliError(EXIT_MISMATCH, "binomial-logitnormal supports kinds likelihood, hd, ned")
        d = _load(load_parasite, data_path)
        post = BinomialLogitNormalPosterior(d["successes"], d["trials"], None if kind == "likelihood" else kind,
                                            n_nodes=cfg.n_nodes, n_samples=cfg.n_samples, method=cfg.method,
                                            seed=seed)
        return post, post.initial_state(), 0.1
    try:
        spec = HierarchicalSpec.parse(kind)
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, f"random-intercept: {exc}") from exc
    d = _load(load_survey, data_path)
    post = RandomInterceptPosterior(d["status"], d["incomes"], spec, n_samples=cfg.n_samples,
                                    n_nodes=cfg.n_nodes, seed=seed)
    return post, post.initial_state(), 0.05


def _load(loader, path):
    if not os.path.exists(path):
        raise CliError(EXIT_USAGE, f"no such file: {path}")
    try:
        return loader(path)
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"cannot parse {path}: {exc}") from exc


def fit_extras(post, summary) -> dict:
    """Derived quantities reported alongside the summary."""
    out = {}
    if isinstance(post, RandomInterceptPosterior):
        # slopes of American (column 2) and foreign (column 3) students
        lt = float(np.mean(summary.draws[:, 3] < summary.draws[:, 2]))
        out["prob_beta1_f_lt_beta1_a"] = lt
        out["prob_beta1_f_gt_beta1_a"] = 1.0 - lt
    return out


def cmd_fit(args, cfg_dict: dict, stage: Staging) -> dict:
    cfg = FitConfig.from_dict(cfg_dict)
    if not os.path.exists(args.data):
        raise CliError(EXIT_USAGE, f"no such file: {args.data}")
    s_est, s_tune, s_run = as_seed_sequence(args.seed).spawn(3)
    try:
        post, u0, default_scale = build_fit_posterior(args.data, args.model, args.kind, cfg, s_est)
    except DisparityBayesError as exc:
        raise CliError(EXIT_USAGE, f"data unsuitable for {args.model}: {exc}") from exc
    dim = len(u0)
    scales = np.broadcast_to(np.asarray(cfg.proposal_scale if cfg.proposal_scale is not None else default_scale,
                                        dtype=float), (dim,)).copy()
    try:
        if cfg.proposal_scale is None or cfg.tune:
            scales, u0 = tune_scales(post.log_target, u0, scales, s_tune)
        chain_cfg = ChainConfig(steps=cfg.steps, proposal_scales=tuple(scales), seed=s_run,
                                thinning=cfg.thinning, burn_in_fraction=cfg.burn_in_fraction)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", StuckChainWarning)
            chain = run_metropolis(post.log_target, u0, chain_cfg)
        summary = summarize(chain, post, level=cfg.level)
    except (InitInvalid, EmptyChain, FloatingPointError) as exc:
        raise CliError(EXIT_SAMPLER, f"sampler failed: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"bad chain settings: {exc}") from exc
    if chain.stuck or any(issubclass(w.category, StuckChainWarning) for w in caught):
        raise CliError(EXIT_SAMPLER, f"chain stuck (acceptance rate {chain.acceptance_rate:.4f})")
    write_chain_csv(chain, stage.path("chain.csv"), post)
    doc = {"model": args.model, "kind": args.kind, **summary.to_dict(), **fit_extras(post, summary)}
    with open(stage.path("summary.json"), "w") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return {"proposal_scales": scales.tolist()}


# ---------------------------------------------------------------------------
# table
# ---------------------------------------------------------------------------

def cmd_table(args, cfg_dict: dict, stage: Staging) -> dict:
    if cfg_dict:
        raise CliError(EXIT_USAGE, "table takes no config keys")
    try:
        table = simharness.parse_table_id(args.table_id)
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from exc
    if not 0.0 < args.scale <= 1.0:
        raise CliError(EXIT_USAGE, "--scale must lie in (0, 1]")
    result = simharness.run_table(table, args.scale, args.seed, jobs=args.jobs)
    write_rows(stage.path(f"{table}.csv"), simharness.table_lines(result))
    write_rows(stage.path(f"{table}-diff.csv"), simharness.diff_lines(result))
    failures = result.check_failures()
    info = {"table": simharness.manifest_dict(result), "check_failures": len(failures)}
    if args.check and failures:
        info["exit_code"] = EXIT_CHECK
        for f in failures:
            print(f"outside tolerance: {f['label']} {f['parameter']} {f['statistic']} = "
                  f"{f['observed']:.4g} not in [{f['lower_bound']:.4g}, {f['upper_bound']:.4g}]",
                  file=sys.stderr)
    return info


# ---------------------------------------------------------------------------
# influence / breakdown
# ---------------------------------------------------------------------------

def _normal_mean_setup(args, prior_mean: float | None = None):
    if args.model != "normal-mean":
        raise CliError(EXIT_MISMATCH, "influence and breakdown support model normal-mean only")
    try:
        DisparityKind.parse(args.kind)
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from exc
    g = NormalDensity(args.center, 1.0)
    m = args.prior_mean if prior_mean is None else prior_mean
    return g, NormalMean(), IndependentPrior(NormalPrior(m, args.prior_sd))


def cmd_influence(args, cfg_dict: dict, stage: Staging) -> dict:
    if cfg_dict:
        raise CliError(EXIT_USAGE, "influence takes no config keys")
    prior_means = args.prior_means or [args.prior_mean]
    rows = [["prior_mean", *INFLUENCE_COLUMNS]]
    seeds = as_seed_sequence(args.seed).spawn(len(prior_means) * len(args.alpha) * len(args.z))
    k = 0
    for pm in prior_means:
        g, model, prior = _normal_mean_setup(args, pm)
        results = []
        for a in args.alpha:
            for z in args.z:
                try:
                    results.append(influence_alpha(g, model, prior, args.n, z, a, kind=args.kind,
                                                   steps=args.steps, seed=seeds[k], init=[args.center]))
                except InitInvalid as exc:
                    raise CliError(EXIT_SAMPLER, f"sampler failed: {exc}") from exc
                except ValueError as exc:
                    raise CliError(EXIT_USAGE, str(exc)) from exc
                k += 1
        tmp = os.path.join(stage.dir, "part.csv")
        write_influence_csv(results, tmp)
        with open(tmp, newline="") as fh:
            body = list(csv.reader(fh))[1:]
        os.remove(tmp)
        rows.extend([_g17(pm), *r] for r in body)
    write_rows(stage.path("influence.csv"), rows)
    return {}


def cmd_breakdown(args, cfg_dict: dict, stage: Staging) -> dict:
    if cfg_dict:
        raise CliError(EXIT_USAGE, "breakdown takes no config keys")
    g, model, prior = _normal_mean_setup(args)
    try:
        report = breakdown_limit_check(g, model, prior, args.n, args.alpha, args.z, kind=args.kind,
                                       steps=args.steps, seed=args.seed, init=[args.center])
    except InitInvalid as exc:
        raise CliError(EXIT_SAMPLER, f"sampler failed: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    write_breakdown_csv(report, stage.path("breakdown.csv"), as_gfunction(args.kind).kind.value, args.n)
    within = report.within(3.0)
    return {"within_3_se": within}


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args, cfg_dict: dict, stage: Staging) -> dict:
    """Accuracy and cost of Monte Carlo against Gauss-Hermite disparities.

    The CSV holds only deterministic columns; timings go to the manifest.
    """
    if cfg_dict:
        raise CliError(EXIT_USAGE, "bench takes no config keys")
    pairs = gaussian_pairs(args.pairs, as_seed_sequence(args.seed))
    model = Normal()
    rows = [["kind", "pair", "method", "size", "value", "reference", "abs_error"]]
    timing = {}
    for kind in ("hd", "ned"):
        gfun = as_gfunction(kind)
        for pair, (mg, sg, mf, sf) in enumerate(pairs):
            g, theta = NormalDensity(mg, sg), np.array([mf, sf])
            ref = disparity_exact_quadrature(g, model, theta, gfun)
            for method, size in (("mc", args.mc_samples), ("gh", args.gh_nodes)):
                if method == "mc":
                    draws = np.random.default_rng([args.seed, pair]).normal(mg, sg, size)
                    est = MonteCarloDisparity(g, gfun, samples=draws)
                else:
                    est = GaussHermiteDisparity(g, gfun, n_nodes=size)
                t0 = time.perf_counter()
                for _ in range(args.repeat):
                    val = est.evaluate(model, theta)
                dt = (time.perf_counter() - t0) / args.repeat
                timing.setdefault(f"{kind}/{method}", []).append(dt)
                rows.append([kind, str(pair), method, str(size), _g17(val), _g17(ref), _g17(abs(val - ref))])
    write_rows(stage.path("bench.csv"), rows)
    mean_t = {k: float(np.mean(v)) for k, v in timing.items()}
    return {"seconds_per_evaluation": mean_t,
            "mc_over_gh": {k: mean_t[f"{k}/mc"] / mean_t[f"{k}/gh"] for k in ("hd", "ned")}}


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _grid(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:step`` (inclusive of ``stop``)."""
    if ":" in text:
        try:
            a, b, s = (float(t) for t in text.split(":"))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from exc
        if s == 0 or (b - a) / s < 0:
            raise argparse.ArgumentTypeError(f"empty grid {text!r}")
        count = int(math.floor((b - a) / s + 1e-9)) + 1
        return [a + i * s for i in range(count)]
    return _floats(text)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="master seed (required; sole entropy source)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for replications")

    p = _Parser(prog="disparitybayes", description="Disparity-based Bayesian inference.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", parents=[common], help="sample a posterior for a data file")
    f.add_argument("data")
    f.add_argument("model", help=", ".join(MODELS))
    f.add_argument("kind", help="likelihood, hd, ned, kl; random-intercept takes e.g. hd-latent, ned-obs")
    f.add_argument("--config", help="JSON config file")

    t = sub.add_parser("table", parents=[common], help="run a simulation table")
    t.add_argument("table_id", help=", ".join(simharness.TABLES))
    t.add_argument("--scale", type=float, default=1.0, help="fraction of the desk-scale replication count")
    t.add_argument("--check", action="store_true", help="exit 5 if a tolerance band is violated")

    for name, helptext in (("influence", "alpha-level influence sweep"), ("breakdown", "far-contamination limit")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("model", help="normal-mean")
        q.add_argument("kind", help="hd, ned or kl")
        q.add_argument("--n", type=float, default=20.0)
        q.add_argument("--center", type=float, default=5.0, help="mean of the N(center, 1) data density")
        q.add_argument("--prior-mean", type=float, default=0.0)
        q.add_argument("--prior-sd", type=float, default=5.0)
        q.add_argument("--steps", type=int, default=20_000)
        if name == "influence":
            q.add_argument("--alpha", type=_floats, default=[0.05], help="comma-separated levels")
            q.add_argument("--z", type=_grid, default=_grid("0:20:1"), help="list or start:stop:step")
            q.add_argument("--prior-means", type=_grid, default=None,
                           help="sweep the prior mean instead of a single --prior-mean")
        else:
            q.add_argument("--alpha", type=float, default=0.2)
            q.add_argument("--z", type=_grid, default=[50.0, 250.0, 1250.0])

    b = sub.add_parser("bench", parents=[common], help="Monte Carlo against Gauss-Hermite disparities")
    b.add_argument("--pairs", type=int, default=20)
    b.add_argument("--mc-samples", type=int, default=10_000)
    b.add_argument("--gh-nodes", type=int, default=80)
    b.add_argument("--repeat", type=int, default=20)

    r = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="output directory (default: the recorded one)")
    return p


COMMANDS = {"fit": cmd_fit, "table": cmd_table, "influence": cmd_influence,
            "breakdown": cmd_breakdown, "bench": cmd_bench}


def _effective_args(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("out", "config")}
    return d


def run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        return _rerun(args)
    try:
        cfg_dict = read_config(getattr(args, "config", None))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return execute(args, argv, cfg_dict)


def execute(args, argv: list[str], cfg_dict: dict) -> int:
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    started = _now()
    stage = Staging(args.out)
    try:
        info = COMMANDS[args.command](args, cfg_dict, stage)
        code = info.pop("exit_code", EXIT_OK)
        manifest = {
            "command": args.command,
            "argv": list(argv),
            "arguments": _effective_args(args),
            "config": cfg_dict,
            "config_hash": config_hash({"arguments": _effective_args(args), "config": cfg_dict}),
            "seed": args.seed,
            "started": started,
            "finished": _now(),
            "version": __version__,
            "outputs": {},
            "details": info,
        }
        for name in stage.files:
            manifest["outputs"][name] = _sha256(os.path.join(stage.dir, name))
        with open(stage.path("manifest.json"), "w") as fh:
            fh.write(simharness.dumps_manifest(manifest) + "\n")
        stage.commit()
    except CliError as exc:
        stage.discard()
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BaseException:
        stage.discard()
        raise
    return code


def _rerun(args) -> int:
    try:
        with open(args.manifest) as fh:
            m = json.load(fh)
        argv = list(m["argv"])
        cfg_dict = m.get("config", {})
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_USAGE
    # the config is replayed from the manifest itself, not from the original file
    if "--config" in argv:
        i = argv.index("--config")
        del argv[i:i + 2]
    argv = [a for a in argv if not a.startswith("--config=")]
    if args.out is not None:
        argv += ["--out", args.out]
    parsed = build_parser().parse_args(argv)
    return execute(parsed, argv, cfg_dict)


def main(argv: list[str] | None = None) -> int:
    return run(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
