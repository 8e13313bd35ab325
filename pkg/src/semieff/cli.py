"""Command-line front end.

Declarative experiment configs drive the model registry, estimator
pipelines and diagnostic checks; every output file carries a header block
with the config hash, seed and toolkit version, and rerunning a config
with the same seed reproduces the files byte for byte at any worker
count.

Exit codes: 0 success / all verdicts pass, 1 diagnostic failure, 2 config
error, 3 runtime estimation error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import __version__
from .diagnostics import (
    ecdf_cramer_rao_check,
    excess_variance,
    lan_check,
    las_spread_check,
    regularity_check,
)
from .errors import DomainError, EstimationError, NotRegularError, QuadratureError
from .estimators import (
    SplitPlan,
    discretize,
    kernel_score_estimator,
    m_estimator,
    moments_preliminary,
    one_step,
    semiparametric_one_step,
    split_one_step,
)
from .geometry import influence_from_model
from .models import MODEL_TAGS, get_model, gaussian_family, laplace_family, logistic_family
from .numerics import RngStream
from .spread import (
    DEFAULT_U_GRID,
    ScoreStatistic,
    spread_bound_from_score,
    trigonometric_bound,
    uniform_bound,
    van_zwet_bound,
)
from .timeseries import adaptive_ar1_estimate, simulate_ar1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_PIPELINE_KEYS = {
    "estimator": "one-step",
    "preliminary": "moments",
    "discretize": True,
    "mesh_c": 1.0,
    "splitting": "none",
    "score": "exact",
    "plan": [0.25, 0.5, 0.75],
    "lambda_frac": 0.5,
}

_DIAG_KEYS = {
    "lan": {"check", "t", "n_grid", "reps"},
    "las": {"check", "a", "n", "reps", "expect"},
    "regularity": {"check", "t", "n", "reps", "estimator"},
    "excess": {"check", "n", "reps", "estimator"},
    "ecdf": {"check", "quantiles", "n", "reps"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Strictly parsed experiment description; round-trips losslessly."""

    name: str
    model: str
    theta: List[float]
    n_grid: List[int]
    reps: int
    seed: int
    model_params: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)
    diagnostics: List[dict] = field(default_factory=list)
    out_dir: str = "."
    slack: dict = field(default_factory=dict)

    _ALLOWED = {
        "name",
        "model",
        "theta",
        "n_grid",
        "reps",
        "seed",
        "model_params",
        "pipeline",
        "diagnostics",
        "out_dir",
        "slack",
    }
    _REQUIRED = {"name", "model", "theta", "n_grid", "reps", "seed"}

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - cls._ALLOWED
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = cls._REQUIRED - set(raw)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        cfg = cls(
            name=str(raw["name"]),
            model=str(raw["model"]),
            theta=[float(v) for v in raw["theta"]],
            n_grid=[int(v) for v in raw["n_grid"]],
            reps=int(raw["reps"]),
            seed=int(raw["seed"]),
            model_params=dict(raw.get("model_params", {})),
            pipeline=_validate_pipeline(raw.get("pipeline", {})),
            diagnostics=[_validate_diag(d) for d in raw.get("diagnostics", [])],
            out_dir=str(raw.get("out_dir", ".")),
            slack=dict(raw.get("slack", {})),
        )
        if cfg.reps <= 0 or any(n <= 0 for n in cfg.n_grid):
            raise ConfigError("reps and n_grid entries must be positive")
        return cfg

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model": self.model,
            "theta": list(self.theta),
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "seed": self.seed,
            "model_params": dict(self.model_params),
            "pipeline": dict(self.pipeline),
            "diagnostics": [dict(d) for d in self.diagnostics],
            "out_dir": self.out_dir,
            "slack": dict(self.slack),
        }

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def _validate_pipeline(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("pipeline must be an object")
    unknown = set(raw) - set(_PIPELINE_KEYS)
    if unknown:
        raise ConfigError(f"unknown pipeline keys: {sorted(unknown)}")
    out = dict(_PIPELINE_KEYS)
    out.update(raw)
    if out["splitting"] not in ("none", "two-way", "four-way"):
        raise ConfigError(f"unknown splitting {out['splitting']!r}")
    if out["score"] not in ("exact", "kernel"):
        raise ConfigError(f"unknown score kind {out['score']!r}")
    if out["estimator"] not in ("one-step", "mean", "median", "constant", "mix", "moments"):
        raise ConfigError(f"unknown estimator kind {out['estimator']!r}")
    if len(out["plan"]) != 3:
        raise ConfigError("plan must have three fractions")
    return out


def _validate_diag(raw: dict) -> dict:
    if not isinstance(raw, dict) or "check" not in raw:
        raise ConfigError("each diagnostic needs a 'check' key")
    kind = raw["check"]
    if kind not in _DIAG_KEYS:
        raise ConfigError(f"unknown diagnostic {kind!r}; known: {sorted(_DIAG_KEYS)}")
    unknown = set(raw) - _DIAG_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown keys for diagnostic {kind!r}: {sorted(unknown)}")
    return dict(raw)


def _write_csv(path: str, rows, meta: dict) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerows(rows)


def _meta(cfg_hash: str, seed) -> dict:
    return {"semieff-version": __version__, "config-hash": cfg_hash, "seed": seed}


def build_estimator(cfg: ExperimentConfig, model) -> Callable:
    """Translate a pipeline record into ``sample -> theta_hat``."""
    p = cfg.pipeline or dict(_PIPELINE_KEYS)
    kind = p["estimator"]
    theta0 = np.asarray(cfg.theta, dtype=float)
    if kind == "mean":
        return lambda x: np.array([float(np.mean(np.asarray(x, dtype=float)))])
    if kind == "median":
        return lambda x: np.array([float(np.median(np.asarray(x, dtype=float)))])
    if kind == "constant":
        return lambda x: theta0.copy()
    if kind == "mix":
        return lambda x: np.array(
            [0.5 * float(np.mean(x)) + 0.5 * float(np.median(x))]
        )
    if kind == "moments":
        prelim = moments_preliminary(cfg.model)
        return lambda x: prelim(x)

    prelim = (
        m_estimator() if p["preliminary"] == "m-estimator" else moments_preliminary(cfg.model)
    )
    plan = SplitPlan(*[float(v) for v in p["plan"]])

    if p["splitting"] == "four-way":
        if p["score"] != "kernel":
            raise ConfigError("four-way splitting requires the kernel score")
        score_est = kernel_score_estimator()
        return lambda x: semiparametric_one_step(x, prelim, score_est, plan)

    influence = influence_from_model(model)

    def estimate(sample):
        if p["splitting"] == "two-way":
            return split_one_step(sample, prelim, influence, float(p["lambda_frac"]))
        t0 = prelim(sample)
        if p["discretize"]:
            n = len(sample[0]) if isinstance(sample, tuple) else len(sample)
            cand = discretize(t0, n, float(p["mesh_c"]))
            if model.theta_domain(cand):
                t0 = cand
        return one_step(t0, sample, influence)

    return estimate


def _ar1_family(params: dict):
    fams = {"normal": gaussian_family, "laplace": laplace_family, "logistic": logistic_family}
    name = params.get("family", "normal")
    if name not in fams:
        raise ConfigError(f"unknown ar1 innovation family {name!r}")
    kwargs = {k: v for k, v in params.items() if k not in ("family",)}
    return fams[name](**kwargs)


def cmd_bound(args) -> int:
    grid = np.round(
        np.arange(args.grid_step, 1.0 - args.grid_step / 2, args.grid_step), 12
    )
    try:
        if args.score is not None:
            if args.score != "normal":
                raise DomainError(f"unknown score law {args.score!r}; known: normal")
            bound = spread_bound_from_score(
                ScoreStatistic.normal(args.var), quad_tol=args.quad_tol, grid=grid
            )
            label = f"score-normal-var{args.var:g}"
        elif args.family == "uniform":
            if args.eabs is None:
                raise DomainError("--family uniform needs --eabs")
            bound = uniform_bound(args.eabs)
            label = f"uniform-eabs{args.eabs:g}"
        elif args.family == "vanzwet":
            if args.es2 is None:
                raise DomainError("--family vanzwet needs --es2")
            bound = van_zwet_bound(args.es2)
            label = f"vanzwet-es2{args.es2:g}"
        elif args.family == "trig":
            if args.es2 is None:
                raise DomainError("--family trig needs --es2")
            bound = trigonometric_bound(args.es2)
            label = f"trig-es2{args.es2:g}"
        else:
            print("bound: provide --score normal or --family {uniform,vanzwet,trig}",
                  file=sys.stderr)
            return EXIT_CONFIG
    except (DomainError, QuadratureError) as exc:
        print(f"bound: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    table = bound.table(grid)
    out = args.out or f"bound_{label}.csv"
    cfg_hash = hashlib.sha256(label.encode()).hexdigest()[:16]
    rows = [["u", "k_inverse"]] + [[repr(float(u)), repr(float(v))] for u, v in table]
    _write_csv(out, rows, _meta(cfg_hash, args.seed))
    print(f"wrote {out} ({bound.provenance})")
    if not args.no_figures:
        from .report import bound_figure

        fig_path = os.path.splitext(out)[0] + ".png"
        bound_figure(table, fig_path, label)
        print(f"wrote {fig_path}")
    return EXIT_OK


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config FILE is required")
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.reps is not None:
        cfg.reps = args.reps
    if args.n is not None:
        cfg.n_grid = [args.n]
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def cmd_estimate(args) -> int:
    try:
        cfg = _load_config(args)
        is_ar1 = cfg.model == "ar1"
        model = None if is_ar1 else get_model(cfg.model, **cfg.model_params)
        estimator = None if is_ar1 else build_estimator(cfg, model)
        if is_ar1:
            fam = _ar1_family(
                {k: v for k, v in cfg.model_params.items() if k != "rho"}
            )
            plan = SplitPlan(*[float(v) for v in cfg.pipeline.get("plan", [0.25, 0.5, 0.75])])
    except (ConfigError, DomainError) as exc:
        print(f"estimate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    theta0 = np.asarray(cfg.theta, dtype=float)
    os.makedirs(cfg.out_dir, exist_ok=True)
    root = RngStream(cfg.seed)
    all_rows = [["n", "rep"] + [f"theta_{j}" for j in range(theta0.size)]]
    summary = [["n", "coordinate", "mean", "variance", "n_x_variance"]]
    results = {}
    for n in cfg.n_grid:
        ests = np.empty((cfg.reps, theta0.size))
        for r in range(cfg.reps):
            stream = root.substream(n, r)
            try:
                if is_ar1:
                    path = simulate_ar1(float(theta0[0]), n, fam, stream)
                    est, _ = adaptive_ar1_estimate(path, plan=plan)
                    ests[r] = [est]
                else:
                    sample = model.sample(theta0, n, stream)
                    ests[r] = estimator(sample)
            except (EstimationError, DomainError, NotRegularError) as exc:
                print(f"estimate: replication {r} at n={n} failed: {exc}",
                      file=sys.stderr)
                return EXIT_RUNTIME
            all_rows.append([str(n), str(r)] + [repr(float(v)) for v in ests[r]])
        results[n] = ests
        for j in range(theta0.size):
            v = float(np.var(ests[:, j], ddof=1))
            summary.append([str(n), str(j), repr(float(np.mean(ests[:, j]))),
                            repr(v), repr(v * n)])

    meta = _meta(cfg.digest(), cfg.seed)
    est_path = os.path.join(cfg.out_dir, f"{cfg.name}_estimates.csv")
    sum_path = os.path.join(cfg.out_dir, f"{cfg.name}_summary.csv")
    _write_csv(est_path, all_rows, meta)
    _write_csv(sum_path, summary, meta)
    print(f"wrote {est_path}")
    print(f"wrote {sum_path}")
    if not args.no_figures:
        from .report import estimates_figure

        fig_path = os.path.join(cfg.out_dir, f"{cfg.name}_estimates.png")
        estimates_figure(results[cfg.n_grid[-1]], theta0, fig_path,
                         f"{cfg.name} (n={cfg.n_grid[-1]})")
        print(f"wrote {fig_path}")
    return EXIT_OK


def _ecdf_source(cfg: ExperimentConfig):
    """Sampler and CDF for the ecdf diagnostic, from the config's model."""
    theta0 = np.asarray(cfg.theta, dtype=float)
    if cfg.model == "normal":
        mu, sd = float(theta0[0]), float(theta0[1])
        from scipy.special import ndtr

        return (
            lambda gen, n: mu + sd * gen.standard_normal(n),
            lambda t: ndtr((np.asarray(t, dtype=float) - mu) / sd),
            lambda q: mu + sd * float(_norm_ppf(q)),
        )
    if cfg.model.startswith("location:"):
        fam = _family_for(cfg.model, cfg.model_params)
        shift = float(theta0[0])
        if fam.cdf is None:
            raise ConfigError(f"model {cfg.model} has no cdf for the ecdf check")

        def ppf(q):
            from scipy.optimize import brentq

            return shift + brentq(lambda x: fam.cdf(x) - q, -60, 60)

        return (
            lambda gen, n: shift + _sample_with_gen(fam, gen, n),
            lambda t: fam.cdf(np.asarray(t, dtype=float) - shift),
            ppf,
        )
    raise ConfigError(f"ecdf check unsupported for model {cfg.model!r}")


def _norm_ppf(q):
    from scipy.stats import norm

    return norm.ppf(q)


def _family_for(tag: str, params: dict):
    fams = {"normal": gaussian_family, "laplace": laplace_family, "logistic": logistic_family}
    return fams[tag.split(":", 1)[1]](**params)


def _sample_with_gen(fam, gen, n):
    # family samplers take streams; adapt a raw generator deterministically
    name = fam.name.split("(")[0]
    if name == "normal":
        return math.sqrt(fam.variance) * gen.standard_normal(n)
    if name == "laplace":
        return gen.laplace(0.0, math.sqrt(fam.variance / 2.0), n)
    if name == "logistic":
        return gen.logistic(0.0, math.sqrt(3.0 * fam.variance) / math.pi, n)
    raise ConfigError(f"no generator adapter for family {fam.name}")


def cmd_check(args) -> int:
    try:
        cfg = _load_config(args)
        if not cfg.diagnostics:
            print("check: empty diagnostic list; nothing to verify")
        model = None
        if cfg.model != "ar1":
            model = get_model(cfg.model, **cfg.model_params)
    except (ConfigError, DomainError) as exc:
        print(f"check: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    workers = int(os.environ.get("SEMIEFF_THREADS", "1"))
    theta0 = np.asarray(cfg.theta, dtype=float)
    os.makedirs(cfg.out_dir, exist_ok=True)
    meta = _meta(cfg.digest(), cfg.seed)
    all_pass = True
    try:
        for idx, diag in enumerate(cfg.diagnostics):
            kind = diag["check"]
            reps = int(diag.get("reps", cfg.reps))
            rng = RngStream(cfg.seed, idx)
            exp_id = f"{cfg.name}:{kind}"
            if kind == "lan":
                report = lan_check(
                    model, theta0, diag.get("t", [1.0]),
                    [int(v) for v in diag.get("n_grid", cfg.n_grid)],
                    reps, rng, workers=workers, experiment_id=exp_id,
                )
            elif kind == "las":
                est = _diag_estimator(cfg, model, diag)
                report = las_spread_check(
                    model, est, theta0, diag.get("a", [1.0] + [0.0] * (theta0.size - 1)),
                    int(diag.get("n", cfg.n_grid[0])), reps, rng,
                    workers=workers, expect=diag.get("expect", "dominates"),
                    experiment_id=exp_id,
                )
            elif kind == "regularity":
                est = _diag_estimator(cfg, model, diag)
                report = regularity_check(
                    model, est, theta0, diag.get("t", [1.0] + [0.0] * (theta0.size - 1)),
                    int(diag.get("n", cfg.n_grid[0])), reps, rng,
                    workers=workers, experiment_id=exp_id,
                )
            elif kind == "excess":
                est = _diag_estimator(cfg, model, diag)
                report = excess_variance(
                    model, est, theta0, int(diag.get("n", cfg.n_grid[0])), reps, rng,
                    workers=workers, experiment_id=exp_id,
                )
            elif kind == "ecdf":
                sampler, cdf, ppf = _ecdf_source(cfg)
                qs = diag.get("quantiles", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
                t_grid = [ppf(float(q)) for q in qs]
                report = ecdf_cramer_rao_check(
                    sampler, cdf, t_grid, int(diag.get("n", cfg.n_grid[0])),
                    reps, rng, workers=workers, experiment_id=exp_id,
                )
            else:  # unreachable after validation
                raise ConfigError(f"unknown diagnostic {kind!r}")

            stem = os.path.join(cfg.out_dir, f"{cfg.name}_{idx}_{kind}")
            with open(stem + ".json", "w") as fh:
                fh.write(
                    json.dumps(
                        {"meta": meta, "report": report.to_dict()},
                        sort_keys=True,
                        indent=2,
                    )
                )
                fh.write("\n")
            _write_csv(stem + ".csv", report.csv_rows(), meta)
            if not args.no_figures:
                from .report import report_figure

                report_figure(report, stem + ".png")
            for v in report.verdicts:
                status = "PASS" if v.passed else "FAIL"
                print(f"[{status}] {exp_id} {v.name}: margin={v.margin:.6g} "
                      f"threshold={v.threshold:.6g}")
            all_pass &= report.all_passed
    except (EstimationError, NotRegularError) as exc:
        print(f"check: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DomainError as exc:
        print(f"check: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if all_pass else EXIT_CHECK_FAILED


def _diag_estimator(cfg: ExperimentConfig, model, diag: dict) -> Callable:
    kind = diag.get("estimator", "pipeline")
    if kind == "pipeline":
        return build_estimator(cfg, model)
    sub = ExperimentConfig.from_dict(
        {**cfg.to_dict(), "pipeline": {"estimator": kind}, "diagnostics": []}
    )
    return build_estimator(sub, model)


def cmd_list_models(args) -> int:
    descriptions = {
        "normal": "normal location-scale, theta = (mu, sigma)",
        "location:normal": "location family with normal errors",
        "location:laplace": "location family with Laplace errors",
        "location:logistic": "location family with logistic errors",
        "cox": "parametric proportional hazards, theta = (nu, lambda)",
        "linreg": "linear regression through the origin, theta = nu",
        "expshift": "shifted exponential (non-regular, diagnostics only)",
        "ar1": "AR(1) time series, theta = rho (timeseries pipeline)",
    }
    for tag in MODEL_TAGS:
        print(f"{tag:20s} {descriptions[tag]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semieff",
        description="Spread bounds, information bounds, one-step estimators "
        "and Monte Carlo diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pb = sub.add_parser("bound", help="emit a spread-bound quantile table")
    pb.add_argument("--score", choices=["normal"], help="score-statistic law")
    pb.add_argument("--var", type=float, default=1.0, help="score variance")
    pb.add_argument("--family", choices=["uniform", "vanzwet", "trig"])
    pb.add_argument("--eabs", type=float, help="E|S| for the uniform bound")
    pb.add_argument("--es2", type=float, help="E S^2 for vanzwet/trig bounds")
    pb.add_argument("--grid-step", type=float, default=0.005)
    pb.add_argument("--quad-tol", type=float, default=1e-6)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--out", help="output CSV path")
    pb.add_argument("--no-figures", action="store_true")
    pb.set_defaults(fn=cmd_bound)

    for name, fn, hlp in (
        ("estimate", cmd_estimate, "run an estimator pipeline over replications"),
        ("check", cmd_check, "run diagnostics and verdicts from a config"),
    ):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--reps", type=int, default=None, help="override replications")
        p.add_argument("--n", type=int, default=None, help="override sample size")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--no-figures", action="store_true")
        p.set_defaults(fn=fn)

    pl = sub.add_parser("list-models", help="print the model registry")
    pl.set_defaults(fn=cmd_list_models)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
