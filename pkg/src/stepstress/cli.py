"""Command-line front end: ``stepstress fit|test|influence|simulate``.

Exit codes: 0 success, 1 bad input or runtime error, 2 a fit did not
converge, 3 the test rejects the null.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from typing import Optional

import numpy as np

from .config import ConfigError, ExperimentConfig, dump_config, load_config, load_counts
from .errors import StepStressError
from .estimation import PARAM_NAMES, FitOptions, fit_mdpde, fit_rmdpde, wald_intervals
from .inference import PerturbationPoint, influence_restricted, influence_unrestricted, run_rao_test
from .montecarlo import (
    DEFAULT_EPSILONS,
    STUDIES,
    Design,
    StudyConfig,
    run_study,
)

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_REJECT = 0, 1, 2, 3
DEFAULT_SAMPLE_SIZE = 200


def _g(v) -> str:
    """Six significant digits for human-readable tables."""
    if v is None:
        return "-"
    return format(float(v), ".6g")


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _json_ready(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _emit_json(payload) -> None:
    json.dump(_json_ready(payload), sys.stdout, indent=2)
    sys.stdout.write("\n")


def _betas(cfg: ExperimentConfig, override: Optional[float]) -> tuple:
    return (float(override),) if override is not None else cfg.betas


def _constraint(cfg: ExperimentConfig, required: bool):
    if cfg.constraint is None:
        if required:
            raise ConfigError("constraint", "required for this command")
        return None
    return cfg.constraint.build()


# --- fit ------------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    counts = load_counts(args.data, cfg.grid)
    constraint = _constraint(cfg, required=args.restricted)
    opts = FitOptions(raise_on_failure=False)
    results, status = [], EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for beta in _betas(cfg, args.beta):
            fit = (fit_rmdpde(counts, cfg.plan, cfg.grid, beta, constraint, opts) if args.restricted
                   else fit_mdpde(counts, cfg.plan, cfg.grid, beta, opts))
            intervals = wald_intervals(fit, cfg.alpha) if fit.sigma is not None else None
            results.append((fit, intervals))
            if not fit.converged:
                status = EXIT_NOT_CONVERGED
    if args.json:
        out = []
        for fit, iv in results:
            d = fit.to_dict()
            d["wald_intervals"] = None if iv is None else {n: list(v) for n, v in zip(PARAM_NAMES, iv)}
            d["confidence_level"] = 1 - cfg.alpha
            out.append(d)
        _emit_json({"command": "fit", "restricted": args.restricted, "results": out})
        return status
    for fit, iv in results:
        kind = f"restricted ({fit.constraint.name})" if args.restricted else "unrestricted"
        print(f"beta = {_g(fit.beta)}, {kind}, N = {fit.N}")
        se = fit.standard_errors
        rows = []
        for i, name in enumerate(PARAM_NAMES):
            lo, hi = iv[i] if iv is not None else (None, None)
            rows.append([name, _g(fit.theta_hat.as_array()[i]), _g(None if se is None else se[i]), _g(lo), _g(hi)])
        level = f"{100 * (1 - cfg.alpha):.6g}%"
        print(_table(["param", "estimate", "std.err", f"{level} lower", f"{level} upper"], rows))
        print(f"loss {_g(fit.loss)}  converged {fit.converged}  iterations {fit.iterations}  "
              f"stationarity {_g(fit.stationarity)}  violation {_g(fit.constraint_violation)}")
        if fit.flags:
            print("flags: " + ", ".join(fit.flags))
        print()
    return status


# --- test -----------------------------------------------------------------

def cmd_test(args) -> int:
    cfg = load_config(args.config)
    counts = load_counts(args.data, cfg.grid)
    constraint = _constraint(cfg, required=True)
    alpha = cfg.alpha if args.alpha is None else float(args.alpha)
    if not 0 < alpha < 1:
        raise ConfigError("alpha", f"expected a value in (0, 1), got {alpha}")
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for beta in _betas(cfg, args.beta):
            results.append(run_rao_test(counts, cfg.plan, cfg.grid, beta, constraint, alpha))
    status = EXIT_REJECT if any(r.reject for r in results) else EXIT_OK
    if args.json:
        _emit_json({"command": "test", "null": constraint.name, "results": [r.to_dict() for r in results]})
        return status
    print(f"null: {constraint.name}  (df = {constraint.r}, alpha = {_g(alpha)})")
    rows = [[_g(r.beta), _g(r.statistic), r.df, _g(r.p_value), _g(r.critical_value),
             "reject" if r.reject else "fail to reject"] for r in results]
    print(_table(["beta", "R_beta", "df", "p-value", "critical", "decision"], rows))
    return status


# --- influence ------------------------------------------------------------

def cmd_influence(args) -> int:
    cfg = load_config(args.config)
    if cfg.theta0 is None:
        raise ConfigError("theta0", "required for influence functions")
    betas = _betas(cfg, args.beta)
    if len(betas) != 1:
        raise ConfigError("beta", "influence needs a single value; pass --beta")
    beta = betas[0]
    constraint = _constraint(cfg, required=args.restricted)
    if constraint is not None and args.restricted:
        viol = float(np.max(np.abs(constraint.evaluate(cfg.theta0.as_array()))))
        if viol > 1e-8:
            raise ConfigError("theta0", f"does not satisfy the constraint (violation {viol:.3g})")
    if args.points < 2:
        raise ConfigError("points", "need at least 2 sweep points")

    def influence(t0):
        point = PerturbationPoint.from_time(t0, cfg.grid)
        if args.restricted:
            return influence_restricted(point, cfg.theta0, cfg.plan, cfg.grid, beta, constraint)
        return influence_unrestricted(point, cfg.theta0, cfg.plan, cfg.grid, beta)

    single = None
    if args.t0 is not None:
        single = (float(args.t0), influence(float(args.t0)))
    sweep = []
    if args.out is not None or single is None:
        for t0 in np.linspace(0.0, cfg.plan.termination, args.points):
            v = influence(float(t0))
            sweep.append((float(t0), v, float(np.linalg.norm(v))))
    if args.out is not None:
        with open(args.out, "w") as fh:
            _write_sweep(fh, sweep)

    if args.json:
        payload = {"command": "influence", "beta": beta, "restricted": args.restricted}
        if single is not None:
            payload["t0"] = single[0]
            payload["influence"] = dict(zip(PARAM_NAMES, single[1].tolist()))
            payload["norm"] = float(np.linalg.norm(single[1]))
        if sweep and args.out is None:
            payload["sweep"] = [{"t0": t, **dict(zip(PARAM_NAMES, v.tolist())), "norm": n} for t, v, n in sweep]
        _emit_json(payload)
    elif single is not None:
        t0, v = single
        print(f"influence at t0 = {_g(t0)} (beta = {_g(beta)}, "
              f"{'restricted' if args.restricted else 'unrestricted'})")
        print(_table(["param", "IF"], [[n, _g(x)] for n, x in zip(PARAM_NAMES, v)]))
        print(f"norm {_g(np.linalg.norm(v))}")
    elif args.out is None:
        _write_sweep(sys.stdout, sweep)
    return EXIT_OK


def _write_sweep(fh, sweep) -> None:
    fh.write("t0,if_a0,if_a1,if_eta,norm\n")
    for t0, v, n in sweep:
        fh.write(",".join(format(x, ".12g") for x in (t0, *v, n)) + "\n")


# --- simulate -------------------------------------------------------------

def _threads(flag: Optional[int]) -> int:
    env = os.environ.get("STEPSTRESS_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError("STEPSTRESS_THREADS", f"expected an integer, got {env!r}") from None
    else:
        value = flag if flag is not None else (os.cpu_count() or 1)
    if value < 1:
        raise ConfigError("threads", f"expected a positive integer, got {value}")
    return value


def study_config(cfg: ExperimentConfig, study: str, reps=None, seed=None, threads=1,
                 restricted: bool = False) -> StudyConfig:
    """Translate a file config plus command-line overrides into a study."""
    if study not in STUDIES:
        raise ConfigError("study", f"unknown study {study!r}; choose from {', '.join(STUDIES)}")
    if cfg.theta0 is None:
        raise ConfigError("theta0", "required for simulation")
    constraint = None
    if study in ("level", "power") or restricted:
        constraint = _constraint(cfg, required=True)
    design = Design(cfg.plan, cfg.grid, cfg.theta0, cfg.sample_size or DEFAULT_SAMPLE_SIZE)
    epsilons = cfg.epsilons if cfg.epsilons is not None else (
        (0.0,) if study == "coverage" else DEFAULT_EPSILONS)
    return StudyConfig(
        study=study,
        reps=reps if reps is not None else (cfg.reps or 1000),
        seed=seed if seed is not None else (cfg.seed or 0),
        betas=cfg.betas,
        epsilons=epsilons,
        design=design,
        alpha=cfg.alpha,
        contamination_cell=cfg.contamination_cell or 1,
        threads=threads,
        constraint=constraint,
    )


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.reps is not None and args.reps < 1:
        raise ConfigError("reps", f"expected a positive integer, got {args.reps}")
    if args.seed is not None and args.seed < 0:
        raise ConfigError("seed", f"expected a nonnegative integer, got {args.seed}")
    if args.emit_config:
        # the effective configuration, with command-line overrides folded in
        eff = ExperimentConfig(**{**cfg.__dict__,
                                  "reps": args.reps if args.reps is not None else cfg.reps,
                                  "seed": args.seed if args.seed is not None else cfg.seed})
        dump_config(eff, args.emit_config)
    study = study_config(cfg, args.study, args.reps, args.seed, _threads(args.threads), args.restricted)
    table = run_study(study)
    if args.out:
        json_path = os.path.splitext(args.out)[0] + ".json"
        table.write(args.out, json_path)
    if args.json:
        _emit_json(table.summary())
    elif not args.out:
        sys.stdout.write(table.to_csv())
    else:
        print(f"wrote {args.out} and {json_path}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other bad input; 2 means non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stepstress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="minimum DPD estimates with Wald intervals")
    p.add_argument("config")
    p.add_argument("data", help="CSV with header interval,count")
    p.add_argument("--beta", type=float)
    p.add_argument("--restricted", action="store_true", help="fit under the config constraint")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="Rao-type test of the config constraint")
    p.add_argument("config")
    p.add_argument("data")
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("influence", help="influence function at theta0")
    p.add_argument("config")
    p.add_argument("--t0", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--restricted", action="store_true")
    p.add_argument("--points", type=int, default=201, help="sweep size over [0, termination]")
    p.add_argument("--out", help="write the sweep CSV here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    p.add_argument("config")
    p.add_argument("--study", default="mse", help="|".join(STUDIES))
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path; a JSON summary is written next to it")
    p.add_argument("--threads", type=int)
    p.add_argument("--restricted", action="store_true", help="restricted fits in an MSE study")
    p.add_argument("--emit-config", help="write the effective config JSON here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StepStressError, ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
