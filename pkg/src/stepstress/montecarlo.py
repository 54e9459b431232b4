"""Monte Carlo studies: contaminated multinomial data, MSE, level, power, coverage.

Every replication draws from its own counter-based stream keyed by
``(seed, rep, epsilon index)``, and per-replication results are gathered by
index before any summation, so tables do not depend on how replications are
spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .divergence import FailureCounts
from .errors import DomainError, SingularMatrixError
from .estimation import (
    DOMAIN_START,
    Constraint,
    FitOptions,
    confidence_region_test,
    fit_mdpde,
    fit_rmdpde,
    wald_intervals,
)
from .inference import rao_test_from_fit
from .model import InspectionGrid, ModelParams, StressPlan, cell_probabilities, mttf

SOLAR_THETA0 = (3.6597, -2.4131, 1.4)
SOLAR_TIMES = (1, 3, 5, 7, 8, 9, 10, 12, 13, 14, 15, 17, 19, 20)
DEFAULT_BETAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_EPSILONS = (0.0, 0.05, 0.1, 0.15, 0.2)
STUDIES = ("mse", "level", "power", "coverage")
CSV_COLUMNS = ("beta", "epsilon", "metric", "value", "mc_se", "reps", "failures")
#: stress at which the MTTF is estimated in the MSE study
MTTF_STRESS = 0.1


@dataclass(frozen=True)
class ContaminationSpec:
    """Extra failure mass ``epsilon`` moved into cell ``cell`` (1-based)."""

    cell: int = 1
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise DomainError(f"epsilon must be in [0, 1), got {self.epsilon}")
        if int(self.cell) != self.cell or self.cell < 1:
            raise DomainError(f"cell must be a positive integer, got {self.cell}")


def contaminate(pi, spec: ContaminationSpec) -> np.ndarray:
    """Mixture ``(1 - eps) pi + eps e_c``; other cells shrink by exactly ``1 - eps``."""
    pi = np.asarray(pi, dtype=float)
    if spec.cell > pi.size:
        raise DomainError(f"cell {spec.cell} is out of range for {pi.size} cells")
    out = (1.0 - spec.epsilon) * pi
    out[spec.cell - 1] += spec.epsilon
    return out


def sample_counts(pi, N: int, rng: np.random.Generator) -> FailureCounts:
    """One multinomial sample of ``N`` units over the cells."""
    if N < 1:
        raise DomainError(f"N must be at least 1, got {N}")
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise DomainError("cell probabilities must be nonnegative and sum to one")
    return FailureCounts(tuple(rng.multinomial(N, pi / pi.sum())))


def rep_stream(seed: int, rep: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for replication ``rep``; ``stream`` separates the epsilon grid."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, rep, stream])))


@dataclass(frozen=True)
class Design:
    plan: StressPlan
    grid: InspectionGrid
    theta0: ModelParams
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise DomainError(f"N must be at least 1, got {self.N}")


def default_solar_design() -> Design:
    """Solar lighting device test: two stresses, change at 1, end at 20, N = 200."""
    plan = StressPlan(levels=(0.1, 0.5), change_times=(1.0,), termination=20.0)
    grid = InspectionGrid.from_plan(plan, SOLAR_TIMES)
    return Design(plan, grid, ModelParams(*SOLAR_THETA0), 200)


@dataclass(frozen=True)
class TestProblem:
    """Null restriction plus the parameter that generates the data."""

    __test__ = False

    name: str
    component: str
    value: float
    generator_eta: Optional[float] = None

    def constraint(self) -> Constraint:
        return Constraint.fix_component(self.component, self.value)

    def generator(self, theta0: ModelParams) -> ModelParams:
        if self.generator_eta is None:
            return theta0
        return replace(theta0, eta=self.generator_eta)


PROBLEMS = {
    "P0": TestProblem("P0", "a0", 3.6597),
    "P1": TestProblem("P1", "a1", -2.4131),
    "P2": TestProblem("P2", "eta", 1.3, generator_eta=1.3),
    "P2*": TestProblem("P2*", "eta", 1.0),
}


def study_fit_options(**overrides) -> FitOptions:
    """Single start at the domain estimates; failures are recorded, not raised."""
    base = FitOptions(n_starts=1, start=DOMAIN_START, raise_on_failure=False, compute_covariance=False)
    return replace(base, **overrides)


@dataclass(frozen=True)
class StudyConfig:
    """Settings of one study.

    ``problem`` names a null in ``PROBLEMS`` for level and power studies; for
    an MSE study it makes the fits restricted. A linear ``constraint`` and
    ``generator_params`` override the named problem (the generator defaults to
    the problem's, else ``design.theta0``). ``threads`` is the number of worker
    processes; ``None`` reads ``STEPSTRESS_THREADS`` (default 1).
    """

    study: str = "mse"
    reps: int = 1000
    seed: int = 0
    betas: tuple = DEFAULT_BETAS
    epsilons: tuple = DEFAULT_EPSILONS
    design: Design = field(default_factory=default_solar_design)
    alpha: float = 0.05
    problem: Optional[str] = None
    contamination_cell: int = 1
    threads: Optional[int] = None
    fit_options: FitOptions = field(default_factory=study_fit_options)
    constraint: Optional[Constraint] = None
    generator_params: Optional[ModelParams] = None

    def __post_init__(self):
        if self.study not in STUDIES:
            raise DomainError(f"unknown study {self.study!r}; choose from {', '.join(STUDIES)}")
        if self.reps < 1:
            raise DomainError(f"reps must be at least 1, got {self.reps}")
        if not self.betas or not self.epsilons:
            raise DomainError("beta and epsilon grids must be nonempty")
        if any(b < 0 for b in self.betas):
            raise DomainError("beta values must be nonnegative")
        for eps in self.epsilons:
            ContaminationSpec(self.contamination_cell, eps)
        if self.contamination_cell > self.design.grid.n_cells:
            raise DomainError(f"contamination cell {self.contamination_cell} is out of range")
        if not 0 < self.alpha < 1:
            raise DomainError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.study in ("level", "power") and self.problem is None and self.constraint is None:
            raise DomainError(f"a {self.study} study needs a test problem or constraint")
        if self.problem is not None and self.problem not in PROBLEMS:
            raise DomainError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEMS)}")

    @property
    def generator(self) -> ModelParams:
        if self.generator_params is not None:
            return self.generator_params
        if self.problem is None:
            return self.design.theta0
        return PROBLEMS[self.problem].generator(self.design.theta0)

    @property
    def null(self) -> Optional[Constraint]:
        if self.constraint is not None:
            return self.constraint
        return None if self.problem is None else PROBLEMS[self.problem].constraint()

    def describe(self) -> dict:
        d = self.design
        return {
            "study": self.study,
            "reps": self.reps,
            "seed": self.seed,
            "betas": list(self.betas),
            "epsilons": list(self.epsilons),
            "alpha": self.alpha,
            "problem": self.problem,
            "constraint": None if self.null is None else self.null.name,
            "contamination_cell": self.contamination_cell,
            "design": {
                "levels": list(d.plan.levels),
                "change_times": list(d.plan.change_times),
                "termination": d.plan.termination,
                "times": list(d.grid.times),
                "theta0": d.theta0.as_array().tolist(),
                "N": d.N,
            },
            "generator": self.generator.as_array().tolist(),
        }


@dataclass(frozen=True)
class StudyRow:
    beta: float
    epsilon: float
    metric: str
    value: float
    mc_se: float
    reps: int
    failures: int


@dataclass
class StudyTable:
    config: StudyConfig
    rows: list

    def value(self, metric: str, beta: float, epsilon: float) -> float:
        return self.row(metric, beta, epsilon).value

    def row(self, metric: str, beta: float, epsilon: float) -> StudyRow:
        for r in self.rows:
            if r.metric == metric and r.beta == beta and r.epsilon == epsilon:
                return r
        raise KeyError((metric, beta, epsilon))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r.beta), _fmt(r.epsilon), r.metric, _fmt(r.value), _fmt(r.mc_se),
                        r.reps, r.failures])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"config": self.config.describe(), "rows": [asdict(r) for r in self.rows]}

    def write(self, csv_path: str, json_path: Optional[str] = None) -> None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv())
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(_jsonable(self.summary()), fh, indent=2, sort_keys=True)
                fh.write("\n")


def _fmt(v) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return format(float(v), ".12g")


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# --- per-replication work -------------------------------------------------

def _rel_sq(theta, theta0) -> float:
    return float(np.sum(((theta - theta0) / theta0) ** 2))


def _one_mse(counts, cfg: StudyConfig, beta: float, constraint):
    d = cfg.design
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = (fit_mdpde(counts, d.plan, d.grid, beta, cfg.fit_options) if constraint is None
               else fit_rmdpde(counts, d.plan, d.grid, beta, constraint, cfg.fit_options))
    if not fit.converged:
        return None
    theta0 = d.theta0.as_array()
    m0 = mttf(d.theta0, MTTF_STRESS)
    boundary = "boundary_estimate" in fit.flags
    try:
        m_hat = mttf(fit.theta_hat, MTTF_STRESS)
        mttf_err = ((m_hat - m0) / m0) ** 2
    except OverflowError:
        mttf_err = math.inf
    return (_rel_sq(fit.theta_hat.as_array(), theta0), mttf_err, float(boundary))


def _one_test(counts, cfg: StudyConfig, beta: float, constraint):
    d = cfg.design
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_rmdpde(counts, d.plan, d.grid, beta, constraint, cfg.fit_options)
        if not fit.converged:
            return None
        res = rao_test_from_fit(counts, fit, d.plan, d.grid, cfg.alpha)
    return (float(res.reject), float("boundary_estimate" in fit.flags))


def _one_coverage(counts, cfg: StudyConfig, beta: float, constraint):
    d = cfg.design
    opts = replace(cfg.fit_options, compute_covariance=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_mdpde(counts, d.plan, d.grid, beta, opts)
        if not fit.converged or fit.sigma is None:
            return None
        theta0 = d.theta0.as_array()
        cover = [float(lo <= t <= hi) for (lo, hi), t in zip(wald_intervals(fit, cfg.alpha), theta0)]
        cover.append(float(confidence_region_test(fit, theta0, cfg.alpha)))
    return tuple(cover)


_WORKERS = {"mse": _one_mse, "level": _one_test, "power": _one_test, "coverage": _one_coverage}


def _run_reps(args):
    cfg, reps = args
    d = cfg.design
    pi0 = cell_probabilities(cfg.generator, d.plan, d.grid)
    constraint = cfg.null
    work = _WORKERS[cfg.study]
    out = []
    for rep in reps:
        per_eps = []
        for k, eps in enumerate(cfg.epsilons):
            pi = contaminate(pi0, ContaminationSpec(cfg.contamination_cell, eps))
            counts = sample_counts(pi, d.N, rep_stream(cfg.seed, rep, k))
            per_beta = []
            for beta in cfg.betas:
                try:
                    per_beta.append(work(counts, cfg, float(beta), constraint))
                except (ArithmeticError, ValueError, SingularMatrixError):
                    per_beta.append(None)
            per_eps.append(per_beta)
        out.append((rep, per_eps))
    return out


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("STEPSTRESS_THREADS", "1"))
    if threads < 1:
        raise DomainError(f"threads must be at least 1, got {threads}")
    return threads


def _collect(cfg: StudyConfig) -> list:
    threads = resolve_threads(cfg.threads)
    reps = list(range(cfg.reps))
    if threads == 1:
        results = _run_reps((cfg, reps))
    else:
        n_chunks = min(len(reps), 4 * threads)
        chunks = [reps[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = [r for part in pool.map(_run_reps, [(cfg, c) for c in chunks]) for r in part]
    results.sort(key=lambda r: r[0])
    return [per_eps for _, per_eps in results]


# --- aggregation ----------------------------------------------------------

def _mean_se(x: Sequence[float]):
    m = len(x)
    if m == 0:
        return math.nan, math.nan
    mean = math.fsum(x) / m
    if m == 1:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in x) / (m - 1)
    return mean, math.sqrt(var / m)


def _proportion(x: Sequence[float]):
    m = len(x)
    if m == 0:
        return math.nan, math.nan
    p = math.fsum(x) / m
    return p, math.sqrt(p * (1 - p) / m)


def _median_se(x: Sequence[float]):
    """Median with a distribution-free standard error from order statistics."""
    m = len(x)
    if m == 0:
        return math.nan, math.nan
    s = sorted(x)
    med = float(np.median(s))
    half = 1.959963985 * math.sqrt(m) / 2
    lo, hi = int(math.floor(m / 2 - half)), int(math.ceil(m / 2 + half))
    if lo < 0 or hi >= m:
        return med, math.nan
    spread = s[hi] - s[lo]
    return med, spread / (2 * 1.959963985) if math.isfinite(spread) else math.nan


def _rows_mse(beta, eps, vals, reps, failures):
    ok = [v for v in vals if v is not None]
    interior = [v for v in ok if not v[2]]
    rows = []
    for name, col in (("mse", 0), ("mttf_mse", 1)):
        mean, se = _mean_se([v[col] for v in interior])
        rows.append(StudyRow(beta, eps, name, mean, se, reps, failures))
        med, mse_ = _median_se([v[col] for v in ok])
        rows.append(StudyRow(beta, eps, name + "_median", med, mse_, reps, failures))
    p, se = _proportion([v[2] for v in ok])
    rows.append(StudyRow(beta, eps, "boundary_fraction", p, se, reps, failures))
    return rows


def _rows_test(metric):
    def rows(beta, eps, vals, reps, failures):
        ok = [v for v in vals if v is not None]
        p, se = _proportion([v[0] for v in ok])
        b, bse = _proportion([v[1] for v in ok])
        return [StudyRow(beta, eps, metric, p, se, reps, failures),
                StudyRow(beta, eps, "boundary_fraction", b, bse, reps, failures)]
    return rows


def _rows_coverage(beta, eps, vals, reps, failures):
    ok = [v for v in vals if v is not None]
    names = ("coverage_a0", "coverage_a1", "coverage_eta", "coverage_region")
    rows = []
    for col, name in enumerate(names):
        p, se = _proportion([v[col] for v in ok])
        rows.append(StudyRow(beta, eps, name, p, se, reps, failures))
    return rows


_AGGREGATORS = {"mse": _rows_mse, "level": _rows_test("level"), "power": _rows_test("power"),
                "coverage": _rows_coverage}


def run_study(cfg: StudyConfig) -> StudyTable:
    """Run all replications and aggregate one row per (beta, epsilon, metric)."""
    results = _collect(cfg)
    agg = _AGGREGATORS[cfg.study]
    rows = []
    for b, beta in enumerate(cfg.betas):
        for k, eps in enumerate(cfg.epsilons):
            vals = [res[k][b] for res in results]
            failures = sum(v is None for v in vals)
            rows.extend(agg(float(beta), float(eps), vals, cfg.reps, failures))
    return StudyTable(cfg, rows)


def mse_study(cfg: StudyConfig) -> StudyTable:
    """Mean squared relative error of the estimates and of the MTTF at stress 0.1.

    ``mse`` averages ``||(theta_hat - theta0) / theta0||^2`` over replications
    with a finite estimate. Replications whose estimate lies at infinity
    (flag ``boundary_estimate``) are counted in ``boundary_fraction`` and
    enter only the medians.
    """
    return run_study(replace(cfg, study="mse"))


def level_study(cfg: StudyConfig) -> StudyTable:
    """Rejection rate of the Rao-type test when the null generates the data."""
    return run_study(replace(cfg, study="level"))


def power_study(cfg: StudyConfig) -> StudyTable:
    """Rejection rate of the Rao-type test under a false null."""
    return run_study(replace(cfg, study="power"))


def coverage_study(cfg: StudyConfig) -> StudyTable:
    """Empirical coverage of the Wald intervals and the elliptical region."""
    return run_study(replace(cfg, study="coverage"))
