"""Experiment configuration files (strict JSON) and failure-count CSV files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .divergence import FailureCounts
from .errors import DomainError
from .estimation import PARAM_NAMES, Constraint
from .model import InspectionGrid, ModelParams, StressPlan


class ConfigError(DomainError):
    """Malformed configuration; the message starts with the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


_TOP_KEYS = {"plan", "grid", "beta", "alpha", "constraint", "theta0", "contamination",
             "reps", "seed", "sample_size"}
_PLAN_KEYS = {"levels", "change_times", "termination"}


def _check_keys(obj, allowed, where: str, required=()):
    if not isinstance(obj, dict):
        raise ConfigError(where or "config", "expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{where}.{key}" if where else key, "missing required key")


def _number(v, field: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(field, f"expected a finite number, got {v!r}")
    return float(v)


def _integer(v, field: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(field, f"expected an integer, got {v!r}")
    return v


def _numbers(v, field: str) -> tuple:
    if not isinstance(v, list):
        raise ConfigError(field, "expected a list of numbers")
    return tuple(_number(x, f"{field}[{i}]") for i, x in enumerate(v))


@dataclass(frozen=True)
class ConstraintSpec:
    """Serializable description of a linear restriction ``A theta = b``."""

    kind: str
    component: Optional[int] = None
    value: Optional[float] = None
    A: Optional[tuple] = None
    b: Optional[tuple] = None

    def build(self) -> Constraint:
        if self.kind == "fix_component":
            return Constraint.fix_component(self.component, self.value)
        return Constraint.linear_system(np.array(self.A), np.array(self.b))

    def to_json(self) -> dict:
        if self.kind == "fix_component":
            return {"kind": self.kind, "component": PARAM_NAMES[self.component], "value": self.value}
        return {"kind": self.kind, "A": [list(r) for r in self.A], "b": list(self.b)}


def _parse_constraint(obj) -> ConstraintSpec:
    where = "constraint"
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{where}.kind", "missing required key")
    kind = obj["kind"]
    if kind == "fix_component":
        _check_keys(obj, {"kind", "component", "index", "value"}, where, required=("value",))
        if ("component" in obj) == ("index" in obj):
            raise ConfigError(f"{where}.component", "give exactly one of 'component' or 'index'")
        if "component" in obj:
            comp = obj["component"]
            if comp not in PARAM_NAMES:
                raise ConfigError(f"{where}.component", f"expected one of {', '.join(PARAM_NAMES)}, got {comp!r}")
            index = PARAM_NAMES.index(comp)
        else:
            index = _integer(obj["index"], f"{where}.index")
            if not 0 <= index < 3:
                raise ConfigError(f"{where}.index", f"expected 0, 1 or 2, got {index}")
        value = _number(obj["value"], f"{where}.value")
        if index == 2 and value <= 0:
            raise ConfigError(f"{where}.value", "the shape must be positive")
        return ConstraintSpec("fix_component", component=index, value=value)
    if kind == "linear":
        _check_keys(obj, {"kind", "A", "b"}, where, required=("A", "b"))
        if not isinstance(obj["A"], list) or not obj["A"]:
            raise ConfigError(f"{where}.A", "expected a nonempty list of rows")
        A = tuple(_numbers(row, f"{where}.A[{i}]") for i, row in enumerate(obj["A"]))
        b = _numbers(obj["b"], f"{where}.b")
        if any(len(row) != 3 for row in A):
            raise ConfigError(f"{where}.A", "each row needs 3 entries (a0, a1, eta)")
        if len(A) != len(b) or not 1 <= len(A) <= 3:
            raise ConfigError(f"{where}.b", "A and b need the same number (1 to 3) of rows")
        if np.linalg.matrix_rank(np.array(A)) < len(A):
            raise ConfigError(f"{where}.A", "rows must be linearly independent")
        return ConstraintSpec("linear", A=A, b=b)
    raise ConfigError(f"{where}.kind", f"expected 'fix_component' or 'linear', got {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    plan: StressPlan
    grid: InspectionGrid
    betas: tuple = (0.0,)
    alpha: float = 0.05
    constraint: Optional[ConstraintSpec] = None
    theta0: Optional[ModelParams] = None
    contamination_cell: Optional[int] = None
    epsilons: Optional[tuple] = None
    reps: Optional[int] = None
    seed: Optional[int] = None
    sample_size: Optional[int] = None

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        _check_keys(obj, _TOP_KEYS, "", required=("plan", "grid"))
        _check_keys(obj["plan"], _PLAN_KEYS, "plan", required=tuple(_PLAN_KEYS))
        p = obj["plan"]
        try:
            plan = StressPlan(_numbers(p["levels"], "plan.levels"),
                              _numbers(p["change_times"], "plan.change_times"),
                              _number(p["termination"], "plan.termination"))
        except ConfigError:
            raise
        except DomainError as exc:
            raise ConfigError("plan", str(exc)) from None
        _check_keys(obj["grid"], {"times"}, "grid", required=("times",))
        try:
            grid = InspectionGrid.from_plan(plan, _numbers(obj["grid"]["times"], "grid.times"))
        except ConfigError:
            raise
        except DomainError as exc:
            raise ConfigError("grid.times", str(exc)) from None

        beta = obj.get("beta", 0.0)
        betas = _numbers(beta, "beta") if isinstance(beta, list) else (_number(beta, "beta"),)
        if not betas or any(b < 0 for b in betas):
            raise ConfigError("beta", "expected nonnegative value(s)")
        alpha = _number(obj.get("alpha", 0.05), "alpha")
        if not 0 < alpha < 1:
            raise ConfigError("alpha", f"expected a value in (0, 1), got {alpha}")
        constraint = _parse_constraint(obj["constraint"]) if obj.get("constraint") is not None else None

        theta0 = None
        if obj.get("theta0") is not None:
            vals = _numbers(obj["theta0"], "theta0")
            if len(vals) != 3:
                raise ConfigError("theta0", "expected [a0, a1, eta]")
            try:
                theta0 = ModelParams(*vals)
            except DomainError as exc:
                raise ConfigError("theta0", str(exc)) from None

        cell = epsilons = None
        if obj.get("contamination") is not None:
            c = obj["contamination"]
            _check_keys(c, {"cell", "epsilon"}, "contamination", required=("epsilon",))
            cell = _integer(c.get("cell", 1), "contamination.cell")
            if not 1 <= cell <= grid.n_cells:
                raise ConfigError("contamination.cell", f"expected 1..{grid.n_cells}, got {cell}")
            e = c["epsilon"]
            epsilons = _numbers(e, "contamination.epsilon") if isinstance(e, list) else (
                _number(e, "contamination.epsilon"),)
            if not epsilons or any(not 0 <= v < 1 for v in epsilons):
                raise ConfigError("contamination.epsilon", "expected value(s) in [0, 1)")

        def opt_int(key, low):
            if obj.get(key) is None:
                return None
            v = _integer(obj[key], key)
            if v < low:
                raise ConfigError(key, f"expected an integer >= {low}, got {v}")
            return v

        return cls(plan, grid, betas, alpha, constraint, theta0, cell, epsilons,
                   opt_int("reps", 1), opt_int("seed", 0), opt_int("sample_size", 1))

    def to_dict(self) -> dict:
        out = {
            "plan": {"levels": list(self.plan.levels), "change_times": list(self.plan.change_times),
                     "termination": self.plan.termination},
            "grid": {"times": list(self.grid.times)},
            "beta": self.betas[0] if len(self.betas) == 1 else list(self.betas),
            "alpha": self.alpha,
        }
        if self.constraint is not None:
            out["constraint"] = self.constraint.to_json()
        if self.theta0 is not None:
            out["theta0"] = self.theta0.as_array().tolist()
        if self.epsilons is not None:
            eps = self.epsilons[0] if len(self.epsilons) == 1 else list(self.epsilons)
            out["contamination"] = {"cell": self.contamination_cell, "epsilon": eps}
        for key in ("reps", "seed", "sample_size"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(obj)


def dump_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def load_counts(path: str, grid: Optional[InspectionGrid] = None) -> FailureCounts:
    """Read a CSV with header ``interval,count`` and rows ``1..L+1`` in order."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError("counts", f"cannot read {path}: {exc.strerror}") from None
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows or [c.strip() for c in rows[0]] != ["interval", "count"]:
        raise ConfigError("counts.header", "expected header 'interval,count'")
    counts = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ConfigError(f"counts.row{line}", "expected two columns")
        try:
            interval, count = int(row[0]), int(row[1])
        except ValueError:
            raise ConfigError(f"counts.row{line}", f"expected integers, got {row}") from None
        if interval != len(counts) + 1:
            raise ConfigError(f"counts.row{line}.interval", f"expected {len(counts) + 1}, got {interval}")
        if count < 0:
            raise ConfigError(f"counts.row{line}.count", f"must be nonnegative, got {count}")
        counts.append(count)
    if grid is not None and len(counts) != grid.n_cells:
        raise ConfigError("counts", f"expected {grid.n_cells} rows (L + 1), got {len(counts)}")
    try:
        return FailureCounts(tuple(counts))
    except DomainError as exc:
        raise ConfigError("counts", str(exc)) from None


def write_counts(counts, path: str) -> None:
    n = counts.n if isinstance(counts, FailureCounts) else tuple(int(v) for v in counts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "count"])
        for j, v in enumerate(n, start=1):
            w.writerow([j, v])
