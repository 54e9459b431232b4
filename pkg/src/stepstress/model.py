"""Cumulative-exposure Weibull step-stress model under interval monitoring.

Time is measured in hundreds of hours and stress on a standardized scale.
The scale parameter at stress ``x`` follows ``lambda = exp(a0 + a1 * x)``
and the Weibull shape ``eta`` is common to all stress levels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericalError, ProbabilityFloorWarning


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector ``(a0, a1, eta)`` of the log-linear Weibull model."""

    a0: float
    a1: float
    eta: float

    def __post_init__(self):
        for name in ("a0", "a1", "eta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
        if self.eta <= 0:
            raise DomainError(f"eta must be positive, got {self.eta!r}")

    @classmethod
    def from_array(cls, theta) -> "ModelParams":
        a0, a1, eta = (float(v) for v in np.asarray(theta, dtype=float).ravel())
        return cls(a0, a1, eta)

    def as_array(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.eta], dtype=float)


@dataclass(frozen=True)
class StressPlan:
    """Stress levels ``x_1 < ... < x_k`` raised at ``tau_1 < ... < tau_{k-1}``.

    ``termination`` is the fixed end of the test, ``tau_k``.
    """

    levels: tuple
    change_times: tuple
    termination: float

    def __post_init__(self):
        levels = tuple(float(x) for x in self.levels)
        changes = tuple(float(t) for t in self.change_times)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "change_times", changes)
        object.__setattr__(self, "termination", float(self.termination))
        if len(levels) < 1:
            raise DomainError("a stress plan needs at least one stress level")
        if len(changes) != len(levels) - 1:
            raise DomainError(
                f"{len(levels)} stress levels need {len(levels) - 1} change times, "
                f"got {len(changes)}"
            )
        if not all(math.isfinite(v) for v in levels + changes + (self.termination,)):
            raise DomainError("stress plan values must be finite")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise DomainError("stress levels must be strictly increasing")
        taus = changes + (self.termination,)
        if taus[0] <= 0 or any(b <= a for a, b in zip(taus, taus[1:])):
            raise DomainError(
                "change times must be positive, strictly increasing and end "
                "before the termination time"
            )

    @property
    def k(self) -> int:
        return len(self.levels)

    @property
    def taus(self) -> tuple:
        """All change times followed by the termination time."""
        return self.change_times + (self.termination,)

    def level_at(self, t: float) -> int:
        """0-based index of the stress level active at time ``t``.

        The intervals are closed on the right, so a unit at ``tau_i`` is still
        under level ``i``. Times past the termination stay on the last level.
        """
        for i, tau in enumerate(self.change_times):
            if t <= tau:
                return i
        return self.k - 1


@dataclass(frozen=True)
class InspectionGrid:
    """Inspection times ``0 = t_0 < t_1 < ... < t_L`` (``t_0`` implicit).

    ``stress_index[j]`` is the 0-based level active on ``(t_j, t_{j+1}]``.
    Build it with :meth:`from_plan` so the indices match the plan.
    """

    times: tuple
    stress_index: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "stress_index", tuple(int(i) for i in self.stress_index))
        if not times:
            raise DomainError("an inspection grid needs at least one time")
        if times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("inspection times must be positive and strictly increasing")
        if len(self.stress_index) != len(times):
            raise DomainError("stress_index must have one entry per inspection interval")

    @classmethod
    def from_plan(cls, plan: StressPlan, times: Sequence[float]) -> "InspectionGrid":
        times = tuple(float(t) for t in times)
        grid = cls(times, tuple(plan.level_at(t) for t in times))
        check_grid(plan, grid)
        return grid

    @property
    def L(self) -> int:
        return len(self.times)

    @property
    def n_cells(self) -> int:
        return len(self.times) + 1

    def cell_of(self, t0: float) -> int:
        """0-based multinomial cell holding a failure at time ``t0``."""
        if t0 < 0:
            raise DomainError(f"time must be nonnegative, got {t0}")
        for j, t in enumerate(self.times):
            if t0 <= t:
                return j
        return len(self.times)


def check_grid(plan: StressPlan, grid: InspectionGrid) -> None:
    """Raise unless every change time and the termination are inspection times."""
    times = np.asarray(grid.times)
    for tau in plan.taus:
        if not np.any(np.isclose(times, tau, rtol=0, atol=1e-12)):
            raise DomainError(f"stress-change/termination time {tau} is not an inspection time")
    if not math.isclose(grid.times[-1], plan.termination, rel_tol=0, abs_tol=1e-12):
        raise DomainError("the last inspection time must equal the termination time")
    expected = tuple(plan.level_at(t) for t in grid.times)
    if expected != grid.stress_index:
        raise DomainError("stress_index does not match the stress plan")


@dataclass(frozen=True)
class ShiftingTimes:
    """Shifts ``h_0 = 0, h_1, ..., h_{k-1}`` keeping the lifetime cdf continuous."""

    h: tuple


# numerical core on plain arrays; the public functions wrap these


def _log_scales(theta: np.ndarray, levels: np.ndarray) -> np.ndarray:
    return theta[0] + theta[1] * levels


def _shifts(theta: np.ndarray, levels: np.ndarray, changes: np.ndarray) -> np.ndarray:
    h = np.zeros(levels.size)
    for i in range(1, levels.size):
        ratio = math.exp(theta[1] * (levels[i] - levels[i - 1]))
        h[i] = ratio * (changes[i - 1] + h[i - 1]) - changes[i - 1]
    if not np.all(np.isfinite(h)):
        raise NumericalError("shifting times overflowed")
    return h


def _shift_derivatives(theta, levels, changes, h) -> np.ndarray:
    """Derivatives of the shifting times with respect to ``a1``.

    Closed form obtained by differentiating the shift recursion; ``a0``
    cancels from every scale ratio so only ``a1`` enters.
    """
    a1 = theta[1]
    hstar = np.zeros(levels.size)
    for i in range(1, levels.size):
        # 0-based: level i follows change time changes[i-1]
        acc = 0.0
        for m in range(i, 0, -1):
            # x_m / lambda_m - x_{m-1} / lambda_{m-1}, rescaled by lambda_i
            acc += (
                levels[m] * math.exp(a1 * (levels[i] - levels[m]))
                - levels[m - 1] * math.exp(a1 * (levels[i] - levels[m - 1]))
            ) * changes[m - 1]
        hstar[i] = h[i] * levels[i] + acc
    return hstar


def _grid_arrays(plan: StressPlan, grid: InspectionGrid):
    return (
        np.asarray(plan.levels, dtype=float),
        np.asarray(plan.change_times, dtype=float),
        np.asarray(grid.times, dtype=float),
        np.asarray(grid.stress_index, dtype=int),
    )


def _cumhaz(theta, levels, changes, times, idx):
    """Cumulative hazards at the inspection times plus the pieces they use."""
    h = _shifts(theta, levels, changes)
    log_lam = _log_scales(theta, levels)[idx]
    s = times + h[idx]
    if np.any(s <= 0):
        raise DomainError("negative shifted time; shifts are inconsistent with the plan")
    logu = np.log(s) - log_lam
    H = np.exp(theta[2] * logu)
    return H, h, s, logu


def _probs_from_cumhaz(H: np.ndarray) -> np.ndarray:
    Hprev = np.concatenate(([0.0], H[:-1]))
    pi = np.empty(H.size + 1)
    pi[:-1] = np.exp(-Hprev) * -np.expm1(-(H - Hprev))
    pi[-1] = math.exp(-H[-1])
    return pi


def _probs_and_jacobian(theta, levels, changes, times, idx):
    H, h, s, logu = _cumhaz(theta, levels, changes, times, idx)
    pi = _probs_from_cumhaz(H)
    hstar = _shift_derivatives(theta, levels, changes, h)
    eta = theta[2]
    HS = H * np.exp(-H)
    # z_j = dF_T(t_j)/dtheta; z_0 = 0 since H vanishes at t = 0
    z = np.empty((times.size, 3))
    z[:, 0] = -eta * HS
    z[:, 1] = HS * eta * (hstar[idx] / s - levels[idx])
    z[:, 2] = HS * logu
    W = np.empty((times.size + 1, 3))
    W[0] = z[0]
    W[1:-1] = z[1:] - z[:-1]
    W[-1] = -z[-1]
    if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(W))):
        raise NumericalError("non-finite cell probabilities or Jacobian")
    return pi, W


# public API


def scale_parameter(params: ModelParams, x: float) -> float:
    """Weibull scale ``exp(a0 + a1 * x)`` at stress ``x``."""
    log_lam = params.a0 + params.a1 * x
    try:
        lam = math.exp(log_lam)
    except OverflowError:
        raise NumericalError(f"scale parameter overflows at log-scale {log_lam}") from None
    return lam


def shifting_times(params: ModelParams, plan: StressPlan) -> ShiftingTimes:
    """Shifts from the continuity condition at each change of stress.

    ``h_i = (lambda_{i+1} / lambda_i) * (tau_i + h_{i-1}) - tau_i`` with
    ``h_0 = 0``; scale ratios are taken as ``exp(a1 * (x_{i+1} - x_i))``.
    """
    h = _shifts(params.as_array(), np.asarray(plan.levels), np.asarray(plan.change_times))
    return ShiftingTimes(tuple(float(v) for v in h))


def _piece(t, params, plan, shifts):
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    i = plan.level_at(t)
    s = t + shifts.h[i]
    if s < 0:
        raise DomainError(f"negative shifted time {s} at t={t}")
    lam = scale_parameter(params, plan.levels[i])
    return s, lam


def cdf_T(t: float, params: ModelParams, plan: StressPlan, shifts: ShiftingTimes | None = None) -> float:
    """Lifetime cdf ``F_i(t + h_{i-1})`` on the stress level active at ``t``."""
    shifts = shifts or shifting_times(params, plan)
    s, lam = _piece(t, params, plan, shifts)
    return -math.expm1(-((s / lam) ** params.eta))


def pdf_T(t: float, params: ModelParams, plan: StressPlan, shifts: ShiftingTimes | None = None) -> float:
    """Density of the lifetime, the time derivative of :func:`cdf_T`."""
    shifts = shifts or shifting_times(params, plan)
    s, lam = _piece(t, params, plan, shifts)
    eta = params.eta
    if s == 0:
        if eta < 1:
            raise DomainError("density is unbounded at t = 0 when eta < 1")
        return 1.0 / lam if eta == 1 else 0.0
    u = s / lam
    return eta / lam * u ** (eta - 1) * math.exp(-(u**eta))


def hazard_T(t: float, params: ModelParams, plan: StressPlan, shifts: ShiftingTimes | None = None) -> float:
    """Piecewise Weibull hazard ``(eta/lambda_i) ((t + h_{i-1})/lambda_i)^(eta-1)``."""
    shifts = shifts or shifting_times(params, plan)
    s, lam = _piece(t, params, plan, shifts)
    u = s / lam
    if math.exp(-(u**params.eta)) == 0.0:
        raise NumericalError(f"survival underflows to zero at t={t}; hazard undefined")
    eta = params.eta
    if s == 0:
        if eta < 1:
            raise DomainError("hazard is unbounded at t = 0 when eta < 1")
        return 1.0 / lam if eta == 1 else 0.0
    return eta / lam * u ** (eta - 1)


def mttf(params: ModelParams, x: float) -> float:
    """Mean time to failure ``lambda * Gamma(1 + 1/eta)`` at constant stress ``x``."""
    return scale_parameter(params, x) * math.gamma(1.0 + 1.0 / params.eta)


def cell_probabilities(params: ModelParams, plan: StressPlan, grid: InspectionGrid) -> np.ndarray:
    """Multinomial probabilities of failing in each interval, then of surviving.

    Returns a vector of length ``L + 1`` summing to one.
    """
    theta = params.as_array()
    H, *_ = _cumhaz(theta, *_grid_arrays(plan, grid))
    pi = _probs_from_cumhaz(H)
    if np.any(pi < -1e-12) or not np.all(np.isfinite(pi)):
        raise NumericalError("cell probabilities are inconsistent")
    return pi


def jacobian_W(params: ModelParams, plan: StressPlan, grid: InspectionGrid) -> np.ndarray:
    """Analytic ``(L+1) x 3`` Jacobian of the cell probabilities in ``(a0, a1, eta)``.

    Row ``j`` is ``z_j - z_{j-1}`` where ``z_j`` is the gradient of the cdf at
    ``t_j``; ``z_0 = 0`` at the origin and the survival row is ``-z_L``.
    """
    _, W = _probs_and_jacobian(params.as_array(), *_grid_arrays(plan, grid))
    return W


def log_likelihood(counts, params: ModelParams, plan: StressPlan, grid: InspectionGrid) -> float:
    """Multinomial log-likelihood ``sum_j n_j log pi_j`` without the constant term.

    Returns ``-inf`` (with a :class:`ProbabilityFloorWarning`) when a cell with
    observed failures has zero probability.
    """
    n = np.asarray(getattr(counts, "n", counts), dtype=float)
    pi = cell_probabilities(params, plan, grid)
    if n.size != pi.size:
        raise DomainError(f"expected {pi.size} counts, got {n.size}")
    mask = n > 0
    if np.any(pi[mask] <= 0):
        warnings.warn("zero-probability cell with observed failures", ProbabilityFloorWarning)
        return -math.inf
    return float(np.sum(n[mask] * np.log(pi[mask])))
