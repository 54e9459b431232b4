"""Rao-type tests built on restricted DPD estimators, and influence functions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .divergence import FailureCounts, _J, _K, _pi_power
from .errors import DomainError, SingularMatrixError
from .estimation import (
    MAX_CONDITION,
    Constraint,
    FitOptions,
    FitResult,
    _as_counts,
    fit_rmdpde,
)
from .model import InspectionGrid, ModelParams, StressPlan, _grid_arrays, _probs_and_jacobian
from .special import chi2_quantile, chi2_survival


@dataclass(frozen=True)
class TestResult:
    """Rao-type test outcome; ``reject`` iff ``statistic > chi2_{df, alpha}``."""

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    df: int
    p_value: float
    alpha: float
    reject: bool
    beta: float
    critical_value: float
    fit: FitResult

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "critical_value": self.critical_value,
            "reject": self.reject,
            "beta": self.beta,
            "fit": self.fit.to_dict(),
        }


@dataclass(frozen=True)
class PerturbationPoint:
    """Point contamination at time ``t0``, i.e. all mass in the cell holding it."""

    t0: float
    cell: int
    n_cells: int

    @classmethod
    def from_time(cls, t0: float, grid: InspectionGrid) -> "PerturbationPoint":
        if not 0 <= t0 <= grid.times[-1]:
            raise DomainError(f"t0 must lie in [0, {grid.times[-1]}], got {t0}")
        return cls(float(t0), grid.cell_of(t0), grid.n_cells)

    @classmethod
    def survivor(cls, grid: InspectionGrid) -> "PerturbationPoint":
        """Contamination in the survival cell (a late failure)."""
        return cls(math.inf, grid.n_cells - 1, grid.n_cells)

    @property
    def delta(self) -> np.ndarray:
        d = np.zeros(self.n_cells)
        d[self.cell] = 1.0
        return d


def _checked_solve(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not math.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(f"{what} is singular (condition number {cond:.3g})")
    return np.linalg.solve(A, b)


def _state(counts, theta, plan, grid, beta):
    pi, W = _probs_and_jacobian(theta, *_grid_arrays(plan, grid))
    U = W.T @ (_pi_power(pi, beta - 1) * (counts.p_hat - pi))
    return pi, W, U


def rao_statistic(counts, restricted_fit: FitResult, plan: StressPlan, grid: InspectionGrid,
                  beta: Optional[float] = None) -> float:
    """``N U^T Q (Q^T K Q)^-1 Q^T U`` evaluated at the restricted estimate."""
    counts = _as_counts(counts)
    beta = restricted_fit.beta if beta is None else float(beta)
    constraint = restricted_fit.constraint
    if constraint is None:
        raise DomainError("the Rao statistic needs a restricted fit")
    theta = restricted_fit.theta_hat.as_array()
    pi, W, U = _state(counts, theta, plan, grid, beta)
    J, K = _J(pi, W, beta), _K(pi, W, beta)
    M = constraint.jacobian(theta)
    JinvM = _checked_solve(J, M, "J matrix")
    Q = JinvM @ _checked_solve(M.T @ JinvM, np.eye(constraint.r), "M^T J^-1 M")
    v = Q.T @ U
    stat = counts.N * v @ _checked_solve(Q.T @ K @ Q, v, "Q^T K Q")
    return max(float(stat), 0.0)


def rao_statistic_partial(counts, restricted_fit: FitResult, plan: StressPlan, grid: InspectionGrid,
                          beta: Optional[float] = None, fixed_indices: Sequence[int] = None) -> float:
    """Rao statistic for nulls that pin the coordinates ``fixed_indices``.

    Uses only blocks of ``J^-1`` and of the sandwich ``J^-1 K J^-1`` on the
    tested coordinates: ``N u^T A (B)^-1 A u`` with ``u`` the tested part of
    the beta-score, ``A = (J^-1)_11`` and ``B = (J^-1 K J^-1)_11``.
    The principal block of ``K`` alone does not reproduce the general
    statistic unless the tested and free coordinates are orthogonal.
    """
    counts = _as_counts(counts)
    beta = restricted_fit.beta if beta is None else float(beta)
    if fixed_indices is None:
        fixed_indices = restricted_fit.constraint.fixed_indices
    idx = list(fixed_indices)
    theta = restricted_fit.theta_hat.as_array()
    pi, W, U = _state(counts, theta, plan, grid, beta)
    J, K = _J(pi, W, beta), _K(pi, W, beta)
    u = U[idx]
    if len(idx) == 3:
        return max(float(counts.N * u @ _checked_solve(K, u, "K matrix")), 0.0)
    Jinv = _checked_solve(J, np.eye(3), "J matrix")
    A = Jinv[np.ix_(idx, idx)]
    B = (Jinv @ K @ Jinv)[np.ix_(idx, idx)]
    v = A @ u
    return max(float(counts.N * v @ _checked_solve(B, v, "sandwich block")), 0.0)


def rao_test_from_fit(counts, fit: FitResult, plan, grid, alpha: float = 0.05) -> TestResult:
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    stat = rao_statistic(counts, fit, plan, grid)
    df = fit.constraint.r
    crit = chi2_quantile(alpha, df)
    p = chi2_survival(stat, df)
    # decide on the p-value so the two criteria cannot disagree at rounding level
    reject = p < alpha
    return TestResult(stat, df, p, alpha, reject, fit.beta, crit, fit)


def run_rao_test(counts, plan: StressPlan, grid: InspectionGrid, beta: float, constraint: Constraint,
                 alpha: float = 0.05, options: FitOptions = FitOptions()) -> TestResult:
    """Fit under ``H0: m(theta) = 0`` and test it with the Rao-type statistic."""
    counts = _as_counts(counts)
    fit = fit_rmdpde(counts, plan, grid, beta, constraint, options)
    return rao_test_from_fit(counts, fit, plan, grid, alpha)


def _rhs(point, pi, W, beta):
    if isinstance(point, PerturbationPoint):
        if point.n_cells != pi.size:
            raise DomainError("perturbation point does not match the grid")
        d = point.delta
    else:
        d = np.asarray(point, dtype=float)
        if d.size != pi.size:
            raise DomainError("contamination vector does not match the grid")
    return W.T @ (_pi_power(pi, beta - 1) * (d - pi))


def influence_unrestricted(point, params: ModelParams, plan: StressPlan, grid: InspectionGrid,
                           beta: float) -> np.ndarray:
    """Influence function ``J^-1 W^T D^(beta-1) (delta_t0 - pi)`` of the MDPDE.

    ``point`` is a :class:`PerturbationPoint` or any probability vector used
    in place of the degenerate ``delta_t0``.
    """
    pi, W = _probs_and_jacobian(params.as_array(), *_grid_arrays(plan, grid))
    rhs = _rhs(point, pi, W, beta)
    return _checked_solve(_J(pi, W, beta), rhs, "J matrix")


def influence_restricted(point, params: ModelParams, plan: StressPlan, grid: InspectionGrid,
                         beta: float, constraint: Optional[Constraint],
                         method: str = "projected") -> np.ndarray:
    """Influence function of the restricted MDPDE.

    ``method="projected"`` solves the linearized restricted estimating
    equations ``J IF - M nu = b, M^T IF = 0``, giving ``IF = P b`` with ``P``
    from :func:`asymptotic_covariance`; it lies in the null space of ``M^T``.
    ``method="least_squares"`` returns ``(J^T J + M M^T)^-1 J^T b``, the
    least-squares solution of the stacked system without a multiplier term,
    which in general does not satisfy ``M^T IF = 0``.
    """
    if constraint is None:
        return influence_unrestricted(point, params, plan, grid, beta)
    theta = params.as_array()
    pi, W = _probs_and_jacobian(theta, *_grid_arrays(plan, grid))
    b = _rhs(point, pi, W, beta)
    J = _J(pi, W, beta)
    M = constraint.jacobian(theta)
    if method == "least_squares":
        return _checked_solve(J.T @ J + M @ M.T, J.T @ b, "J^T J + M M^T")
    if method != "projected":
        raise DomainError(f"unknown method {method!r}")
    r = constraint.r
    kkt = np.block([[J, M], [M.T, np.zeros((r, r))]])
    sol = _checked_solve(kkt, np.concatenate([b, np.zeros(r)]), "restricted IF system")
    return sol[:3]
