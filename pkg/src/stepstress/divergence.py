"""Density power divergence between empirical and model cell probabilities.

``beta = 0`` is always routed to the Kullback-Leibler / likelihood code
paths instead of evaluating the DPD at a limit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ProbabilityFloorWarning
from .model import InspectionGrid, ModelParams, StressPlan, _grid_arrays, _probs_and_jacobian

#: floor applied to cell probabilities before negative powers
POWER_FLOOR = 1e-12


@dataclass(frozen=True)
class FailureCounts:
    """Observed failures per inspection interval, then the survivors."""

    n: tuple

    def __post_init__(self):
        n = np.asarray(self.n)
        if n.ndim != 1 or n.size < 2:
            raise DomainError("counts must be a 1-d vector with at least two cells")
        if np.any(n < 0) or not np.all(np.equal(np.mod(n, 1), 0)):
            raise DomainError("counts must be nonnegative integers")
        object.__setattr__(self, "n", tuple(int(v) for v in n))
        if self.N < 1:
            raise DomainError("counts must contain at least one unit")

    @property
    def N(self) -> int:
        return sum(self.n)

    @property
    def p_hat(self) -> np.ndarray:
        """Empirical cell frequencies ``n_j / N``."""
        return np.asarray(self.n, dtype=float) / self.N

    def check_grid(self, grid: InspectionGrid) -> None:
        if len(self.n) != grid.n_cells:
            raise DomainError(f"expected {grid.n_cells} counts for this grid, got {len(self.n)}")


def _as_probs(v) -> np.ndarray:
    return np.asarray(getattr(v, "p_hat", v), dtype=float)


def _pi_power(pi: np.ndarray, power: float) -> np.ndarray:
    if power >= 0:
        return pi**power
    if np.any(pi < POWER_FLOOR):
        warnings.warn(
            f"cell probabilities below {POWER_FLOOR:g} floored before a negative power",
            ProbabilityFloorWarning,
            stacklevel=3,
        )
        pi = np.maximum(pi, POWER_FLOOR)
    return pi**power


def dpd_loss(p_hat, pi, beta: float) -> float:
    """Density power divergence for ``beta > 0``; use :func:`kl_loss` at zero."""
    if beta <= 0:
        raise DomainError("dpd_loss needs beta > 0; use kl_loss for beta = 0")
    p = _as_probs(p_hat)
    pi = np.asarray(pi, dtype=float)
    if p.shape != pi.shape:
        raise DomainError(f"length mismatch: {p.size} empirical vs {pi.size} model cells")
    terms = pi ** (1 + beta) - (1 + 1 / beta) * p * pi**beta + p ** (1 + beta) / beta
    return float(math.fsum(terms))


def kl_loss(p_hat, pi) -> float:
    """Kullback-Leibler divergence; empty empirical cells contribute nothing."""
    p = _as_probs(p_hat)
    pi = np.asarray(pi, dtype=float)
    if p.shape != pi.shape:
        raise DomainError(f"length mismatch: {p.size} empirical vs {pi.size} model cells")
    mask = p > 0
    if np.any(pi[mask] <= 0):
        warnings.warn("zero model probability in an observed cell", ProbabilityFloorWarning)
        return math.inf
    return float(math.fsum(p[mask] * np.log(p[mask] / pi[mask])))


def divergence(p_hat, pi, beta: float) -> float:
    """DPD for ``beta > 0`` and KL for ``beta = 0``."""
    if beta < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    return kl_loss(p_hat, pi) if beta == 0 else dpd_loss(p_hat, pi, beta)


def _pieces(params, plan, grid):
    return _probs_and_jacobian(params.as_array(), *_grid_arrays(plan, grid))


def beta_score(p_hat, params: ModelParams, plan: StressPlan, grid: InspectionGrid, beta: float) -> np.ndarray:
    """``W^T D^(beta-1) (p_hat - pi)``; at ``beta = 0`` the likelihood score over ``N``."""
    if beta < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    pi, W = _pieces(params, plan, grid)
    p = _as_probs(p_hat)
    if p.shape != pi.shape:
        raise DomainError(f"length mismatch: {p.size} empirical vs {pi.size} model cells")
    return W.T @ (_pi_power(pi, beta - 1) * (p - pi))


def _J(pi, W, beta):
    J = W.T @ (_pi_power(pi, beta - 1)[:, None] * W)
    return 0.5 * (J + J.T)


def _K(pi, W, beta):
    s = W.T @ pi**beta
    K = W.T @ (_pi_power(pi, 2 * beta - 1)[:, None] * W) - np.outer(s, s)
    return 0.5 * (K + K.T)


def J_matrix(params: ModelParams, plan: StressPlan, grid: InspectionGrid, beta: float) -> np.ndarray:
    """``W^T D^(beta-1) W``, the sensitivity matrix of the estimating equations."""
    pi, W = _pieces(params, plan, grid)
    return _J(pi, W, beta)


def K_matrix(params: ModelParams, plan: StressPlan, grid: InspectionGrid, beta: float) -> np.ndarray:
    """``W^T (D^(2 beta - 1) - pi^beta pi^beta^T) W``, the score variability matrix."""
    pi, W = _pieces(params, plan, grid)
    return _K(pi, W, beta)


def is_singular(A: np.ndarray, tol: float = 1e-10) -> bool:
    """True when the smallest singular value is below ``tol`` times the largest."""
    sv = np.linalg.svd(A, compute_uv=False)
    return bool(sv[-1] <= tol * max(sv[0], 1e-300))
