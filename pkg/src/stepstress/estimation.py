"""Minimum DPD estimation, unrestricted and under equality constraints.

Fits are computed in the coordinates ``(a0, a1, log eta)`` so the shape stays
positive without bounds. Unrestricted problems use BFGS. Linear restrictions
are eliminated by a parametrization of the feasible set; general ones use an
augmented-Lagrangian outer loop around BFGS. Every fit ends with a few
Newton steps on the estimating equations, which pins the stationarity
residual to rounding level.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space
from scipy.optimize import minimize

from .divergence import POWER_FLOOR, FailureCounts, _J, _K, _pi_power
from .errors import (
    BoundaryWarning,
    DomainError,
    NonConvergenceError,
    SingularMatrixError,
)
from .model import InspectionGrid, ModelParams, StressPlan, _grid_arrays, _probs_and_jacobian
from .special import chi2_quantile, z_upper

#: exponential-lifetime estimates from the original solar-device analysis
DOMAIN_START = (3.6597, -2.4131, 1.0)
PARAM_NAMES = ("a0", "a1", "eta")
ETA_LOWER = 1e-3
MAX_CONDITION = 1e12
_LOG_CLAMP = 1e-300
_FD_STEP = 1e-6
# BFGS only needs to reach the Newton basin; the KKT polish does the rest
_INNER_GTOL = 1e-7
_MAX_POLISH_STEP = 0.1
_MAX_PENALTY = 1e10
#: a cell with expected count below this marks an estimate at infinity
BOUNDARY_EXPECTED_COUNT = 0.05
#: boundary estimates are reported where each vanishing cell has this expected count
BOUNDARY_RETRACT_COUNT = 1e-3
_BOUNDARY_GTOL = 1e-6


class Constraint:
    """Equality restriction ``m(theta) = 0`` with ``r`` components.

    ``jacobian`` returns the ``3 x r`` matrix ``M = d m^T / d theta``; when it
    is omitted central differences with step ``1e-6`` are used.
    """

    def __init__(self, evaluate: Callable, r: int, jacobian: Optional[Callable] = None,
                 linear: bool = False, name: str = "constraint"):
        if not 1 <= r <= 3:
            raise DomainError(f"constraint arity must be between 1 and 3, got {r}")
        self._evaluate = evaluate
        self._jacobian = jacobian
        self.r = int(r)
        self.linear = linear
        self.name = name
        self.A = None
        self.b = None

    @classmethod
    def linear_system(cls, A, b, name: str = "linear") -> "Constraint":
        """``m(theta) = A theta - b`` for an ``r x 3`` matrix ``A``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[1] != 3 or A.shape[0] != b.size:
            raise DomainError(f"A must be r x 3 and b of length r, got {A.shape} and {b.shape}")
        con = cls(lambda th: A @ th - b, A.shape[0], lambda th: A.T.copy(), linear=True, name=name)
        con.A, con.b = A, b
        return con

    @classmethod
    def fix_component(cls, component, value: float) -> "Constraint":
        """Restrict one parameter (index or name) to ``value``."""
        index = PARAM_NAMES.index(component) if isinstance(component, str) else int(component)
        if not 0 <= index < 3:
            raise DomainError(f"component index must be 0, 1 or 2, got {component!r}")
        A = np.zeros((1, 3))
        A[0, index] = 1.0
        con = cls.linear_system(A, [value], name=f"{PARAM_NAMES[index]}={value:g}")
        con.fixed_index = index
        return con

    def evaluate(self, theta) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._evaluate(np.asarray(theta, dtype=float)), dtype=float))

    def jacobian(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self._jacobian is not None:
            return np.asarray(self._jacobian(theta), dtype=float).reshape(3, self.r)
        M = np.empty((3, self.r))
        for k in range(3):
            e = np.zeros(3)
            e[k] = _FD_STEP
            M[k] = (self.evaluate(theta + e) - self.evaluate(theta - e)) / (2 * _FD_STEP)
        return M

    def check_rank(self, theta, tol: float = 1e-8) -> None:
        sv = np.linalg.svd(self.jacobian(theta), compute_uv=False)
        if sv.size < self.r or sv[-1] <= tol * max(sv[0], 1.0):
            raise DomainError(f"constraint Jacobian is rank deficient at {theta}")

    @property
    def fixed_indices(self) -> Optional[tuple]:
        """Indices pinned by a coordinate restriction, else ``None``."""
        if self.A is None:
            return None
        idx = []
        for row in self.A:
            nz = np.flatnonzero(row)
            if nz.size != 1:
                return None
            idx.append(int(nz[0]))
        return tuple(idx) if len(set(idx)) == len(idx) else None

    def __reduce__(self):
        # linear restrictions are rebuilt from (A, b); closures cannot be pickled
        if self.A is None:
            raise TypeError("only linear constraints can be pickled")
        return (_rebuild_linear, (self.A, self.b, self.name, getattr(self, "fixed_index", None)))

    def __repr__(self):
        return f"Constraint({self.name}, r={self.r})"


def _rebuild_linear(A, b, name, fixed_index):
    con = Constraint.linear_system(A, b, name=name)
    if fixed_index is not None:
        con.fixed_index = fixed_index
    return con


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings; the defaults follow the documented design."""

    n_starts: int = 5
    jitter: float = 0.2
    seed: int = 0
    start: Optional[tuple] = None
    max_iter: int = 500
    gtol: float = 1e-8
    xtol: float = 1e-10
    outer_tol: float = 1e-9
    max_outer: int = 40
    penalty0: float = 10.0
    penalty_growth: float = 10.0
    newton_steps: int = 20
    raise_on_failure: bool = True
    compute_covariance: bool = True
    retract_boundary: bool = True


@dataclass(frozen=True)
class FitResult:
    """Outcome of an (R)MDPDE fit.

    ``sigma`` is the asymptotic covariance of ``sqrt(N) (theta_hat - theta)``;
    ``covariance = sigma / N`` approximates the variance of ``theta_hat``.
    """

    theta_hat: ModelParams
    beta: float
    loss: float
    converged: bool
    iterations: int
    N: int
    lagrange_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma: Optional[np.ndarray] = None
    constraint_violation: float = 0.0
    stationarity: float = math.nan
    constraint: Optional[Constraint] = None
    flags: tuple = ()

    @property
    def covariance(self) -> Optional[np.ndarray]:
        return None if self.sigma is None else self.sigma / self.N

    @property
    def standard_errors(self) -> Optional[np.ndarray]:
        cov = self.covariance
        return None if cov is None else np.sqrt(np.maximum(np.diag(cov), 0.0))

    def to_dict(self) -> dict:
        cov = self.covariance
        return {
            "theta_hat": dict(zip(PARAM_NAMES, self.theta_hat.as_array().tolist())),
            "beta": self.beta,
            "loss": self.loss,
            "converged": self.converged,
            "iterations": self.iterations,
            "N": self.N,
            "lagrange_multipliers": self.lagrange_multipliers.tolist(),
            "covariance": None if cov is None else cov.tolist(),
            "standard_errors": None if cov is None else self.standard_errors.tolist(),
            "constraint": None if self.constraint is None else self.constraint.name,
            "constraint_violation": self.constraint_violation,
            "stationarity": self.stationarity,
            "flags": list(self.flags),
        }


class _Objective:
    """DPD (or KL at ``beta = 0``) objective with its analytic gradient."""

    def __init__(self, p_hat: np.ndarray, plan: StressPlan, grid: InspectionGrid, beta: float):
        self.p = np.asarray(p_hat, dtype=float)
        self.beta = float(beta)
        self.arrays = _grid_arrays(plan, grid)

    def pieces(self, theta):
        return _probs_and_jacobian(theta, *self.arrays)

    def value(self, pi) -> float:
        p, beta = self.p, self.beta
        if beta == 0:
            mask = p > 0
            q = pi[mask]
            q = np.maximum(q, _LOG_CLAMP)
            return float(np.sum(p[mask] * np.log(p[mask] / q)))
        return float(np.sum(pi ** (1 + beta) - (1 + 1 / beta) * p * pi**beta + p ** (1 + beta) / beta))

    def score(self, pi, W) -> np.ndarray:
        """The beta-score; the loss gradient is ``-(1 + beta)`` times it."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return W.T @ (_pi_power(pi, self.beta - 1) * (self.p - pi))

    def value_grad(self, theta):
        pi, W = self.pieces(theta)
        return self.value(pi), -(1 + self.beta) * self.score(pi, W)

    def grad(self, theta):
        return self.value_grad(theta)[1]


def _to_phi(theta):
    return np.array([theta[0], theta[1], math.log(theta[2])])


def _to_theta(phi):
    return np.array([phi[0], phi[1], math.exp(phi[2])])


def _safe(fun, penalty=1e100):
    def wrapped(phi):
        try:
            f, g = fun(phi)
        except (ArithmeticError, ValueError, OverflowError):
            return penalty, np.zeros(np.size(phi))
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            return penalty, np.zeros(np.size(phi))
        return f, g
    return wrapped


def _bfgs(fun, phi0, options: FitOptions, gtol: float):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = minimize(_safe(fun), phi0, jac=True, method="BFGS",
                       options={"gtol": gtol, "maxiter": options.max_iter, "xrtol": options.xtol})
    return res


def _newton_kkt(obj: _Objective, theta, mu, constraint: Optional[Constraint], steps: int):
    """Newton iterations on the stationarity system of the (augmented) Lagrangian."""
    r = 0 if constraint is None else constraint.r

    def residual(th, mu_):
        g = obj.grad(th)
        if r == 0:
            return g
        return np.concatenate([g + constraint.jacobian(th) @ mu_, constraint.evaluate(th)])

    def lag_grad(th, mu_):
        g = obj.grad(th)
        return g if r == 0 else g + constraint.jacobian(th) @ mu_

    try:
        res = residual(theta, mu)
    except (ArithmeticError, ValueError):
        return theta, mu
    for _ in range(steps):
        norm = np.max(np.abs(res))
        if norm < 1e-15:
            break
        H = np.empty((3, 3))
        try:
            for k in range(3):
                hstep = _FD_STEP * max(1.0, abs(theta[k]))
                e = np.zeros(3)
                e[k] = hstep
                H[:, k] = (lag_grad(theta + e, mu) - lag_grad(theta - e, mu)) / (2 * hstep)
        except (ArithmeticError, ValueError):
            break
        H = 0.5 * (H + H.T)
        if r == 0:
            KKT = H
        else:
            M = constraint.jacobian(theta)
            KKT = np.block([[H, M], [M.T, np.zeros((r, r))]])
        try:
            step = np.linalg.solve(KKT, -res)
        except np.linalg.LinAlgError:
            break
        if np.max(np.abs(step[:3])) > _MAX_POLISH_STEP:
            # outside the quadratic basin: a flat direction towards the boundary
            break
        t = 1.0
        improved = False
        while t > 1e-4:
            th_new = theta + t * step[:3]
            if th_new[2] > 0:
                mu_new = mu + t * step[3:] if r else mu
                try:
                    res_new = residual(th_new, mu_new)
                except (ArithmeticError, ValueError):
                    res_new = None
                if res_new is not None and np.all(np.isfinite(res_new)) and np.max(np.abs(res_new)) < norm:
                    improved = True
                    break
            t *= 0.5
        if not improved:
            break
        theta, mu, res = th_new, mu_new, res_new
    return theta, mu


def _linear_map(constraint: Constraint, theta0):
    """Parametrize ``{A theta = b}`` by free coordinates ``z``.

    Returns ``(to_theta, dtheta_dz, z0)``. Pinned coordinates are simply
    dropped (keeping ``log eta`` when the shape is free); other systems use an
    orthonormal null-space basis of ``A``.
    """
    A, b = constraint.A, constraint.b
    fixed = constraint.fixed_indices
    if fixed is not None:
        base = np.array(theta0, dtype=float)
        for row, i in zip(A, fixed):
            base[i] = b[list(fixed).index(i)] / row[i]
        if base[2] <= 0:
            raise DomainError("the constraint pins eta to a nonpositive value")
        free = [i for i in range(3) if i not in fixed]
        log_eta = 2 in free

        def to_theta(z):
            th = base.copy()
            th[free] = z
            if log_eta:
                th[2] = math.exp(z[-1])
            return th

        def dtheta_dz(th):
            D = np.zeros((3, len(free)))
            for col, i in enumerate(free):
                D[i, col] = th[2] if i == 2 else 1.0
            return D

        z0 = np.array([math.log(theta0[i]) if i == 2 else theta0[i] for i in free])
        return to_theta, dtheta_dz, z0
    base = np.linalg.lstsq(A, b, rcond=None)[0]
    Z = null_space(A)

    def to_theta(z):
        return base + Z @ z

    return to_theta, (lambda th: Z), Z.T @ (np.asarray(theta0, dtype=float) - base)


def _solve_linear(obj: _Objective, theta0, constraint: Constraint, options: FitOptions):
    to_theta, dtheta_dz, z = _linear_map(constraint, theta0)

    def fun(zz):
        th = to_theta(zz)
        if th[2] <= 0:
            raise ValueError("nonpositive shape")
        f, g = obj.value_grad(th)
        return f, dtheta_dz(th).T @ g

    res = _bfgs(fun, z, options, gtol=_INNER_GTOL)
    theta = to_theta(res.x)
    ok = res.fun < 1e99
    mu = np.zeros(constraint.r)
    if ok:
        mu = np.linalg.lstsq(constraint.jacobian(theta), -obj.grad(theta), rcond=None)[0]
        theta, mu = _newton_kkt(obj, theta, mu, constraint, options.newton_steps)
    return theta, mu, res.nit, ok


def _solve_single(obj: _Objective, theta0, constraint: Optional[Constraint], options: FitOptions):
    """One start; returns ``(theta, mu, iterations, ok)``."""
    if constraint is not None and constraint.linear:
        return _solve_linear(obj, theta0, constraint, options)
    phi = _to_phi(np.asarray(theta0, dtype=float))
    iters = 0
    mu = np.zeros(0 if constraint is None else constraint.r)
    ok = True
    if constraint is None:
        def fun(ph):
            th = _to_theta(ph)
            f, g = obj.value_grad(th)
            return f, g * np.array([1.0, 1.0, th[2]])
        res = _bfgs(fun, phi, options, gtol=_INNER_GTOL)
        phi, iters = res.x, res.nit
        if res.fun >= 1e99:
            ok = False
    else:
        rho = options.penalty0
        theta0 = _to_theta(phi)
        # least-squares multipliers at the start keep the first subproblem close
        mu = np.linalg.lstsq(constraint.jacobian(theta0), -obj.grad(theta0), rcond=None)[0]
        prev = math.inf
        for _ in range(options.max_outer):
            def fun(ph, mu=mu, rho=rho):
                th = _to_theta(ph)
                f, g = obj.value_grad(th)
                m = constraint.evaluate(th)
                M = constraint.jacobian(th)
                f = f + mu @ m + 0.5 * rho * (m @ m)
                g = g + M @ (mu + rho * m)
                return f, g * np.array([1.0, 1.0, th[2]])
            res = _bfgs(fun, phi, options, gtol=_INNER_GTOL)
            phi = res.x
            iters += res.nit
            if res.fun >= 1e99:
                ok = False
                break
            m = constraint.evaluate(_to_theta(phi))
            viol = float(np.max(np.abs(m)))
            mu = mu + rho * m
            if viol <= options.outer_tol:
                break
            if viol > 0.25 * prev:
                rho = min(rho * options.penalty_growth, _MAX_PENALTY)
            prev = viol
    theta = _to_theta(phi)
    if ok:
        if constraint is not None:
            # penalty-inflated updates can leave mu far off; refit it at the final point
            mu = np.linalg.lstsq(constraint.jacobian(theta), -obj.grad(theta), rcond=None)[0]
        theta, mu = _newton_kkt(obj, theta, mu, constraint, options.newton_steps)
    return theta, mu, iters, ok


def _exponential_start(counts: FailureCounts, plan: StressPlan) -> np.ndarray:
    """Crude start: exponential lifetimes, no stress effect, matched failure fraction."""
    failed = 1.0 - counts.n[-1] / counts.N
    failed = min(max(failed, 0.5 / counts.N), 1.0 - 0.5 / counts.N)
    lam = -plan.termination / math.log1p(-failed)
    return np.array([math.log(lam), 0.0, 1.0])


def _candidate_starts(counts, plan, grid, beta, constraint, options):
    starts = []
    if options.start is not None:
        starts.append(np.asarray(options.start, dtype=float))
    if beta > 0 and options.n_starts > len(starts):
        try:
            mle = _fit(counts, plan, grid, 0.0, constraint,
                       replace(options, n_starts=2, start=None, compute_covariance=False,
                               raise_on_failure=False))
            starts.append(mle.theta_hat.as_array())
        except (ArithmeticError, ValueError):
            pass
    starts.append(np.asarray(DOMAIN_START, dtype=float))
    if beta == 0:
        starts.append(_exponential_start(counts, plan))
    base = starts[0]
    rng = np.random.default_rng(options.seed)
    while len(starts) < options.n_starts:
        starts.append(base * (1.0 + options.jitter * rng.uniform(-1, 1, size=3)))
    return starts[: max(options.n_starts, 1)]


def _stationarity(obj, theta, constraint, mu):
    pi, W = obj.pieces(theta)
    U = obj.score(pi, W)
    lam = -np.asarray(mu) / (1 + obj.beta)
    if constraint is not None:
        U = U + constraint.jacobian(theta) @ lam
    return float(np.max(np.abs(U))), lam


def _at_boundary(counts: FailureCounts, pi: np.ndarray) -> bool:
    # a cell driven to probability zero: empty, or (beta > 0) treated as outlying
    return bool(np.any(counts.N * pi < BOUNDARY_EXPECTED_COUNT))


def _vanishing_constraint(obj, counts, cells, constraint):
    # log pi_j = log(c / N) for each vanishing cell j, stacked under the user restriction
    target = math.log(BOUNDARY_RETRACT_COUNT / counts.N)
    r0 = 0 if constraint is None else constraint.r

    def evaluate(th):
        pi = obj.pieces(th)[0]
        m = np.log(np.maximum(pi[cells], _LOG_CLAMP)) - target
        return m if r0 == 0 else np.concatenate([constraint.evaluate(th), m])

    def jacobian(th):
        pi, W = obj.pieces(th)
        G = (W[cells] / np.maximum(pi[cells], _LOG_CLAMP)[:, None]).T
        return G if r0 == 0 else np.hstack([constraint.jacobian(th), G])

    return Constraint(evaluate, r0 + len(cells), jacobian, name="vanishing cells")


def _retract(obj, counts, theta, lam, constraint, options):
    """Move an estimate at infinity back to a canonical finite representative.

    The loss keeps decreasing as some cell probabilities go to zero, so the
    point where an optimizer stops is arbitrary. The representative is the
    minimizer with each vanishing cell held at an expected count of
    ``BOUNDARY_RETRACT_COUNT``, which approaches the infimum as that count
    shrinks while keeping the information matrices invertible.
    """
    r0 = 0 if constraint is None else constraint.r
    cells = np.flatnonzero(counts.N * obj.pieces(theta)[0] < BOUNDARY_EXPECTED_COUNT)
    if r0 + cells.size > 3:
        return theta, lam, None
    aug = _vanishing_constraint(obj, counts, cells, constraint)
    try:
        th, mu, _, ok = _solve_single(obj, theta, aug, options)
        pi, W = obj.pieces(th)
        stat, lam_all = _stationarity(obj, th, aug, mu)
        viol = float(np.max(np.abs(aug.evaluate(th))))
    except (ArithmeticError, ValueError):
        return theta, lam, None
    loss = obj.value(pi)
    if not (ok and viol <= 1e-8 and stat <= options.gtol * (1 + abs(loss))):
        # keep the unretracted estimate; it is still an accepted boundary fit
        return theta, lam, None
    return th, lam_all[:r0], (aug, lam_all)


def _better(cand, best) -> bool:
    # converged beats not; then lower loss; near-ties go to the smaller residual
    if cand[0] != best[0]:
        return cand[0]
    if abs(cand[1] - best[1]) <= 1e-12 * (1 + abs(best[1])):
        return cand[2] < best[2]
    return cand[1] < best[1]


def _fit(counts: FailureCounts, plan, grid, beta, constraint, options: FitOptions) -> FitResult:
    counts.check_grid(grid)
    if beta < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    obj = _Objective(counts.p_hat, plan, grid, beta)
    flags = []
    if sum(1 for v in counts.n if v > 0) < 3:
        flags.append("degenerate_data")

    if constraint is not None and constraint.linear and constraint.r == 3:
        theta = np.linalg.solve(constraint.A, constraint.b)
        if theta[2] <= 0:
            raise DomainError("the constraint pins eta to a nonpositive value")
        pi, W = obj.pieces(theta)
        U = obj.score(pi, W)
        lam = -np.linalg.solve(constraint.jacobian(theta), U)
        return _finish(obj, counts, plan, grid, theta, lam, 0, True, constraint, flags, options)

    best = None
    for start in _candidate_starts(counts, plan, grid, beta, constraint, options):
        if start[2] <= 0:
            continue
        try:
            theta, mu, iters, ok = _solve_single(obj, start, constraint, options)
            pi, W = obj.pieces(theta)
            loss = obj.value(pi)
            stat, lam = _stationarity(obj, theta, constraint, mu)
        except (ArithmeticError, ValueError):
            continue
        viol = 0.0 if constraint is None else float(np.max(np.abs(constraint.evaluate(theta))))
        scale = 1 + abs(loss)
        conv = ok and viol <= 1e-8 and (
            stat <= options.gtol * scale
            or (stat <= _BOUNDARY_GTOL * scale and _at_boundary(counts, pi))
        )
        cand = (conv, loss, stat, theta, lam, iters)
        if best is None or _better(cand, best):
            best = cand
    if best is None:
        raise NonConvergenceError("no start produced a finite objective")
    conv, loss, stat, theta, lam, iters = best
    extra = None
    if options.retract_boundary and _at_boundary(counts, obj.pieces(theta)[0]):
        theta, lam, extra = _retract(obj, counts, theta, lam, constraint, options)
        conv = conv or extra is not None
    return _finish(obj, counts, plan, grid, theta, lam, iters, conv, constraint, flags, options, extra)


def _finish(obj, counts, plan, grid, theta, lam, iters, conv, constraint, flags, options, extra=None):
    # ``extra`` holds the augmented restriction and multipliers of a retracted boundary fit
    pi, W = obj.pieces(theta)
    loss = obj.value(pi)
    U = obj.score(pi, W)
    if extra is not None:
        U = U + extra[0].jacobian(theta) @ extra[1]
        flags.append("retracted")
    elif constraint is not None:
        U = U + constraint.jacobian(theta) @ lam
    viol = 0.0 if constraint is None else float(np.max(np.abs(constraint.evaluate(theta))))
    if obj.beta < 1 and np.any(pi < POWER_FLOOR):
        flags.append("probability_floor")
    if _at_boundary(counts, pi):
        flags.append("boundary_estimate")
    if theta[2] < ETA_LOWER:
        flags.append("eta_boundary")
        warnings.warn(f"shape estimate {theta[2]:.3g} is at the lower boundary", BoundaryWarning)
    params = ModelParams.from_array(theta)
    sigma = None
    if options.compute_covariance and conv:
        try:
            sigma = asymptotic_covariance(params, plan, grid, obj.beta, constraint)[0]
        except SingularMatrixError:
            flags.append("singular_information")
    if not conv:
        flags.append("not_converged")
    result = FitResult(
        theta_hat=params,
        beta=obj.beta,
        loss=loss,
        converged=conv,
        iterations=int(iters),
        N=counts.N,
        lagrange_multipliers=np.asarray(lam, dtype=float),
        sigma=sigma,
        constraint_violation=viol,
        stationarity=float(np.max(np.abs(U))),
        constraint=constraint,
        flags=tuple(flags),
    )
    if not conv and options.raise_on_failure:
        raise NonConvergenceError(
            f"fit did not converge (stationarity {result.stationarity:.3g}, "
            f"violation {viol:.3g}, flags {result.flags})",
            result,
        )
    return result


def _as_counts(counts) -> FailureCounts:
    return counts if isinstance(counts, FailureCounts) else FailureCounts(tuple(counts))


def fit_mdpde(counts, plan: StressPlan, grid: InspectionGrid, beta: float,
              options: FitOptions = FitOptions()) -> FitResult:
    """Unrestricted minimum DPD estimate (the MLE at ``beta = 0``).

    Several starts are tried and the lowest loss wins: the ``beta = 0`` fit
    (for ``beta > 0``), the exponential solar-device estimates, and jittered
    copies of the first start.
    """
    return _fit(_as_counts(counts), plan, grid, float(beta), None, options)


def fit_rmdpde(counts, plan: StressPlan, grid: InspectionGrid, beta: float,
               constraint: Optional[Constraint], options: FitOptions = FitOptions()) -> FitResult:
    """Minimum DPD estimate over ``{theta : m(theta) = 0}``.

    Multipliers follow the convention ``U_beta + M lambda = 0``. With
    ``constraint=None`` this is :func:`fit_mdpde`.
    """
    if constraint is None:
        return fit_mdpde(counts, plan, grid, beta, options)
    return _fit(_as_counts(counts), plan, grid, float(beta), constraint, options)


def multipliers_lstsq(fit: FitResult, counts, plan, grid) -> np.ndarray:
    """Least-squares multipliers from ``U_beta = -M lambda`` (cross-check)."""
    counts = _as_counts(counts)
    obj = _Objective(counts.p_hat, plan, grid, fit.beta)
    theta = fit.theta_hat.as_array()
    U = obj.score(*obj.pieces(theta))
    M = fit.constraint.jacobian(theta)
    return np.linalg.lstsq(-M, U, rcond=None)[0]


def _spd_inverse(A: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not math.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError(f"{what} is singular (condition number {cond:.3g})")
    try:
        c = cho_factor(A)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(f"{what} is not positive definite") from None
    inv = cho_solve(c, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def asymptotic_covariance(params: ModelParams, plan: StressPlan, grid: InspectionGrid,
                          beta: float, constraint: Optional[Constraint] = None):
    """Sandwich covariance ``Sigma = P K P^T`` with its ``P`` and ``Q`` factors.

    Without a constraint ``P = J^-1`` and ``Q`` is an empty ``3 x 0`` matrix.
    """
    theta = params.as_array()
    pi, W = _probs_and_jacobian(theta, *_grid_arrays(plan, grid))
    J = _J(pi, W, beta)
    K = _K(pi, W, beta)
    Jinv = _spd_inverse(J, "J matrix")
    if constraint is None:
        P = Jinv
        Q = np.zeros((3, 0))
    else:
        M = constraint.jacobian(theta)
        S = _spd_inverse(M.T @ Jinv @ M, "M^T J^-1 M")
        Q = Jinv @ M @ S
        P = Jinv - Q @ M.T @ Jinv
    sigma = P @ K @ P.T
    return 0.5 * (sigma + sigma.T), P, Q


def wald_intervals(fit: FitResult, alpha: float = 0.05):
    """Intervals ``theta_i +/- z_{alpha/2} sqrt(Sigma_ii / N)`` for each parameter."""
    if fit.sigma is None:
        raise DomainError("the fit has no covariance estimate")
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must be in (0, 1], got {alpha}")
    z = z_upper(alpha / 2)
    theta = fit.theta_hat.as_array()
    se = fit.standard_errors
    return [(float(t - z * s), float(t + z * s)) for t, s in zip(theta, se)]


def region_statistic(fit: FitResult, theta_probe) -> float:
    """``N (theta_hat - theta)^T Sigma^-1 (theta_hat - theta)``."""
    if fit.sigma is None:
        raise DomainError("the fit has no covariance estimate")
    d = fit.theta_hat.as_array() - np.asarray(getattr(theta_probe, "as_array", lambda: theta_probe)(), dtype=float)
    inv = _spd_inverse(fit.sigma, "Sigma")
    return float(fit.N * d @ inv @ d)


def confidence_region_test(fit: FitResult, theta_probe, alpha: float = 0.05) -> bool:
    """Whether ``theta_probe`` lies in the elliptical ``1 - alpha`` region (boundary inside)."""
    return region_statistic(fit, theta_probe) <= chi2_quantile(alpha, 3)
