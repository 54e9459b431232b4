import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from stepstress.divergence import FailureCounts
from stepstress.errors import DomainError
from stepstress.estimation import Constraint, FitOptions, fit_mdpde, fit_rmdpde
from stepstress.inference import (
    PerturbationPoint,
    influence_restricted,
    influence_unrestricted,
    rao_statistic,
    rao_statistic_partial,
    run_rao_test,
)
from stepstress.model import cell_probabilities, jacobian_W
from stepstress.montecarlo import rep_stream, sample_counts
from stepstress.special import chi2_quantile

SOLAR_COUNTS = (1, 13, 23, 22, 19, 12, 6, 17, 6, 6, 6, 12, 11, 7, 39)


def _sample(plan, grid, theta, seed, N=200):
    return sample_counts(cell_probabilities(theta, plan, grid), N, rep_stream(seed, 0))


@pytest.mark.parametrize("component,value", [("a0", 3.6597), ("a1", -2.4131), ("eta", 1.4)])
def test_likelihood_rao_equals_classical_score_test(component, value, solar_plan, solar_grid, theta0):
    counts = _sample(solar_plan, solar_grid, theta0, 5)
    fit = fit_rmdpde(counts, solar_plan, solar_grid, 0.0, Constraint.fix_component(component, value))
    assert "boundary_estimate" not in fit.flags
    ours = rao_statistic(counts, fit, solar_plan, solar_grid)
    ref = oracles.classical_score_test(counts.n, fit.theta_hat.as_array(), solar_plan.levels,
                                       solar_plan.change_times, solar_grid.times)
    assert ours == pytest.approx(ref, rel=1e-5)


def _random_instance(seed, solar_plan, solar_grid, theta0):
    rng = np.random.default_rng(seed)
    beta = float(rng.choice([0.0, 0.2, 0.5, 0.8, 1.0]))
    k = int(rng.integers(1, 3))
    idx = sorted(rng.choice(3, size=k, replace=False).tolist())
    values = theta0.as_array()[idx] * rng.uniform(0.9, 1.1, size=k)
    con = Constraint.linear_system(np.eye(3)[idx], values)
    counts = _sample(solar_plan, solar_grid, theta0, seed)
    return counts, beta, con, idx


def test_partial_rao_shortcut_matches_general_form(solar_plan, solar_grid, theta0):
    # the shortcut relies on U = -M lambda, which retracted boundary fits do not satisfy
    checked, seed = 0, 0
    while checked < 50:
        counts, beta, con, idx = _random_instance(seed, solar_plan, solar_grid, theta0)
        seed += 1
        fit = fit_rmdpde(counts, solar_plan, solar_grid, beta, con, FitOptions(n_starts=1))
        if "retracted" in fit.flags:
            continue
        checked += 1
        general = rao_statistic(counts, fit, solar_plan, solar_grid)
        short = rao_statistic_partial(counts, fit, solar_plan, solar_grid, fixed_indices=idx)
        assert short == pytest.approx(general, rel=1e-8, abs=1e-10), seed


def test_full_restriction_uses_k_inverse(solar_plan, solar_grid, theta0):
    con = Constraint.linear_system(np.eye(3), theta0.as_array())
    fit = fit_rmdpde(SOLAR_COUNTS, solar_plan, solar_grid, 0.4, con)
    general = rao_statistic(SOLAR_COUNTS, fit, solar_plan, solar_grid)
    short = rao_statistic_partial(SOLAR_COUNTS, fit, solar_plan, solar_grid)
    assert short == pytest.approx(general, rel=1e-8)


def test_rao_test_decision(solar_plan, solar_grid):
    res = run_rao_test(SOLAR_COUNTS, solar_plan, solar_grid, 0.4, Constraint.fix_component("eta", 1.0))
    assert res.df == 1
    assert res.critical_value == pytest.approx(chi2_quantile(0.05, 1))
    assert res.reject == (res.statistic > res.critical_value)
    assert 0 <= res.p_value <= 1
    with pytest.raises(DomainError):
        rao_statistic(SOLAR_COUNTS, fit_mdpde(SOLAR_COUNTS, solar_plan, solar_grid, 0.4), solar_plan, solar_grid)


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.8])
def test_restricted_if_is_tangent_to_constraint(beta, solar_plan, solar_grid, theta0):
    cons = [Constraint.fix_component("eta", 1.4),
            Constraint.linear_system([[1.0, 0.1, 0.0], [0.0, 0.0, 1.0]], [3.41839, 1.4]),
            Constraint(lambda th: [th[0] * th[2] - 3.6597 * 1.4], 1)]
    for con in cons:
        M = con.jacobian(theta0.as_array())
        for t0 in np.linspace(0.0, 20.0, 81):
            IF = influence_restricted(PerturbationPoint.from_time(t0, solar_grid), theta0,
                                      solar_plan, solar_grid, beta, con)
            assert np.max(np.abs(M.T @ IF)) <= 1e-8


def test_least_squares_variant_is_not_tangent(solar_plan, solar_grid, theta0):
    con = Constraint.fix_component("eta", 1.4)
    point = PerturbationPoint.from_time(0.5, solar_grid)
    IF = influence_restricted(point, theta0, solar_plan, solar_grid, 0.5, con, method="least_squares")
    assert abs(IF[2]) > 1e-6
    with pytest.raises(DomainError):
        influence_restricted(point, theta0, solar_plan, solar_grid, 0.5, con, method="other")


def _refit_at(pi_eps, plan, grid, beta, start, constraint=None):
    counts = FailureCounts(np.round(pi_eps * 1e12).astype(np.int64))
    opts = FitOptions(n_starts=1, start=tuple(start), gtol=1e-12)
    return fit_rmdpde(counts, plan, grid, beta, constraint, opts).theta_hat.as_array()


@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_unrestricted_if_is_the_refitting_limit(beta, solar_plan, solar_grid, theta0):
    pi = cell_probabilities(theta0, solar_plan, solar_grid)
    point = PerturbationPoint.from_time(9.5, solar_grid)
    IF = influence_unrestricted(point, theta0, solar_plan, solar_grid, beta)
    errs = []
    for eps in (1e-3, 1e-4):
        th = _refit_at((1 - eps) * pi + eps * point.delta, solar_plan, solar_grid, beta, theta0.as_array())
        errs.append(np.max(np.abs((th - theta0.as_array()) / eps - IF)))
    assert errs[1] < errs[0]
    assert errs[1] < 1e-2 * np.max(np.abs(IF))


def test_restricted_if_is_the_refitting_limit(solar_plan, solar_grid, theta0):
    con = Constraint.fix_component("eta", 1.4)
    pi = cell_probabilities(theta0, solar_plan, solar_grid)
    point = PerturbationPoint.from_time(4.0, solar_grid)
    IF = influence_restricted(point, theta0, solar_plan, solar_grid, 0.4, con)
    eps = 1e-4
    th = _refit_at((1 - eps) * pi + eps * point.delta, solar_plan, solar_grid, 0.4, theta0.as_array(), con)
    assert (th - theta0.as_array()) / eps == pytest.approx(IF, rel=2e-2, abs=1e-6)


@settings(max_examples=30)
@given(st.floats(0.0, 20.0), st.floats(0.0, 1.0))
def test_if_is_constant_within_an_interval(t0, beta):
    from conftest import SOLAR_TIMES
    from stepstress.model import InspectionGrid, ModelParams, StressPlan
    plan = StressPlan((0.1, 0.5), (1.0,), 20.0)
    grid = InspectionGrid.from_plan(plan, SOLAR_TIMES)
    theta = ModelParams(3.6597, -2.4131, 1.4)
    cell = grid.cell_of(t0)
    lo = 0.0 if cell == 0 else grid.times[cell - 1]
    mid = 0.5 * (lo + grid.times[cell])
    a = influence_unrestricted(PerturbationPoint.from_time(t0, grid), theta, plan, grid, beta)
    b = influence_unrestricted(PerturbationPoint.from_time(mid, grid), theta, plan, grid, beta)
    assert np.array_equal(a, b)


def test_if_bounded_only_for_positive_beta(solar_plan, solar_grid, theta0):
    # the survival cell carries most mass; far smaller cells blow up only the likelihood IF
    pi = cell_probabilities(theta0, solar_plan, solar_grid)
    W = jacobian_W(theta0, solar_plan, solar_grid)
    assert pi.min() > 0 and W.shape == (15, 3)
    norms = {b: max(np.linalg.norm(influence_unrestricted(PerturbationPoint(0.0, j, 15), theta0,
                                                          solar_plan, solar_grid, b))
                    for j in range(15)) for b in (0.0, 0.5)}
    assert norms[0.5] < norms[0.0]


def test_perturbation_point_validation(solar_grid):
    with pytest.raises(DomainError):
        PerturbationPoint.from_time(25.0, solar_grid)
    assert PerturbationPoint.survivor(solar_grid).cell == 14
    assert PerturbationPoint.from_time(1.0, solar_grid).delta[0] == 1.0
