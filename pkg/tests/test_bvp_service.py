import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from app.services.bvp_service import (
    ReachEvaluator,
    _accept_step,
    free_distance,
    oracle_op,
    reach_distance,
    solve_bvp,
)
from app.services.spectral_service import ControlTrajectory, build_domain, cell_weights, propagate, solve_forward
from app.services.config_service import ConfigService
from app.utils.errors import ArgumentError, DegenerateTargetError
from tests.conftest import make_instance

TOL = 1e-10


def _solve(instance, tau, M, **kwargs):
    return solve_bvp(instance.domain, instance.grid, tau, M, instance.y0, instance.z_d, tol=TOL, **kwargs)


def test_zero_norm_gives_free_distance_exactly(small):
    solution = _solve(small, 0.3, 0.0)
    assert solution.reach_distance == free_distance(small.domain, small.grid, small.y0, small.z_d)
    assert solution.control.sup_norm() == 0.0
    assert solution.iterations == 0


@pytest.mark.parametrize("tau,M", [(0.0, 1.0), (0.0, 4.0), (0.45, 2.0), (0.8, 8.0)])
def test_solution_is_bang_bang_and_converged(small, tau, M):
    solution = _solve(small, tau, M)
    assert solution.bang_bang_defect() <= 1e-8 * M
    assert solution.residual <= TOL
    assert solution.duality_gap <= TOL
    assert solution.control.first_active_cell == small.grid.snap_index(tau)
    assert_allclose(solution.control.values[:solution.control.first_active_cell], 0.0)


def test_terminal_coupling_holds(small):
    solution = _solve(small, 0.2, 3.0)
    assert_allclose(solution.psi.terminal, small.z_d - solution.phi.terminal, atol=10 * TOL)
    assert solution.reach_distance == pytest.approx(np.linalg.norm(solution.phi.terminal - small.z_d))


def test_state_is_the_forward_solve_of_the_control(small):
    solution = _solve(small, 0.1, 2.0)
    replay = solve_forward(small.domain, small.grid, small.y0, solution.control)
    assert_allclose(replay.states, solution.phi.states, atol=1e-14)


def test_reach_decreases_with_the_norm_bound(small):
    values = [reach_distance(small.domain, small.grid, 0.25, M, small.y0, small.z_d) for M in (0.0, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_reach_increases_with_activation_time(small):
    values = [reach_distance(small.domain, small.grid, tau, 3.0, small.y0, small.z_d) for tau in (0.0, 0.3, 0.6, 0.9)]
    assert all(a < b for a, b in zip(values, values[1:]))


@given(st.floats(0.0, 6.0), st.floats(0.0, 6.0))
@settings(max_examples=15, deadline=None)
def test_reach_is_lipschitz_in_the_norm_bound(M1, M2):
    instance = make_instance()
    tau = 0.25
    r1 = reach_distance(instance.domain, instance.grid, tau, M1, instance.y0, instance.z_d)
    r2 = reach_distance(instance.domain, instance.grid, tau, M2, instance.y0, instance.z_d)
    assert abs(r1 - r2) <= (1.0 - tau) * abs(M1 - M2) + 1e-8


def test_schemes_and_warm_starts_agree(small):
    reference = _solve(small, 0.2, 2.5)
    sweep = _solve(small, 0.2, 2.5, scheme='sweep')
    perturbed = _solve(small, 0.2, 2.5, initial_adjoint=reference.terminal_adjoint * 1.3 + 0.01)
    for other in (sweep, perturbed):
        assert other.control.l2_distance(reference.control) <= 1e-6 * 2.5
        assert other.reach_distance == pytest.approx(reference.reach_distance, abs=10 * TOL)


def test_maximum_condition_against_random_competitors(small):
    solution = _solve(small, 0.3, 2.0)
    rng = np.random.default_rng(0)
    start = solution.control.first_active_cell
    for _ in range(50):
        values = np.zeros_like(solution.control.values)
        raw = rng.standard_normal(values[start:].shape)
        raw *= (2.0 * rng.uniform(size=len(raw)) / np.linalg.norm(raw, axis=1))[:, None]
        values[start:] = raw
        competitor = ControlTrajectory(small.grid, solution.control.tau, values)
        assert solution.max_condition_gap(small.domain, competitor) >= -1e-8


def test_full_window_control_is_the_normalized_cell_averaged_adjoint():
    instance = make_instance(omega=(0.0, 1.0))
    solution = _solve(instance, 0.0, 1.5)
    averaged = cell_weights(instance.domain, instance.grid) * solution.terminal_adjoint
    expected = 1.5 * averaged / np.linalg.norm(averaged, axis=1)[:, None]
    assert_allclose(solution.control.values, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matches_projected_gradient_oracle(seed):
    rng = np.random.default_rng(seed)
    num_modes = int(rng.integers(2, 7))
    instance = make_instance(num_modes=num_modes, n_steps=int(rng.integers(10, 31)),
                             y0=rng.standard_normal(num_modes), z_d=0.5 * rng.standard_normal(num_modes))
    tau = float(rng.uniform(0.0, 0.5))
    M = float(rng.uniform(0.5, 3.0))
    r = reach_distance(instance.domain, instance.grid, tau, M, instance.y0, instance.z_d)
    _, value = oracle_op(instance.domain, instance.grid, tau, M, instance.y0, instance.z_d, tol=1e-9)
    assert abs(r - np.sqrt(value)) <= 1e-6 * (1.0 + value)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100, 120))
def test_matches_projected_gradient_oracle_on_many_instances(seed):
    rng = np.random.default_rng(seed)
    num_modes = int(rng.integers(2, 9))
    instance = make_instance(num_modes=num_modes, n_steps=int(rng.integers(10, 51)),
                             y0=rng.standard_normal(num_modes), z_d=0.5 * rng.standard_normal(num_modes))
    tau = float(rng.uniform(0.0, 0.6))
    M = float(rng.uniform(0.25, 4.0))
    r = reach_distance(instance.domain, instance.grid, tau, M, instance.y0, instance.z_d)
    _, value = oracle_op(instance.domain, instance.grid, tau, M, instance.y0, instance.z_d, tol=1e-9)
    assert abs(r - np.sqrt(value)) <= 1e-6 * (1.0 + value)


def test_oracle_with_zero_bound_returns_free_distance(small):
    control, value = oracle_op(small.domain, small.grid, 0.0, 0.0, small.y0, small.z_d)
    assert control.sup_norm() == 0.0
    assert np.sqrt(value) == pytest.approx(free_distance(small.domain, small.grid, small.y0, small.z_d))


def test_target_equal_to_free_state_is_degenerate(small):
    z_d = propagate(small.domain, small.y0, small.grid.horizon)
    with pytest.raises(DegenerateTargetError):
        solve_bvp(small.domain, small.grid, 0.0, 1.0, small.y0, z_d)


@pytest.mark.parametrize("kwargs", [
    {"tau": -0.5}, {"tau": 1.0}, {"tau": 0.999}, {"M": -1.0}, {"M": float("inf")}, {"tol": 0.0},
    {"scheme": "newton"},
])
def test_invalid_arguments(small, kwargs):
    args = {"tau": 0.0, "M": 1.0, "tol": TOL}
    args.update(kwargs)
    scheme = args.pop("scheme", "frank-wolfe")
    with pytest.raises(ArgumentError):
        solve_bvp(small.domain, small.grid, args["tau"], args["M"], small.y0, small.z_d, tol=args["tol"],
                  scheme=scheme)


def test_dimension_mismatch_rejected(small):
    other = build_domain((0.2, 0.8), 5)
    with pytest.raises(ArgumentError):
        solve_bvp(other, small.grid, 0.0, 1.0, small.y0, small.z_d)




@pytest.mark.parametrize("tau,M", [(0.2, 3.0), (0.25, 1.0), (0.5, 6.0), (0.0, 0.5)])
def test_sweep_reaches_the_absolute_tolerance(small, tau, M):
    for scheme in ('frank-wolfe', 'sweep'):
        solution = _solve(small, tau, M, scheme=scheme)
        assert solution.residual <= TOL
        assert solution.duality_gap <= TOL


def test_shipped_config_instance_converges():
    service = ConfigService()
    config = service.problem_config()
    domain = service.build_domain()
    grid = service.build_grid()
    y0, z_d = service.build_field(domain, "y0"), service.build_field(domain, "z_d")
    for tau, M in ((config.tau, config.M), (0.2, 3.0), (0.5, 1.0)):
        solution = solve_bvp(domain, grid, tau, M, y0, z_d, tol=config.tol_bvp, max_iter=config.max_iter)
        assert solution.residual <= config.tol_bvp
        assert solution.bang_bang_defect() <= 1e-8 * M


class TestLineSearchAcceptance:
    def test_measurable_decrease_uses_armijo(self):
        residual = np.array([1e-3])
        assert _accept_step(1.0, 1.0 - 1e-6, 1.0, 1e-2, residual)
        assert not _accept_step(1.0, 1.0, 1.0, 1e-2, residual)

    def test_decrease_below_rounding_asks_for_residual_descent(self):
        # The required decrease 1e-24 is far below eps * |Phi|
        assert _accept_step(0.3, 0.3 + 1e-16, 1.0, 1e-10, np.array([5e-11]))
        assert not _accept_step(0.3, 0.3 - 1e-16, 1.0, 1e-10, np.array([2e-10]))

    def test_degenerate_trial_is_rejected(self):
        assert not _accept_step(0.3, float('inf'), 1.0, 1e-10, None)


@pytest.mark.parametrize("j", [10, 20, 35])
def test_resolving_from_an_intermediate_state_reproduces_the_tail(small, j):
    solution = _solve(small, 0.2, 3.0)
    tail = small.grid.tail(j)
    resolved = solve_bvp(small.domain, tail, tail.t_start, 3.0, solution.phi.at(j), small.z_d, tol=TOL)
    assert resolved.reach_distance == pytest.approx(solution.reach_distance, abs=10 * TOL)
    assert_allclose(resolved.psi.states, solution.psi.states[j:], atol=10 * TOL)
    assert_allclose(resolved.phi.terminal, solution.phi.terminal, atol=10 * TOL)
    assert_allclose(resolved.phi.states, solution.phi.states[j:], atol=1e-7)
    assert_allclose(resolved.control.values, solution.control.values[j:], atol=1e-6)


class TestReachEvaluator:
    def test_memoizes_per_snapped_time(self, small):
        evaluator = small.evaluator()
        first = evaluator.reach(0.25, 2.0)
        again = evaluator.reach(0.2501, 2.0)
        assert first == again
        assert evaluator.solve_count == 1
        evaluator.reach(0.25, 2.5)
        assert evaluator.solve_count == 2

    def test_activation_at_the_horizon_end_is_free_flow(self, small):
        evaluator = small.evaluator()
        assert evaluator.reach(small.grid.t_end, 5.0) == evaluator.r_T
        assert evaluator.solve(small.grid.t_end, 5.0) is None
        assert evaluator.solve_count == 0

    def test_agrees_with_direct_solve(self, small):
        evaluator = ReachEvaluator(small.domain, small.grid, small.y0, small.z_d, tol=TOL)
        assert evaluator.reach(0.5, 3.0) == reach_distance(small.domain, small.grid, 0.5, 3.0, small.y0, small.z_d,
                                                           tol=TOL)
