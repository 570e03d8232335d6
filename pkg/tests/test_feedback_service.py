import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.services.bvp_service import ReachEvaluator
from app.services.feedback_service import (
    ClosedLoopRun,
    FeedbackScenario,
    feedback_control,
    feedback_lipschitz_ratios,
    open_loop_reference,
    optimal_norm_value,
    simulate_closed_loop,
    trajectory_gap,
)
from app.services.norm_search_service import optimal_norm
from app.services.spectral_service import ControlTrajectory, StateTrajectory, TimeGrid
from app.utils.errors import ArgumentError

TOL_M = 1e-8
TOL = 1e-10


def _scenario(instance, fraction=0.6, t0=0.0, tau=None, grid=None):
    return FeedbackScenario(r=fraction * instance.r_T, t0=t0, y0=instance.y0, z_d=instance.z_d,
                            grid=grid or instance.grid, tol_M=TOL_M, tol_bvp=TOL, tau=tau)


def test_norm_is_zero_when_free_flow_lands_in_the_ball(tiny):
    scenario = _scenario(tiny, fraction=2.0)
    assert optimal_norm_value(tiny.domain, scenario, 0.0, tiny.y0) == 0.0
    assert_array_equal(feedback_control(tiny.domain, scenario, 0.0, tiny.y0), np.zeros(3))


def test_norm_value_is_the_optimal_norm_on_the_tail(tiny):
    scenario = _scenario(tiny)
    t0 = tiny.grid.node(4)
    y = np.array([0.8, 0.1, -0.05])
    tail = tiny.grid.tail(4)
    expected = optimal_norm(tiny.domain, tail, tail.t_start, scenario.r, tol_M=TOL_M, tol_bvp=TOL,
                            evaluator=ReachEvaluator(tiny.domain, tail, y, tiny.z_d, tol=TOL))
    assert optimal_norm_value(tiny.domain, scenario, t0, y) == expected.M_star
    assert_array_equal(feedback_control(tiny.domain, scenario, t0, y), expected.control.values[0])


def test_feedback_control_has_the_optimal_norm(tiny):
    scenario = _scenario(tiny)
    value = optimal_norm_value(tiny.domain, scenario, 0.0, tiny.y0)
    control = feedback_control(tiny.domain, scenario, 0.0, tiny.y0)
    assert np.linalg.norm(control) == pytest.approx(value, rel=1e-8)


def test_norm_is_constant_along_the_optimal_trajectory(tiny):
    scenario = _scenario(tiny)
    reference = open_loop_reference(tiny.domain, scenario)
    for i in (0, 5, 10, 15):
        value = optimal_norm_value(tiny.domain, scenario, tiny.grid.node(i), reference.solution.phi.at(i))
        assert value == pytest.approx(reference.M_star, rel=1e-5)


class TestClosedLoop:
    def test_reaches_the_ball_with_constant_norm(self, tiny):
        scenario = _scenario(tiny)
        run = simulate_closed_loop(tiny.domain, scenario)
        assert run.terminal_miss <= scenario.r + 1e-6
        assert run.norm_variation() <= 1e-3 * run.initial_norm
        assert run.states.grid == tiny.grid
        assert_allclose(run.control.norms(), run.n_values, rtol=1e-7)

    def test_matches_the_open_loop_optimal_trajectory(self, tiny):
        scenario = _scenario(tiny)
        run = simulate_closed_loop(tiny.domain, scenario)
        reference = open_loop_reference(tiny.domain, scenario)
        assert run.initial_norm == pytest.approx(reference.M_star, rel=1e-6)
        assert trajectory_gap(run.states, reference.solution.phi) <= 1e-6 * max(1.0, tiny.r_T)

    def test_warm_brackets_are_accepted(self, tiny):
        run = simulate_closed_loop(tiny.domain, _scenario(tiny))
        assert run.cold_restarts == 0
        assert not np.isnan(run.masked_adjoint_norms).any()

    def test_free_flow_inside_the_ball_applies_no_control(self, tiny):
        scenario = _scenario(tiny, fraction=2.0)
        run = simulate_closed_loop(tiny.domain, scenario)
        assert run.control.sup_norm() == 0.0
        assert_array_equal(run.n_values, 0.0)
        assert run.initial_norm == 0.0
        assert open_loop_reference(tiny.domain, scenario) is None

    def test_starts_from_a_later_node(self, tiny):
        scenario = _scenario(tiny, t0=tiny.grid.node(6))
        run = simulate_closed_loop(tiny.domain, scenario)
        assert run.states.grid == tiny.grid.tail(6)
        assert_array_equal(run.states.initial, tiny.y0)
        assert run.terminal_miss <= scenario.r + 1e-6

    def test_interval_activated_variant(self, tiny):
        tau = tiny.grid.node(8)
        scenario = _scenario(tiny, fraction=0.7, tau=tau)
        run = simulate_closed_loop(tiny.domain, scenario)
        assert np.isnan(run.n_values[:8]).all()
        assert_array_equal(run.control.values[:8], 0.0)
        assert run.control.first_active_cell == 8
        reference = open_loop_reference(tiny.domain, scenario)
        assert reference.tau == tau
        assert run.initial_norm == pytest.approx(reference.M_star, rel=1e-6)
        assert run.terminal_miss <= scenario.r + 1e-6
        assert trajectory_gap(run.states, reference.solution.phi) <= 1e-6 * max(1.0, tiny.r_T)

    @pytest.mark.slow
    def test_refined_grid_keeps_the_norm_constant(self, tiny):
        scenario = _scenario(tiny, grid=tiny.grid.refined(1))
        run = simulate_closed_loop(tiny.domain, scenario)
        assert run.terminal_miss <= scenario.r + 1e-6
        assert run.norm_variation() <= 1e-3 * run.initial_norm


def test_lipschitz_ratios_are_finite(tiny):
    scenario = _scenario(tiny)
    ratios = feedback_lipschitz_ratios(tiny.domain, scenario, 0.0, tiny.y0, n_samples=3, radius=1e-4)
    assert ratios.shape == (3,)
    assert np.isfinite(ratios).all()
    assert (ratios >= 0).all()


class TestScenarioValidation:
    @pytest.mark.parametrize("kwargs", [
        {"r": 0.0}, {"r": -1.0}, {"t0": 0.03}, {"t0": 1.0}, {"tau": -0.1}, {"tau": 1.0},
    ])
    def test_rejects(self, tiny, kwargs):
        args = dict(r=0.2, t0=0.0, y0=tiny.y0, z_d=tiny.z_d, grid=tiny.grid)
        args.update(kwargs)
        with pytest.raises(ArgumentError):
            FeedbackScenario(**args)

    def test_tau_before_t0_rejected(self, tiny):
        with pytest.raises(ArgumentError):
            FeedbackScenario(r=0.2, t0=tiny.grid.node(5), y0=tiny.y0, z_d=tiny.z_d, grid=tiny.grid,
                             tau=tiny.grid.node(2))

    def test_indices(self, tiny):
        scenario = FeedbackScenario(r=0.2, t0=tiny.grid.node(5), y0=tiny.y0, z_d=tiny.z_d, grid=tiny.grid,
                                    tau=tiny.grid.node(9))
        assert scenario.start_index == 5
        assert scenario.activation_index == 9


def test_norm_variation_ignores_uncontrolled_steps():
    grid = TimeGrid(0.0, 1.0, 4)
    run = ClosedLoopRun(
        states=StateTrajectory(grid, np.zeros((5, 1))),
        control=ControlTrajectory.zeros(grid, 0.25, 1),
        n_values=np.array([np.nan, 2.0, 2.1, 0.0]),
        masked_adjoint_norms=np.full(4, np.nan),
    )
    assert run.initial_norm == 2.0
    assert run.norm_variation() == pytest.approx(0.1)


def test_trajectory_gap_needs_one_grid():
    states = np.zeros((5, 2))
    with pytest.raises(ArgumentError):
        trajectory_gap(StateTrajectory(TimeGrid(0.0, 1.0, 4), states),
                       StateTrajectory(TimeGrid(0.0, 2.0, 4), states))
