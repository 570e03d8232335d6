"""Optimal-norm feedback law and the closed-loop simulator.

For a state y0 at time t0 the law solves the norm problem afresh on the tail
grid starting at t0: N(t0, y0) is its optimal norm and F(t0, y0) is the first
cell of the corresponding bang-bang control, N chi_w psi / ||chi_w psi||. The
closed loop applies F with a zero-order hold per grid cell.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .bvp_service import DEFAULT_TOL, ReachEvaluator
from .norm_search_service import DEFAULT_TOL_M, NormSearchResult, optimal_norm
from .spectral_service import (
    ControlTrajectory,
    Field,
    SpectralDomain,
    StateTrajectory,
    TimeGrid,
    advance_cell,
    propagate,
)
from ..utils.errors import ArgumentError, FeedbackInstabilityError

logger = logging.getLogger(__name__)

INSTABILITY_FACTOR = 10.0


@dataclass(frozen=True)
class FeedbackScenario:
    r: float
    t0: float
    y0: Field
    z_d: Field
    grid: TimeGrid
    tol_M: float = DEFAULT_TOL_M
    tol_bvp: float = DEFAULT_TOL
    # Activation time of the interval-activated variant; None means t0
    tau: float | None = None
    # Half-width of the warm bracket relative to the previous N
    warm_fraction: float = 1e-3

    def __post_init__(self):
        if not self.r > 0:
            raise ArgumentError(f"Feedback radius must be positive, got {self.r}")
        index = self.grid.snap_index(self.t0)
        if index >= self.grid.n_steps:
            raise ArgumentError(f"t0={self.t0} leaves no cell before T")
        if abs(self.grid.node(index) - self.t0) > 1e-9 * max(1.0, abs(self.grid.t_end)):
            raise ArgumentError(f"t0={self.t0} is not a grid node")
        if self.tau is not None and not (self.t0 <= self.tau < self.grid.t_end):
            raise ArgumentError(f"Activation time {self.tau} outside [t0, T)")

    @property
    def start_index(self) -> int:
        return self.grid.snap_index(self.t0)

    @property
    def activation_index(self) -> int:
        return self.start_index if self.tau is None else self.grid.snap_index(self.tau)


@dataclass
class ClosedLoopRun:
    states: StateTrajectory
    control: ControlTrajectory
    n_values: np.ndarray = field(repr=False)
    masked_adjoint_norms: np.ndarray = field(repr=False)
    terminal_miss: float = 0.0
    cold_restarts: int = 0

    @property
    def initial_norm(self) -> float:
        active = self.n_values[~np.isnan(self.n_values)]
        return float(active[0]) if active.size else 0.0

    def norm_variation(self) -> float:
        """max |N_i - N_0| over controlled steps with N_i > 0."""
        active = self.n_values[~np.isnan(self.n_values)]
        positive = active[active > 0]
        if positive.size == 0:
            return 0.0
        return float(np.max(np.abs(positive - active[0])))


def _local_problem(domain: SpectralDomain, scenario: FeedbackScenario, t0: float, y0: Field,
                   bracket=None) -> NormSearchResult | None:
    """Norm problem started from (t0, y0); None when the free flow already lands in the ball."""
    grid = scenario.grid
    index = grid.snap_index(t0)
    if index >= grid.n_steps:
        raise ArgumentError(f"t0={t0} leaves no cell before T")
    tail = grid.tail(index)
    y0 = domain.check_field(y0, "y0")
    free_miss = float(np.linalg.norm(propagate(domain, y0, tail.horizon) - scenario.z_d))
    if free_miss <= scenario.r:
        return None
    evaluator = ReachEvaluator(domain, tail, y0, scenario.z_d, tol=scenario.tol_bvp)
    return optimal_norm(domain, tail, tail.t_start, scenario.r, tol_M=scenario.tol_M,
                        tol_bvp=scenario.tol_bvp, bracket=bracket, evaluator=evaluator)


def optimal_norm_value(domain: SpectralDomain, scenario: FeedbackScenario, t0: float, y0: Field) -> float:
    """N(t0, y0): optimal norm to reach B(z_d, r) at T from y0 at t0."""
    result = _local_problem(domain, scenario, t0, y0)
    return 0.0 if result is None else result.M_star


def feedback_control(domain: SpectralDomain, scenario: FeedbackScenario, t0: float, y0: Field) -> Field:
    """F(t0, y0) = N chi_w psi(t0) / ||chi_w psi(t0)||, or zero when N = 0."""
    result = _local_problem(domain, scenario, t0, y0)
    if result is None or result.M_star == 0:
        return domain.zero_field()
    return result.control.values[0].copy()


def open_loop_reference(domain: SpectralDomain, scenario: FeedbackScenario) -> NormSearchResult | None:
    """Open-loop optimal norm solution from (t0, y0) with the scenario's activation time."""
    grid = scenario.grid
    tail = grid.tail(scenario.start_index)
    y_start = domain.check_field(scenario.y0, "y0")
    if float(np.linalg.norm(propagate(domain, y_start, tail.horizon) - scenario.z_d)) <= scenario.r:
        return None
    evaluator = ReachEvaluator(domain, tail, y_start, scenario.z_d, tol=scenario.tol_bvp)
    return optimal_norm(domain, tail, grid.node(scenario.activation_index), scenario.r,
                        tol_M=scenario.tol_M, tol_bvp=scenario.tol_bvp, evaluator=evaluator)


def simulate_closed_loop(domain: SpectralDomain, scenario: FeedbackScenario) -> ClosedLoopRun:
    """Run dy/dt - Lap y = chi_w F(t, y(t)) from (t0, y0) with zero-order hold per cell."""
    grid = scenario.grid
    start = scenario.start_index
    activation = scenario.activation_index
    tail = grid.tail(start)
    n_cells = tail.n_steps
    dt = tail.dt

    states = np.zeros((n_cells + 1, domain.num_modes))
    controls = np.zeros((n_cells, domain.num_modes))
    n_values = np.full(n_cells, np.nan)
    masked = np.full(n_cells, np.nan)
    y = domain.check_field(scenario.y0, "y0").copy()
    states[0] = y
    warm = None
    first_norm = None
    cold_restarts = 0

    logger.info(f"Closed loop from t0={tail.t_start:.6g} over {n_cells} cells (r={scenario.r:.6g})")
    for i in range(n_cells):
        t_i = tail.node(i)
        u = domain.zero_field()
        if start + i >= activation:
            result = _local_problem(domain, scenario, t_i, y, bracket=warm)
            if result is None or result.M_star == 0:
                n_values[i] = 0.0
                warm = None
            else:
                n_values[i] = result.M_star
                u = result.control.values[0]
                masked[i] = result.solution.masked_adjoint_norms[0]
                if warm is not None and result.trace.cold_start:
                    cold_restarts += 1
                half_width = max(2.0 * result.trace.final_tolerance, scenario.warm_fraction * result.M_star)
                warm = (result.M_star - half_width, result.M_star + half_width)
            if first_norm is None:
                first_norm = n_values[i]
            elif first_norm > 0 and n_values[i] > INSTABILITY_FACTOR * first_norm:
                raise FeedbackInstabilityError(
                    f"Feedback norm {n_values[i]:.6g} at t={t_i:.6g} exceeds {INSTABILITY_FACTOR:g}x "
                    f"the initial norm {first_norm:.6g}")
            logger.debug(f"Closed loop t={t_i:.6g}: N={n_values[i]:.12g}")
        controls[i] = u
        y = advance_cell(domain, y, u, dt)
        states[i + 1] = y

    terminal_miss = float(np.linalg.norm(states[-1] - scenario.z_d))
    logger.info(f"Closed loop finished: ||y(T) - z_d|| = {terminal_miss:.12g} (r={scenario.r:.6g}), "
                f"{cold_restarts} cold restarts")
    control = ControlTrajectory(tail, tail.node(activation - start), controls)
    return ClosedLoopRun(StateTrajectory(tail, states), control, n_values, masked, terminal_miss, cold_restarts)


def feedback_lipschitz_ratios(domain: SpectralDomain, scenario: FeedbackScenario, t0: float, y0: Field,
                              n_samples: int = 8, radius: float = 1e-3, seed: int = 0) -> np.ndarray:
    """||F(t0, y0 + d) - F(t0, y0)|| / ||d|| for random d with ||d|| = radius (diagnostic)."""
    rng = np.random.default_rng(seed)
    base = feedback_control(domain, scenario, t0, y0)
    ratios = np.zeros(n_samples)
    for k in range(n_samples):
        delta = rng.standard_normal(domain.num_modes)
        delta *= radius / np.linalg.norm(delta)
        perturbed = feedback_control(domain, scenario, t0, y0 + delta)
        ratios[k] = float(np.linalg.norm(perturbed - base)) / radius
    logger.debug(f"Feedback Lipschitz ratios: max={ratios.max(initial=0.0):.6g}")
    return ratios


def trajectory_gap(closed: StateTrajectory, reference: StateTrajectory) -> float:
    """Sup over nodes of the distance between two state trajectories on one grid."""
    if closed.grid != reference.grid:
        raise ArgumentError("Trajectories live on different grids")
    return float(np.max(np.linalg.norm(closed.states - reference.states, axis=1)))


