"""Bisection for the optimal activation time tau(M, r).

The bracket starts at [t_start, T]. A midpoint with r(tau_n, M) > r becomes the
new right end, otherwise the new left end, so r(a_n, M) <= r < r(b_n, M) holds
throughout and a_n is always a feasible activation time. Midpoints stay real
valued; each solve snaps its activation time to the grid.
"""
import logging
from dataclasses import dataclass

from .bvp_service import DEFAULT_TOL, BvpSolution, ReachEvaluator
from .norm_search_service import TIME_SEARCH, BisectionTrace
from .spectral_service import ControlTrajectory, Field, SpectralDomain, TimeGrid
from ..utils.errors import ArgumentError, DegenerateRangeError, DegenerateTargetError, InfeasibleError

logger = logging.getLogger(__name__)

DEFAULT_TOL_TAU = 1e-6
_MAX_HALVINGS = 200


@dataclass
class TimeSearchResult:
    tau_star: float
    tau_star_snapped: float
    control: ControlTrajectory
    trace: BisectionTrace
    solution: BvpSolution
    M: float
    r: float
    r_T: float
    r_start: float
    value_budget: float
    local_slope: float

    @property
    def reach(self) -> float:
        return self.solution.reach_distance


def optimal_time(domain: SpectralDomain, grid: TimeGrid, M: float, r: float,
                 tol_tau: float = DEFAULT_TOL_TAU, tol_bvp: float = DEFAULT_TOL, *,
                 y0: Field | None = None, z_d: Field | None = None,
                 evaluator: ReachEvaluator | None = None) -> TimeSearchResult:
    """Latest activation time tau(M, r) and the corresponding optimal control."""
    if evaluator is None:
        if y0 is None or z_d is None:
            raise ArgumentError("y0 and z_d are required when no evaluator is supplied")
        evaluator = ReachEvaluator(domain, grid, y0, z_d, tol=tol_bvp)
    if not M > 0:
        raise ArgumentError(f"Norm bound must be positive, got M={M}")
    if tol_tau <= 0:
        raise ArgumentError(f"tol_tau must be positive, got {tol_tau}")

    # Fail fast on the valid range [r(t_start, M), r_T)
    r_T = evaluator.r_T
    if r >= r_T:
        raise DegenerateRangeError(
            f"r={r:.6g} >= r_T={r_T:.6g}: the null control already suffices and tau(M, r) is undefined",
            bound='r < r_T', value=r)
    r_start = evaluator.reach(grid.t_start, M)
    if r < r_start:
        raise InfeasibleError(
            f"Target ball unreachable even with immediate activation: r={r:.6g} < r(t_start, M)={r_start:.6g}",
            bound='r >= r(0, M)', value=r)

    trace = BisectionTrace(TIME_SEARCH, initial_bracket=(grid.t_start, grid.t_end))
    a, b = grid.t_start, grid.t_end
    for _ in range(_MAX_HALVINGS):
        if b - a <= tol_tau:
            break
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        r_mid = evaluator.reach(mid, M)
        if r_mid > r:
            b = mid
        else:
            a = mid
        trace.record(a, b, mid, r_mid)
        logger.debug(f"Time bisection n={len(trace.bracket_history)}: [{a:.12g}, {b:.12g}] r_mid={r_mid:.12g}")

    trace.final_value = a
    trace.final_tolerance = b - a
    index = grid.snap_index(a)
    if index >= grid.n_steps:
        index = grid.n_steps - 1
    tau_snapped = grid.node(index)
    solution = evaluator.solve(tau_snapped, M)
    if solution is None:
        raise DegenerateTargetError(f"Target reached exactly at tau={tau_snapped:.6g}, M={M:.6g}")

    # Grid jump of r(., M) around the crossing bounds how far the snapped reach can sit from r
    r_next = evaluator.reach(grid.node(index + 1), M) if index + 1 < grid.n_steps else r_T
    jump = abs(r_next - solution.reach_distance)
    if index > 0:
        jump = max(jump, abs(solution.reach_distance - evaluator.reach(grid.node(index - 1), M)))
    budget = jump + 2.0 * evaluator.tol
    logger.info(f"Optimal time tau(M={M:.6g}, r={r:.6g}) = {a:.12g} (snapped {tau_snapped:.12g}) "
                f"after {len(trace.bracket_history)} halvings")
    return TimeSearchResult(a, tau_snapped, solution.control, trace, solution, M, r, r_T, r_start,
                            budget, jump / grid.dt)
