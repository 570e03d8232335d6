"""Bisection for the optimal norm M(r, tau) and the optimal norm control.

The bracket starts at [0, K M0] with K the first multiple of M0 whose reach is
below r; each step halves it. A midpoint with r(tau, M_n) > r becomes the new
left end, otherwise the new right end, so r(tau, a_n) > r >= r(tau, b_n) holds
throughout and b_n is always a feasible norm.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .bvp_service import DEFAULT_TOL, BvpSolution, ReachEvaluator
from .spectral_service import ControlTrajectory, Field, SpectralDomain, TimeGrid
from ..utils.errors import ArgumentError, BracketError, DegenerateTargetError, InfeasibleError

logger = logging.getLogger(__name__)

DEFAULT_TOL_M = 1e-8
DEFAULT_K_MAX = 64
_MAX_HALVINGS = 200

NORM_SEARCH = 'norm-search'
TIME_SEARCH = 'time-search'


@dataclass(frozen=True)
class BisectionStep:
    n: int
    a: float
    b: float
    mid: float
    r_mid: float


@dataclass
class BisectionTrace:
    """History (a_n, b_n, midpoint, r at midpoint) of one bisection run."""
    kind: str
    bracket_history: list[BisectionStep] = field(default_factory=list)
    final_value: float = 0.0
    final_tolerance: float = 0.0
    initial_bracket: tuple[float, float] | None = None
    K: int | None = None
    M0: float | None = None
    cold_start: bool = True

    def record(self, a: float, b: float, mid: float, r_mid: float) -> None:
        self.bracket_history.append(BisectionStep(len(self.bracket_history) + 1, a, b, mid, r_mid))

    def rows(self) -> list[tuple]:
        return [(s.n, s.a, s.b, s.mid, s.r_mid) for s in self.bracket_history]

    def widths(self) -> np.ndarray:
        return np.array([s.b - s.a for s in self.bracket_history])

    def observed_slopes(self) -> np.ndarray:
        """|delta r / delta x| between consecutive midpoints."""
        mids = np.array([s.mid for s in self.bracket_history])
        values = np.array([s.r_mid for s in self.bracket_history])
        if mids.size < 2:
            return np.zeros(0)
        dx = np.diff(mids)
        keep = dx != 0
        return np.abs(np.diff(values)[keep] / dx[keep])


@dataclass
class NormSearchResult:
    M_star: float
    control: ControlTrajectory
    trace: BisectionTrace
    solution: BvpSolution | None
    tau: float
    r: float
    r_T: float
    value_budget: float

    @property
    def reach(self) -> float:
        return self.r_T if self.solution is None else self.solution.reach_distance


def _evaluator(domain, grid, y0, z_d, tol_bvp, evaluator) -> ReachEvaluator:
    if evaluator is not None:
        return evaluator
    if y0 is None or z_d is None:
        raise ArgumentError("y0 and z_d are required when no evaluator is supplied")
    return ReachEvaluator(domain, grid, y0, z_d, tol=tol_bvp)


def find_bracket(domain: SpectralDomain, grid: TimeGrid, tau: float, r: float, M0: float,
                 k_max: int = DEFAULT_K_MAX, *, y0: Field | None = None, z_d: Field | None = None,
                 tol_bvp: float = DEFAULT_TOL, evaluator: ReachEvaluator | None = None) -> int:
    """K = min{k : r(tau, k M0) < r}, using at most ``k_max`` solves."""
    evaluator = _evaluator(domain, grid, y0, z_d, tol_bvp, evaluator)
    if M0 <= 0:
        raise ArgumentError(f"M0 must be positive, got {M0}")
    _check_radius(r, evaluator.r_T)
    for k in range(1, k_max + 1):
        value = evaluator.reach(tau, k * M0)
        logger.debug(f"Bracket search k={k}: r(tau, {k * M0:.6g}) = {value:.12g}")
        if value < r:
            return k
    raise BracketError(f"No k <= {k_max} with r(tau, k*M0) < r={r:.6g} (M0={M0:.6g}); "
                       f"r is too small for the search budget")


def _check_radius(r: float, r_T: float) -> None:
    if not r > 0:
        raise InfeasibleError(f"Target radius must be positive, got r={r}", bound='r > 0', value=r)
    if r >= r_T:
        raise InfeasibleError(f"Target radius r={r:.6g} must lie below r_T={r_T:.6g}", bound='r < r_T', value=r)


def default_M0(grid: TimeGrid, tau: float, r_T: float) -> float:
    """r_T / (T - tau): a control of this norm moves the state about r_T."""
    return r_T / (grid.t_end - grid.snap(tau))


def optimal_norm(domain: SpectralDomain, grid: TimeGrid, tau: float, r: float, M0: float | None = None,
                 tol_M: float = DEFAULT_TOL_M, tol_bvp: float = DEFAULT_TOL, *, y0: Field | None = None,
                 z_d: Field | None = None, k_max: int = DEFAULT_K_MAX,
                 bracket: tuple[float, float] | None = None,
                 evaluator: ReachEvaluator | None = None) -> NormSearchResult:
    """Optimal norm M(r, tau) and the optimal norm control by bisection."""
    evaluator = _evaluator(domain, grid, y0, z_d, tol_bvp, evaluator)
    if tol_M <= 0:
        raise ArgumentError(f"tol_M must be positive, got {tol_M}")
    tau_index = grid.snap_index(tau)
    if tau_index >= grid.n_steps:
        raise ArgumentError(f"Activation time {tau} leaves no active cell")
    tau_node = grid.node(tau_index)
    r_T = evaluator.r_T
    horizon = grid.t_end - tau_node
    budget = horizon * tol_M + 2.0 * evaluator.tol

    if not r > 0:
        raise InfeasibleError(f"Target radius must be positive, got r={r}", bound='r > 0', value=r)
    if r >= r_T:
        # The null control already reaches the ball
        logger.info(f"r={r:.6g} >= r_T={r_T:.6g}: optimal norm is 0")
        trace = BisectionTrace(NORM_SEARCH, final_value=0.0, final_tolerance=0.0)
        return NormSearchResult(0.0, ControlTrajectory.zeros(grid, tau_node, domain.num_modes), trace,
                                evaluator.solve(tau_node, 0.0), tau_node, r, r_T, budget)

    trace = BisectionTrace(NORM_SEARCH)
    a, b = None, None
    if bracket is not None:
        a, b = _validate_warm_bracket(evaluator, tau_node, r, bracket)
        trace.cold_start = a is None
    if a is None:
        if M0 is None:
            M0 = default_M0(grid, tau_node, r_T)
        K = find_bracket(domain, grid, tau_node, r, M0, k_max, evaluator=evaluator)
        a, b = 0.0, K * M0
        trace.K, trace.M0 = K, M0
    trace.initial_bracket = (a, b)

    for _ in range(_MAX_HALVINGS):
        if b - a <= tol_M:
            break
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            logger.warning(f"Bracket [{a!r}, {b!r}] cannot be halved further in floating point")
            break
        r_mid = evaluator.reach(tau_node, mid)
        if r_mid > r:
            a = mid
        else:
            b = mid
        trace.record(a, b, mid, r_mid)
        logger.debug(f"Norm bisection n={len(trace.bracket_history)}: [{a:.12g}, {b:.12g}] r_mid={r_mid:.12g}")

    trace.final_value = b
    trace.final_tolerance = b - a
    solution = evaluator.solve(tau_node, b)
    if solution is None:
        raise DegenerateTargetError(f"Target reached exactly at M={b:.6g}; the norm problem is degenerate")
    logger.info(f"Optimal norm M(r={r:.6g}, tau={tau_node:.6g}) = {b:.12g} "
                f"after {len(trace.bracket_history)} halvings (width {b - a:.3e})")
    return NormSearchResult(b, solution.control, trace, solution, tau_node, r, r_T, budget)


def _validate_warm_bracket(evaluator: ReachEvaluator, tau: float, r: float, bracket):
    a, b = (float(v) for v in bracket)
    a = max(a, 0.0)
    if not b > a:
        return None, None
    r_a = evaluator.r_T if a == 0.0 else evaluator.reach(tau, a)
    r_b = evaluator.reach(tau, b)
    if r_a > r >= r_b:
        return a, b
    logger.warning(f"Warm bracket [{a:.6g}, {b:.6g}] rejected (r_a={r_a:.6g}, r_b={r_b:.6g}, r={r:.6g}); "
                   f"cold restart")
    return None, None
