"""Two-point boundary-value solver for the optimal target control problem.

For an activation time tau and a norm bound M the optimal target control is
characterized by the coupled system

    phi' - Lap phi = M chi_(tau,T) chi_w psi / ||chi_w psi||,   phi(t_start) = y0
    psi' + Lap psi = 0,                                          psi(T) = -(phi(T) - z_d)

and r(tau, M) = ||phi(T) - z_d||. On a grid the control is piecewise constant and
built from the exact cell average of psi, which makes the bang-bang law the
exact discrete optimality condition.

The iteration never forms a Jacobian. A conditional-gradient phase (whose
linear-minimization step is the bang-bang law itself) produces a starting
terminal adjoint, then a damped forward-backward sweep drives the terminal
residual psi(T) + (phi(T) - z_d) to zero. The sweep is gradient descent on the
dual functional

    Phi(q) = 1/2 ||q||^2 - <q, z_d - y_free(T)> + M sum_i ||G (w_i * q)||

whose gradient is exactly that residual. Armijo backtracking on Phi keeps the
steps monotone until the decrease drops below the rounding of Phi; from there
the line search asks for descent of the residual norm instead. The Fenchel gap
certifies optimality.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral_service import (
    ControlTrajectory,
    Field,
    SpectralDomain,
    StateTrajectory,
    TimeGrid,
    cell_weights,
    propagate,
    solve_adjoint,
    solve_forward,
)
from ..utils.errors import (
    ArgumentError,
    ConvergenceError,
    DegenerateAdjointError,
    DegenerateTargetError,
    OracleError,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 5000
DEFAULT_FW_ITER = 200
SCHEMES = ('frank-wolfe', 'sweep')

# Relative floors: masked adjoint vs ||psi(T)||, and ||psi(T)|| vs r_T.
ADJOINT_FLOOR = 1e-12
TARGET_FLOOR = 1e-13
_ARMIJO = 1e-4
_MIN_STEP = 1e-14
# Decreases of Phi below this multiple of eps * |Phi| are rounding noise.
_VALUE_NOISE = 64.0 * np.finfo(float).eps


@dataclass
class BvpSolution:
    """Solution (phi, psi) of the boundary-value problem plus the optimal control."""
    phi: StateTrajectory
    psi: StateTrajectory
    control: ControlTrajectory
    reach_distance: float
    iterations: int
    residual: float
    duality_gap: float
    tau: float
    M: float
    masked_adjoint_norms: np.ndarray = field(repr=False)
    scheme: str = 'sweep'

    @property
    def terminal_adjoint(self) -> Field:
        return self.psi.terminal

    def bang_bang_defect(self) -> float:
        """max over active cells of | ||u_i|| - M |."""
        start = self.control.first_active_cell
        if start >= self.control.grid.n_steps:
            return 0.0
        norms = self.control.norms()[start:]
        return float(np.max(np.abs(norms - self.M)))

    def max_condition_gap(self, domain: SpectralDomain, competitor: ControlTrajectory) -> float:
        """int <chi_w psi(t), u(t) - v(t)> dt; non-negative when u is optimal."""
        if competitor.grid != self.control.grid:
            raise ArgumentError("Competitor lives on a different grid")
        weights = cell_weights(domain, self.control.grid)
        directions = (weights * self.terminal_adjoint) @ domain.gram
        return float(np.sum(directions * (self.control.values - competitor.values)))


class _DualProblem:
    """Vectorized pieces of the discrete problem for one (grid, tau, M, y0, z_d)."""

    def __init__(self, domain: SpectralDomain, grid: TimeGrid, first_cell: int, M: float,
                 y0: Field, z_d: Field):
        self.domain = domain
        self.grid = grid
        self.first_cell = first_cell
        self.M = M
        self.y0 = y0
        self.z_d = z_d
        self.weights = cell_weights(domain, grid)[first_cell:]
        self.y_free = propagate(domain, y0, grid.horizon)
        self.offset = z_d - self.y_free
        self.r_T = float(np.linalg.norm(self.offset))

    def directions(self, q: Field) -> tuple[np.ndarray, np.ndarray]:
        """Rows G (w_i * q) for active cells and their norms, with the degeneracy guard."""
        q_norm = float(np.linalg.norm(q))
        if q_norm <= TARGET_FLOOR * self.r_T:
            raise DegenerateTargetError(
                f"Terminal adjoint vanished (||psi(T)||={q_norm:.3e}); the target is reached and r(tau, M) = 0")
        rows = (self.weights * q) @ self.domain.gram
        norms = np.linalg.norm(rows, axis=1)
        averaged = norms / self.grid.dt
        floor = ADJOINT_FLOOR * q_norm
        if averaged.size and averaged.min() < floor:
            cell = int(np.argmin(averaged)) + self.first_cell
            raise DegenerateAdjointError(
                f"Masked adjoint {averaged.min():.3e} below floor {floor:.3e} at cell {cell}",
                cell=cell, masked_norm=float(averaged.min()))
        return rows, norms

    def bang_bang(self, rows: np.ndarray, norms: np.ndarray) -> np.ndarray:
        return self.M * rows / norms[:, None]

    def terminal(self, controls: np.ndarray) -> Field:
        return self.y_free + np.sum(self.weights * (controls @ self.domain.gram), axis=0)

    def dual_value(self, q: Field, norms: np.ndarray) -> float:
        return 0.5 * float(q @ q) - float(q @ self.offset) + self.M * float(norms.sum())

    def evaluate(self, q: Field):
        rows, norms = self.directions(q)
        controls = self.bang_bang(rows, norms)
        y_T = self.terminal(controls)
        residual = q + (y_T - self.z_d)
        return controls, norms, y_T, residual, self.dual_value(q, norms)

    def full_controls(self, active: np.ndarray) -> np.ndarray:
        values = np.zeros((self.grid.n_steps, self.domain.num_modes))
        values[self.first_cell:] = active
        return values


def free_distance(domain: SpectralDomain, grid: TimeGrid, y0: Field, z_d: Field) -> float:
    """r_T = ||y(T; 0, y0) - z_d||."""
    y0 = domain.check_field(y0, "y0")
    z_d = domain.check_field(z_d, "z_d")
    return float(np.linalg.norm(propagate(domain, y0, grid.horizon) - z_d))


def _activation_cell(grid: TimeGrid, tau: float) -> int:
    if not (grid.t_start - 1e-12 <= tau < grid.t_end):
        raise ArgumentError(f"Activation time {tau} outside [{grid.t_start}, {grid.t_end})")
    index = grid.snap_index(tau)
    if index >= grid.n_steps:
        raise ArgumentError(f"Activation time {tau} snaps to the horizon end; no active cell remains")
    if abs(grid.node(index) - tau) > 1e-9 * max(1.0, abs(grid.t_end)):
        logger.debug(f"Activation time {tau} snapped to grid node {grid.node(index)}")
    return index


def solve_bvp(domain: SpectralDomain, grid: TimeGrid, tau: float, M: float, y0: Field, z_d: Field,
              tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, scheme: str = 'frank-wolfe',
              initial_adjoint: Field | None = None, fw_max_iter: int = DEFAULT_FW_ITER) -> BvpSolution:
    """Solve the boundary-value problem for (tau, M) and return phi, psi, u and r(tau, M)."""
    if tol <= 0:
        raise ArgumentError(f"tol must be positive, got {tol}")
    if M < 0 or not math.isfinite(M):
        raise ArgumentError(f"Norm bound must be finite and >= 0, got {M}")
    if scheme not in SCHEMES:
        raise ArgumentError(f"Unknown scheme {scheme!r}; expected one of {SCHEMES}")
    y0 = domain.check_field(y0, "y0")
    z_d = domain.check_field(z_d, "z_d")
    first_cell = _activation_cell(grid, tau)
    tau_node = grid.node(first_cell)
    problem = _DualProblem(domain, grid, first_cell, float(M), y0, z_d)

    if problem.r_T <= TARGET_FLOOR * max(1.0, float(np.linalg.norm(z_d))):
        raise DegenerateTargetError(
            f"Free terminal state already equals the target (r_T={problem.r_T:.3e})")

    if M == 0:
        control = ControlTrajectory.zeros(grid, tau_node, domain.num_modes)
        return _assemble(domain, grid, problem, control, problem.offset, iterations=0,
                         duality_gap=0.0, norms=None, scheme=scheme)

    iterations = 0
    if initial_adjoint is not None:
        q = domain.check_field(initial_adjoint, "initial_adjoint").copy()
    elif scheme == 'frank-wolfe':
        q, iterations = _conditional_gradient(problem, tol, min(fw_max_iter, max_iter))
    else:
        q = problem.offset.copy()

    q, norms, controls, gap, sweeps = _sweep(problem, q, tol, max_iter - iterations, iterations)
    iterations += sweeps
    control = ControlTrajectory(grid, tau_node, problem.full_controls(controls))
    solution = _assemble(domain, grid, problem, control, q, iterations=iterations,
                         duality_gap=gap, norms=norms, scheme=scheme)
    logger.debug(f"BVP tau={tau_node:.6g} M={M:.6g}: r={solution.reach_distance:.12g} "
                 f"iterations={iterations} residual={solution.residual:.3e}")
    return solution


def _conditional_gradient(problem: _DualProblem, tol: float, max_iter: int) -> tuple[Field, int]:
    """Frank-Wolfe on J(u) = 1/2 ||y(T; u) - z_d||^2, worked in terminal space.

    Returns the adjoint q = z_d - y(T) of the last iterate; the sweep takes over from it.
    """
    controls = np.zeros((problem.grid.n_steps - problem.first_cell, problem.domain.num_modes))
    y_T = problem.y_free.copy()
    iteration = 0
    for iteration in range(1, max_iter + 1):
        q = problem.z_d - y_T
        rows, norms = problem.directions(q)
        vertex = problem.bang_bang(rows, norms)
        y_vertex = problem.terminal(vertex)
        step = y_vertex - y_T
        gap = float(q @ step)
        if gap <= tol:
            break
        gamma = min(1.0, gap / float(step @ step))
        controls += gamma * (vertex - controls)
        y_T = y_T + gamma * step
    logger.debug(f"Conditional gradient phase: {iteration} iterations")
    return problem.z_d - y_T, iteration


def _sweep(problem: _DualProblem, q: Field, tol: float, max_iter: int, offset_iterations: int):
    """Damped forward-backward sweep with Barzilai-Borwein steps and Armijo backtracking."""
    controls, norms, y_T, residual, value = problem.evaluate(q)
    step = 1.0
    res_norm = float(np.linalg.norm(residual))
    for iteration in range(max(max_iter, 0) + 1):
        gap = _fenchel_gap(problem, y_T, q, value)
        if res_norm <= tol and gap <= tol:
            return q, norms, controls, gap, iteration
        if iteration == max(max_iter, 0):
            break
        while True:
            trial = q - step * residual
            try:
                t_controls, t_norms, t_y_T, t_residual, t_value = problem.evaluate(trial)
            except DegenerateAdjointError:
                t_value = math.inf
            if _accept_step(value, t_value, step, res_norm, t_residual if math.isfinite(t_value) else None):
                break
            step *= 0.5
            if step < _MIN_STEP:
                raise ConvergenceError("Sweep line search stalled", res_norm, offset_iterations + iteration)
        dq = trial - q
        dr = t_residual - residual
        curvature = float(dq @ dr)
        q, controls, norms, y_T, residual, value = trial, t_controls, t_norms, t_y_T, t_residual, t_value
        res_norm = float(np.linalg.norm(residual))
        # Phi is 1-strongly convex, so the BB step never exceeds 1
        step = min(1.0, float(dq @ dq) / curvature) if curvature > 0 else 1.0
        step = max(step, 1e-10)
    raise ConvergenceError("BVP sweep did not converge", res_norm, offset_iterations + max(max_iter, 0))


def _accept_step(value: float, t_value: float, step: float, res_norm: float, t_residual) -> bool:
    """Armijo on Phi while its decrease is measurable, descent of the residual (grad Phi) after that.

    Steps no longer than 2/L never increase the gradient norm.
    """
    if t_residual is None:
        return False
    decrease = _ARMIJO * step * res_norm ** 2
    if decrease > _VALUE_NOISE * max(1.0, abs(value)):
        return t_value <= value - decrease
    return float(np.linalg.norm(t_residual)) < res_norm


def _fenchel_gap(problem: _DualProblem, y_T: Field, q: Field, dual_value: float) -> float:
    miss = y_T - problem.z_d
    return max(0.5 * float(miss @ miss) + dual_value, 0.0)


def _assemble(domain, grid, problem: _DualProblem, control: ControlTrajectory, q: Field,
              iterations: int, duality_gap: float, norms, scheme: str) -> BvpSolution:
    phi = solve_forward(domain, grid, problem.y0, control)
    psi = solve_adjoint(domain, grid, q)
    residual = float(np.linalg.norm(psi.terminal + (phi.terminal - problem.z_d)))
    reach = float(np.linalg.norm(phi.terminal - problem.z_d))
    averaged = np.full(grid.n_steps, np.nan)
    if norms is not None:
        averaged[problem.first_cell:] = norms / grid.dt
    return BvpSolution(phi=phi, psi=psi, control=control, reach_distance=reach, iterations=iterations,
                       residual=residual, duality_gap=duality_gap, tau=control.tau, M=problem.M,
                       masked_adjoint_norms=averaged, scheme=scheme)


def reach_distance(domain: SpectralDomain, grid: TimeGrid, tau: float, M: float, y0: Field, z_d: Field,
                   tol: float = DEFAULT_TOL, **solver_options) -> float:
    """r(tau, M) = ||phi(T) - z_d||."""
    return solve_bvp(domain, grid, tau, M, y0, z_d, tol=tol, **solver_options).reach_distance


class ReachEvaluator:
    """Memoized r(tau, M) for one (domain, grid, y0, z_d).

    Activation times are snapped to the grid before lookup, so every bisection
    that shares an evaluator also shares solves. An activation time snapping to
    the horizon end yields r_T (no active cell), and a bound large enough to hit
    the target exactly yields 0.
    """

    def __init__(self, domain: SpectralDomain, grid: TimeGrid, y0: Field, z_d: Field,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, scheme: str = 'frank-wolfe'):
        self.domain = domain
        self.grid = grid
        self.y0 = domain.check_field(y0, "y0")
        self.z_d = domain.check_field(z_d, "z_d")
        self.tol = tol
        self.max_iter = max_iter
        self.scheme = scheme
        self.r_T = free_distance(domain, grid, self.y0, self.z_d)
        self._solutions: dict[tuple[int, float], BvpSolution | None] = {}
        self.solve_count = 0

    def solve(self, tau: float, M: float) -> BvpSolution | None:
        index = self.grid.snap_index(tau)
        if index >= self.grid.n_steps:
            return None
        key = (index, float(M))
        if key not in self._solutions:
            self.solve_count += 1
            try:
                self._solutions[key] = solve_bvp(self.domain, self.grid, self.grid.node(index), M, self.y0,
                                                 self.z_d, tol=self.tol, max_iter=self.max_iter,
                                                 scheme=self.scheme)
            except DegenerateTargetError:
                if self.r_T <= TARGET_FLOOR * max(1.0, float(np.linalg.norm(self.z_d))):
                    raise
                logger.debug(f"Target reached exactly at tau={self.grid.node(index):.6g}, M={M:.6g}")
                self._solutions[key] = None
        return self._solutions[key]

    def reach(self, tau: float, M: float) -> float:
        index = self.grid.snap_index(tau)
        if index >= self.grid.n_steps:
            return self.r_T
        solution = self.solve(tau, M)
        return 0.0 if solution is None else solution.reach_distance


def oracle_op(domain: SpectralDomain, grid: TimeGrid, tau: float, M: float, y0: Field, z_d: Field,
              tol: float = 1e-11, max_iter: int = 200000) -> tuple[ControlTrajectory, float]:
    """Brute-force reference for the optimal target problem.

    Accelerated projected gradient on ||y(T; u) - z_d||^2 over the per-cell balls
    ||u_i|| <= M, with backtracking and adaptive restart. Stops when the
    Frank-Wolfe gap of the iterate (an upper bound on the suboptimality of the
    halved objective) drops below ``tol``. Returns the control and the value
    ||y(T; u) - z_d||^2. Used by the test suite only.
    """
    y0 = domain.check_field(y0, "y0")
    z_d = domain.check_field(z_d, "z_d")
    first_cell = _activation_cell(grid, tau)
    tau_node = grid.node(first_cell)
    problem = _DualProblem(domain, grid, first_cell, float(M), y0, z_d)
    shape = (grid.n_steps - first_cell, domain.num_modes)

    def objective(u):
        miss = problem.terminal(u) - z_d
        return 0.5 * float(miss @ miss), miss

    def gradient(miss):
        return (problem.weights * miss) @ domain.gram

    def project(u):
        norms = np.linalg.norm(u, axis=1)
        scale = np.where(norms > M, M / np.where(norms > 0, norms, 1.0), 1.0)
        return u * scale[:, None]

    if M == 0:
        value, miss = objective(np.zeros(shape))
        return ControlTrajectory.zeros(grid, tau_node, domain.num_modes), 2.0 * value

    u = np.zeros(shape)
    extrapolated = u.copy()
    momentum = 1.0
    lipschitz = 1e-3 * grid.dt
    value, miss = objective(u)
    for iteration in range(1, max_iter + 1):
        e_value, e_miss = objective(extrapolated)
        grad = gradient(e_miss)
        while True:
            candidate = project(extrapolated - grad / lipschitz)
            c_value, c_miss = objective(candidate)
            delta = candidate - extrapolated
            if c_value <= e_value + float(np.sum(grad * delta)) + 0.5 * lipschitz * float(np.sum(delta * delta)) + 1e-18:
                break
            lipschitz *= 2.0
        if c_value > value:
            # adaptive restart
            extrapolated = u.copy()
            momentum = 1.0
            continue
        next_momentum = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum ** 2))
        extrapolated = candidate + ((momentum - 1.0) / next_momentum) * (candidate - u)
        u, value, miss, momentum = candidate, c_value, c_miss, next_momentum

        grad_u = gradient(miss)
        grad_norms = np.linalg.norm(grad_u, axis=1)
        fw_gap = float(np.sum(grad_u * u)) + M * float(grad_norms.sum())
        if fw_gap <= tol:
            logger.debug(f"Oracle converged after {iteration} iterations (gap={fw_gap:.3e})")
            break
    else:
        raise OracleError(f"Projected-gradient oracle did not converge in {max_iter} iterations")

    control = ControlTrajectory(grid, tau_node, problem.full_controls(u))
    return control, 2.0 * value
