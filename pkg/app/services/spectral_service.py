"""Spectral discretization of the internally controlled heat equation.

The state space is L2(0, 1) with Dirichlet boundary, represented by the
orthonormal sine basis e_k(x) = sqrt(2) sin(k pi x), k = 1..N. In this basis
the heat semigroup is diagonal, so free propagation is exact and every
approximation error comes from mode truncation and piecewise-constant controls.
The localization chi_omega acts through the Gram matrix of the basis over the
control window omega = (a, b).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from ..utils.errors import ArgumentError, ConfigError

logger = logging.getLogger(__name__)

# A Field is the vector of N modal coefficients of an element of L2(0, 1).
Field = np.ndarray

_SNAP_EPS = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t_start, t_end] with n_steps cells."""
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not isinstance(self.n_steps, (int, np.integer)) or self.n_steps < 1:
            raise ArgumentError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)) or self.t_start >= self.t_end:
            raise ArgumentError(f"TimeGrid needs t_start < t_end, got ({self.t_start}, {self.t_end})")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def horizon(self) -> float:
        return self.t_end - self.t_start

    @property
    def nodes(self) -> np.ndarray:
        nodes = self.t_start + self.dt * np.arange(self.n_steps + 1, dtype=float)
        nodes[-1] = self.t_end
        return nodes

    @property
    def midpoints(self) -> np.ndarray:
        nodes = self.nodes
        return 0.5 * (nodes[:-1] + nodes[1:])

    def node(self, index: int) -> float:
        if not 0 <= index <= self.n_steps:
            raise ArgumentError(f"Node index {index} outside [0, {self.n_steps}]")
        if index == self.n_steps:
            return self.t_end
        return self.t_start + self.dt * index

    def snap_index(self, t: float) -> int:
        """Index of the nearest grid node; exact ties go to the lower node."""
        s = (float(t) - self.t_start) / self.dt
        index = int(math.ceil(s - 0.5 - _SNAP_EPS))
        return min(max(index, 0), self.n_steps)

    def snap(self, t: float) -> float:
        return self.node(self.snap_index(t))

    def tail(self, index: int) -> "TimeGrid":
        """Sub-grid starting at node ``index`` and sharing the end time."""
        if not 0 <= index < self.n_steps:
            raise ArgumentError(f"Cannot take tail at node {index} of a {self.n_steps}-cell grid")
        if index == 0:
            return self
        return TimeGrid(self.node(index), self.t_end, self.n_steps - index)

    def refined(self, times: int) -> "TimeGrid":
        """Grid with dt halved ``times`` times."""
        if times < 0:
            raise ArgumentError(f"Refinement count must be >= 0, got {times}")
        return TimeGrid(self.t_start, self.t_end, self.n_steps * 2 ** times)


@dataclass(frozen=True)
class SpectralDomain:
    """Truncated sine basis on (0, 1) together with the control window.

    Immutable after construction; arrays are flagged read-only so the domain
    can be shared between concurrent solves.
    """
    num_modes: int
    omega: tuple[float, float]
    eigenvalues: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)

    def check_field(self, values, name: str = "field") -> Field:
        arr = np.asarray(values, dtype=float)
        if arr.shape != (self.num_modes,):
            raise ArgumentError(f"{name} must have shape ({self.num_modes},), got {arr.shape}")
        return arr

    def zero_field(self) -> Field:
        return np.zeros(self.num_modes)


@dataclass(frozen=True)
class StateTrajectory:
    """One Field per grid node (n_steps + 1 rows)."""
    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[0] != self.grid.n_steps + 1:
            raise ArgumentError(
                f"StateTrajectory needs {self.grid.n_steps + 1} rows, got shape {self.states.shape}")

    @property
    def initial(self) -> Field:
        return self.states[0]

    @property
    def terminal(self) -> Field:
        return self.states[-1]

    def at(self, index: int) -> Field:
        return self.states[index]


@dataclass(frozen=True)
class ControlTrajectory:
    """Piecewise-constant control: one Field per grid cell, zero before tau."""
    grid: TimeGrid
    tau: float
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.n_steps:
            raise ArgumentError(
                f"ControlTrajectory needs {self.grid.n_steps} rows, got shape {self.values.shape}")
        if not (self.grid.t_start <= self.tau <= self.grid.t_end):
            raise ArgumentError(f"Activation time {self.tau} outside the grid")
        inactive = self.first_active_cell
        if inactive and np.any(self.values[:inactive]):
            raise ArgumentError("Control must vanish on cells before the activation time")
        if not np.all(np.isfinite(self.values)):
            raise ArgumentError("Control values must be finite")

    @classmethod
    def zeros(cls, grid: TimeGrid, tau: float, num_modes: int) -> "ControlTrajectory":
        return cls(grid, tau, np.zeros((grid.n_steps, num_modes)))

    @property
    def first_active_cell(self) -> int:
        """Number of cells lying entirely before tau."""
        nodes = self.grid.nodes
        return int(np.count_nonzero(nodes[1:] <= self.tau + _SNAP_EPS * self.grid.dt))

    def norms(self) -> np.ndarray:
        """Per-cell L2(Omega) norms."""
        return np.linalg.norm(self.values, axis=1)

    def sup_norm(self) -> float:
        return float(self.norms().max(initial=0.0))

    def l2_distance(self, other: "ControlTrajectory") -> float:
        """Distance in L2(t_start, T; L2(Omega)) for piecewise-constant controls."""
        if other.grid != self.grid:
            raise ArgumentError("Controls live on different grids")
        diff = self.values - other.values
        return float(math.sqrt(self.grid.dt * float(np.sum(diff * diff))))


def build_domain(omega, num_modes: int) -> SpectralDomain:
    """Build the spectral domain for the control window ``omega = (a, b)``."""
    try:
        a, b = (float(v) for v in omega)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"omega must be a pair (a, b), got {omega!r}") from e
    if not (0.0 <= a < b <= 1.0):
        raise ConfigError(f"Control window must satisfy 0 <= a < b <= 1, got ({a}, {b})")
    if not isinstance(num_modes, (int, np.integer)) or num_modes < 1:
        raise ConfigError(f"num_modes must be a positive integer, got {num_modes!r}")

    k = np.arange(1, num_modes + 1, dtype=float)
    eigenvalues = (k * math.pi) ** 2
    gram = _gram_closed_form(a, b, num_modes)
    eigenvalues.setflags(write=False)
    gram.setflags(write=False)
    logger.debug(f"Spectral domain: N={num_modes}, omega=({a}, {b})")
    return SpectralDomain(int(num_modes), (a, b), eigenvalues, gram)


def _gram_closed_form(a: float, b: float, num_modes: int) -> np.ndarray:
    if a == 0.0 and b == 1.0:
        return np.eye(num_modes)
    idx = np.arange(1, num_modes + 1)
    j = idx[:, None]
    k = idx[None, :]
    diff = (j - k).astype(float)
    summ = (j + k).astype(float)

    def antiderivative(x: float) -> np.ndarray:
        # int 2 sin(j pi x) sin(k pi x) dx = int cos((j-k) pi x) - cos((j+k) pi x) dx
        with np.errstate(divide='ignore', invalid='ignore'):
            low = np.where(diff == 0, x, np.sin(diff * math.pi * x) / (diff * math.pi))
        high = np.sin(summ * math.pi * x) / (summ * math.pi)
        return low - high

    gram = antiderivative(b) - antiderivative(a)
    return 0.5 * (gram + gram.T)


def quadrature_gram(domain: SpectralDomain, n_points: int = 256) -> np.ndarray:
    """Gram matrix by Gauss-Legendre quadrature over omega (independent check)."""
    a, b = domain.omega
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    x = 0.5 * (b - a) * nodes + 0.5 * (b + a)
    w = 0.5 * (b - a) * weights
    basis = math.sqrt(2.0) * np.sin(np.outer(np.arange(1, domain.num_modes + 1) * math.pi, x))
    return (basis * w) @ basis.T


def project_profile(domain: SpectralDomain, profile: Callable[[float], float],
                    support: tuple[float, float] = (0.0, 1.0)) -> Field:
    """Modal coefficients of a profile on (0, 1), supported in ``support``.

    Uses QUADPACK's sine-weighted rule so high modes stay accurate.
    """
    lo, hi = max(0.0, support[0]), min(1.0, support[1])
    coeffs = np.zeros(domain.num_modes)
    if hi <= lo:
        return coeffs
    for i in range(domain.num_modes):
        value, _ = integrate.quad(profile, lo, hi, weight='sin', wvar=(i + 1) * math.pi, limit=200)
        coeffs[i] = math.sqrt(2.0) * value
    return coeffs


def propagate(domain: SpectralDomain, field: Field, dt: float) -> Field:
    """Apply the heat semigroup exp(dt * Laplacian) exactly."""
    if dt < 0:
        raise ArgumentError(f"Propagation time must be non-negative, got {dt}")
    field = domain.check_field(field)
    return field * np.exp(-domain.eigenvalues * dt)


def apply_mask(domain: SpectralDomain, field: Field) -> Field:
    """Galerkin representation of chi_omega f."""
    field = domain.check_field(field)
    return domain.gram @ field


def masked_norm(domain: SpectralDomain, field: Field) -> float:
    """||chi_omega f|| = sqrt(f^T G f)."""
    field = domain.check_field(field)
    return math.sqrt(max(float(field @ domain.gram @ field), 0.0))


def step_factors(domain: SpectralDomain, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode (exp(-mu dt), (1 - exp(-mu dt)) / mu) for one cell."""
    mu = domain.eigenvalues
    return np.exp(-mu * dt), -np.expm1(-mu * dt) / mu


def advance_cell(domain: SpectralDomain, state: Field, control_value: Field, dt: float) -> Field:
    """Exact variation of constants over one cell with constant source chi_omega u."""
    decay, gain = step_factors(domain, dt)
    return decay * state + gain * (domain.gram @ control_value)


def cell_weights(domain: SpectralDomain, grid: TimeGrid) -> np.ndarray:
    """int_cell exp(-mu (T - s)) ds for every cell (rows) and mode (columns).

    Row i times a terminal adjoint q is the time integral of exp((T - s) Laplacian) q
    over cell i; divided by dt it is the cell average of the adjoint.
    """
    _, gain = step_factors(domain, grid.dt)
    remaining = grid.t_end - grid.nodes[1:]
    return np.exp(-np.outer(remaining, domain.eigenvalues)) * gain


def terminal_state(domain: SpectralDomain, grid: TimeGrid, y0: Field, control_values: np.ndarray,
                   weights: np.ndarray | None = None) -> Field:
    """y(T) of the forward problem without storing the trajectory."""
    if weights is None:
        weights = cell_weights(domain, grid)
    free = propagate(domain, y0, grid.horizon)
    return free + np.sum(weights * (control_values @ domain.gram), axis=0)


def solve_forward(domain: SpectralDomain, grid: TimeGrid, y0: Field,
                  control: ControlTrajectory) -> StateTrajectory:
    """State trajectory of dy/dt - Laplacian y = chi_omega chi_(tau,T) u, y(t_start) = y0."""
    if control.grid != grid:
        raise ArgumentError("Control grid does not match the solver grid")
    y0 = domain.check_field(y0, "y0")
    if control.values.shape[1] != domain.num_modes:
        raise ArgumentError(f"Control has {control.values.shape[1]} modes, domain has {domain.num_modes}")

    elapsed = grid.nodes - grid.t_start
    free = np.exp(-np.outer(elapsed, domain.eigenvalues)) * y0
    decay, gain = step_factors(domain, grid.dt)
    sources = gain * (control.values @ domain.gram)
    forced = np.zeros_like(free)
    for i in range(grid.n_steps):
        forced[i + 1] = decay * forced[i] + sources[i]
    states = free + forced
    states[0] = y0
    return StateTrajectory(grid, states)


def solve_adjoint(domain: SpectralDomain, grid: TimeGrid, terminal: Field) -> StateTrajectory:
    """p(t) = exp((T - t) Laplacian) terminal at every node, stored forward in time."""
    terminal = domain.check_field(terminal, "terminal")
    remaining = grid.t_end - grid.nodes
    states = np.exp(-np.outer(remaining, domain.eigenvalues)) * terminal
    states[-1] = terminal
    return StateTrajectory(grid, states)
