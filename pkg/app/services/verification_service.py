"""Numerical verification harness for the three equivalent control problems.

Each check re-derives a structural property (monotonicity of the value maps,
the inverse identities between them, the equivalence of the three problems,
the optimality system and the feedback law) on configured sample points and
records a PASS / WARN / FAIL line with its measured margin. Checks never raise
for a violated property; a solver error inside a check is recorded as FAIL.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .bvp_service import DEFAULT_TOL, ReachEvaluator, solve_bvp
from .feedback_service import (
    FeedbackScenario,
    feedback_lipschitz_ratios,
    open_loop_reference,
    optimal_norm_value,
    simulate_closed_loop,
    trajectory_gap,
)
from .norm_search_service import DEFAULT_TOL_M, optimal_norm
from .spectral_service import (
    ControlTrajectory,
    Field,
    SpectralDomain,
    TimeGrid,
    advance_cell,
    cell_weights,
)
from .time_search_service import DEFAULT_TOL_TAU, optimal_time
from ..utils.errors import HeatControlError

logger = logging.getLogger(__name__)

PASS = 'PASS'
WARN = 'WARN'
FAIL = 'FAIL'
STATUSES = (PASS, WARN, FAIL)

# Strict inequalities pass only with this many tolerances of slack
STRICT_MARGIN = 10.0
BANG_BANG_TOL = 1e-8
MAX_CONDITION_TOL = 1e-8
LIPSCHITZ_SLACK = 1e-8
R_T_TOL = 1e-12
CYCLE_TOL = 1e-5
FEEDBACK_N_TOL = 1e-3
REFINEMENT_FACTOR = 1.5


@dataclass(frozen=True)
class CheckRecord:
    check_id: str
    anchor: str
    instance: dict
    measured: float
    tolerance: float
    margin: float
    status: str
    detail: str = ''


@dataclass
class VerificationReport:
    records: list[CheckRecord] = field(default_factory=list)

    def extend(self, other: "VerificationReport") -> None:
        self.records.extend(other.records)

    def summary(self) -> dict:
        counts = {status: 0 for status in STATUSES}
        for record in self.records:
            counts[record.status] += 1
        counts['total'] = len(self.records)
        return counts

    @property
    def passed(self) -> bool:
        return all(record.status != FAIL for record in self.records)

    def failures(self) -> list[CheckRecord]:
        return [record for record in self.records if record.status == FAIL]

    def to_dict(self) -> dict:
        return {
            'summary': self.summary(),
            'passed': self.passed,
            'checks': [asdict(record) for record in self.records],
        }

    # Recording helpers used by the checks below

    def bound(self, check_id: str, anchor: str, instance: dict, measured: float, tolerance: float,
              detail: str = '') -> None:
        """Record ``measured <= tolerance``."""
        measured = float(measured)
        ok = math.isfinite(measured) and measured <= tolerance
        self.records.append(CheckRecord(check_id, anchor, instance, measured, float(tolerance),
                                        float(tolerance - measured), PASS if ok else FAIL, detail))

    def strict(self, check_id: str, anchor: str, instance: dict, difference: float, tolerance: float,
               detail: str = '') -> None:
        """Record ``difference > 0``; near-ties within the tolerance band are WARN."""
        difference = float(difference)
        if difference >= STRICT_MARGIN * tolerance:
            status = PASS
        elif difference >= -tolerance:
            status = WARN
        else:
            status = FAIL
        self.records.append(CheckRecord(check_id, anchor, instance, difference, float(tolerance),
                                        float(difference - STRICT_MARGIN * tolerance), status, detail))

    def error(self, check_id: str, anchor: str, instance: dict, error: Exception) -> None:
        self.records.append(CheckRecord(check_id, anchor, instance, math.nan, math.nan, math.nan, FAIL,
                                        f"{type(error).__name__}: {error}"))


@dataclass(frozen=True)
class VerificationSettings:
    tau_fractions: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8)
    # Multiples of r_T / (T - t_start)
    M_multiples: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 4.0)
    r_fractions: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
    n_competitors: int = 100
    n_lipschitz_pairs: int = 10
    n_instances: int = 5
    seed: int = 0
    tol_bvp: float = DEFAULT_TOL
    tol_M: float = DEFAULT_TOL_M
    tol_tau: float = DEFAULT_TOL_TAU
    feedback_steps: int = 50
    max_workers: int = 4
    # Largest sampled |F(t0, y1) - F(t0, y2)| / |y1 - y2| still counted as Lipschitz
    feedback_lipschitz_cap: float = 1e6


@dataclass(frozen=True)
class VerificationCase:
    """One (domain, grid, y0, z_d) problem family the checks sample from."""
    domain: SpectralDomain
    grid: TimeGrid
    y0: Field
    z_d: Field

    def evaluator(self, settings: VerificationSettings, scheme: str = 'frank-wolfe') -> ReachEvaluator:
        return ReachEvaluator(self.domain, self.grid, self.y0, self.z_d, tol=settings.tol_bvp, scheme=scheme)

    def tau_nodes(self, settings: VerificationSettings) -> list[float]:
        grid = self.grid
        nodes = sorted({grid.snap(grid.t_start + f * grid.horizon) for f in settings.tau_fractions})
        return [t for t in nodes if grid.snap_index(t) < grid.n_steps]

    def M_unit(self, r_T: float) -> float:
        return r_T / self.grid.horizon


def _instance(**values) -> dict:
    return {key: (float(v) if isinstance(v, (float, np.floating)) else v) for key, v in values.items()}


def _guard(report: VerificationReport, check_id: str, anchor: str, instance: dict, action: Callable[[], None]):
    try:
        action()
    except HeatControlError as e:
        logger.warning(f"Check {check_id} {instance} raised {type(e).__name__}: {e}")
        report.error(check_id, anchor, instance, e)


def check_monotone_maps(case: VerificationCase, settings: VerificationSettings) -> VerificationReport:
    """Monotonicity and Lipschitz bounds of r, M and tau, and the six inverse identities."""
    report = VerificationReport()
    evaluator = case.evaluator(settings)
    grid = case.grid
    r_T = evaluator.r_T
    taus = case.tau_nodes(settings)
    M_values = sorted(m * case.M_unit(r_T) for m in settings.M_multiples)
    radii = sorted(f * r_T for f in settings.r_fractions)
    reach_tol = 2.0 * settings.tol_bvp

    for tau in taus:
        def along_norm(tau=tau):
            r_zero = evaluator.reach(tau, 0.0)
            report.bound('reach-at-zero-norm', 'r(tau, 0) = r_T', _instance(tau=tau),
                         abs(r_zero - r_T), R_T_TOL * max(1.0, r_T))

            values = [evaluator.reach(tau, M) for M in M_values]
            for (M1, r1), (M2, r2) in zip(zip(M_values, values), zip(M_values[1:], values[1:])):
                if r1 == 0.0:
                    continue
                report.strict('reach-decreasing-in-norm', 'M -> r(tau, M) strictly decreasing',
                              _instance(tau=tau, M1=M1, M2=M2), r1 - r2, reach_tol)

        _guard(report, 'reach-decreasing-in-norm', 'M -> r(tau, M) strictly decreasing', _instance(tau=tau),
               along_norm)

    rng = np.random.default_rng(settings.seed)
    M_max = max(M_values) if max(M_values) > 0 else case.M_unit(r_T)
    for k in range(settings.n_lipschitz_pairs):
        tau = taus[int(rng.integers(len(taus)))]
        M1, M2 = (float(v) for v in rng.uniform(0.0, M_max, size=2))
        instance = _instance(pair=k, tau=tau, M1=M1, M2=M2)

        def lipschitz_pair(tau=tau, M1=M1, M2=M2, instance=instance):
            slack = (grid.t_end - tau) * abs(M1 - M2)
            excess = abs(evaluator.reach(tau, M1) - evaluator.reach(tau, M2)) - slack
            report.bound('reach-lipschitz-in-norm', '|r(tau, M1) - r(tau, M2)| <= (T - tau)|M1 - M2|',
                         instance, excess, LIPSCHITZ_SLACK + reach_tol)

        _guard(report, 'reach-lipschitz-in-norm', '|r(tau, M1) - r(tau, M2)| <= (T - tau)|M1 - M2|',
               instance, lipschitz_pair)

    for M in M_values:
        if M <= 0:
            continue

        def along_time(M=M):
            values = [evaluator.reach(tau, M) for tau in taus]
            for (t1, r1), (t2, r2) in zip(zip(taus, values), zip(taus[1:], values[1:])):
                report.strict('reach-increasing-in-time', 'tau -> r(tau, M) strictly increasing',
                              _instance(M=M, tau1=t1, tau2=t2), r2 - r1, reach_tol)

        _guard(report, 'reach-increasing-in-time', 'tau -> r(tau, M) strictly increasing', _instance(M=M),
               along_time)

    norm_results = {}

    def norm_at(r, tau):
        key = (r, tau)
        if key not in norm_results:
            norm_results[key] = optimal_norm(case.domain, grid, tau, r, tol_M=settings.tol_M,
                                             tol_bvp=settings.tol_bvp, evaluator=evaluator)
        return norm_results[key]

    def norm_monotonicity():
        tau = taus[0]
        ms = [norm_at(r, tau).M_star for r in radii]
        for (r1, m1), (r2, m2) in zip(zip(radii, ms), zip(radii[1:], ms[1:])):
            report.strict('norm-decreasing-in-radius', 'r -> M(r, tau) strictly decreasing',
                          _instance(tau=tau, r1=r1, r2=r2), m1 - m2, settings.tol_M)
        r = radii[len(radii) // 2]
        ms = [norm_at(r, tau).M_star for tau in taus]
        for (t1, m1), (t2, m2) in zip(zip(taus, ms), zip(taus[1:], ms[1:])):
            report.strict('norm-increasing-in-time', 'tau -> M(r, tau) strictly increasing',
                          _instance(r=r, tau1=t1, tau2=t2), m2 - m1, settings.tol_M)

    _guard(report, 'norm-monotonicity', 'M(r, tau) monotone', _instance(), norm_monotonicity)

    n = settings.n_instances
    for k in range(n):
        tau = taus[k % len(taus)]
        r = radii[k % len(radii)]
        M = [m for m in M_values if m > 0][k % max(1, sum(m > 0 for m in M_values))]
        _guard(report, 'inverse-identities', 'inverse identities', _instance(k=k, tau=tau, r=r, M=M),
               lambda tau=tau, r=r, M=M: _inverse_identities(report, case, settings, evaluator, norm_at,
                                                               tau, r, M))
    return report


def _inverse_identities(report, case, settings, evaluator, norm_at, tau, r, M):
    grid = case.grid
    half_cell = 0.5 * grid.dt

    # r = r(tau, M(r, tau))
    result = norm_at(r, tau)
    report.bound('reach-of-optimal-norm', 'r = r(tau, M(r, tau))', _instance(tau=tau, r=r),
                 abs(evaluator.reach(tau, result.M_star) - r), result.value_budget)

    # M = M(r(tau, M), tau)
    r_of_M = evaluator.reach(tau, M)
    if 0.0 < r_of_M < evaluator.r_T:
        recovered = norm_at(r_of_M, tau).M_star
        delta = max(1e-3 * M, 10.0 * settings.tol_M)
        slope = abs(evaluator.reach(tau, M - delta) - evaluator.reach(tau, M + delta)) / (2.0 * delta)
        budget = settings.tol_M + 4.0 * settings.tol_bvp / max(slope, 1e-300)
        report.bound('norm-of-reach', 'M = M(r(tau, M), tau)', _instance(tau=tau, M=M),
                     abs(recovered - M), budget, detail=f"local slope {slope:.6g}")

    # tau = tau(M(r, tau), r)
    m_star = result.M_star
    time_result = optimal_time(case.domain, grid, m_star, r, tol_tau=settings.tol_tau,
                               tol_bvp=settings.tol_bvp, evaluator=evaluator)
    report.bound('time-of-optimal-norm', 'tau = tau(M(r, tau), r)', _instance(tau=tau, r=r),
                 abs(time_result.tau_star_snapped - tau), half_cell)

    # M = M(r, tau(M, r)) for M >= M(r, t_start)
    m_floor = norm_at(r, grid.t_start).M_star
    M_big = max(M, m_floor)
    time_result = optimal_time(case.domain, grid, M_big, r, tol_tau=settings.tol_tau,
                               tol_bvp=settings.tol_bvp, evaluator=evaluator)
    tau_s = time_result.tau_star_snapped
    recovered = norm_at(r, tau_s).M_star
    index = grid.snap_index(tau_s)
    if index + 1 < grid.n_steps:
        jump = norm_at(r, grid.node(index + 1)).M_star - recovered
    else:
        # Activation saturates at the last cell; no larger norm is distinguishable
        jump = M_big - recovered
    report.bound('norm-of-optimal-time', 'M = M(r, tau(M, r))', _instance(M=M_big, r=r),
                 abs(recovered - M_big), abs(jump) + 2.0 * settings.tol_M,
                 detail=f"grid jump {jump:.6g}")

    # r = r(tau(M, r), M) for r in [r(t_start, M), r_T)
    r_start = evaluator.reach(grid.t_start, M)
    r_mid = r_start + 0.5 * (evaluator.r_T - r_start)
    time_result = optimal_time(case.domain, grid, M, r_mid, tol_tau=settings.tol_tau,
                               tol_bvp=settings.tol_bvp, evaluator=evaluator)
    report.bound('reach-of-optimal-time', 'r = r(tau(M, r), M)', _instance(M=M, r=r_mid),
                 abs(time_result.reach - r_mid), time_result.value_budget)

    # tau = tau(M, r(tau, M))
    if 0.0 < r_of_M < evaluator.r_T:
        time_result = optimal_time(case.domain, grid, M, r_of_M, tol_tau=settings.tol_tau,
                                   tol_bvp=settings.tol_bvp, evaluator=evaluator)
        report.bound('time-of-reach', 'tau = tau(M, r(tau, M))', _instance(tau=tau, M=M),
                     abs(time_result.tau_star_snapped - tau), half_cell)


def _bang_bang(report: VerificationReport, label: str, instance: dict, control: ControlTrajectory, M: float):
    start = control.first_active_cell
    norms = control.norms()[start:]
    defect = float(np.max(np.abs(norms - M))) if norms.size else 0.0
    report.bound('bang-bang', f'||u(t)|| = M on the active window ({label})', instance, defect,
                 BANG_BANG_TOL * M)


def _pairwise(report: VerificationReport, cycle: str, instance: dict, controls: dict, M: float):
    names = list(controls)
    for i, first in enumerate(names):
        for second in names[i + 1:]:
            distance = controls[first].l2_distance(controls[second])
            report.bound(f'{cycle}-{first}-{second}', 'the three problems share one optimal control',
                         instance, distance, CYCLE_TOL * M)


def check_equivalence(case: VerificationCase, settings: VerificationSettings) -> VerificationReport:
    """Solve each of the three problems, map its value to the other two and compare controls."""
    report = VerificationReport()
    grid = case.grid
    evaluator = case.evaluator(settings)
    r_T = evaluator.r_T
    taus = case.tau_nodes(settings)
    M_values = [m * case.M_unit(r_T) for m in settings.M_multiples if m > 0]

    def solve_op(tau, M, scheme='sweep'):
        return solve_bvp(case.domain, grid, tau, M, case.y0, case.z_d, tol=settings.tol_bvp, scheme=scheme)

    def solve_np(r, tau):
        return optimal_norm(case.domain, grid, tau, r, tol_M=settings.tol_M, tol_bvp=settings.tol_bvp,
                            evaluator=case.evaluator(settings))

    def solve_tp(M, r):
        return optimal_time(case.domain, grid, M, r, tol_tau=settings.tol_tau, tol_bvp=settings.tol_bvp,
                            evaluator=case.evaluator(settings))

    for k in range(settings.n_instances):
        tau = taus[k % len(taus)]
        M = M_values[k % len(M_values)]
        r_fraction = settings.r_fractions[k % len(settings.r_fractions)]

        def from_target(tau=tau, M=M, k=k):
            instance = _instance(k=k, tau=tau, M=M)
            # Same scheme as the bisections so the mapped radius is feasible at tau
            op = solve_op(tau, M, scheme='frank-wolfe')
            r = op.reach_distance
            np_result = solve_np(r, tau)
            tp_result = solve_tp(M, r)
            _bang_bang(report, 'target', instance, op.control, M)
            _bang_bang(report, 'norm', instance, np_result.control, np_result.M_star)
            _bang_bang(report, 'time', instance, tp_result.control, M)
            _pairwise(report, 'cycle-from-target', instance,
                      {'op': op.control, 'np': np_result.control, 'tp': tp_result.control}, M)

        def from_norm(tau=tau, r_fraction=r_fraction, k=k):
            r = r_fraction * r_T
            instance = _instance(k=k, tau=tau, r=r)
            np_result = solve_np(r, tau)
            M_star = np_result.M_star
            op = solve_op(tau, M_star)
            tp_result = solve_tp(M_star, r)
            _bang_bang(report, 'norm', instance, np_result.control, M_star)
            _bang_bang(report, 'target', instance, op.control, M_star)
            _bang_bang(report, 'time', instance, tp_result.control, M_star)
            _pairwise(report, 'cycle-from-norm', instance,
                      {'np': np_result.control, 'op': op.control, 'tp': tp_result.control}, M_star)

        def from_time(M=M, r_fraction=r_fraction, k=k):
            r_start = evaluator.reach(grid.t_start, M)
            r = r_start + r_fraction * (r_T - r_start)
            instance = _instance(k=k, M=M, r=r)
            tp_result = solve_tp(M, r)
            op = solve_op(tp_result.tau_star_snapped, M)
            # Map with the radius actually achieved at the snapped activation time
            np_result = solve_np(op.reach_distance, tp_result.tau_star_snapped)
            _bang_bang(report, 'time', instance, tp_result.control, M)
            _bang_bang(report, 'target', instance, op.control, M)
            _bang_bang(report, 'norm', instance, np_result.control, np_result.M_star)
            _pairwise(report, 'cycle-from-time', instance,
                      {'tp': tp_result.control, 'op': op.control, 'np': np_result.control}, M)

        _guard(report, 'cycle-from-target', 'the three problems share one optimal control',
               _instance(k=k, tau=tau, M=M), from_target)
        _guard(report, 'cycle-from-norm', 'the three problems share one optimal control',
               _instance(k=k, tau=tau, r=r_fraction * r_T), from_norm)
        _guard(report, 'cycle-from-time', 'the three problems share one optimal control',
               _instance(k=k, M=M, r_fraction=r_fraction), from_time)

    def degenerate():
        tau = taus[0]
        result = optimal_norm(case.domain, grid, tau, r_T, tol_M=settings.tol_M, tol_bvp=settings.tol_bvp,
                              evaluator=evaluator)
        report.bound('degenerate-radius-norm', 'r = r_T needs the null control', _instance(tau=tau),
                     result.M_star + result.control.sup_norm(), 0.0)
        report.bound('degenerate-radius-reach', 'r(tau, M(r_T, tau)) = r_T', _instance(tau=tau),
                     abs(evaluator.reach(tau, result.M_star) - r_T), R_T_TOL * max(1.0, r_T))

    _guard(report, 'degenerate-radius', 'r = r_T needs the null control', _instance(), degenerate)
    return report


def _random_competitor(rng: np.random.Generator, control: ControlTrajectory, M: float) -> ControlTrajectory:
    """Admissible control: zero before tau, ||v_i|| <= M on active cells."""
    values = np.zeros_like(control.values)
    start = control.first_active_cell
    shape = values[start:].shape
    directions = rng.standard_normal(shape)
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = M * rng.uniform(0.0, 1.0, size=shape[0]) ** (1.0 / shape[1])
    # Every other competitor hugs the sphere
    if rng.uniform() < 0.5:
        radii[:] = M
    values[start:] = directions * radii[:, None]
    return ControlTrajectory(control.grid, control.tau, values)


def check_optimality_system(case: VerificationCase, settings: VerificationSettings) -> VerificationReport:
    """Maximum condition against random competitors plus the norm and time optimality systems."""
    report = VerificationReport()
    grid = case.grid
    domain = case.domain
    evaluator = case.evaluator(settings)
    r_T = evaluator.r_T
    taus = case.tau_nodes(settings)
    rng = np.random.default_rng(settings.seed + 1)

    for k in range(settings.n_instances):
        tau = taus[k % len(taus)]
        r = settings.r_fractions[k % len(settings.r_fractions)] * r_T
        instance = _instance(k=k, tau=tau, r=r)

        def norm_system(tau=tau, r=r, instance=instance):
            result = optimal_norm(domain, grid, tau, r, tol_M=settings.tol_M, tol_bvp=settings.tol_bvp,
                                  evaluator=evaluator)
            solution = result.solution
            gaps = [solution.max_condition_gap(domain, _random_competitor(rng, solution.control, result.M_star))
                    for _ in range(settings.n_competitors)]
            report.bound('maximum-condition', 'int <chi_w psi, u - v> dt >= 0 for admissible v', instance,
                         -min(gaps), MAX_CONDITION_TOL, detail=f"{len(gaps)} competitors")
            _optimality_triplet(report, 'norm', instance, domain, case.y0, case.z_d, solution,
                                result.M_star, r, result.value_budget)

        _guard(report, 'norm-optimality-system', 'optimality system of the norm problem', instance, norm_system)

    M_values = [m * case.M_unit(r_T) for m in settings.M_multiples if m > 0]
    for k in range(min(settings.n_instances, len(M_values))):
        M = M_values[k]

        def time_system(M=M, k=k):
            r_start = evaluator.reach(grid.t_start, M)
            r = r_start + 0.5 * (r_T - r_start)
            instance = _instance(k=k, M=M, r=r)
            result = optimal_time(domain, grid, M, r, tol_tau=settings.tol_tau, tol_bvp=settings.tol_bvp,
                                  evaluator=evaluator)
            _optimality_triplet(report, 'time', instance, domain, case.y0, case.z_d, result.solution, M, r,
                                result.value_budget)

        _guard(report, 'time-optimality-system', 'optimality system of the time problem', _instance(k=k, M=M),
               time_system)
    return report


def _optimality_triplet(report, label, instance, domain, y0, z_d, solution, M, r, budget):
    grid = solution.control.grid
    report.bound(f'{label}-terminal-radius', '||y*(T) - z_d|| = r', instance,
                 abs(solution.reach_distance - r), budget)

    start = solution.control.first_active_cell
    rows = (cell_weights(domain, grid)[start:] * solution.psi.terminal) @ domain.gram
    expected = M * rows / np.linalg.norm(rows, axis=1)[:, None]
    report.bound(f'{label}-control-form', 'u* = M chi_w psi / ||chi_w psi|| on (tau, T)', instance,
                 float(np.max(np.abs(solution.control.values[start:] - expected))), BANG_BANG_TOL * M)

    y = np.asarray(y0, dtype=float).copy()
    worst = 0.0
    for i in range(grid.n_steps):
        y = advance_cell(domain, y, solution.control.values[i], grid.dt)
        worst = max(worst, float(np.linalg.norm(y - solution.phi.at(i + 1))))
    report.bound(f'{label}-state-match', 'y* is the forward state of u*', instance, worst,
                 1e-12 * max(1.0, float(np.linalg.norm(z_d))))


def check_feedback_law(case: VerificationCase, settings: VerificationSettings) -> VerificationReport:
    """Norm condition, constancy of N along optimal trajectories, and closed-loop behavior."""
    report = VerificationReport()
    domain = case.domain
    r_T = ReachEvaluator(domain, case.grid, case.y0, case.z_d, tol=settings.tol_bvp).r_T
    r = settings.r_fractions[len(settings.r_fractions) // 2] * r_T
    coarse = TimeGrid(case.grid.t_start, case.grid.t_end, settings.feedback_steps)

    def scenario_on(grid):
        return FeedbackScenario(r=r, t0=grid.t_start, y0=case.y0, z_d=case.z_d, grid=grid,
                                tol_M=settings.tol_M, tol_bvp=settings.tol_bvp)

    def norm_condition():
        scenario = scenario_on(coarse)
        reference = open_loop_reference(domain, scenario)
        N = reference.M_star
        instance = _instance(r=r, N=N, n_steps=coarse.n_steps)
        evaluator = ReachEvaluator(domain, coarse, case.y0, case.z_d, tol=settings.tol_bvp)
        report.bound('norm-condition', '||y^N(T) - z_d|| = min(r, free miss)', instance,
                     abs(reference.reach - min(r, r_T)), reference.value_budget)
        for factor in (0.99, 1.01):
            miss = abs(evaluator.reach(coarse.t_start, factor * N) - r)
            report.strict('norm-condition-sharp', 'the norm condition fails away from N',
                          _instance(r=r, M=factor * N), miss, 2.0 * settings.tol_bvp)

        trajectory = reference.solution.phi
        for fraction in (0.25, 0.5, 0.75):
            index = coarse.snap_index(coarse.t_start + fraction * coarse.horizon)
            t_s = coarse.node(index)
            N_s = optimal_norm_value(domain, scenario, t_s, trajectory.at(index))
            report.bound('norm-constant-along-optimal-trajectory', 'N(s, y(s)) = N(t0, y0)',
                         _instance(r=r, s=t_s), abs(N_s - N), FEEDBACK_N_TOL * N)

        ratios = feedback_lipschitz_ratios(domain, scenario, coarse.t_start, case.y0, seed=settings.seed)
        worst = float(ratios.max(initial=0.0)) if np.all(np.isfinite(ratios)) else math.inf
        report.bound('feedback-lipschitz-ratio', 'F(t0, .) locally Lipschitz (sampled)', instance,
                     worst, settings.feedback_lipschitz_cap, detail=f"{ratios.size} sampled pairs")

    def closed_loop():
        excess = []
        for grid in (coarse, coarse.refined(1)):
            scenario = scenario_on(grid)
            run = simulate_closed_loop(domain, scenario)
            reference = open_loop_reference(domain, scenario)
            instance = _instance(r=r, n_steps=grid.n_steps)
            budget = reference.value_budget
            report.bound('closed-loop-terminal', '||y_F(T) - z_d|| <= r', instance,
                         run.terminal_miss - r, budget)
            report.bound('closed-loop-norm-constant', 'N constant along the closed loop', instance,
                         run.norm_variation(), FEEDBACK_N_TOL * run.initial_norm)
            report.bound('closed-loop-bang-bang', '||F(t, y(t))|| = N along the closed loop', instance,
                         float(np.nanmax(np.abs(run.control.norms() - run.n_values))),
                         BANG_BANG_TOL * run.initial_norm)
            report.bound('closed-loop-matches-open-loop', 'closed loop reproduces the open-loop optimum',
                         instance, trajectory_gap(run.states, reference.solution.phi), 1e-6 * max(1.0, r_T))
            excess.append((max(run.terminal_miss - r, 0.0), budget))
        (coarse_excess, coarse_budget), (fine_excess, fine_budget) = excess
        floor = max(coarse_budget, fine_budget)
        report.bound('closed-loop-refinement', 'terminal excess shrinks under grid refinement',
                     _instance(r=r, n_steps=coarse.n_steps),
                     fine_excess - max(coarse_excess / REFINEMENT_FACTOR, floor), 0.0)

    _guard(report, 'feedback-norm-condition', 'norm condition of the feedback law', _instance(r=r), norm_condition)
    _guard(report, 'feedback-closed-loop', 'closed-loop optimality', _instance(r=r), closed_loop)
    return report


CHECKS: tuple[tuple[str, Callable[[VerificationCase, VerificationSettings], VerificationReport]], ...] = (
    ('monotone-maps', check_monotone_maps),
    ('equivalence', check_equivalence),
    ('optimality-system', check_optimality_system),
    ('feedback-law', check_feedback_law),
)


def run_all(case: VerificationCase, settings: VerificationSettings,
            checks=CHECKS) -> VerificationReport:
    """Run every check concurrently and assemble the report in a fixed order."""
    logger.info(f"Running {len(checks)} verification groups with {settings.max_workers} workers")
    report = VerificationReport()
    with ThreadPoolExecutor(max_workers=max(1, settings.max_workers)) as pool:
        futures = [(name, pool.submit(check, case, settings)) for name, check in checks]
        for name, future in futures:
            try:
                part = future.result()
            except HeatControlError as e:
                logger.error(f"Verification group {name} raised {type(e).__name__}: {e}")
                part = VerificationReport()
                part.error(name, 'verification group', _instance(), e)
            summary = part.summary()
            logger.info(f"Verification group {name}: {summary[PASS]} pass, {summary[WARN]} warn, "
                        f"{summary[FAIL]} fail")
            report.extend(part)
    summary = report.summary()
    log = logger.info if report.passed else logger.error
    log(f"Verification finished: {summary[PASS]}/{summary['total']} pass, {summary[FAIL]} fail")
    return report
