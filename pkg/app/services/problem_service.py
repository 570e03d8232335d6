"""Orchestration of the CLI subcommands.

Each ``solve_*`` method builds the domain, grid and fields from the
configuration, runs one solver, queues its result files on the export service
and returns the summary dictionary that ends up in ``summary.json``.
"""
import logging

from .bvp_service import free_distance, solve_bvp
from .config_service import ConfigService
from .export_service import N_PER_STEP_HEADER, ExportService
from .feedback_service import FeedbackScenario, open_loop_reference, simulate_closed_loop, trajectory_gap
from .norm_search_service import optimal_norm
from .time_search_service import optimal_time
from .verification_service import VerificationCase, run_all

logger = logging.getLogger(__name__)

SOLVE_OP = 'solve-op'
SOLVE_NP = 'solve-np'
SOLVE_TP = 'solve-tp'
FEEDBACK_SIM = 'feedback-sim'
VERIFY = 'verify'
SUBCOMMANDS = (SOLVE_OP, SOLVE_NP, SOLVE_TP, FEEDBACK_SIM, VERIFY)


class ProblemService:
    """Runs one subcommand against the active configuration."""

    def __init__(self, config_service_instance: ConfigService, export_service_instance: ExportService,
                 refine: int = 0):
        self.config_service = config_service_instance
        self.export_service = export_service_instance
        self.refine = refine
        self.config = config_service_instance.problem_config()
        self.domain = config_service_instance.build_domain()
        self.grid = config_service_instance.build_grid(refine)
        self.y0 = config_service_instance.build_field(self.domain, 'y0')
        self.z_d = config_service_instance.build_field(self.domain, 'z_d')
        self.r_T = free_distance(self.domain, self.grid, self.y0, self.z_d)
        logger.info(f"Problem: N={self.domain.num_modes}, omega={self.domain.omega}, "
                    f"n_steps={self.grid.n_steps}, r_T={self.r_T:.12g}")

    def run(self, subcommand: str) -> dict:
        handlers = {
            SOLVE_OP: self.solve_op,
            SOLVE_NP: self.solve_np,
            SOLVE_TP: self.solve_tp,
            FEEDBACK_SIM: self.feedback_sim,
            VERIFY: self.verify,
        }
        if subcommand not in handlers:
            raise ValueError(f"Unknown subcommand {subcommand!r}")
        summary = self._base_summary(subcommand)
        summary.update(handlers[subcommand]())
        self.export_service.add_json('summary.json', summary)
        return summary

    def _base_summary(self, subcommand: str) -> dict:
        return {
            'subcommand': subcommand,
            'inputs': self.config_service.get_config(),
            'grid': {'t_start': self.grid.t_start, 'T': self.grid.t_end, 'n_steps': self.grid.n_steps,
                     'dt': self.grid.dt, 'refine': self.refine},
            'r_T': self.r_T,
        }

    @staticmethod
    def _solution_summary(solution) -> dict:
        return {
            'iterations': solution.iterations,
            'residual': solution.residual,
            'duality_gap': solution.duality_gap,
            'bang_bang_defect': solution.bang_bang_defect(),
            'scheme': solution.scheme,
        }

    def solve_op(self) -> dict:
        config = self.config
        solution = solve_bvp(self.domain, self.grid, config.tau, config.M, self.y0, self.z_d,
                             tol=config.tol_bvp, max_iter=config.max_iter, scheme=config.scheme)
        self.export_service.add_control('control.csv', solution.control)
        self.export_service.add_state('state.csv', solution.phi)
        logger.info(f"r(tau={solution.tau:.6g}, M={config.M:.6g}) = {solution.reach_distance:.12g}")
        return {'tau': solution.tau, 'M': config.M, 'r': solution.reach_distance,
                **self._solution_summary(solution)}

    def solve_np(self) -> dict:
        config = self.config
        result = optimal_norm(self.domain, self.grid, config.tau, config.r, M0=config.M0, tol_M=config.tol_M,
                              tol_bvp=config.tol_bvp, y0=self.y0, z_d=self.z_d, k_max=config.k_max)
        self.export_service.add_control('control.csv', result.control)
        if result.solution is not None:
            self.export_service.add_state('state.csv', result.solution.phi)
        self.export_service.add_trace('trace.csv', result.trace)
        summary = {
            'tau': result.tau,
            'r': config.r,
            'M_star': result.M_star,
            'reach': result.reach,
            'value_budget': result.value_budget,
            'halvings': len(result.trace.bracket_history),
            'final_width': result.trace.final_tolerance,
            'K': result.trace.K,
            'M0': result.trace.M0,
        }
        if result.solution is not None:
            summary.update(self._solution_summary(result.solution))
        return summary

    def solve_tp(self) -> dict:
        config = self.config
        result = optimal_time(self.domain, self.grid, config.M, config.r, tol_tau=config.tol_tau,
                              tol_bvp=config.tol_bvp, y0=self.y0, z_d=self.z_d)
        self.export_service.add_control('control.csv', result.control)
        self.export_service.add_state('state.csv', result.solution.phi)
        self.export_service.add_trace('trace.csv', result.trace)
        return {
            'M': config.M,
            'r': config.r,
            'r_start': result.r_start,
            'tau_star': result.tau_star,
            'tau_star_snapped': result.tau_star_snapped,
            'reach': result.reach,
            'value_budget': result.value_budget,
            'local_slope': result.local_slope,
            'halvings': len(result.trace.bracket_history),
            'final_width': result.trace.final_tolerance,
            **self._solution_summary(result.solution),
        }

    def feedback_sim(self) -> dict:
        config = self.config
        t0 = self.grid.snap(config.t0)
        if t0 != config.t0:
            logger.info(f"t0={config.t0} snapped to grid node {t0}")
        scenario = FeedbackScenario(r=config.r, t0=t0, y0=self.y0, z_d=self.z_d, grid=self.grid,
                                    tol_M=config.tol_M, tol_bvp=config.tol_bvp, tau=config.feedback_tau)
        run = simulate_closed_loop(self.domain, scenario)
        self.export_service.add_state('closed_loop.csv', run.states)
        self.export_service.add_control('control.csv', run.control)
        n_rows = [(t, n, m) for t, n, m in zip(run.states.grid.nodes[:-1], run.n_values,
                                               run.masked_adjoint_norms)]
        self.export_service.add_csv('n_per_step.csv', N_PER_STEP_HEADER, n_rows)

        summary = {
            't0': t0,
            'r': config.r,
            'activation_time': run.control.tau,
            'N0': run.initial_norm,
            'norm_variation': run.norm_variation(),
            'terminal_miss': run.terminal_miss,
            'cold_restarts': run.cold_restarts,
        }
        reference = open_loop_reference(self.domain, scenario)
        if reference is not None and reference.solution is not None:
            summary['open_loop_M_star'] = reference.M_star
            summary['open_loop_gap'] = trajectory_gap(run.states, reference.solution.phi)
        return summary

    def verify(self) -> dict:
        case = VerificationCase(self.domain, self.grid, self.y0, self.z_d)
        report = run_all(case, self.config_service.verification_settings())
        self.export_service.add_json('report.json', report.to_dict())
        return {'verification': report.summary(), 'passed': report.passed}
