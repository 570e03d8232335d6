"""Shared fixtures: small desk instances of the controlled heat equation."""
import json
from dataclasses import dataclass

import numpy as np
import pytest

from app.services.bvp_service import ReachEvaluator
from app.services.spectral_service import Field, SpectralDomain, TimeGrid, build_domain


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale checks (deselect with -m 'not slow')")


@dataclass(frozen=True)
class Instance:
    domain: SpectralDomain
    grid: TimeGrid
    y0: Field
    z_d: Field

    def evaluator(self, tol: float = 1e-10) -> ReachEvaluator:
        return ReachEvaluator(self.domain, self.grid, self.y0, self.z_d, tol=tol)

    @property
    def r_T(self) -> float:
        return self.evaluator().r_T


def make_instance(num_modes=4, n_steps=40, omega=(0.2, 0.8), t_end=1.0, y0=None, z_d=None) -> Instance:
    domain = build_domain(omega, num_modes)
    grid = TimeGrid(0.0, t_end, n_steps)
    if y0 is None:
        y0 = np.zeros(num_modes)
        y0[0] = 1.0
    if z_d is None:
        z_d = np.array([0.3, -0.2, 0.1, 0.05, -0.02, 0.01, 0.005, -0.002][:num_modes])
    return Instance(domain, grid, np.asarray(y0, dtype=float), np.asarray(z_d, dtype=float))


@pytest.fixture
def small():
    """N = 4 modes, 40 cells, omega = (0.2, 0.8)."""
    return make_instance()


@pytest.fixture
def tiny():
    """N = 3 modes, 20 cells: cheap enough for nested bisections."""
    return make_instance(num_modes=3, n_steps=20)


@pytest.fixture
def small_config(tmp_path):
    """A flat config file describing a quick instance for the CLI."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "num_modes": 4,
        "n_steps": 20,
        "y0": [1.0],
        "z_d": [0.3, -0.2, 0.1, 0.05],
        "r": 0.3,
        "M": 8.0,
        "tau": 0.0,
        "verify_competitors": 10,
        "verify_lipschitz_pairs": 3,
        "verify_instances": 2,
        "verify_feedback_steps": 10,
        "verify_workers": 2,
    }))
    return str(path)
