import numpy as np
import pytest

from lattice_heatsink.config import OptimizationConfig
from lattice_heatsink.materials import synthetic_bcc_table


def channel_config(P_in=1.0, slip=True, refinement=4, length=50e-3, width=50e-3):
    """Straight full-width channel: ports span the whole edge, no plenums."""
    cfg = OptimizationConfig()
    cfg.physics.L_x, cfg.physics.L_y = length, width
    cfg.domain.inlet_width = width
    cfg.domain.plenum_depth = 0.0
    cfg.domain.wall_slip = slip
    cfg.domain.mesh_refinement = refinement
    cfg.run.P_in = P_in
    return cfg


def small_config(P_in=10.0, refinement=2):
    """10 x 10 unit cells on a full (non-mirrored) 25 mm square."""
    cfg = OptimizationConfig()
    cfg.physics.L_x = cfg.physics.L_y = 25e-3
    cfg.domain.symmetry = False
    cfg.domain.mesh_refinement = refinement
    cfg.run.P_in = P_in
    return cfg


@pytest.fixture
def table():
    return synthetic_bcc_table()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
