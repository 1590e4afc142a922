"""Objective, volume constraint, and discrete adjoint gradients.

The forward chain for one design is

    cells -> elements -> Heaviside projection -> RAMP interpolation -> flow -> (k, h) -> energy

and :class:`DesignEvaluator` runs it, caching the discretizations and warm-starting
each flow solve from the previous converged state. Gradients are exact derivatives of
the assembled discrete residuals: the energy adjoint is solved first and its
sensitivity to the velocity field drives the flow adjoint.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .config import ObjectiveSettings, OptimizationConfig, PhysicalParams
from .flow import FlowDiscretization, FlowSolveSettings, solve_flow
from .grid import (BoundarySpec, DesignField, FlowState, ThermalState, UnitGrid,
                   build_domain, distribute_design, reduce_sensitivity)
from .materials import (LatticePropertyTable, MaterialFields, ProjectionParams, dh_dk,
                        heat_transfer_coefficients, heaviside_project, interpolate_properties)
from .thermal import ThermalDiscretization

log = logging.getLogger(__name__)


def _pnorm_parts(Tb0, T_in, grid: UnitGrid, p: float):
    theta = np.asarray(Tb0, dtype=float) - T_in
    mask = grid.design_mask
    if np.any(theta[mask] < 0):
        log.warning("base temperature below T_in inside the design domain; clamped at 0")
    theta = np.where(mask, np.maximum(theta, 0.0), 0.0)
    weight = mask / mask.sum()  # a_e / A over equal-area elements
    K = float(np.sum(weight * theta**p)) ** (1.0 / p)
    return K, theta, weight


def objective(thermal: ThermalState, settings: ObjectiveSettings, grid: UnitGrid, T_in: float) -> float:
    """p-norm of the base-plate temperature rise over the design domain (K)."""
    return _pnorm_parts(thermal.Tb0, T_in, grid, settings.p_norm)[0]


def objective_gradient_tb(thermal: ThermalState, settings: ObjectiveSettings, grid: UnitGrid,
                          T_in: float) -> np.ndarray:
    """dK/dTb0 per element."""
    p = settings.p_norm
    K, theta, weight = _pnorm_parts(thermal.Tb0, T_in, grid, p)
    if K == 0.0:
        return np.zeros_like(theta)
    return K ** (1.0 - p) * weight * theta ** (p - 1.0)


def volume_constraint(design: DesignField, table: LatticePropertyTable, grid: UnitGrid,
                      volume_fraction: float, projection: ProjectionParams = ProjectionParams(),
                      physics: PhysicalParams | None = None):
    """Solid volume minus its allowance, in m^2 of plan area, with per-cell gradients.

    Porosity interpolates linearly in the projected indicator, so the RAMP parameters
    play no part here.
    """
    physics = physics or PhysicalParams()
    g1, g2 = distribute_design(design, grid)
    g1hat, dproj = heaviside_project(g1, projection)
    mf = interpolate_properties(g1hat, g2, table, 1.0, 1.0, physics)
    area = grid.cell_area / grid.mesh_refinement**2
    mask = grid.design_mask
    g = float(np.sum((1.0 - mf.eps)[mask]) * area - volume_fraction * grid.design_area)
    dg1 = reduce_sensitivity(-mf.deps_dg1 * dproj * area, grid)
    dg2 = reduce_sensitivity(-mf.deps_dg2 * area, grid)
    return g, dg1, dg2


@dataclass
class Evaluation:
    K: float
    flow: FlowState
    thermal: ThermalState
    materials: MaterialFields
    h: np.ndarray
    dK_dg1: np.ndarray | None = None
    dK_dg2: np.ndarray | None = None


class DesignEvaluator:
    """Forward model plus adjoint for one configuration (mesh, boundaries, pressure)."""

    def __init__(self, config: OptimizationConfig, table: LatticePropertyTable,
                 flow_settings: FlowSolveSettings | None = None, P_in: float | None = None):
        self.config = config
        self.table = table
        self.physics = config.physics
        self.grid, bc, self.mesh = build_domain(config)
        if P_in is not None:
            bc = BoundarySpec(bc.inlet, bc.outlet, P_in, bc.P_out, bc.T_in, bc.symmetry, bc.wall_slip)
        self.bc = bc
        s = config.solver
        self.flow_settings = flow_settings or FlowSolveSettings(
            s.nonlinear_tol, s.max_picard_iters, s.under_relaxation, s.velocity_regularization, s.newton)
        self.projection = ProjectionParams(config.projection.beta, config.projection.eta)
        self.flow_disc = FlowDiscretization(self.mesh, bc, self.physics)
        self.thermal_disc = ThermalDiscretization(self.mesh, bc, self.physics, self.grid.design_mask)
        self.warm_start: np.ndarray | None = None

    def materials(self, design: DesignField, q_k: float, q_f: float):
        g1, g2 = distribute_design(design, self.grid)
        g1hat, dproj = heaviside_project(g1, self.projection)
        return interpolate_properties(g1hat, g2, self.table, q_k, q_f, self.physics), dproj

    def evaluate(self, design: DesignField, q_k: float, q_f: float, gradient: bool = False,
                 warm: bool = True) -> Evaluation:
        mf, dproj = self.materials(design, q_k, q_f)
        fd = self.flow_disc
        x0 = self.warm_start if warm else None
        flow = solve_flow(fd, mf.alpha, mf.beta, self.flow_settings, x0=x0)
        x = flow.to_vector()
        self.warm_start = x

        _, _, h = heat_transfer_coefficients(mf.k, self.physics)
        td = self.thermal_disc
        theta, lu_t = td.solve(x, mf.k, h)
        thermal = td.to_state(theta)
        obj = self.config.objective
        K = objective(thermal, obj, self.grid, self.bc.T_in)
        ev = Evaluation(K, flow, thermal, mf, h)
        if not gradient:
            return ev

        N = td.N
        dK_dtheta = np.zeros(2 * N)
        dK_dtheta[N:] = objective_gradient_tb(thermal, obj, self.grid, self.bc.T_in).ravel()
        lam_t = lu_t.solve(dK_dtheta, trans="T")
        dK_dk = -(td.dres_dk(theta, mf.k, dh_dk(mf.k, self.physics)).T @ lam_t)

        eps_v = self.flow_settings.velocity_regularization
        J = fd.jacobian(x, mf.alpha, mf.beta, eps_v)
        rhs = -(td.dres_dflow(theta, x).T @ lam_t)
        lam_f = spla.splu(J).solve(rhs, trans="T")
        dK_dalpha = -(fd.dres_dalpha(x).T @ lam_f)
        dK_dbeta = -(fd.dres_dbeta(x, eps_v).T @ lam_f)

        shape = mf.k.shape
        dK_dk, dK_dalpha, dK_dbeta = (a.reshape(shape) for a in (dK_dk, dK_dalpha, dK_dbeta))
        d_g1hat = dK_dk * mf.dk_dg1 + dK_dalpha * mf.dalpha_dg1 + dK_dbeta * mf.dbeta_dg1
        d_g2 = dK_dk * mf.dk_dg2 + dK_dalpha * mf.dalpha_dg2 + dK_dbeta * mf.dbeta_dg2
        ev.dK_dg1 = reduce_sensitivity(d_g1hat * dproj, self.grid)
        ev.dK_dg2 = reduce_sensitivity(d_g2, self.grid)
        return ev


def gradients(design: DesignField, evaluator: DesignEvaluator, q_k: float, q_f: float):
    """Per-cell (dK/dgamma1, dK/dgamma2) at ``design``."""
    ev = evaluator.evaluate(design, q_k, q_f, gradient=True)
    return ev.dK_dg1, ev.dK_dg2


def write_gradient_csv(path, dK_dg1: np.ndarray, dK_dg2: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ix", "iy", "dK_dg1", "dK_dg2"])
        for ix in range(dK_dg1.shape[0]):
            for iy in range(dK_dg1.shape[1]):
                w.writerow([ix, iy, repr(float(dK_dg1[ix, iy])), repr(float(dK_dg2[ix, iy]))])
