"""Coupled energy balance of the thermal-fluid layer and the base plate.

Unknowns are the temperature rises ``theta = T - T_in`` of the bulk fluid (T0) and of
the base-plate centre plane (Tb0), both element-centred. Per unit volume::

    rho c_p div(v theta0) - div(k grad theta0) + h/(2 H_t) (theta0 - theta_b) = 0
    -k_s lap(theta_b)     + h/(2 H_b) (theta_b - theta0) = q_s/(2 H_b)   (heated area)

The advective flux is written in conservative, upwinded form so the discrete energy
budget closes exactly. Inlet faces carry T_in (Dirichlet), outlet faces let heat leave
by advection only (zero diffusive flux), and every other edge is adiabatic.

The module also hosts the through-thickness profile functions of the reduced model.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import polynomial as P

from .config import PhysicalParams
from .grid import BoundarySpec, FlowState, Mesh, ThermalState


class ThermalSolveError(RuntimeError):
    """The energy system could not be solved (singular or non-finite)."""


# -------------------------------------------------------------- thickness profiles

# (T_w - T) / (T_w - T0) as a polynomial in zeta = z / H_t, lowest power first
_G_COEFFS = tuple(Fraction(35, 416) * c for c in (13, 8, -6, 0, 1))
_U_COEFFS = (Fraction(3, 2), 0, Fraction(-3, 2))  # v / v_bar


def velocity_profile(zeta):
    """Parabolic velocity shape, normalised so its thickness average is 1."""
    return P.polyval(np.asarray(zeta, dtype=float), [float(c) for c in _U_COEFFS])


def temperature_profile(zeta):
    """Normalised temperature deficit g = (T_w - T)/(T_w - T0) across the channel."""
    return P.polyval(np.asarray(zeta, dtype=float), [float(c) for c in _G_COEFFS])


def bulk_weighted_mean_exact() -> Fraction:
    """Exact velocity-weighted average of g over zeta in [-1, 1] (equals 1)."""
    prod = [Fraction(0)] * (len(_G_COEFFS) + len(_U_COEFFS) - 1)
    for i, a in enumerate(_U_COEFFS):
        for j, b in enumerate(_G_COEFFS):
            prod[i + j] += a * b
    # integral over [-1, 1] of zeta^n is 2/(n+1) for even n and 0 for odd n
    total = sum(c * Fraction(2, n + 1) for n, c in enumerate(prod) if n % 2 == 0)
    return total / 2


def bulk_weighted_mean(n_points: int = 16) -> float:
    """Same average by Gauss-Legendre quadrature (exact for these polynomial degrees)."""
    z, w = np.polynomial.legendre.leggauss(n_points)
    return float(0.5 * np.sum(w * velocity_profile(z) * temperature_profile(z)))


# ---------------------------------------------------------------- discretization


@dataclass
class _Faces:
    left: np.ndarray  # element on the negative side, -1 for a boundary ghost
    right: np.ndarray
    vel: np.ndarray  # index of the face velocity in the flow state vector
    h: float  # spacing normal to the face


class ThermalDiscretization:
    """Sparse assembly of the two-layer energy equations on a fixed mesh.

    ``heated`` marks the elements under the heat flux (defaults to all elements).
    ``upwind_smoothing`` (m/s) regularises |F| in the upwind weights so the residual
    is differentiable in the velocity; it is kept far below any resolved velocity.
    """

    def __init__(self, mesh: Mesh, bc: BoundarySpec, physics: PhysicalParams,
                 heated: np.ndarray | None = None, upwind_smoothing: float = 1e-7):
        self.mesh, self.bc, self.physics = mesh, bc, physics
        self.delta = upwind_smoothing
        nx, ny = mesh.nx, mesh.ny
        self.N = nx * ny
        self.heated = np.ones((nx, ny), bool) if heated is None else np.asarray(heated, bool)
        if self.heated.shape != (nx, ny):
            raise ValueError("heated mask does not match the mesh")
        E = np.arange(self.N).reshape(nx, ny)
        nu = (nx + 1) * ny
        IU = np.arange(nu).reshape(nx + 1, ny)
        IV = nu + np.arange(nx * (ny + 1)).reshape(nx, ny + 1)

        self.xf = _Faces(E[:-1].ravel(), E[1:].ravel(), IU[1:nx].ravel(), mesh.hx)
        self.yf = _Faces(E[:, :-1].ravel(), E[:, 1:].ravel(), IV[:, 1:ny].ravel(), mesh.hy)
        jin = np.nonzero(bc.inlet)[0]
        jout = np.nonzero(bc.outlet)[0]
        self.inlet = _Faces(np.full(jin.size, -1), E[0, jin], IU[0, jin], mesh.hx)
        self.outlet = _Faces(E[nx - 1, jout], np.full(jout.size, -1), IU[nx, jout], mesh.hx)
        self.n_flow = nu + nx * (ny + 1) + nx * ny

    # -- helpers

    def _abs(self, F):
        return np.sqrt(F * F + self.delta**2)

    def _check(self, k, h):
        k = np.asarray(k, dtype=float).ravel()
        h = np.asarray(h, dtype=float).ravel()
        if k.size != self.N or h.size != self.N:
            raise ValueError("k and h must be element fields matching the mesh")
        if np.any(k <= 0) or np.any(h <= 0):
            raise ThermalSolveError("need k > 0 and h > 0 in every element (h = 0 decouples the base plate)")
        return k, h

    @staticmethod
    def _harmonic(a, b):
        return 2.0 * a * b / (a + b)

    # -- assembly

    def matrix(self, x_flow, k, h) -> sp.csr_matrix:
        k, h = self._check(k, h)
        N, ph = self.N, self.physics
        rc = ph.rho_f * ph.c_pf
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(np.broadcast_to(v, np.shape(r)))

        for f in (self.xf, self.yf):
            F = x_flow[f.vel]
            a = self._abs(F)
            cL = rc * 0.5 * (F + a)
            cR = rc * 0.5 * (F - a)
            D = self._harmonic(k[f.left], k[f.right]) / f.h
            L, R = f.left, f.right
            # flux leaves L and enters R
            for sign, row in ((1.0, L), (-1.0, R)):
                add(row, L, sign * (cL + D) / f.h)
                add(row, R, sign * (cR - D) / f.h)

        f = self.inlet
        F = x_flow[f.vel]
        cR = rc * 0.5 * (F - self._abs(F))
        Db = 2.0 * k[f.right] / f.h
        add(f.right, f.right, -(cR - Db) / f.h)

        f = self.outlet
        add(f.left, f.left, rc * x_flow[f.vel] / f.h)

        # base plate: k_s Laplacian with adiabatic edges
        for f in (self.xf, self.yf):
            c = ph.k_s / f.h**2
            L, R = N + f.left, N + f.right
            add(L, L, c)
            add(L, R, -c)
            add(R, R, c)
            add(R, L, -c)

        # interlayer exchange
        e = np.arange(N)
        ct, cb = h / (2.0 * ph.H_t), h / (2.0 * ph.H_b)
        add(e, e, ct)
        add(e, N + e, -ct)
        add(N + e, N + e, cb)
        add(N + e, e, -cb)

        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * N, 2 * N)
        )

    def rhs(self) -> np.ndarray:
        b = np.zeros(2 * self.N)
        b[self.N:] = self.physics.q_s / (2.0 * self.physics.H_b) * self.heated.ravel()
        return b

    def solve(self, x_flow, k, h) -> tuple[np.ndarray, spla.SuperLU]:
        A = self.matrix(x_flow, k, h).tocsc()
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise ThermalSolveError(f"energy system is singular: {exc}") from exc
        theta = lu.solve(self.rhs())
        if not np.all(np.isfinite(theta)):
            raise ThermalSolveError("energy solve produced non-finite temperatures")
        return theta, lu

    def to_state(self, theta) -> ThermalState:
        shape = (self.mesh.nx, self.mesh.ny)
        T_in = self.bc.T_in
        return ThermalState(T0=T_in + theta[: self.N].reshape(shape), Tb0=T_in + theta[self.N:].reshape(shape))

    # -- partial derivatives of R(theta) = A theta - b, used by the adjoint

    def dres_dflow(self, theta, x_flow) -> sp.csr_matrix:
        ph = self.physics
        rc = ph.rho_f * ph.c_pf
        rows, cols, vals = [], [], []
        for f in (self.xf, self.yf):
            F = x_flow[f.vel]
            a = self._abs(F)
            tL, tR = theta[f.left], theta[f.right]
            g = rc * (0.5 * (tL + tR) - 0.5 * F / a * (tR - tL)) / f.h
            rows += [f.left, f.right]
            cols += [f.vel, f.vel]
            vals += [g, -g]
        f = self.inlet
        F = x_flow[f.vel]
        tR = theta[f.right]
        g = rc * (0.5 * tR - 0.5 * F / self._abs(F) * tR) / f.h
        rows.append(f.right)
        cols.append(f.vel)
        vals.append(-g)
        f = self.outlet
        rows.append(f.left)
        cols.append(f.vel)
        vals.append(rc * theta[f.left] / f.h)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * self.N, self.n_flow)
        )

    def dres_dk(self, theta, k, dh) -> sp.csr_matrix:
        """d R / d k_e, including the dependence of h on k through ``dh`` = dh/dk."""
        k = np.asarray(k, dtype=float).ravel()
        dh = np.asarray(dh, dtype=float).ravel()
        N, ph = self.N, self.physics
        rows, cols, vals = [], [], []
        for f in (self.xf, self.yf):
            L, R = f.left, f.right
            kL, kR = k[L], k[R]
            jump = (theta[L] - theta[R]) / f.h**2  # flux per unit face conductivity, per volume
            dL = 2.0 * kR**2 / (kL + kR) ** 2
            dR = 2.0 * kL**2 / (kL + kR) ** 2
            rows += [L, L, R, R]
            cols += [L, R, L, R]
            vals += [jump * dL, jump * dR, -jump * dL, -jump * dR]
        f = self.inlet
        rows.append(f.right)
        cols.append(f.right)
        vals.append(2.0 * theta[f.right] / f.h**2)
        e = np.arange(N)
        diff = theta[:N] - theta[N:]
        rows += [e, N + e]
        cols += [e, e]
        vals += [dh * diff / (2.0 * ph.H_t), -dh * diff / (2.0 * ph.H_b)]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * N, N)
        )

    # -- diagnostics

    def advected_heat(self, theta, x_flow) -> float:
        """Net enthalpy outflow through the ports, W per unit layer thickness."""
        ph = self.physics
        rc = ph.rho_f * ph.c_pf
        F = x_flow[self.inlet.vel]
        tR = theta[self.inlet.right]
        inflow = rc * (0.5 * F * tR - 0.5 * self._abs(F) * tR)
        outflow = rc * x_flow[self.outlet.vel] * theta[self.outlet.left]
        return float((outflow.sum() - inflow.sum()) * self.mesh.hy)

    def heat_input(self) -> float:
        """Total imposed heat flow q_s * A_heated, W."""
        return float(self.physics.q_s * self.heated.sum() * self.mesh.element_area)


def solve_thermal(mesh: Mesh, flow: FlowState, k, h, bc: BoundarySpec, physics: PhysicalParams,
                  heated: np.ndarray | None = None) -> ThermalState:
    """Bulk-fluid and base-plate temperatures for a given flow field and (k, h) fields."""
    disc = ThermalDiscretization(mesh, bc, physics, heated)
    theta, _ = disc.solve(flow.to_vector(), k, h)
    return disc.to_state(theta)


def energy_balance_residual(flow: FlowState, thermal: ThermalState, physics: PhysicalParams,
                            mesh: Mesh, bc: BoundarySpec, heated: np.ndarray | None = None) -> float:
    """Relative mismatch between the heat put in and the enthalpy carried out by the fluid."""
    disc = ThermalDiscretization(mesh, bc, physics, heated)
    q_in = disc.heat_input()
    if q_in == 0.0:
        return 0.0
    theta = np.concatenate([(thermal.T0 - bc.T_in).ravel(), (thermal.Tb0 - bc.T_in).ravel()])
    q_out = disc.advected_heat(theta, flow.to_vector()) * 2.0 * physics.H_t
    return abs(q_in - q_out) / q_in
