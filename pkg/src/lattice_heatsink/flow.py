"""Thickness-averaged Darcy-Forchheimer-Brinkman flow on a staggered (MAC) grid.

Discrete residual, per unit volume, for each momentum face::

    6/5 rho (div of upwinded momentum flux) + grad p - mu lap(v)
        + alpha v + beta sqrt(|v|^2 + eps_v^2) v = 0

and ``div v = 0`` in every element. Every nonlinear term is a product of sparse
linear maps of the state vector ``x = [u, v, p]``, so the exact Jacobian is
assembled alongside the residual; the adjoint reuses it.

Boundaries: fixed static pressure on the inlet/outlet segments (half control
volumes, zero normal gradient of the normal velocity, zero tangential velocity),
walls with no penetration and no-slip (or free-slip), and a symmetry line on top
of a half domain.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import PhysicalParams
from .grid import BoundarySpec, FlowState, Mesh

log = logging.getLogger(__name__)


class FlowSolveError(RuntimeError):
    """Nonlinear flow iteration failed to converge."""


@dataclass
class FlowSolveSettings:
    nonlinear_tol: float = 1e-6
    max_picard_iters: int = 200
    under_relaxation: float = 0.7
    velocity_regularization: float = 1e-10
    newton: bool = True

    def __post_init__(self):
        if self.nonlinear_tol <= 0 or self.max_picard_iters < 1:
            raise ValueError("nonlinear_tol must be > 0 and max_picard_iters >= 1")
        if not 0 < self.under_relaxation <= 1:
            raise ValueError("under_relaxation must lie in (0, 1]")


class _Coo:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows).ravel()
        cols = np.asarray(cols).ravel()
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape).ravel()
        self.r.append(rows)
        self.c.append(cols)
        self.v.append(vals)

    def tocsr(self, shape):
        if not self.r:
            return sp.csr_matrix(shape)
        return sp.csr_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))), shape=shape
        )


@dataclass
class _ConvBlock:
    """Upwinded flux ``F (L+R)/2 - |F| (R-L)/2`` at a set of flux locations."""

    AF: sp.csr_matrix
    AL: sp.csr_matrix
    AR: sp.csr_matrix
    C: sp.csr_matrix  # scatters fluxes into residual rows (includes 6/5 rho / h)


class FlowDiscretization:
    def __init__(self, mesh: Mesh, bc: BoundarySpec, physics: PhysicalParams,
                 upwind_smoothing: float = 1e-3):
        self.mesh, self.bc, self.physics = mesh, bc, physics
        self.delta = upwind_smoothing  # m/s, smooths |F| in the upwind dissipation
        nx, ny = mesh.nx, mesh.ny
        self.nu = (nx + 1) * ny
        self.nv = nx * (ny + 1)
        self.np_ = nx * ny
        self.n = self.nu + self.nv + self.np_
        self.IU = np.arange(self.nu).reshape(nx + 1, ny)
        self.IV = self.nu + np.arange(self.nv).reshape(nx, ny + 1)
        self.IP = self.nu + self.nv + np.arange(self.np_).reshape(nx, ny)
        self.IE = np.arange(self.np_).reshape(nx, ny)  # element numbering

        self.open_w = np.zeros((nx + 1, ny), bool)
        self.open_w[0, bc.inlet] = True
        self.open_e = np.zeros((nx + 1, ny), bool)
        self.open_e[nx, bc.outlet] = True
        self.u_mom = np.zeros((nx + 1, ny), bool)
        self.u_mom[1:nx] = True
        self.u_mom |= self.open_w | self.open_e
        self.v_mom = np.zeros((nx, ny + 1), bool)
        self.v_mom[:, 1:ny] = True

        self.mom_rows = np.concatenate([self.IU[self.u_mom], self.IV[self.v_mom]])
        self.mass = np.zeros(self.n)  # pseudo-time inertia on momentum rows
        self.mass[self.mom_rows] = 1.2 * physics.rho_f
        self.mass_rows = self.IP.ravel()
        self._build_linear()
        self._build_convection()
        self._build_drag()

    # ------------------------------------------------------------------ assembly

    def _build_linear(self):
        m, bc, mu = self.mesh, self.bc, self.physics.mu_f
        nx, ny, hx, hy = m.nx, m.ny, m.hx, m.hy
        IU, IV, IP = self.IU, self.IV, self.IP
        K = _Coo()
        b = np.zeros(self.n)
        cx, cy = mu / hx**2, mu / hy**2

        # ghost factors for the tangential velocity across each edge
        s_bot = 1.0 if bc.wall_slip else -1.0
        s_top = 1.0 if bc.symmetry else s_bot

        # -- u momentum, y-diffusion (interior and open faces alike)
        uj = np.nonzero(self.u_mom)
        i, j = uj
        rows = IU[i, j]
        for dj, ghost in ((1, s_top), (-1, s_bot)):
            jn = j + dj
            inside = (jn >= 0) & (jn < ny)
            K.add(rows[inside], IU[i[inside], jn[inside]], -cy)
            K.add(rows[inside], rows[inside], cy)
            K.add(rows[~inside], rows[~inside], cy * (1.0 - ghost))

        # -- u momentum, x-diffusion and pressure gradient
        i, j = np.nonzero(self.u_mom & ~self.open_w & ~self.open_e)
        rows = IU[i, j]
        K.add(rows, IU[i + 1, j], -cx)
        K.add(rows, IU[i - 1, j], -cx)
        K.add(rows, rows, 2 * cx)
        K.add(rows, IP[i, j], 1.0 / hx)
        K.add(rows, IP[i - 1, j], -1.0 / hx)

        i, j = np.nonzero(self.open_w)
        rows = IU[i, j]
        K.add(rows, rows, 2 * cx)
        K.add(rows, IU[1, j], -2 * cx)
        K.add(rows, IP[0, j], 2.0 / hx)
        b[rows] += 2.0 * bc.P_in / hx

        i, j = np.nonzero(self.open_e)
        rows = IU[i, j]
        K.add(rows, rows, 2 * cx)
        K.add(rows, IU[nx - 1, j], -2 * cx)
        K.add(rows, IP[nx - 1, j], -2.0 / hx)
        b[rows] -= 2.0 * bc.P_out / hx

        # -- v momentum
        i, j = np.nonzero(self.v_mom)
        rows = IV[i, j]
        K.add(rows, IV[i, j + 1], -cy)
        K.add(rows, IV[i, j - 1], -cy)
        K.add(rows, rows, 2 * cy)
        K.add(rows, IP[i, j], 1.0 / hy)
        K.add(rows, IP[i, j - 1], -1.0 / hy)
        # tangential ghost across west/east edges: zero velocity at ports and
        # no-slip walls, mirrored value at free-slip walls
        for di, ports in ((1, bc.outlet), (-1, bc.inlet)):
            i_n = i + di
            inside = (i_n >= 0) & (i_n < nx)
            K.add(rows[inside], IV[i_n[inside], j[inside]], -cx)
            K.add(rows[inside], rows[inside], cx)
            jo = j[~inside]
            is_port = ports[jo - 1] & ports[jo]
            ghost = np.where(is_port | (not bc.wall_slip), -1.0, 1.0)
            K.add(rows[~inside], rows[~inside], cx * (1.0 - ghost))

        # -- Dirichlet rows (walls, symmetry line)
        fixed = np.concatenate([IU[~self.u_mom], IV[~self.v_mom]])
        K.add(fixed, fixed, 1.0)

        # -- continuity
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        rows = IP[i, j]
        K.add(rows, IU[i + 1, j], 1.0 / hx)
        K.add(rows, IU[i, j], -1.0 / hx)
        K.add(rows, IV[i, j + 1], 1.0 / hy)
        K.add(rows, IV[i, j], -1.0 / hy)

        self.K = K.tocsr((self.n, self.n))
        self.b = b

    def _build_convection(self):
        m = self.mesh
        nx, ny, hx, hy = m.nx, m.ny, m.hx, m.hy
        IU, IV = self.IU, self.IV
        c = 1.2 * self.physics.rho_f
        blocks = []

        def block(n_loc, F, L, R, scatter):
            mats = []
            for terms in (F, L, R):
                A = _Coo()
                for loc, col, w in terms:
                    A.add(loc, col, w)
                mats.append(A.tocsr((n_loc, self.n)))
            C = _Coo()
            for row, loc, w in scatter:
                C.add(row, loc, w * c)
            blocks.append(_ConvBlock(*mats, C.tocsr((self.n, n_loc))))

        # u momentum, x-fluxes at element centres (between u[i] and u[i+1])
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        loc = np.arange(i.size)
        scat = []
        for side, ii, sign in ((0, i, 1.0), (1, i + 1, -1.0)):
            # east face of u-CV i is centre i (+), west face of u-CV i+1 is centre i (-)
            keep = self.u_mom[ii, j]
            half = self.open_w[ii, j] | self.open_e[ii, j]
            w = sign / np.where(half, hx / 2, hx)
            scat.append((IU[ii[keep], j[keep]], loc[keep], w[keep]))
        block(i.size,
              [(loc, IU[i, j], 0.5), (loc, IU[i + 1, j], 0.5)],
              [(loc, IU[i, j], 1.0)],
              [(loc, IU[i + 1, j], 1.0)],
              scat)

        # u momentum, boundary momentum flux u_b^2 through the open segments
        ob = np.nonzero(self.open_w | self.open_e)
        rows = IU[ob]
        loc = np.arange(rows.size)
        sign = np.where(ob[0] == 0, -1.0, 1.0)
        block(rows.size, [(loc, rows, 1.0)], [(loc, rows, 1.0)], [(loc, rows, 1.0)],
              [(rows, loc, sign / (hx / 2))])

        # u momentum, y-fluxes at interior corners (x_i, y_j); F from v, zero on edges
        i, j = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        loc = np.arange(i.size)
        scat = []
        for jj, sign in ((j - 1, 1.0), (j, -1.0)):
            keep = self.u_mom[i, jj]
            scat.append((IU[i[keep], jj[keep]], loc[keep], np.full(keep.sum(), sign / hy)))
        block(i.size,
              [(loc, IV[i - 1, j], 0.5), (loc, IV[i, j], 0.5)],
              [(loc, IU[i, j - 1], 1.0)],
              [(loc, IU[i, j], 1.0)],
              scat)

        # v momentum, y-fluxes at element centres (between v[j] and v[j+1])
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        loc = np.arange(i.size)
        scat = []
        for jj, sign in ((j, 1.0), (j + 1, -1.0)):
            keep = self.v_mom[i, jj]
            scat.append((IV[i[keep], jj[keep]], loc[keep], np.full(keep.sum(), sign / hy)))
        block(i.size,
              [(loc, IV[i, j], 0.5), (loc, IV[i, j + 1], 0.5)],
              [(loc, IV[i, j], 1.0)],
              [(loc, IV[i, j + 1], 1.0)],
              scat)

        # v momentum, x-fluxes at corners (x_i, y_j), i = 0..nx, interior j.
        # Outside the domain the tangential velocity is zero (pure upwind at ports).
        i, j = np.meshgrid(np.arange(nx + 1), np.arange(1, ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        loc = np.arange(i.size)
        has_l, has_r = i > 0, i < nx
        Lterms = [(loc[has_l], IV[i[has_l] - 1, j[has_l]], 1.0)]
        Rterms = [(loc[has_r], IV[i[has_r], j[has_r]], 1.0)]
        scat = [
            (IV[i[has_l] - 1, j[has_l]], loc[has_l], np.full(has_l.sum(), 1.0 / hx)),
            (IV[i[has_r], j[has_r]], loc[has_r], np.full(has_r.sum(), -1.0 / hx)),
        ]
        block(i.size,
              [(loc, IU[i, j - 1], 0.5), (loc, IU[i, j], 0.5)],
              Lterms, Rterms, scat)
        self.conv = blocks

    def _build_drag(self):
        m = self.mesh
        nx, ny = m.nx, m.ny
        IU, IV, IE = self.IU, self.IV, self.IE
        W, T = _Coo(), _Coo()

        i, j = np.nonzero(self.u_mom & ~self.open_w & ~self.open_e)
        rows = IU[i, j]
        W.add(rows, IE[i - 1, j], 0.5)
        W.add(rows, IE[i, j], 0.5)
        for ii in (i - 1, i):
            for jj in (j, j + 1):
                T.add(rows, IV[ii, jj], 0.25)
        for mask, ie in ((self.open_w, 0), (self.open_e, nx - 1)):
            _, j = np.nonzero(mask)
            rows = IU[np.where(mask)]
            W.add(rows, IE[ie, j], 1.0)
            T.add(rows, IV[ie, j], 0.5)
            T.add(rows, IV[ie, j + 1], 0.5)

        i, j = np.nonzero(self.v_mom)
        rows = IV[i, j]
        W.add(rows, IE[i, j - 1], 0.5)
        W.add(rows, IE[i, j], 0.5)
        for ii in (i, i + 1):
            for jj in (j - 1, j):
                T.add(rows, IU[ii, jj], 0.25)

        self.W = W.tocsr((self.n, self.np_))
        self.T = T.tocsr((self.n, self.n))

    # ------------------------------------------------------------ residual/Jacobian

    def _abs(self, F):
        return np.sqrt(F * F + self.delta**2) if self.delta > 0 else np.abs(F)

    def _speed(self, x, eps_v):
        tx = self.T @ x
        return np.sqrt(x * x + tx * tx + eps_v * eps_v), tx

    def residual(self, x, alpha, beta, eps_v):
        r = self.K @ x - self.b
        for blk in self.conv:
            F, L, R = blk.AF @ x, blk.AL @ x, blk.AR @ x
            r += blk.C @ (F * (L + R) * 0.5 - 0.5 * self._abs(F) * (R - L))
        wa, wb = self.W @ alpha.ravel(), self.W @ beta.ravel()
        s, _ = self._speed(x, eps_v)
        return r + (wa + wb * s) * x

    def jacobian(self, x, alpha, beta, eps_v):
        J = self.K.copy()
        for blk in self.conv:
            F, L, R = blk.AF @ x, blk.AL @ x, blk.AR @ x
            aF = self._abs(F)
            dF = 0.5 * (L + R) - 0.5 * (F / aF if self.delta > 0 else np.sign(F)) * (R - L)
            dL = 0.5 * (F + aF)
            dR = 0.5 * (F - aF)
            J = J + blk.C @ (sp.diags(dF) @ blk.AF + sp.diags(dL) @ blk.AL + sp.diags(dR) @ blk.AR)
        wa, wb = self.W @ alpha.ravel(), self.W @ beta.ravel()
        s, tx = self._speed(x, eps_v)
        J = J + sp.diags(wa + wb * s + wb * x * x / s) + sp.diags(wb * x * tx / s) @ self.T
        return J.tocsc()

    def picard_matrix(self, x, alpha, beta, eps_v):
        A = self.K.copy()
        for blk in self.conv:
            F = blk.AF @ x
            aF = self._abs(F)
            A = A + blk.C @ (sp.diags(0.5 * (F + aF)) @ blk.AL + sp.diags(0.5 * (F - aF)) @ blk.AR)
        wa, wb = self.W @ alpha.ravel(), self.W @ beta.ravel()
        s, _ = self._speed(x, eps_v)
        return (A + sp.diags(wa + wb * s)).tocsc()

    def initial_time_step(self, alpha) -> float:
        """Pseudo time step ~ a few cell transit times at the Bernoulli velocity."""
        dp = max(abs(self.bc.P_in - self.bc.P_out), 1e-12)
        speed = np.sqrt(2.0 * dp / self.physics.rho_f)
        drag_time = 1.2 * self.physics.rho_f / float(np.min(alpha))
        return min(10.0 * self.mesh.hx / speed, drag_time)

    def dres_dalpha(self, x) -> sp.csr_matrix:
        return sp.diags(x) @ self.W

    def dres_dbeta(self, x, eps_v) -> sp.csr_matrix:
        s, _ = self._speed(x, eps_v)
        return sp.diags(s * x) @ self.W

    # ------------------------------------------------------------------ helpers

    def residual_norms(self, r, x) -> tuple[float, float]:
        """Relative momentum and mass residuals."""
        bscale = np.linalg.norm(self.b[self.mom_rows])
        vel = np.abs(x[: self.nu + self.nv]).max(initial=0.0)
        mom = np.linalg.norm(r[self.mom_rows]) / bscale if bscale > 0 else np.linalg.norm(r[self.mom_rows])
        mass = np.linalg.norm(r[self.mass_rows]) * self.mesh.hx / vel if vel > 0 else 0.0
        return float(mom), float(mass)

    def to_state(self, x, residual=0.0, iterations=0, converged=True) -> FlowState:
        m = self.mesh
        return FlowState(
            u=x[: self.nu].reshape(m.nx + 1, m.ny).copy(),
            v=x[self.nu : self.nu + self.nv].reshape(m.nx, m.ny + 1).copy(),
            p=x[self.nu + self.nv :].reshape(m.nx, m.ny).copy(),
            residual=residual,
            iterations=iterations,
            converged=converged,
        )


def solve_flow(disc: FlowDiscretization, alpha, beta, settings: FlowSolveSettings = FlowSolveSettings(),
               x0: np.ndarray | None = None, residual_log: list | None = None,
               raise_on_failure: bool = True) -> FlowState:
    """Steady flow for per-element ``alpha``/``beta`` arrays of shape (nx, ny).

    With ``settings.newton`` each step solves ``(J + M/dt) dx = -R`` (pseudo-transient
    Newton, ``M`` the momentum mass matrix). ``dt`` grows with the residual reduction
    and never drops below a floor tied to the cell transit time; a step that blows up
    is undone and the floor halved. A cold start that still fails is retried by
    ramping the driving pressure up in stages. Otherwise under-relaxed Picard
    iterations (lagged convecting flux and Forchheimer speed) are used.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha <= 0) or np.any(beta < 0):
        raise ValueError("need alpha > 0 and beta >= 0 everywhere")
    if not np.any(disc.b):
        return disc.to_state(np.zeros(disc.n))

    x = np.zeros(disc.n) if x0 is None else np.array(x0, dtype=float)
    try:
        if settings.newton:
            x, res, its = _ptc(disc, x, alpha, beta, settings, 1.0, residual_log)
            if res >= settings.nonlinear_tol and x0 is None:
                log.info("cold flow solve stalled (%.2e); ramping the pressure load", res)
                x = np.zeros(disc.n)
                for load in (0.05, 0.2, 0.5, 1.0):
                    x, res, k = _ptc(disc, x, alpha, beta, settings, load, residual_log)
                    its += k
        else:
            x, res, its = _picard(disc, x, alpha, beta, settings, residual_log)
    except RuntimeError as exc:  # singular factor or non-finite iterate
        raise FlowSolveError(f"flow solve failed: {exc}") from exc

    ok = res < settings.nonlinear_tol
    if not ok:
        msg = f"flow solve not converged after {its} iterations (residual {res:.3e})"
        if raise_on_failure:
            raise FlowSolveError(msg)
        log.warning(msg)
    return disc.to_state(x, res, its, ok)


def _norm(disc, r, x):
    return max(disc.residual_norms(r, x))


def _ptc(disc, x, alpha, beta, settings, load, residual_log):
    eps_v = settings.velocity_regularization
    b = disc.b * load
    r = disc.residual(x, alpha, beta, eps_v) + disc.b - b
    res = _norm(disc, r, x) / load
    dt_floor = disc.initial_time_step(alpha) / np.sqrt(load)
    dt = dt_floor if res > 1e-3 else np.inf
    for it in range(settings.max_picard_iters):
        if residual_log is not None:
            residual_log.append((it, res))
        if res < settings.nonlinear_tol:
            return x, res, it
        J = disc.jacobian(x, alpha, beta, eps_v)
        A = J + sp.diags(disc.mass / dt) if np.isfinite(dt) else J
        xt = x + spla.splu(A.tocsc()).solve(-r)
        rt = disc.residual(xt, alpha, beta, eps_v) + disc.b - b
        rest = _norm(disc, rt, xt) / load if np.all(np.isfinite(xt)) else np.inf
        if not np.isfinite(rest) or rest > 10.0 * max(res, 1e-3):
            dt_floor *= 0.5
            dt = dt_floor
            continue
        # switched evolution relaxation, bounded below by the floor
        dt = max(dt_floor, dt * min(3.0, res / rest)) if np.isfinite(dt) else dt
        if rest < 1e-5:
            dt = np.inf
        elif not np.isfinite(dt) and rest > res:
            dt = dt_floor
        x, r, res = xt, rt, rest
    return x, res, settings.max_picard_iters


def _picard(disc, x, alpha, beta, settings, residual_log):
    eps_v = settings.velocity_regularization
    r = disc.residual(x, alpha, beta, eps_v)
    res = _norm(disc, r, x)
    for it in range(settings.max_picard_iters):
        if residual_log is not None:
            residual_log.append((it, res))
        if res < settings.nonlinear_tol:
            return x, res, it
        x_new = spla.splu(disc.picard_matrix(x, alpha, beta, eps_v)).solve(disc.b)
        x = x + settings.under_relaxation * (x_new - x) if it > 0 else x_new
        if not np.all(np.isfinite(x)):
            raise RuntimeError("non-finite Picard iterate")
        r = disc.residual(x, alpha, beta, eps_v)
        res = _norm(disc, r, x)
    return x, res, settings.max_picard_iters


def inlet_mean_velocity(state: FlowState, bc: BoundarySpec, mesh: Mesh) -> float:
    """Mean normal velocity over the inlet segment (equals the full-port value on a half domain)."""
    length = bc.open_length(mesh, "inlet")
    return float(state.u[0, bc.inlet].sum() * mesh.hy / length)


def outlet_mean_velocity(state: FlowState, bc: BoundarySpec, mesh: Mesh) -> float:
    length = bc.open_length(mesh, "outlet")
    return float(state.u[-1, bc.outlet].sum() * mesh.hy / length)
