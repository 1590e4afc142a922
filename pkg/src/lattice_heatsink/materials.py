"""Lattice property curves, Darcy-Forchheimer fitting, RAMP interpolation and projection.

Conventions: ``gamma1 = 1`` is void (open channel), ``gamma1 = 0`` is lattice;
``gamma2`` is the beam diameter normalized to ``[d_min, d_max]``. Property
interpolation always takes the *projected* indicator ``gamma1_hat``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .config import PhysicalParams

TABLE_COLUMNS = ("gamma2", "eps_por", "k_por", "alpha_por", "beta_por")

# Reference RVE fit used to pin the synthetic default table.
PINNED_GAMMA2 = 0.6
PINNED_ALPHA = 30756.0  # Pa s / m^2
PINNED_BETA = 225360.0  # Pa s^2 / m^3


@dataclass(frozen=True)
class ContinuationSchedule:
    q_k_stages: tuple[float, ...] = (1.0, 5.0, 10.0, 50.0)
    q_f_stages: tuple[float, ...] = (50.0, 10.0, 5.0, 1.0)
    stage_length: int = 50

    def __post_init__(self):
        if len(self.q_k_stages) != len(self.q_f_stages) or not self.q_k_stages:
            raise ValueError("q_k and q_f schedules need the same non-zero number of stages")
        if self.stage_length < 1:
            raise ValueError("stage_length must be >= 1")

    def stage(self, iteration: int) -> int:
        """Stage index for a 0-based design iteration; the last stage persists."""
        return min(iteration // self.stage_length, len(self.q_k_stages) - 1)

    def at(self, iteration: int) -> tuple[float, float]:
        s = self.stage(iteration)
        return self.q_k_stages[s], self.q_f_stages[s]


@dataclass(frozen=True)
class ProjectionParams:
    beta: float = 1.0
    eta: float = 0.5

    def __post_init__(self):
        if not self.beta > 0 or not 0 < self.eta < 1:
            raise ValueError("projection requires beta > 0 and 0 < eta < 1")


class LatticePropertyTable:
    """Sampled lattice curves gamma2 -> (eps_por, k_por, alpha_por, beta_por).

    Between samples the curves are interpolated with monotone piecewise-cubic
    (PCHIP) splines, so monotone data stays monotone.
    """

    def __init__(self, gamma2, eps_por, k_por, alpha_por, beta_por,
                 d_min: float = 0.3e-3, d_max: float = 1.3e-3):
        cols = [np.asarray(c, dtype=float) for c in (gamma2, eps_por, k_por, alpha_por, beta_por)]
        self.gamma2, self.eps_por, self.k_por, self.alpha_por, self.beta_por = cols
        self.d_min, self.d_max = float(d_min), float(d_max)
        self._validate()
        self._splines = {
            name: PchipInterpolator(self.gamma2, getattr(self, name), extrapolate=True)
            for name in TABLE_COLUMNS[1:]
        }
        self._derivs = {name: s.derivative() for name, s in self._splines.items()}

    def _validate(self) -> None:
        g = self.gamma2
        n = len(g)
        if n < 2 or any(len(c) != n for c in (self.eps_por, self.k_por, self.alpha_por, self.beta_por)):
            raise ValueError("property table needs >= 2 rows of equal length")
        if np.any(np.diff(g) <= 0):
            raise ValueError("gamma2 samples must be strictly increasing")
        if abs(g[0]) > 1e-12 or abs(g[-1] - 1) > 1e-12:
            raise ValueError("gamma2 samples must span [0, 1]")
        if np.any(self.eps_por <= 0) or np.any(self.eps_por >= 1):
            raise ValueError("eps_por must lie in (0, 1)")
        if np.any(np.diff(self.eps_por) > 0):
            raise ValueError("eps_por must be non-increasing in gamma2")
        for name in ("k_por", "alpha_por", "beta_por"):
            col = getattr(self, name)
            if np.any(col <= 0):
                raise ValueError(f"{name} must be positive")
            if np.any(np.diff(col) < 0):
                raise ValueError(f"{name} must be non-decreasing in gamma2")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")

    def __call__(self, gamma2) -> tuple[np.ndarray, ...]:
        g = np.clip(np.asarray(gamma2, dtype=float), 0.0, 1.0)
        return tuple(self._splines[n](g) for n in TABLE_COLUMNS[1:])

    def derivative(self, gamma2) -> tuple[np.ndarray, ...]:
        g = np.clip(np.asarray(gamma2, dtype=float), 0.0, 1.0)
        return tuple(self._derivs[n](g) for n in TABLE_COLUMNS[1:])

    # -- CSV ------------------------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_COLUMNS)
            for row in zip(self.gamma2, self.eps_por, self.k_por, self.alpha_por, self.beta_por):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path, d_min: float = 0.3e-3, d_max: float = 1.3e-3):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != TABLE_COLUMNS:
                raise ValueError(f"{path}: header must be {','.join(TABLE_COLUMNS)}")
            rows = [[float(r[c]) for c in TABLE_COLUMNS] for r in reader]
        if not rows:
            raise ValueError(f"{path}: no rows")
        return cls(*np.array(rows).T, d_min=d_min, d_max=d_max)


def gamma2_from_diameter(d, d_min: float, d_max: float):
    d = np.asarray(d, dtype=float)
    if np.any(d < d_min - 1e-15) or np.any(d > d_max + 1e-15):
        raise ValueError(f"diameter outside [{d_min}, {d_max}]")
    return (d - d_min) / (d_max - d_min)


def diameter_from_gamma2(gamma2, d_min: float, d_max: float):
    g = np.asarray(gamma2, dtype=float)
    if np.any(g < 0) or np.any(g > 1):
        raise ValueError("gamma2 outside [0, 1]")
    return d_min + g * (d_max - d_min)


def bcc_relative_density(d, cell_size: float):
    """Solid fraction of a BCC cell: 8 half-diagonal struts minus a node-overlap term."""
    x = np.asarray(d, dtype=float) / cell_size
    return np.sqrt(3.0) * np.pi * x**2 - 6.5 * x**3


def synthetic_bcc_table(physics: PhysicalParams | None = None, cell_size: float = 2.5e-3,
                        d_min: float = 0.3e-3, d_max: float = 1.3e-3,
                        n_samples: int = 11) -> LatticePropertyTable:
    """Analytic stand-in for RVE data on a BCC lattice.

    Porosity follows the strut-volume estimate above, conductivity the
    axial-strut bound ``k_s * rho / 3``, and the drag coefficients carry the
    Ergun dependence on porosity and strut diameter,
    ``alpha ~ (1-eps)^2 / (eps^3 d^2)`` and ``beta ~ (1-eps) / (eps^3 d)``,
    scaled so that gamma2 = 0.6 reproduces alpha = 30756, beta = 225360.
    """
    phys = physics or PhysicalParams()
    g = np.linspace(0.0, 1.0, n_samples)
    if not np.any(np.isclose(g, PINNED_GAMMA2)):
        g = np.sort(np.append(g, PINNED_GAMMA2))

    def curves(gam):
        d = d_min + gam * (d_max - d_min)
        rho = bcc_relative_density(d, cell_size)
        eps = 1.0 - rho
        return eps, rho, rho**2 / (eps**3 * d**2), rho / (eps**3 * d)

    eps, rho, a_shape, b_shape = curves(g)
    _, _, a_pin, b_pin = curves(PINNED_GAMMA2)
    k_por = phys.k_f + (phys.k_s - phys.k_f) * rho / 3.0
    return LatticePropertyTable(g, eps, k_por, PINNED_ALPHA * a_shape / a_pin,
                                PINNED_BETA * b_shape / b_pin, d_min=d_min, d_max=d_max)


def fit_darcy_forchheimer(vbar, neg_dpdx) -> tuple[float, float]:
    """Least-squares fit of ``-dp/dx = alpha v + beta v^2`` with ``alpha, beta >= 0``.

    Both coefficients are fitted jointly; if one comes out negative the
    single-term fits are compared and the better non-negative one is kept.
    """
    v = np.asarray(vbar, dtype=float)
    y = np.asarray(neg_dpdx, dtype=float)
    if v.shape != y.shape or v.size < 2:
        raise ValueError("need at least two (vbar, -dp/dx) samples")
    if np.any(v <= 0):
        raise ValueError("velocities must be positive")
    if np.ptp(v) <= 1e-12 * np.max(v):
        raise ValueError("degenerate samples: all velocities identical")

    A = np.column_stack([v, v**2])
    # column scaling keeps the normal equations well conditioned
    scale = np.linalg.norm(A, axis=0)
    coef, *_ = np.linalg.lstsq(A / scale, y, rcond=None)
    alpha, beta = coef / scale
    if alpha >= 0 and beta >= 0:
        return float(alpha), float(beta)

    candidates = []
    for col in (0, 1):
        c = max(float(A[:, col] @ y) / float(A[:, col] @ A[:, col]), 0.0)
        params = (c, 0.0) if col == 0 else (0.0, c)
        candidates.append((float(np.sum((A[:, col] * c - y) ** 2)), params))
    return min(candidates)[1]


def effective_conductivity_from_rve(q: float, L: float, dT: float, k_f: float, k_s: float):
    """Fourier's-law conductivity of an RVE and its normalized form ``m_k``."""
    if dT == 0:
        raise ValueError("temperature difference must be non-zero")
    if L <= 0:
        raise ValueError("RVE length must be positive")
    k_por = q * L / dT
    return k_por, (k_por - k_f) / (k_s - k_f)


def ramp(gamma, q):
    """RAMP weight (1 - g) / (1 + q g) and its derivative."""
    gamma = np.asarray(gamma, dtype=float)
    den = 1.0 + q * gamma
    return (1.0 - gamma) / den, -(1.0 + q) / den**2


@dataclass
class MaterialFields:
    eps: np.ndarray
    k: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    # partial derivatives w.r.t. the projected indicator and gamma2
    deps_dg1: np.ndarray
    dk_dg1: np.ndarray
    dalpha_dg1: np.ndarray
    dbeta_dg1: np.ndarray
    deps_dg2: np.ndarray
    dk_dg2: np.ndarray
    dalpha_dg2: np.ndarray
    dbeta_dg2: np.ndarray


def interpolate_properties(gamma1_hat, gamma2, table: LatticePropertyTable,
                           q_k: float, q_f: float, physics: PhysicalParams) -> MaterialFields:
    g1 = np.asarray(gamma1_hat, dtype=float)
    eps_p, k_p, a_p, b_p = table(gamma2)
    deps_p, dk_p, da_p, db_p = table.derivative(gamma2)
    k_f, a_f, b_f = physics.k_f, physics.alpha_f, 0.0

    lin = 1.0 - g1
    wk, dwk = ramp(g1, q_k)
    wf, dwf = ramp(g1, q_f)
    return MaterialFields(
        eps=1.0 + (eps_p - 1.0) * lin,
        k=k_f + (k_p - k_f) * wk,
        alpha=a_f + (a_p - a_f) * wf,
        beta=b_f + (b_p - b_f) * wf,
        deps_dg1=-(eps_p - 1.0) * np.ones_like(g1),
        dk_dg1=(k_p - k_f) * dwk,
        dalpha_dg1=(a_p - a_f) * dwf,
        dbeta_dg1=(b_p - b_f) * dwf,
        deps_dg2=deps_p * lin,
        dk_dg2=dk_p * wk,
        dalpha_dg2=da_p * wf,
        dbeta_dg2=db_p * wf,
    )


def heaviside_project(gamma1, params: ProjectionParams = ProjectionParams()):
    """Smoothed Heaviside projection; returns the projected field and its derivative."""
    g = np.asarray(gamma1, dtype=float)
    b, eta = params.beta, params.eta
    den = np.tanh(b * eta) + np.tanh(b * (1.0 - eta))
    proj = (np.tanh(b * eta) + np.tanh(b * (g - eta))) / den
    dproj = b / np.cosh(b * (g - eta)) ** 2 / den
    return proj, dproj


def heat_transfer_coefficients(k, physics: PhysicalParams):
    """Fluid-side, base-side and series-combined interface coefficients (W/m^2/K)."""
    k = np.asarray(k, dtype=float)
    h_t = 35.0 * k / (26.0 * physics.H_t)
    h_b = physics.k_s / physics.H_b
    return h_t, h_b, h_t * h_b / (h_t + h_b)


def dh_dk(k, physics: PhysicalParams):
    h_t, h_b, _ = heat_transfer_coefficients(k, physics)
    return (h_b / (h_t + h_b)) ** 2 * 35.0 / (26.0 * physics.H_t)
