"""Post-processing: Nusselt numbers, binarization, centre-plane fields, solid fraction."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats

from .config import PhysicalParams
from .grid import DesignField, FlowState, ThermalState, UnitGrid, distribute_design
from .materials import LatticePropertyTable, ProjectionParams, heaviside_project, interpolate_properties

# centre-plane temperature = C_W * T_w + C_0 * T0
CENTER_PLANE_COEFFS = (Fraction(-39, 416), Fraction(455, 416))


def bottom_offset(physics: PhysicalParams) -> float:
    """Conduction drop from the base-plate centre plane to its heated surface, q_s H_b / k_s."""
    return physics.q_s * physics.H_b / physics.k_s


def nusselt_metrics(thermal: ThermalState, physics: PhysicalParams, grid: UnitGrid, p: float = 10.0,
                    offset: bool = True) -> tuple[float, float, float]:
    """(Nu_max, Nu_obj, Nu_ave) over the heated footprint, based on the port width.

    ``offset`` shifts the centre-plane base temperature to the bottom surface for the
    max/average metrics; the p-norm metric always uses the centre plane.
    """
    if physics.q_s <= 0:
        raise ValueError("Nusselt numbers need q_s > 0")
    mask = grid.design_mask
    rise = np.asarray(thermal.Tb0, dtype=float)[mask] - physics.T_in
    surf = rise + (bottom_offset(physics) if offset else 0.0)
    K = float(np.mean(np.maximum(rise, 0.0) ** p)) ** (1.0 / p)
    scale = physics.L_in / physics.k_f
    out = []
    for dT in (surf.max(), K, surf.mean()):
        if dT <= 0:
            raise ValueError("base temperature does not exceed T_in; Nusselt number undefined")
        out.append(physics.q_s / dT * scale)
    return tuple(out)


def mnd(gamma1) -> float:
    """Measure of non-discreteness of gamma1, in percent."""
    g = np.asarray(gamma1, dtype=float)
    if g.size == 0:
        raise ValueError("empty design field")
    if np.any(g < 0) or np.any(g > 1):
        raise ValueError("gamma1 must lie in [0, 1]")
    return float(np.mean(4.0 * g * (1.0 - g)) * 100.0)


def center_plane_fields(flow: FlowState, thermal: ThermalState, physics: PhysicalParams,
                        heated: np.ndarray | None = None):
    """Mid-thickness velocity (ux, uy) and temperature of the fluid layer.

    The wall temperature is the base centre-plane value minus the conduction drop over
    half the plate, applied only where the plate is heated.
    """
    ux, uy = flow.cell_velocity()
    Tb0 = np.asarray(thermal.Tb0, dtype=float)
    drop = bottom_offset(physics) * (np.ones(Tb0.shape) if heated is None else np.asarray(heated, float))
    T_w = Tb0 - drop
    cw, c0 = (float(c) for c in CENTER_PLANE_COEFFS)
    return (1.5 * ux, 1.5 * uy), cw * T_w + c0 * np.asarray(thermal.T0, dtype=float)


def solid_fraction(design: DesignField, table: LatticePropertyTable, grid: UnitGrid,
                   projection: ProjectionParams = ProjectionParams()) -> float:
    """Area-averaged solid fraction 1 - eps over the design domain."""
    g1, g2 = distribute_design(design, grid)
    g1hat, _ = heaviside_project(g1, projection)
    eps = interpolate_properties(g1hat, g2, table, 1.0, 1.0, PhysicalParams()).eps
    return float(np.mean((1.0 - eps)[grid.design_mask]))


def pearson_correlation(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("need two 1-D sequences of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("zero variance; correlation undefined")
    return float(stats.pearsonr(x, y).statistic)


@dataclass
class MetricsReport:
    Nu_max: float
    Nu_obj: float
    Nu_ave: float
    u_in: float  # m/s, mean Darcy velocity over the inlet port
    Mnd: float  # percent
    solid_fraction: float
    K: float  # p-norm base temperature rise, K
    Nu_max_center: float  # same metrics without the bottom-surface offset
    Nu_ave_center: float
    energy_balance: float = 0.0

    def to_text(self) -> str:
        return "".join(f"{k} = {float(v)!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        vals = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            vals[key.strip()] = float(raw)
        names = {f.name for f in fields(cls)}
        if set(vals) - names or not {f.name for f in fields(cls) if f.default is not 0.0} <= set(vals):
            raise ValueError("metrics record has missing or unknown keys")
        return cls(**vals)

    @staticmethod
    def csv_header() -> list[str]:
        return [f.name for f in fields(MetricsReport)]

    def csv_row(self) -> list[str]:
        return [repr(float(v)) for v in asdict(self).values()]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())
