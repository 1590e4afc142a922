"""Structured domain, design fields, and the cell <-> element density mapping.

The mesh is a uniform grid of square elements covering

    [inlet plenum | design domain | outlet plenum]  in x,
    [0, L_y] (or [0, L_y/2] with the symmetry line on top)  in y.

Each lattice unit cell of the design domain owns ``mesh_refinement**2`` elements.
Element arrays are indexed ``[i, j]`` with ``i`` along the flow (x) direction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, OptimizationConfig, PhysicalParams

_TOL = 1e-9


def _as_count(length: float, step: float, what: str) -> int:
    n = length / step
    if abs(n - round(n)) > 1e-6:
        raise ConfigError(f"{what}: {length:g} m is not a multiple of {step:g} m")
    return int(round(n))


@dataclass(frozen=True)
class UnitGrid:
    cell_size: float
    n_cells_x: int
    n_cells_y: int
    mesh_refinement: int
    symmetry: bool
    plenum_elems: int  # element columns in each plenum
    cell_of_element: np.ndarray  # (nx, ny) flat cell index, -1 outside the design domain

    @property
    def n_cells(self) -> int:
        return self.n_cells_x * self.n_cells_y

    @property
    def cell_area(self) -> float:
        return self.cell_size**2

    @property
    def design_area(self) -> float:
        return self.n_cells * self.cell_area

    @property
    def design_mask(self) -> np.ndarray:
        return self.cell_of_element >= 0


@dataclass(frozen=True)
class Mesh:
    nx: int
    ny: int
    hx: float
    hy: float

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def element_area(self) -> float:
        return self.hx * self.hy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")


@dataclass(frozen=True)
class BoundarySpec:
    """Open segments on the west (inlet) and east (outlet) edges; everything else is wall.

    ``inlet``/``outlet`` are boolean masks over the element rows ``j``. The top edge is
    the symmetry line when ``symmetry`` is set, otherwise a wall.
    """

    inlet: np.ndarray
    outlet: np.ndarray
    P_in: float
    P_out: float
    T_in: float
    symmetry: bool
    wall_slip: bool

    def open_length(self, mesh: Mesh, which: str = "inlet") -> float:
        mask = self.inlet if which == "inlet" else self.outlet
        return float(mask.sum()) * mesh.hy


@dataclass
class DesignField:
    gamma1: np.ndarray  # (n_cells_x, n_cells_y), 1 = void, 0 = lattice
    gamma2: np.ndarray  # normalized beam diameter

    def __post_init__(self):
        self.gamma1 = np.asarray(self.gamma1, dtype=float)
        self.gamma2 = np.asarray(self.gamma2, dtype=float)
        if self.gamma1.shape != self.gamma2.shape or self.gamma1.ndim != 2:
            raise ValueError("gamma1 and gamma2 must be 2-D arrays of equal shape")

    @classmethod
    def uniform(cls, grid: UnitGrid, gamma1: float = 0.0, gamma2: float = 0.0) -> "DesignField":
        shape = (grid.n_cells_x, grid.n_cells_y)
        return cls(np.full(shape, float(gamma1)), np.full(shape, float(gamma2)))

    def check(self, grid: UnitGrid | None = None) -> None:
        if grid is not None and self.gamma1.shape != (grid.n_cells_x, grid.n_cells_y):
            raise ValueError(
                f"design shape {self.gamma1.shape} does not match grid "
                f"({grid.n_cells_x}, {grid.n_cells_y})"
            )
        for arr in (self.gamma1, self.gamma2):
            if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
                raise ValueError("design variables must lie in [0, 1]")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.gamma1.ravel(), self.gamma2.ravel()])

    @classmethod
    def from_vector(cls, x: np.ndarray, shape: tuple[int, int]) -> "DesignField":
        n = shape[0] * shape[1]
        return cls(x[:n].reshape(shape).copy(), x[n:].reshape(shape).copy())

    def copy(self) -> "DesignField":
        return DesignField(self.gamma1.copy(), self.gamma2.copy())


@dataclass
class FlowState:
    """Staggered (MAC) Darcy velocity and cell-centred pressure.

    ``u`` lives on x-normal faces, shape (nx+1, ny); ``v`` on y-normal faces,
    shape (nx, ny+1); ``p`` at element centres, shape (nx, ny).
    """

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    converged: bool = True

    def cell_velocity(self) -> tuple[np.ndarray, np.ndarray]:
        return 0.5 * (self.u[1:] + self.u[:-1]), 0.5 * (self.v[:, 1:] + self.v[:, :-1])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel(), self.p.ravel()])


@dataclass
class ThermalState:
    T0: np.ndarray  # bulk fluid temperature, (nx, ny)
    Tb0: np.ndarray  # base-plate centre-plane temperature, (nx, ny)


def build_domain(config: OptimizationConfig) -> tuple[UnitGrid, BoundarySpec, Mesh]:
    """Construct the unit grid, boundary layout, and element mesh for ``config``."""
    phys: PhysicalParams = config.physics
    dom = config.domain
    width = config.inlet_width
    if width > phys.L_y + _TOL:
        raise ConfigError(f"inlet width {width:g} m exceeds domain edge {phys.L_y:g} m")

    ncx = _as_count(phys.L_x, dom.cell_size, "L_x")
    ncy_full = _as_count(phys.L_y, dom.cell_size, "L_y")
    if dom.symmetry:
        if ncy_full % 2:
            raise ConfigError("symmetric half domain needs an even number of cells across L_y")
        ncy = ncy_full // 2
    else:
        ncy = ncy_full

    r = dom.mesh_refinement
    h = dom.cell_size / r
    n_plen = _as_count(dom.plenum_depth, h, "plenum_depth")
    nx = ncx * r + 2 * n_plen
    ny = ncy * r

    cell = -np.ones((nx, ny), dtype=np.int64)
    ii, jj = np.meshgrid(np.arange(ncx * r), np.arange(ny), indexing="ij")
    cell[n_plen : n_plen + ncx * r, :] = (ii // r) * ncy + jj // r

    # open ports centred on y = L_y / 2 (the top edge of a half domain)
    yc = (np.arange(ny) + 0.5) * h
    mid = phys.L_y / 2
    half = width / 2
    _as_count(mid - half, h, "port edge offset")
    port = np.abs(yc - mid) < half
    if not port.any():
        raise ConfigError("inlet width is narrower than one element")

    grid = UnitGrid(dom.cell_size, ncx, ncy, r, dom.symmetry, n_plen, cell)
    bc = BoundarySpec(
        inlet=port.copy(),
        outlet=port.copy(),
        P_in=config.run.P_in,
        P_out=0.0,
        T_in=phys.T_in,
        symmetry=dom.symmetry,
        wall_slip=dom.wall_slip,
    )
    return grid, bc, Mesh(nx, ny, h, h)


def distribute_design(design: DesignField, grid: UnitGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-element (gamma1, gamma2); plenum elements get the void/fluid state (1, 0)."""
    design.check(grid)
    g1 = np.ones(grid.cell_of_element.shape)
    g2 = np.zeros(grid.cell_of_element.shape)
    mask = grid.design_mask
    g1[mask] = design.gamma1.ravel()[grid.cell_of_element[mask]]
    g2[mask] = design.gamma2.ravel()[grid.cell_of_element[mask]]
    return g1, g2


def reduce_sensitivity(element_sens: np.ndarray, grid: UnitGrid) -> np.ndarray:
    """Sum element sensitivities over each unit cell -> (n_cells_x, n_cells_y)."""
    element_sens = np.asarray(element_sens, dtype=float)
    if element_sens.shape != grid.cell_of_element.shape:
        raise ValueError(
            f"element field shape {element_sens.shape} != mesh {grid.cell_of_element.shape}"
        )
    mask = grid.design_mask
    out = np.bincount(grid.cell_of_element[mask], weights=element_sens[mask], minlength=grid.n_cells)
    return out.reshape(grid.n_cells_x, grid.n_cells_y)


def average_to_cells(element_field: np.ndarray, grid: UnitGrid) -> np.ndarray:
    return reduce_sensitivity(element_field, grid) / grid.mesh_refinement**2


# --------------------------------------------------------------------------- I/O


def write_design_csv(design: DesignField, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ix", "iy", "gamma1", "gamma2"])
        ncx, ncy = design.gamma1.shape
        for ix in range(ncx):
            for iy in range(ncy):
                w.writerow([ix, iy, repr(float(design.gamma1[ix, iy])), repr(float(design.gamma2[ix, iy]))])


def read_design_csv(path: str | Path, shape: tuple[int, int] | None = None) -> DesignField:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"ix", "iy", "gamma1", "gamma2"}:
        raise ValueError(f"{path}: expected header ix,iy,gamma1,gamma2")
    ix = np.array([int(r["ix"]) for r in rows])
    iy = np.array([int(r["iy"]) for r in rows])
    if shape is None:
        shape = (ix.max() + 1, iy.max() + 1)
    if len(rows) != shape[0] * shape[1]:
        raise ValueError(f"{path}: {len(rows)} rows for a {shape[0]}x{shape[1]} grid")
    g1 = np.full(shape, np.nan)
    g2 = np.full(shape, np.nan)
    g1[ix, iy] = [float(r["gamma1"]) for r in rows]
    g2[ix, iy] = [float(r["gamma2"]) for r in rows]
    design = DesignField(g1, g2)
    design.check()
    return design


def write_vtk(path: str | Path, mesh: Mesh, scalars: dict[str, np.ndarray],
              vectors: dict[str, tuple[np.ndarray, np.ndarray]] | None = None) -> None:
    """Legacy ASCII VTK ``STRUCTURED_POINTS`` file with per-element CELL_DATA.

    Points are the element corners (spacing hx, hy, origin at the inlet-side wall);
    cell values are written with x varying fastest, as VTK expects.
    """
    lines = [
        "# vtk DataFile Version 3.0",
        "lattice heat sink fields",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1",
        "ORIGIN 0 0 0",
        f"SPACING {mesh.hx!r} {mesh.hy!r} 1",
        f"CELL_DATA {mesh.n_elements}",
    ]
    for name, arr in scalars.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(a)) for a in np.asarray(arr).T.ravel()]
    for name, (vx, vy) in (vectors or {}).items():
        lines.append(f"VECTORS {name} double")
        lines += [f"{a!r} {b!r} 0.0" for a, b in zip(np.asarray(vx, float).T.ravel(), np.asarray(vy, float).T.ravel())]
    Path(path).write_text("\n".join(lines) + "\n")
