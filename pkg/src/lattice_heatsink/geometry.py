"""Rebuild the body-centred-cubic strut lattice of a design and export it.

Each lattice cell contributes eight struts from its centre to its corners, once per
stacked layer. Nodes are keyed on integer half-cell coordinates, so corners shared
by neighbouring cells merge exactly. Half-domain designs are mirrored about the
symmetry line before reconstruction.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import DesignField
from .materials import ProjectionParams, diameter_from_gamma2, heaviside_project

log = logging.getLogger(__name__)

BEAM_HEADER = ["xa", "ya", "za", "xb", "yb", "zb", "d"]
_CORNERS = np.array([(dx, dy, dz) for dx in (-1, 1) for dy in (-1, 1) for dz in (-1, 1)])

STL_DTYPE = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])


@dataclass
class BeamGraph:
    nodes: np.ndarray  # (n, 3) m
    struts: np.ndarray  # (m, 2) node indices
    diameters: np.ndarray  # (m,) m
    cells: np.ndarray | None = None  # (m, 3) source (ix, iy, layer); not kept by the CSV format

    @property
    def n_struts(self) -> int:
        return len(self.struts)

    @classmethod
    def empty(cls) -> "BeamGraph":
        return cls(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64), np.zeros(0), np.zeros((0, 3), dtype=np.int64))


def mirror_design(design: DesignField) -> DesignField:
    """Full-width design from a half-domain one whose last row touches the symmetry line."""
    return DesignField(np.concatenate([design.gamma1, design.gamma1[:, ::-1]], axis=1),
                       np.concatenate([design.gamma2, design.gamma2[:, ::-1]], axis=1))


def reconstruct_lattice(design: DesignField, cell_size: float, d_min: float, d_max: float,
                        n_layers_z: int = 2, threshold: float = 0.5, symmetry: bool = True,
                        projection: ProjectionParams = ProjectionParams()) -> BeamGraph:
    """Strut graph of every cell whose projected indicator is below ``threshold``.

    Coordinates start at the inlet-side corner of the design domain, with z = 0 on the
    base plate.
    """
    design.check()
    if n_layers_z < 1:
        raise ValueError("n_layers_z must be >= 1")
    full = mirror_design(design) if symmetry else design
    g1hat, _ = heaviside_project(full.gamma1, projection)
    diam = diameter_from_gamma2(full.gamma2, d_min, d_max)
    lattice = np.argwhere(g1hat < threshold)  # row-major (ix, iy) order
    if lattice.size == 0:
        log.warning("design has no lattice cells; the strut graph is empty")
        return BeamGraph.empty()

    index: dict[tuple[int, int, int], int] = {}
    keys: list[tuple[int, int, int]] = []
    struts, dias, cells = [], [], []

    def node(key):
        if key not in index:
            index[key] = len(keys)
            keys.append(key)
        return index[key]

    for ix, iy in lattice:
        for layer in range(n_layers_z):
            c = (2 * ix + 1, 2 * iy + 1, 2 * layer + 1)
            ic = node(c)
            for off in _CORNERS:
                struts.append((ic, node((c[0] + off[0], c[1] + off[1], c[2] + off[2]))))
                dias.append(diam[ix, iy])
                cells.append((ix, iy, layer))
    nodes = np.array(keys, dtype=float) * (0.5 * cell_size)
    return BeamGraph(nodes, np.array(struts, dtype=np.int64), np.array(dias, dtype=float),
                     np.array(cells, dtype=np.int64))


def export_beams(graph: BeamGraph, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BEAM_HEADER)
        for (a, b), d in zip(graph.struts, graph.diameters):
            w.writerow([repr(float(v)) for v in (*graph.nodes[a], *graph.nodes[b], d)])


def import_beams(path: str | Path) -> BeamGraph:
    """Read a beam CSV back; nodes are numbered in order of first appearance."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != BEAM_HEADER:
            raise ValueError(f"{path}: expected header {','.join(BEAM_HEADER)}")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        g = BeamGraph.empty()
        g.cells = None
        return g
    index: dict[tuple[float, float, float], int] = {}
    struts, dias = [], []
    for row in rows:
        ends = []
        for pt in (tuple(row[0:3]), tuple(row[3:6])):
            ends.append(index.setdefault(pt, len(index)))
        struts.append(ends)
        dias.append(row[6])
    return BeamGraph(np.array(list(index), dtype=float), np.array(struts, dtype=np.int64), np.array(dias))


def stl_triangle_count(n_struts: int, sides: int) -> int:
    return n_struts * (2 * sides + 2 * (sides - 2))


def _prism_triangles(a, b, radius, sides):
    axis = b - a
    length = np.linalg.norm(axis)
    if length == 0:
        raise ValueError("zero-length strut")
    t = axis / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(t, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(t, e1)
    ang = 2.0 * np.pi * np.arange(sides) / sides
    ring = radius * (np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2))
    ra, rb = a + ring, b + ring
    nxt = np.roll(np.arange(sides), -1)
    tris = []
    for i in range(sides):
        j = nxt[i]
        tris.append((ra[i], ra[j], rb[j]))
        tris.append((ra[i], rb[j], rb[i]))
    for i in range(1, sides - 1):  # fan caps, outward-facing
        tris.append((ra[0], ra[i + 1], ra[i]))
        tris.append((rb[0], rb[i], rb[i + 1]))
    return np.array(tris)


def export_stl(graph: BeamGraph, path: str | Path, sides: int = 16) -> int:
    """Binary STL of capped prisms, one per strut. Returns the triangle count."""
    if sides < 3:
        raise ValueError("need at least 3 sides per strut")
    if graph.n_struts == 0:
        raise ValueError("cannot tessellate an empty strut graph")
    verts = np.concatenate([
        _prism_triangles(graph.nodes[a], graph.nodes[b], 0.5 * d, sides)
        for (a, b), d in zip(graph.struts, graph.diameters)
    ])
    normals = np.cross(verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0])
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, norm, out=np.zeros_like(normals), where=norm > 0)
    data = np.zeros(len(verts), dtype=STL_DTYPE)
    data["normal"] = normals
    data["v"] = verts
    header = b"lattice heat sink struts".ljust(80, b"\0")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.uint32(len(data)).tobytes())
        fh.write(data.tobytes())
    return len(data)


def read_stl_count(path: str | Path) -> int:
    raw = Path(path).read_bytes()
    n = int(np.frombuffer(raw, dtype="<u4", count=1, offset=80)[0])
    if len(raw) != 84 + 50 * n:
        raise ValueError(f"{path}: size does not match its triangle count {n}")
    return n
