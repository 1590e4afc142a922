import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_heatsink.config import ConfigError, OptimizationConfig
from lattice_heatsink.grid import (DesignField, average_to_cells, build_domain, distribute_design,
                                   read_design_csv, reduce_sensitivity, write_design_csv, write_vtk)


def test_default_domain_is_half_of_20_by_20_cells():
    grid, bc, mesh = build_domain(OptimizationConfig())
    assert (grid.n_cells_x, grid.n_cells_y) == (20, 10)
    assert grid.n_cells == 200
    assert (mesh.nx, mesh.ny) == (20 * 4 + 2 * 4, 40)
    assert mesh.hx == pytest.approx(0.625e-3)
    # the port is 5 mm wide centred on the symmetry line: 2.5 mm = 4 element rows at the top
    assert bc.inlet.sum() == 4 and bc.inlet[-4:].all()
    assert bc.open_length(mesh) == pytest.approx(2.5e-3)


def test_full_domain_and_small_cells():
    cfg = OptimizationConfig()
    cfg.domain.symmetry = False
    grid, bc, _ = build_domain(cfg)
    assert (grid.n_cells_x, grid.n_cells_y) == (20, 20)
    assert bc.inlet.sum() == 8
    cfg.domain.cell_size = 1.25e-3
    cfg.domain.mesh_refinement = 2
    cfg.domain.plenum_depth = 1.25e-3
    grid, _, _ = build_domain(cfg)
    assert (grid.n_cells_x, grid.n_cells_y) == (40, 40)


@pytest.mark.parametrize("attr, value, match", [
    ("cell_size", 3e-3, "not a multiple"),
    ("inlet_width", 60e-3, "exceeds"),
])
def test_inconsistent_domains_fail(attr, value, match):
    cfg = OptimizationConfig()
    setattr(cfg.domain, attr, value)
    with pytest.raises(ConfigError, match=match):
        build_domain(cfg)


def test_every_element_maps_to_one_cell():
    grid, _, _ = build_domain(OptimizationConfig())
    counts = np.bincount(grid.cell_of_element[grid.design_mask], minlength=grid.n_cells)
    assert np.all(counts == 16)
    assert np.all(grid.cell_of_element[:4] == -1) and np.all(grid.cell_of_element[-4:] == -1)


def test_distribute_examples():
    grid, _, _ = build_domain(OptimizationConfig())
    d = DesignField.uniform(grid, 0.3, 0.7)
    g1, g2 = distribute_design(d, grid)
    assert np.all(g1[grid.design_mask] == 0.3) and np.all(g2[grid.design_mask] == 0.7)
    assert np.all(g1[~grid.design_mask] == 1.0) and np.all(g2[~grid.design_mask] == 0.0)

    d = DesignField.uniform(grid)
    d.gamma1[3, 5], d.gamma2[3, 5] = 1.0, 0.0
    g1, _ = distribute_design(d, grid)
    block = g1[4 + 12:4 + 16, 20:24]
    assert np.all(block == 1.0) and g1[grid.design_mask].sum() == 16


def test_checkerboard_matches_element_loop():
    grid, _, _ = build_domain(OptimizationConfig())
    ix, iy = np.meshgrid(np.arange(20), np.arange(10), indexing="ij")
    d = DesignField(((ix + iy) % 2).astype(float), np.zeros((20, 10)))
    g1, _ = distribute_design(d, grid)
    expected = np.ones_like(g1)
    for i in range(g1.shape[0]):
        for j in range(g1.shape[1]):
            if 4 <= i < 84:
                expected[i, j] = ((i - 4) // 4 + j // 4) % 2
    np.testing.assert_array_equal(g1, expected)


def test_reduce_sums_members(rng):
    grid, _, mesh = build_domain(OptimizationConfig())
    ones = reduce_sensitivity(np.ones((mesh.nx, mesh.ny)), grid)
    assert np.all(ones == 16)
    assert np.all(reduce_sensitivity(np.zeros((mesh.nx, mesh.ny)), grid) == 0)
    field = rng.normal(size=(mesh.nx, mesh.ny))
    brute = np.zeros((20, 10))
    for i in range(mesh.nx):
        for j in range(mesh.ny):
            c = grid.cell_of_element[i, j]
            if c >= 0:
                brute[c // 10, c % 10] += field[i, j]
    np.testing.assert_allclose(reduce_sensitivity(field, grid), brute, rtol=1e-13, atol=1e-13)
    with pytest.raises(ValueError):
        reduce_sensitivity(np.ones((3, 3)), grid)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_reduce_is_linear(a, b, seed):
    grid, _, mesh = build_domain(OptimizationConfig())
    r = np.random.default_rng(seed)
    s1, s2 = r.normal(size=(2, mesh.nx, mesh.ny))
    lhs = reduce_sensitivity(a * s1 + b * s2, grid)
    rhs = a * reduce_sensitivity(s1, grid) + b * reduce_sensitivity(s2, grid)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_distribute_then_average_recovers_design(rng):
    grid, _, _ = build_domain(OptimizationConfig())
    d = DesignField(rng.random((20, 10)), rng.random((20, 10)))
    g1, g2 = distribute_design(d, grid)
    np.testing.assert_allclose(average_to_cells(g1, grid), d.gamma1, rtol=0, atol=1e-15)
    np.testing.assert_allclose(average_to_cells(g2, grid), d.gamma2, rtol=0, atol=1e-15)


def test_chain_rule_through_the_density_mapping(rng):
    grid, _, _ = build_domain(OptimizationConfig())
    d = DesignField(rng.random((20, 10)), rng.random((20, 10)))

    def total(design):
        g1, _ = distribute_design(design, grid)
        return np.sum(np.sin(3 * g1[grid.design_mask]))

    g1, _ = distribute_design(d, grid)
    analytic = reduce_sensitivity(np.where(grid.design_mask, 3 * np.cos(3 * g1), 0.0), grid)
    for ix, iy in [(0, 0), (7, 3), (19, 9)]:
        step = 1e-6
        dp, dm = d.copy(), d.copy()
        dp.gamma1[ix, iy] += step
        dm.gamma1[ix, iy] -= step
        fd = (total(dp) - total(dm)) / (2 * step)
        assert abs(fd - analytic[ix, iy]) < 1e-6 * abs(analytic[ix, iy])


def test_design_validation():
    with pytest.raises(ValueError):
        DesignField(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DesignField(np.full((2, 2), 1.5), np.zeros((2, 2))).check()
    grid, _, _ = build_domain(OptimizationConfig())
    with pytest.raises(ValueError, match="does not match"):
        distribute_design(DesignField(np.zeros((3, 3)), np.zeros((3, 3))), grid)


def test_design_csv_round_trip(tmp_path, rng):
    d = DesignField(rng.random((4, 3)), rng.random((4, 3)))
    write_design_csv(d, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "ix,iy,gamma1,gamma2"
    back = read_design_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.gamma1, d.gamma1)
    np.testing.assert_array_equal(back.gamma2, d.gamma2)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_design_csv(tmp_path / "bad.csv")


def test_vtk_layout(tmp_path):
    _, _, mesh = build_domain(OptimizationConfig())
    f = np.arange(mesh.n_elements, dtype=float).reshape(mesh.nx, mesh.ny)
    write_vtk(tmp_path / "f.vtk", mesh, {"f": f}, {"v": (f, -f)})
    lines = (tmp_path / "f.vtk").read_text().splitlines()
    assert lines[4] == f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1"
    assert lines[7] == f"CELL_DATA {mesh.n_elements}"
    start = lines.index("LOOKUP_TABLE default") + 1
    vals = np.array([float(v) for v in lines[start:start + mesh.n_elements]])
    np.testing.assert_array_equal(vals, f.T.ravel())  # x varies fastest
