from fractions import Fraction

import numpy as np
import pytest

from conftest import channel_config, small_config
from lattice_heatsink.flow import FlowDiscretization, FlowSolveSettings, inlet_mean_velocity, solve_flow
from lattice_heatsink.grid import DesignField, build_domain, distribute_design
from lattice_heatsink.materials import heat_transfer_coefficients, interpolate_properties
from lattice_heatsink.metrics import CENTER_PLANE_COEFFS
from lattice_heatsink.thermal import (ThermalDiscretization, ThermalSolveError, bulk_weighted_mean,
                                      bulk_weighted_mean_exact, energy_balance_residual, solve_thermal,
                                      temperature_profile, velocity_profile)
from lattice_heatsink import thermal


def _strip(P_in=50.0):
    cfg = channel_config(P_in=P_in, refinement=2)
    grid, bc, mesh = build_domain(cfg)
    disc = FlowDiscretization(mesh, bc, cfg.physics)
    alpha = np.full((mesh.nx, mesh.ny), cfg.physics.alpha_f)
    flow = solve_flow(disc, alpha, np.zeros_like(alpha))
    return cfg, bc, mesh, flow


def _design_problem(table, seed=0, P_in=10.0):
    cfg = small_config(P_in=P_in)
    grid, bc, mesh = build_domain(cfg)
    rng = np.random.default_rng(seed)
    d = DesignField((rng.random((10, 10)) < 0.5).astype(float), rng.random((10, 10)))
    g1, g2 = distribute_design(d, grid)
    mf = interpolate_properties(g1, g2, table, 1.0, 1.0, cfg.physics)
    flow = solve_flow(FlowDiscretization(mesh, bc, cfg.physics), mf.alpha, mf.beta)
    _, _, h = heat_transfer_coefficients(mf.k, cfg.physics)
    return cfg, grid, bc, mesh, flow, mf.k, h


def test_unforced_system_stays_at_inlet_temperature():
    cfg, bc, mesh, flow = _strip()
    cfg.physics.q_s = 0.0
    k = np.full((mesh.nx, mesh.ny), cfg.physics.k_f)
    st = solve_thermal(mesh, flow, k, np.full_like(k, 500.0), bc, cfg.physics)
    assert np.all(st.T0 == bc.T_in) and np.all(st.Tb0 == bc.T_in)
    assert energy_balance_residual(flow, st, cfg.physics, mesh, bc) == 0.0


def test_one_dimensional_strip_energy_oracle():
    cfg, bc, mesh, flow = _strip()
    ph = cfg.physics
    k = np.full((mesh.nx, mesh.ny), ph.k_f)
    st = solve_thermal(mesh, flow, k, np.full_like(k, 2000.0), bc, ph)
    v = inlet_mean_velocity(flow, bc, mesh)
    rise = ph.q_s * ph.L_x / (ph.rho_f * ph.c_pf * 2 * ph.H_t * v)
    outlet = st.T0[-1].mean() - bc.T_in
    # upwinded outflow carries the last element's temperature
    assert outlet == pytest.approx(rise, rel=0.01)


def test_linear_in_heat_flux(table):
    cfg, grid, bc, mesh, flow, k, h = _design_problem(table)
    a = solve_thermal(mesh, flow, k, h, bc, cfg.physics)
    cfg.physics.q_s *= 2
    b = solve_thermal(mesh, flow, k, h, bc, cfg.physics)
    np.testing.assert_allclose(b.T0 - bc.T_in, 2 * (a.T0 - bc.T_in), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b.Tb0 - bc.T_in, 2 * (a.Tb0 - bc.T_in), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_energy_balance_and_maximum_principle(table, seed):
    cfg, grid, bc, mesh, flow, k, h = _design_problem(table, seed)
    st = solve_thermal(mesh, flow, k, h, bc, cfg.physics)
    assert energy_balance_residual(flow, st, cfg.physics, mesh, bc) < 1e-2
    assert st.T0.min() >= bc.T_in - 1e-9
    assert np.all(st.Tb0 >= st.T0 - 1e-9)


def test_unheated_plenums_get_no_flux(table):
    cfg, grid, bc, mesh, flow, k, h = _design_problem(table)
    heated = np.zeros((mesh.nx, mesh.ny), bool)
    heated[2:-2] = True
    disc = ThermalDiscretization(mesh, bc, cfg.physics, heated)
    assert disc.heat_input() == pytest.approx(cfg.physics.q_s * heated.sum() * mesh.element_area)
    assert np.all(disc.rhs()[disc.N:][~heated.ravel()] == 0)
    st = solve_thermal(mesh, flow, k, h, bc, cfg.physics, heated)
    assert energy_balance_residual(flow, st, cfg.physics, mesh, bc, heated) < 1e-2


def test_unconverged_flow_reports_residual():
    cfg = small_config(P_in=10.0)
    grid, bc, mesh = build_domain(cfg)
    alpha = np.full((mesh.nx, mesh.ny), 2000.0)
    flow = solve_flow(FlowDiscretization(mesh, bc, cfg.physics), alpha, np.zeros_like(alpha),
                      FlowSolveSettings(newton=False, max_picard_iters=1), raise_on_failure=False)
    assert not flow.converged
    k = np.full_like(alpha, cfg.physics.k_f)
    st = solve_thermal(mesh, flow, k, np.full_like(k, 500.0), bc, cfg.physics)
    r = energy_balance_residual(flow, st, cfg.physics, mesh, bc)
    assert np.isfinite(r) and r >= 0


def test_invalid_coefficients_raise():
    cfg, bc, mesh, flow = _strip(P_in=1.0)
    k = np.full((mesh.nx, mesh.ny), cfg.physics.k_f)
    with pytest.raises(ThermalSolveError):
        solve_thermal(mesh, flow, k, np.zeros_like(k), bc, cfg.physics)
    with pytest.raises(ThermalSolveError):
        solve_thermal(mesh, flow, -k, np.ones_like(k), bc, cfg.physics)
    with pytest.raises(ValueError):
        solve_thermal(mesh, flow, k[:-1], np.ones_like(k[:-1]), bc, cfg.physics)


def test_residual_partials_match_finite_differences(table):
    cfg, grid, bc, mesh, flow, k, h = _design_problem(table, P_in=1.0)
    disc = ThermalDiscretization(mesh, bc, cfg.physics)
    x = flow.to_vector()
    theta, _ = disc.solve(x, k, h)
    res = lambda xf, kk, hh: disc.matrix(xf, kk, hh) @ theta - disc.rhs()
    Jf = disc.dres_dflow(theta, x).toarray()
    rng = np.random.default_rng(4)
    for col in rng.choice(disc.mesh.nx * (disc.mesh.ny + 1), 10, replace=False):
        e = np.zeros_like(x)
        e[col] = 1e-7
        fd = (res(x + e, k, h) - res(x - e, k, h)) / 2e-7
        np.testing.assert_allclose(Jf[:, col], fd, rtol=1e-5, atol=1e-6 * np.abs(Jf).max())
    dh = np.full(k.size, 3.0)
    Jk = disc.dres_dk(theta, k, dh).toarray()
    for col in rng.choice(k.size, 10, replace=False):
        e = np.zeros(k.size)
        e[col] = 1e-6
        kp, km = k.ravel() + e, k.ravel() - e
        fd = (res(x, kp, h.ravel() + 3.0 * e) - res(x, km, h.ravel() - 3.0 * e)) / 2e-6
        np.testing.assert_allclose(Jk[:, col], fd, rtol=1e-5, atol=1e-6 * np.abs(Jk).max())


class TestProfileIdentities:
    def test_wall_value_is_zero(self):
        assert abs(temperature_profile(-1.0)) < 1e-12
        # the cover plate at +H_t is adiabatic: zero slope there
        dg = sum(n * c for n, c in enumerate(thermal._G_COEFFS))
        assert dg == 0
        assert sum(c * (-1) ** n for n, c in enumerate(thermal._G_COEFFS)) == 0

    def test_bulk_weighted_mean_is_one(self):
        assert bulk_weighted_mean_exact() == 1
        assert abs(bulk_weighted_mean() - 1.0) < 1e-12

    def test_center_value(self):
        assert thermal._G_COEFFS[0] == Fraction(455, 416)
        assert abs(temperature_profile(0.0) - 455 / 416) < 1e-12

    def test_center_plane_coefficients_sum_to_one(self):
        assert sum(CENTER_PLANE_COEFFS) == 1
        assert abs(sum(float(c) for c in CENTER_PLANE_COEFFS) - 1.0) < 1e-12

    def test_velocity_profile_mean_is_one(self):
        z, w = np.polynomial.legendre.leggauss(8)
        assert abs(0.5 * np.sum(w * velocity_profile(z)) - 1.0) < 1e-12
        assert velocity_profile(0.0) == 1.5
