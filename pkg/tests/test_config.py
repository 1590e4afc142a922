import pytest
from hypothesis import given, settings, strategies as st

from lattice_heatsink.config import (ConfigError, OptimizationConfig, from_ini, load_config,
                                     save_config, to_ini)


def test_defaults_match_reference_properties():
    p = OptimizationConfig().physics
    assert (p.mu_f, p.rho_f, p.k_f, p.c_pf, p.k_s) == (1.004e-3, 998.0, 0.598, 4180.0, 100.0)
    assert (p.q_s, p.T_in) == (1e5, 293.15)
    assert 2 * p.H_t == pytest.approx(5e-3) and 2 * p.H_b == pytest.approx(1e-3)
    assert (p.L_x, p.L_y, p.L_in) == (50e-3, 50e-3, 5e-3)
    assert p.alpha_f == pytest.approx(3 * 1.004e-3 / 2.5e-3**2)


def test_round_trip_is_identity(tmp_path):
    cfg = OptimizationConfig()
    cfg.run.P_in = 50.0
    cfg.domain.cell_size = 1.25e-3
    cfg.lattice.d_max = 0.6e-3
    cfg.continuation.q_k_stages = (1.0, 3.0)
    cfg.continuation.q_f_stages = (9.0, 1.0)
    save_config(cfg, tmp_path / "c.ini")
    again = load_config(tmp_path / "c.ini")
    assert again == cfg
    assert to_ini(again) == to_ini(cfg)


@settings(max_examples=40, deadline=None)
@given(P=st.floats(0.0, 1e4, allow_nan=False), mu=st.floats(1e-6, 1.0), seed=st.integers(0, 2**31))
def test_round_trip_floats_exactly(P, mu, seed):
    cfg = OptimizationConfig()
    cfg.run.P_in, cfg.physics.mu_f, cfg.run.rng_seed = P, mu, seed
    assert from_ini(to_ini(cfg)) == cfg


@pytest.mark.parametrize("text, match", [
    ("[physics]\nmu_F = 1\n", "unknown key"),
    ("[phisics]\nmu_f = 1\n", "unknown section"),
    ("[run]\nP_in = abc\n", "cannot parse"),
    ("[physics]\nk_f = -1\n", "strictly positive"),
    ("[lattice]\nd_min = 2e-3\n", "d_min < d_max"),
    ("[objective]\np_norm = 1\n", "p_norm"),
    ("[continuation]\nq_k_stages = 1, 2\n", "equal"),
    ("not an ini", "section"),
])
def test_bad_input_is_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        from_ini(text)


def test_partial_file_keeps_other_defaults():
    cfg = from_ini("[run]\nP_in = 1.0\n[domain]\nsymmetry = no\n")
    assert cfg.run.P_in == 1.0 and cfg.domain.symmetry is False
    assert cfg.physics == OptimizationConfig().physics


def test_inlet_width_defaults_to_port_width():
    cfg = OptimizationConfig()
    assert cfg.inlet_width == cfg.physics.L_in
    cfg.domain.inlet_width = 10e-3
    assert cfg.inlet_width == 10e-3
