import numpy as np
import pytest

from conftest import small_config
from lattice_heatsink.flow import FlowSolveError
from lattice_heatsink.grid import DesignField, read_design_csv
from lattice_heatsink.optimize import (HISTORY_HEADER, OptimizationError, RunRecord, run_optimization,
                                       schedule_from_config)


def short_config(iterations=8, stage_length=2, **kw):
    cfg = small_config(**kw)
    cfg.run.max_iterations = iterations
    cfg.continuation.stage_length = stage_length
    return cfg


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    from lattice_heatsink.materials import synthetic_bcc_table
    out = tmp_path_factory.mktemp("run")
    cfg = short_config()
    cfg.run.checkpoint_every = 4
    seen = []
    res = run_optimization(cfg, synthetic_bcc_table(), output_dir=out,
                           callback=lambda it, d, ev: seen.append((it, d.copy())))
    return cfg, res, out, seen


def test_zero_iterations_returns_densest_start(table):
    cfg = short_config(iterations=0)
    res = run_optimization(cfg, table, evaluate_final=False)
    assert np.all(res.design.gamma1 == 0) and np.all(res.design.gamma2 == 0)
    assert len(res.record) == 0


def test_history_length_and_stages(short_run):
    cfg, res, _, seen = short_run
    rec = res.record
    assert len(rec) == 8
    assert rec.q_k == [1.0, 1.0, 5.0, 5.0, 10.0, 10.0, 50.0, 50.0]
    assert rec.q_f == [50.0, 50.0, 10.0, 10.0, 5.0, 5.0, 1.0, 1.0]
    assert [it for it, _ in seen] == list(range(8))
    assert all(k > 0 for k in rec.K)
    assert rec.Mnd[0] == 0.0  # the all-lattice start is binary
    assert res.final is not None


def test_iterates_stay_in_bounds_and_move_limit(short_run):
    cfg, res, _, seen = short_run
    prev = np.zeros(2 * 100)
    for _, d in seen:
        x = d.to_vector()
        assert np.all((x >= 0) & (x <= 1))
        assert np.max(np.abs(x - prev)) <= cfg.mma.move_limit + 1e-12
        prev = x


def test_optimization_improves_objective(short_run):
    K = short_run[1].record.K
    assert min(K[1:2]) < K[0]


def test_checkpoints(short_run):
    _, res, out, seen = short_run
    files = sorted(p.name for p in out.glob("checkpoint_*.csv"))
    assert files == ["checkpoint_0004.csv", "checkpoint_0008.csv"]
    d = read_design_csv(out / "checkpoint_0004.csv")
    np.testing.assert_array_equal(d.gamma1, seen[3][1].gamma1)


def test_history_csv_round_trip(short_run, tmp_path):
    rec = short_run[1].record
    rec.write_csv(tmp_path / "h.csv")
    text = (tmp_path / "h.csv").read_text().splitlines()
    assert text[0] == ",".join(HISTORY_HEADER)
    back = RunRecord.read_csv(tmp_path / "h.csv")
    assert back.K == rec.K and back.Mnd == rec.Mnd
    assert all(s == 0.0 for s in back.seconds)
    rec.write_csv(tmp_path / "t.csv", wall_time=True)
    assert RunRecord.read_csv(tmp_path / "t.csv").seconds == rec.seconds
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        RunRecord.read_csv(tmp_path / "bad.csv")


def test_rerun_is_bit_identical(short_run, table, tmp_path):
    cfg, res, _, _ = short_run
    again = run_optimization(short_config(), table)
    assert again.record.K == res.record.K
    np.testing.assert_array_equal(again.design.to_vector(), res.design.to_vector())


def test_volume_fraction_constraint_is_honoured(table):
    from lattice_heatsink.sensitivity import volume_constraint
    cfg = short_config(iterations=20, stage_length=5)
    cfg.objective.volume_fraction = 0.05
    res = run_optimization(cfg, table, evaluate_final=False)
    assert res.record.g[0] > 0  # the dense start violates the allowance
    grid = res.evaluator.grid
    g = volume_constraint(res.design, table, grid, 0.05)[0]
    assert g <= 1e-5 * grid.design_area


def test_schedule_matches_config():
    cfg = short_config()
    s = schedule_from_config(cfg)
    assert s.at(0) == (1.0, 50.0) and s.at(7) == (50.0, 1.0) and s.at(100) == (50.0, 1.0)


class _Flaky:
    def __init__(self, real, fail_times):
        self.real, self.fail_times, self.calls = real, fail_times, 0

    def __call__(self, *a, **kw):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise FlowSolveError("synthetic failure")
        return self.real(*a, **kw)


def test_single_failure_is_retried(table, monkeypatch):
    from lattice_heatsink import sensitivity
    flaky = _Flaky(sensitivity.solve_flow, 1)
    monkeypatch.setattr(sensitivity, "solve_flow", flaky)
    res = run_optimization(short_config(iterations=1), table, evaluate_final=False)
    assert len(res.record) == 1 and flaky.calls == 2


def test_repeated_failure_dumps_design(table, monkeypatch, tmp_path):
    from lattice_heatsink import sensitivity
    monkeypatch.setattr(sensitivity, "solve_flow", _Flaky(sensitivity.solve_flow, 10))
    with pytest.raises(OptimizationError):
        run_optimization(short_config(iterations=1), table, output_dir=tmp_path)
    d = read_design_csv(tmp_path / "failed_design.csv")
    assert np.all(d.gamma1 == 0)


def test_initial_design_shape_is_checked(table):
    with pytest.raises(ValueError):
        run_optimization(short_config(iterations=1), table, initial=DesignField(np.zeros((3, 3)), np.zeros((3, 3))))
