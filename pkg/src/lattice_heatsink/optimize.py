"""Continuation-driven MMA optimization of the lattice layout."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import OptimizationConfig
from .flow import FlowSolveError
from .grid import DesignField, write_design_csv
from .materials import ContinuationSchedule, LatticePropertyTable
from .metrics import mnd
from .mma import MmaState, mma_update
from .sensitivity import DesignEvaluator, Evaluation, volume_constraint

log = logging.getLogger(__name__)

HISTORY_HEADER = ["iter", "K", "g", "Mnd", "qk", "qf", "seconds"]


class OptimizationError(RuntimeError):
    """A forward solve failed twice; the offending design was dumped to disk."""


@dataclass
class RunRecord:
    K: list[float] = field(default_factory=list)
    g: list[float] = field(default_factory=list)
    Mnd: list[float] = field(default_factory=list)
    q_k: list[float] = field(default_factory=list)
    q_f: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.K)

    def append(self, K, g, Mnd, q_k, q_f, seconds) -> None:
        for name, val in zip(HISTORY_HEADER[1:], (K, g, Mnd, q_k, q_f, seconds)):
            getattr(self, {"qk": "q_k", "qf": "q_f"}.get(name, name)).append(float(val))

    def write_csv(self, path: str | Path, wall_time: bool = False) -> None:
        """History CSV. Wall times are written as 0 unless ``wall_time`` is set, which keeps
        the file byte-identical across reruns."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_HEADER)
            for i in range(len(self)):
                sec = self.seconds[i] if wall_time else 0.0
                w.writerow([i, repr(self.K[i]), repr(self.g[i]), repr(self.Mnd[i]),
                            repr(self.q_k[i]), repr(self.q_f[i]), repr(sec)])

    @classmethod
    def read_csv(cls, path: str | Path) -> "RunRecord":
        rec = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != HISTORY_HEADER:
                raise ValueError(f"{path}: expected header {','.join(HISTORY_HEADER)}")
            for row in reader:
                rec.append(*(float(row[k]) for k in HISTORY_HEADER[1:]))
        return rec


@dataclass
class OptimizationResult:
    design: DesignField
    record: RunRecord
    evaluator: DesignEvaluator
    final: Evaluation | None = None


def schedule_from_config(config: OptimizationConfig) -> ContinuationSchedule:
    c = config.continuation
    return ContinuationSchedule(tuple(c.q_k_stages), tuple(c.q_f_stages), c.stage_length)


def _evaluate_with_retry(evaluator: DesignEvaluator, design, q_k, q_f, dump_dir: Path | None):
    try:
        return evaluator.evaluate(design, q_k, q_f, gradient=True)
    except FlowSolveError as first:
        log.warning("flow solve failed (%s); retrying from rest with halved relaxation", first)
        st = evaluator.flow_settings
        evaluator.flow_settings = dataclasses.replace(
            st, under_relaxation=0.5 * st.under_relaxation, max_picard_iters=2 * st.max_picard_iters)
        try:
            return evaluator.evaluate(design, q_k, q_f, gradient=True, warm=False)
        except FlowSolveError as second:
            if dump_dir is not None:
                dump_dir.mkdir(parents=True, exist_ok=True)
                write_design_csv(design, dump_dir / "failed_design.csv")
            raise OptimizationError(f"forward solve failed twice: {second}") from second
        finally:
            evaluator.flow_settings = st


def run_optimization(config: OptimizationConfig, table: LatticePropertyTable,
                     initial: DesignField | None = None, output_dir: str | Path | None = None,
                     callback=None, evaluate_final: bool = True) -> OptimizationResult:
    """Run ``config.run.max_iterations`` MMA iterations from the all-lattice start.

    Iteration ``i`` evaluates the current design at the continuation stage of ``i`` and
    then updates it, so the history holds one row per evaluated design.
    """
    config.validate()
    evaluator = DesignEvaluator(config, table)
    grid = evaluator.grid
    shape = (grid.n_cells_x, grid.n_cells_y)
    design = initial.copy() if initial is not None else DesignField(np.zeros(shape), np.zeros(shape))
    design.check(grid)
    schedule = schedule_from_config(config)
    m = config.mma
    state = MmaState(2 * grid.n_cells, m.move_limit, m.asy_init, m.asy_incr, m.asy_decr)
    out = Path(output_dir) if output_dir is not None else None
    record = RunRecord()
    area = grid.design_area
    scale = None
    every = config.run.checkpoint_every

    for it in range(config.run.max_iterations):
        t0 = time.perf_counter()
        q_k, q_f = schedule.at(it)
        ev = _evaluate_with_retry(evaluator, design, q_k, q_f, out)
        g, dg1, dg2 = volume_constraint(design, table, grid, config.objective.volume_fraction,
                                        evaluator.projection, config.physics)
        if scale is None:
            scale = 1.0 / ev.K if ev.K > 0 else 1.0
        x = design.to_vector()
        df = np.concatenate([ev.dK_dg1.ravel(), ev.dK_dg2.ravel()]) * scale
        dg = np.concatenate([dg1.ravel(), dg2.ravel()]) / area
        x_new = mma_update(x, df, g / area, dg, state)
        record.append(ev.K, g, mnd(design.gamma1), q_k, q_f, time.perf_counter() - t0)
        log.info("it %3d  K = %.6g  g = %.3e  Mnd = %.3f%%  (q_k, q_f) = (%g, %g)",
                 it, ev.K, g, record.Mnd[-1], q_k, q_f)
        design = DesignField.from_vector(x_new, shape)
        if callback is not None:
            callback(it, design, ev)
        if out is not None and every and (it + 1) % every == 0:
            out.mkdir(parents=True, exist_ok=True)
            write_design_csv(design, out / f"checkpoint_{it + 1:04d}.csv")

    final = None
    if evaluate_final:
        q_k, q_f = schedule.at(max(config.run.max_iterations - 1, 0))
        final = evaluator.evaluate(design, q_k, q_f)
    return OptimizationResult(design, record, evaluator, final)
