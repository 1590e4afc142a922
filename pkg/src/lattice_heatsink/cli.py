"""Command-line front end.

Exit codes: 0 on success, 1 when a numerical step fails, 2 for usage and input errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import ConfigError, OptimizationConfig, load_config, save_config
from .flow import FlowSolveError, inlet_mean_velocity
from .geometry import export_beams, export_stl, reconstruct_lattice
from .grid import DesignField, read_design_csv, write_design_csv, write_vtk
from .materials import (TABLE_COLUMNS, LatticePropertyTable, effective_conductivity_from_rve,
                        fit_darcy_forchheimer, synthetic_bcc_table)
from .metrics import (MetricsReport, center_plane_fields, mnd, nusselt_metrics, pearson_correlation,
                      solid_fraction)
from .optimize import OptimizationError, run_optimization, schedule_from_config
from .sensitivity import DesignEvaluator, Evaluation
from .thermal import ThermalSolveError, energy_balance_residual

log = logging.getLogger("lattice_heatsink")


class UsageError(Exception):
    """Bad arguments or unreadable input; maps to exit code 2."""


class NumericalFailure(Exception):
    """A solver step failed; maps to exit code 1."""


# ------------------------------------------------------------------ shared helpers


def _config(args) -> OptimizationConfig:
    cfg = load_config(args.config) if args.config else OptimizationConfig()
    if getattr(args, "seed", None) is not None:
        cfg.run.rng_seed = args.seed
    if getattr(args, "P_in", None) is not None:
        cfg.run.P_in = args.P_in
    cfg.validate()
    return cfg


def property_table(cfg: OptimizationConfig) -> LatticePropertyTable:
    lat = cfg.lattice
    if lat.property_table:
        return LatticePropertyTable.from_csv(lat.property_table, lat.d_min, lat.d_max)
    return synthetic_bcc_table(cfg.physics, cfg.domain.cell_size, lat.d_min, lat.d_max)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_report(ev: Evaluation, evaluator: DesignEvaluator, design: DesignField,
                 table: LatticePropertyTable) -> MetricsReport:
    cfg = evaluator.config
    grid, phys = evaluator.grid, cfg.physics
    p = cfg.objective.p_norm
    use_offset = cfg.objective.bottom_offset
    nu_max, nu_obj, nu_ave = nusselt_metrics(ev.thermal, phys, grid, p, offset=use_offset)
    nu_max_c, _, nu_ave_c = nusselt_metrics(ev.thermal, phys, grid, p, offset=False)
    return MetricsReport(
        Nu_max=nu_max, Nu_obj=nu_obj, Nu_ave=nu_ave,
        u_in=inlet_mean_velocity(ev.flow, evaluator.bc, evaluator.mesh),
        Mnd=mnd(design.gamma1),
        solid_fraction=solid_fraction(design, table, grid, evaluator.projection),
        K=ev.K, Nu_max_center=nu_max_c, Nu_ave_center=nu_ave_c,
        energy_balance=energy_balance_residual(ev.flow, ev.thermal, phys, evaluator.mesh,
                                               evaluator.bc, grid.design_mask),
    )


def evaluate_design(cfg: OptimizationConfig, table: LatticePropertyTable, design: DesignField,
                    evaluator: DesignEvaluator | None = None):
    """Forward solve at the last continuation stage; returns (report, evaluation, evaluator)."""
    evaluator = evaluator or DesignEvaluator(cfg, table)
    q_k, q_f = schedule_from_config(cfg).at(max(cfg.run.max_iterations - 1, 0))
    ev = evaluator.evaluate(design, q_k, q_f, warm=False)
    return build_report(ev, evaluator, design, table), ev, evaluator


def write_fields(path: Path, ev: Evaluation, evaluator: DesignEvaluator) -> None:
    phys = evaluator.config.physics
    (vx, vy), T_c = center_plane_fields(ev.flow, ev.thermal, phys, evaluator.grid.design_mask)
    ux, uy = ev.flow.cell_velocity()
    write_vtk(path, evaluator.mesh,
              {"T0": ev.thermal.T0, "Tb0": ev.thermal.Tb0, "T_center": T_c, "p": ev.flow.p,
               "k": ev.materials.k, "alpha": ev.materials.alpha},
              {"v_darcy": (ux, uy), "v_center": (vx, vy)})


# ------------------------------------------------------------------ fit-props


def fit_property_rows(samples_csv: str | Path, k_f: float, k_s: float) -> list[list[float]]:
    """One (gamma2, eps, k, alpha, beta) row per gamma2 group of an RVE sample file.

    Required columns: gamma2, eps_por, vbar, neg_dpdx, plus either k_por or the
    conduction-test columns q, L, dT.
    """
    try:
        with open(samples_csv, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = set(reader.fieldnames or ())
            rows = list(reader)
    except OSError as exc:
        raise UsageError(f"cannot read {samples_csv}: {exc}") from None
    need = {"gamma2", "eps_por", "vbar", "neg_dpdx"}
    if not rows or not need <= fields:
        raise UsageError(f"{samples_csv}: need a header with {sorted(need)} and at least one row")
    if "k_por" not in fields and not {"q", "L", "dT"} <= fields:
        raise UsageError(f"{samples_csv}: need a k_por column or q, L, dT columns")

    groups: dict[float, list[dict]] = defaultdict(list)
    try:
        for r in rows:
            groups[float(r["gamma2"])].append(r)
        out = []
        for g2 in sorted(groups):
            grp = groups[g2]
            alpha, beta = fit_darcy_forchheimer([float(r["vbar"]) for r in grp],
                                                [float(r["neg_dpdx"]) for r in grp])
            eps = float(np.mean([float(r["eps_por"]) for r in grp]))
            if "k_por" in fields and grp[0].get("k_por", "").strip():
                k = float(grp[0]["k_por"])
            else:
                k, _ = effective_conductivity_from_rve(float(grp[0]["q"]), float(grp[0]["L"]),
                                                       float(grp[0]["dT"]), k_f, k_s)
            out.append([g2, eps, k, alpha, beta])
    except ValueError as exc:
        raise UsageError(f"{samples_csv}: {exc}") from None
    return out


def check_monotone(rows: list[list[float]]) -> None:
    arr = np.array(rows)
    if len(arr) < 2:
        return
    problems = []
    if np.any(np.diff(arr[:, 1]) > 0):
        problems.append("eps_por increases")
    for col, name in ((2, "k_por"), (3, "alpha_por"), (4, "beta_por")):
        if np.any(np.diff(arr[:, col]) < 0):
            problems.append(f"{name} decreases")
    if problems:
        raise NumericalFailure("fitted table is not monotone in gamma2: " + ", ".join(problems))


def cmd_fit_props(args) -> int:
    cfg = _config(args)
    rows = fit_property_rows(args.samples, cfg.physics.k_f, cfg.physics.k_s)
    check_monotone(rows)
    with open(args.table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {len(rows)} table rows to {args.table}")
    return 0


# ------------------------------------------------------------------ optimize / evaluate


def cmd_optimize(args) -> int:
    cfg = _config(args)
    table = property_table(cfg)
    out = _out_dir(args, cfg)
    save_config(cfg, out / "config.ini")
    t0 = time.perf_counter()
    result = run_optimization(cfg, table, output_dir=out)
    write_design_csv(result.design, out / "design.csv")
    result.record.write_csv(out / "history.csv")
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "seconds"])
        w.writerows([i, f"{s:.6f}"] for i, s in enumerate(result.record.seconds))
    report = build_report(result.final, result.evaluator, result.design, table)
    report.save(out / "metrics.txt")
    write_fields(out / "fields.vtk", result.final, result.evaluator)
    print(report.to_text(), end="")
    print(f"optimization finished in {time.perf_counter() - t0:.1f} s; results in {out}")
    return 0


def _read_design(path, cfg) -> DesignField:
    try:
        return read_design_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read design {path}: {exc}") from None


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    table = property_table(cfg)
    design = _read_design(args.design, cfg)
    out = _out_dir(args, cfg)
    report, ev, evaluator = evaluate_design(cfg, table, design)
    report.save(out / "metrics.txt")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricsReport.csv_header())
        w.writerow(report.csv_row())
    write_fields(out / "fields.vtk", ev, evaluator)
    print(report.to_text(), end="")
    return 0


# ------------------------------------------------------------------ random samples


def random_designs(cfg: OptimizationConfig, n: int, shape: tuple[int, int]):
    """Seeded random binary layouts: (void probability, design) pairs."""
    rng = np.random.default_rng(cfg.run.rng_seed)
    lo, hi = cfg.run.void_prob_min, cfg.run.void_prob_max
    for _ in range(n):
        u = float(rng.uniform(lo, hi))
        g1 = (rng.random(shape) < u).astype(float)
        g2 = rng.random(shape)
        yield u, DesignField(g1, g2)


def correlate(own_csv: Path, external_csv: str | Path) -> dict[str, float]:
    """Pearson r per metric between two sample tables joined on the ``sample`` column."""
    def load(path):
        try:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from None
        if not rows or "sample" not in rows[0]:
            raise UsageError(f"{path}: needs a 'sample' column and at least one row")
        return {r["sample"]: r for r in rows}

    mine, theirs = load(own_csv), load(external_csv)
    common = sorted(set(mine) & set(theirs))
    metrics = [m for m in MetricsReport.csv_header() if m in next(iter(theirs.values()))]
    if not metrics:
        raise UsageError(f"{external_csv}: no metric columns in common")
    result = {}
    for m in metrics:
        try:
            x = [float(mine[s][m]) for s in common]
            y = [float(theirs[s][m]) for s in common]
            result[m] = pearson_correlation(x, y)
        except ValueError as exc:
            log.warning("correlation of %s skipped: %s", m, exc)
            result[m] = float("nan")
    return result


def cmd_random_samples(args) -> int:
    cfg = _config(args)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    table = property_table(cfg)
    out = _out_dir(args, cfg)
    evaluator = DesignEvaluator(cfg, table)
    shape = (evaluator.grid.n_cells_x, evaluator.grid.n_cells_y)
    agg = out / "samples.csv"
    with open(agg, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "void_prob", *MetricsReport.csv_header()])
        for i, (u, design) in enumerate(random_designs(cfg, args.n, shape)):
            write_design_csv(design, out / f"sample_{i:03d}.csv")
            report, _, _ = evaluate_design(cfg, table, design, evaluator)
            w.writerow([i, repr(u), *report.csv_row()])
            log.info("sample %d: u = %.3f, Nu_obj = %.3f", i, u, report.Nu_obj)
    print(f"wrote {args.n} samples to {agg}")
    if args.external:
        r = correlate(agg, args.external)
        with open(out / "correlation.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "pearson_r"])
            for m, v in r.items():
                w.writerow([m, repr(v)])
                print(f"{m}: r = {v:.4f}")
    return 0


# ------------------------------------------------------------------ geometry


def cmd_export_geometry(args) -> int:
    cfg = _config(args)
    design = _read_design(args.design, cfg)
    out = _out_dir(args, cfg)
    graph = reconstruct_lattice(design, cfg.domain.cell_size, cfg.lattice.d_min, cfg.lattice.d_max,
                                cfg.domain.n_layers_z, args.threshold, cfg.domain.symmetry)
    export_beams(graph, out / "beams.csv")
    if graph.n_struts == 0:
        log.warning("no lattice cells; wrote a header-only beam file and no STL")
        print("design has no lattice cells")
        return 0
    n_tri = export_stl(graph, out / "lattice.stl", args.sides)
    print(f"{graph.n_struts} struts, {len(graph.nodes)} nodes, {n_tri} triangles -> {out}")
    return 0


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattice-heatsink",
                                     description="Lattice heat-sink layout optimization with a two-layer porous model.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="INI configuration file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override run.rng_seed")
        if out:
            p.add_argument("--out", help="output directory (default: run.output_dir)")

    p = sub.add_parser("fit-props", help="fit a lattice property table from RVE samples")
    p.add_argument("samples", help="sample CSV: gamma2,eps_por,vbar,neg_dpdx plus k_por or q,L,dT")
    p.add_argument("table", help="output property-table CSV")
    common(p, out=False)
    p.set_defaults(func=cmd_fit_props)

    p = sub.add_parser("optimize", help="run the continuation MMA optimization")
    common(p)
    p.add_argument("--P-in", dest="P_in", type=float, help="override run.P_in (Pa)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="solve and report metrics for a given design")
    common(p)
    p.add_argument("--design", required=True, help="design CSV (ix,iy,gamma1,gamma2)")
    p.add_argument("--P-in", dest="P_in", type=float, help="override run.P_in (Pa)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("random-samples", help="evaluate seeded random designs")
    common(p)
    p.add_argument("--n", type=int, default=30, help="number of samples (default 30)")
    p.add_argument("--P-in", dest="P_in", type=float, help="override run.P_in (Pa)")
    p.add_argument("--external", help="CSV of external results (sample column + metric columns) to correlate with")
    p.set_defaults(func=cmd_random_samples)

    p = sub.add_parser("export-geometry", help="rebuild the strut lattice and write beams CSV + STL")
    common(p)
    p.add_argument("--design", required=True, help="design CSV")
    p.add_argument("--sides", type=int, default=16, help="facets per strut (default 16)")
    p.add_argument("--threshold", type=float, default=0.5, help="lattice if projected gamma1 < threshold")
    p.set_defaults(func=cmd_export_geometry)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, FlowSolveError, ThermalSolveError, OptimizationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
