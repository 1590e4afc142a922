"""Layout optimization of lattice-filled liquid-cooled heat sinks.

A reduced two-layer porous model (depth-averaged Darcy-Forchheimer flow coupled to a
thermal-fluid layer and a conducting base plate) is optimized with MMA over two
per-cell design variables: a void/lattice indicator and a normalized strut diameter.
"""
from .config import ConfigError, OptimizationConfig, PhysicalParams, load_config, save_config
from .grid import DesignField, FlowState, ThermalState, build_domain, distribute_design, reduce_sensitivity
from .materials import LatticePropertyTable, interpolate_properties, synthetic_bcc_table
from .flow import FlowDiscretization, FlowSolveError, solve_flow
from .thermal import energy_balance_residual, solve_thermal
from .sensitivity import DesignEvaluator, objective, volume_constraint
from .mma import MmaState, mma_update
from .optimize import RunRecord, run_optimization
from .metrics import MetricsReport, mnd, nusselt_metrics, solid_fraction
from .geometry import BeamGraph, export_beams, export_stl, reconstruct_lattice

__version__ = "0.1.0"
