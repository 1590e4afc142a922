"""Run configuration: physical constants, domain layout, and solver/optimizer knobs.

Configs are stored as INI-style text (one section per dataclass below). Every key
is validated on load; unknown sections or keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration input."""


@dataclass
class PhysicalParams:
    """Water / aluminium-alloy properties and heat-sink dimensions (SI units).

    ``H_t`` and ``H_b`` are *half*-thicknesses of the thermal-fluid layer and base plate.
    ``rho_s`` and ``c_ps`` are kept for completeness; the steady model never reads them.
    """

    mu_f: float = 1.004e-3  # Pa s
    rho_f: float = 998.0  # kg/m^3
    k_f: float = 0.598  # W/(m K)
    c_pf: float = 4180.0  # J/(kg K)
    k_s: float = 100.0  # W/(m K)
    rho_s: float = 2000.0  # kg/m^3
    c_ps: float = 900.0  # J/(kg K)
    q_s: float = 1.0e5  # W/m^2, applied under the design domain only
    T_in: float = 293.15  # K
    H_t: float = 2.5e-3  # m
    H_b: float = 0.5e-3  # m
    L_x: float = 50e-3  # m, design-domain length (flow direction)
    L_y: float = 50e-3  # m, design-domain width
    L_in: float = 5e-3  # m, inlet/outlet port width

    def validate(self) -> None:
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "q_s":
                if val < 0:
                    raise ConfigError("q_s must be non-negative")
            elif not val > 0:
                raise ConfigError(f"{f.name} must be strictly positive, got {val}")

    @property
    def alpha_f(self) -> float:
        """Top/bottom wall drag of the open channel, 3 mu / H_t^2."""
        return 3.0 * self.mu_f / self.H_t**2


@dataclass
class DomainSettings:
    cell_size: float = 2.5e-3  # m, lattice unit cell edge
    mesh_refinement: int = 4  # elements per cell edge
    symmetry: bool = True  # half domain, symmetry line at y = L_y/2
    plenum_depth: float = 2.5e-3  # m, pure-fluid strip before/after the design domain
    inlet_width: float = 0.0  # m, port width; 0 means use physics.L_in
    wall_slip: bool = False  # side walls free-slip instead of no-slip
    n_layers_z: int = 2  # stacked lattice layers in the exported geometry


@dataclass
class LatticeSettings:
    d_min: float = 0.3e-3  # m
    d_max: float = 1.3e-3  # m
    property_table: str = ""  # CSV path; empty selects the built-in synthetic BCC table


@dataclass
class ContinuationSettings:
    q_k_stages: tuple[float, ...] = (1.0, 5.0, 10.0, 50.0)
    q_f_stages: tuple[float, ...] = (50.0, 10.0, 5.0, 1.0)
    stage_length: int = 50


@dataclass
class ProjectionSettings:
    beta: float = 1.0
    eta: float = 0.5


@dataclass
class ObjectiveSettings:
    p_norm: float = 10.0
    volume_fraction: float = 1.0
    bottom_offset: bool = True  # add q_s H_b / k_s when reporting bottom-surface Nusselt numbers


@dataclass
class SolverSettings:
    nonlinear_tol: float = 1e-6
    max_picard_iters: int = 200
    under_relaxation: float = 0.7
    velocity_regularization: float = 1e-10  # m/s
    newton: bool = True  # pseudo-transient Newton; false selects under-relaxed Picard


@dataclass
class MmaSettings:
    move_limit: float = 0.15
    asy_init: float = 0.5
    asy_incr: float = 1.2
    asy_decr: float = 0.7


@dataclass
class RunSettings:
    P_in: float = 10.0  # Pa
    max_iterations: int = 200
    rng_seed: int = 0
    output_dir: str = "out"
    checkpoint_every: int = 0  # 0 disables design checkpoints
    void_prob_min: float = 0.2  # random-sample harness
    void_prob_max: float = 0.8


@dataclass
class OptimizationConfig:
    physics: PhysicalParams = field(default_factory=PhysicalParams)
    domain: DomainSettings = field(default_factory=DomainSettings)
    lattice: LatticeSettings = field(default_factory=LatticeSettings)
    continuation: ContinuationSettings = field(default_factory=ContinuationSettings)
    projection: ProjectionSettings = field(default_factory=ProjectionSettings)
    objective: ObjectiveSettings = field(default_factory=ObjectiveSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    mma: MmaSettings = field(default_factory=MmaSettings)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def inlet_width(self) -> float:
        return self.domain.inlet_width or self.physics.L_in

    def validate(self) -> None:
        self.physics.validate()
        d, lat, run = self.domain, self.lattice, self.run
        if d.cell_size <= 0 or d.mesh_refinement < 1 or d.n_layers_z < 1:
            raise ConfigError("cell_size, mesh_refinement and n_layers_z must be positive")
        if d.plenum_depth < 0:
            raise ConfigError("plenum_depth must be non-negative")
        if not 0 < lat.d_min < lat.d_max:
            raise ConfigError("need 0 < d_min < d_max")
        if lat.d_max > d.cell_size:
            raise ConfigError("d_max exceeds the unit cell size")
        c = self.continuation
        if len(c.q_k_stages) != len(c.q_f_stages) or not c.q_k_stages:
            raise ConfigError("q_k_stages and q_f_stages need equal, non-zero length")
        if c.stage_length < 1:
            raise ConfigError("stage_length must be >= 1")
        if not (self.projection.beta > 0 and 0 < self.projection.eta < 1):
            raise ConfigError("projection needs beta > 0 and 0 < eta < 1")
        o = self.objective
        if o.p_norm < 2 or not 0 < o.volume_fraction <= 1:
            raise ConfigError("objective needs p_norm >= 2 and 0 < volume_fraction <= 1")
        s = self.solver
        if s.nonlinear_tol <= 0 or s.max_picard_iters < 1 or not 0 < s.under_relaxation <= 1:
            raise ConfigError("invalid solver settings")
        if run.P_in < 0 or run.max_iterations < 0:
            raise ConfigError("P_in and max_iterations must be non-negative")
        if not 0 <= run.void_prob_min <= run.void_prob_max <= 1:
            raise ConfigError("need 0 <= void_prob_min <= void_prob_max <= 1")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, like: Any, key: str) -> Any:
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from None


def to_ini(cfg: OptimizationConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep T_in, L_x, ... case-sensitive
    for sec in fields(cfg):
        block = getattr(cfg, sec.name)
        parser[sec.name] = {f.name: _format(getattr(block, f.name)) for f in fields(block)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_ini(text: str) -> OptimizationConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = OptimizationConfig()
    known = {f.name for f in fields(cfg)}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")
        block = getattr(cfg, name)
        defaults = {f.name: getattr(block, f.name) for f in fields(block)}
        updates = {}
        for key, raw in parser[name].items():
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            updates[key] = _parse(raw, defaults[key], f"{name}.{key}")
        setattr(cfg, name, dataclasses.replace(block, **updates))
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> OptimizationConfig:
    return from_ini(Path(path).read_text())


def save_config(cfg: OptimizationConfig, path: str | Path) -> None:
    Path(path).write_text(to_ini(cfg))
