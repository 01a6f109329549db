"""Run configuration: nested dataclasses loaded from YAML or JSON.

Every block is optional; omitted keys take the dataclass defaults below.
Unknown keys are rejected with the dotted path of the offending entry.

    metric:   kind (flat | space_form | conformal), kappa, phi, valid_radius
              default: the conformal Morse test metric, valid_radius 1
    grid:     n_theta, n_phi, L                      (32, 64, 16)
    flow:     FlowParams fields except target_area
    ladder:   areas (list, or null for the default rule 4 pi (r0 2^(-k/2))^2),
              n_levels, r0, n_fine, fine_grid, seed (null: critical point of Sc,
              or the origin when Sc has none), seed_offset (units of R)
    minimize: center (null: as ladder.seed), radius, target_area (null: 4 pi radius^2)
    solver:   geodesic {step_size, shoot_tol, max_newton_iters},
              center {tol, max_iter, armijo_c, hessian_check}
    perturbation: seed (null: none), amplitude
    output:   directory for artifacts
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .ambient import GeodesicSolverParams, chart_from_config
from .barycenter import CenterParams
from .errors import ConfigError, WillmoreLabError
from .flow import FlowParams
from .sphere import make_grid
from .suite import LadderParams, default_areas

MORSE_PHI = {"2,0,0": 0.15, "0,2,0": 0.30, "0,0,2": 0.45, "1,0,0": -0.1}


@dataclass
class MetricConfig:
    kind: str = "conformal"
    kappa: float = 1.0
    phi: dict = field(default_factory=lambda: dict(MORSE_PHI))
    valid_radius: float = 1.0


@dataclass
class GridConfig:
    n_theta: int = 32
    n_phi: int = 64
    L: int = 16

    def spec(self) -> tuple:
        return (self.n_theta, self.n_phi, self.L)


@dataclass
class FlowConfig:
    initial_step: float = 2e-5
    max_steps: int = 300
    el_tol: float = 1e-11
    armijo_c: float = 1e-4
    shrink: float = 0.5
    grow: float = 1.5
    area_newton_tol: float = 1e-13
    descent_steps: int = 20
    filter_every: int = 50
    filter_degree: typing.Optional[int] = None
    newton: bool = True
    newton_fd_step: float = 1e-5
    center_fd_step: float = 0.05


@dataclass
class LadderConfig:
    areas: typing.Optional[list] = None
    n_levels: int = 8
    r0: float = 0.08
    n_fine: int = 2
    fine_grid: GridConfig = field(default_factory=lambda: GridConfig(48, 96, 24))
    seed: typing.Optional[list] = None
    seed_offset: list = field(default_factory=lambda: [0.1, -0.05, 0.05])


@dataclass
class MinimizeConfig:
    center: typing.Optional[list] = None
    radius: float = 0.05
    target_area: typing.Optional[float] = None


@dataclass
class GeodesicConfig:
    step_size: typing.Optional[float] = None
    shoot_tol: float = 1e-12
    max_newton_iters: int = 30


@dataclass
class CenterConfig:
    tol: float = 1e-12
    max_iter: int = 60
    armijo_c: float = 1e-4
    hessian_check: bool = True


@dataclass
class SolverConfig:
    geodesic: GeodesicConfig = field(default_factory=GeodesicConfig)
    center: CenterConfig = field(default_factory=CenterConfig)


@dataclass
class PerturbationConfig:
    seed: typing.Optional[int] = None
    amplitude: float = 0.02


@dataclass
class RunConfig:
    metric: MetricConfig = field(default_factory=MetricConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    ladder: LadderConfig = field(default_factory=LadderConfig)
    minimize: MinimizeConfig = field(default_factory=MinimizeConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    output: str = "out"

    # -- derived objects ---------------------------------------------------------

    def chart(self):
        return chart_from_config(dataclasses.asdict(self.metric))

    def make_grid(self):
        return make_grid(*self.grid.spec())

    def geodesic_params(self) -> GeodesicSolverParams:
        return GeodesicSolverParams(**dataclasses.asdict(self.solver.geodesic))

    def center_params(self) -> CenterParams:
        return CenterParams(geodesic=self.geodesic_params(), **dataclasses.asdict(self.solver.center))

    def flow_params(self, target_area: float) -> FlowParams:
        return FlowParams(target_area=target_area, **dataclasses.asdict(self.flow))

    def areas(self) -> list:
        if self.ladder.areas is not None:
            return [float(a) for a in self.ladder.areas]
        return default_areas(self.ladder.n_levels, self.ladder.r0)

    def ladder_params(self) -> LadderParams:
        return LadderParams(
            grid=self.grid.spec(),
            fine_grid=self.ladder.fine_grid.spec(),
            n_fine=self.ladder.n_fine,
            flow=dataclasses.asdict(self.flow),
            center=self.center_params(),
            seed_offset=tuple(float(v) for v in self.ladder.seed_offset),
            perturbation_seed=self.perturbation.seed,
            perturbation=self.perturbation.amplitude,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        """Construct every derived object once so that bad values fail early."""
        try:
            self.chart()
            for name, spec in (("grid", self.grid.spec()), ("ladder.fine_grid", self.ladder.fine_grid.spec())):
                try:
                    make_grid(*spec)
                except ConfigError as exc:
                    raise ConfigError(f"{name}: {exc}") from exc
            self.center_params()
            self.flow_params(1.0)
            self.ladder_params()
        except ConfigError:
            raise
        except (WillmoreLabError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.ladder.n_levels < 1 or not self.ladder.r0 > 0:
            raise ConfigError("ladder.n_levels must be >= 1 and ladder.r0 positive")
        for name, vec in (("ladder.seed", self.ladder.seed), ("minimize.center", self.minimize.center)):
            if vec is not None and len(vec) != 3:
                raise ConfigError(f"{name}: expected 3 numbers")
        if not self.minimize.radius > 0:
            raise ConfigError("minimize.radius must be positive")
        return self


# ---------------------------------------------------------------------------
# loading


def _is_optional(tp):
    origin = typing.get_origin(tp)
    return origin in (typing.Union, types.UnionType) and type(None) in typing.get_args(tp)


# YAML 1.1 reads exponent forms without a dot (1e-12) as strings
_EXP_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")


def _number(value):
    if isinstance(value, str) and _EXP_NUMBER.fullmatch(value.strip()):
        return float(value)
    return value


def _coerce(value, tp, path):
    if _is_optional(tp):
        if value is None:
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        value = _number(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is list or typing.get_origin(tp) is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        value = [_number(v) for v in value]
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path}[{i}]: expected a number, got {v!r}")
        return [float(v) for v in value]
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {value!r}")
        return {str(k): v for k, v in value.items()}
    raise ConfigError(f"{path}: unsupported type")  # pragma: no cover


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]}" + (f" (and {len(unknown) - 1} more)" if len(unknown) > 1 else ""))
    kw = {}
    for name, value in data.items():
        kw[name] = _coerce(value, hints[name], f"{path}.{name}" if path else name)
    return cls(**kw)


def config_from_dict(data) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def apply_override(data: dict, assignment: str) -> dict:
    """``a.b.c=value`` (value parsed as YAML) into a nested mapping."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r}: expected key=value")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r}: empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: cannot parse value ({exc})") from exc
    node = data
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key}: {p} is not a block")
        node = nxt
    node[parts[-1]] = value
    return data


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)  # JSON is a subset of YAML
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path}: invalid YAML/JSON ({exc})") from exc
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: top level must be a mapping")
    for ov in overrides:
        apply_override(data, ov)
    return config_from_dict(data)


def config_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
