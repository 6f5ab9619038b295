"""Scenario configuration: dataclasses plus a strict YAML loader.

Every section maps onto a dataclass; unknown keys anywhere in the tree are
rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import types
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from ..controllers import ControlGains
from ..safety import SafetyConfig

logger = logging.getLogger(__name__)

CONTROLLERS = ("full", "ucc-only", "fcc-only")
BASELINES = ("stationary", "random-walk", "lawnmower")
DEFAULT_SCENARIO = "paper_coverage.yaml"


class ConfigError(ValueError):
    pass


@dataclass
class TerrainConfig:
    width: float = 500.0
    height: float = 500.0
    resolution: float = 1.0


@dataclass
class IgnitionConfig:
    count: int = 20
    region: tuple[float, float, float, float] = (50.0, 50.0, 100.0, 100.0)


@dataclass
class ParamOverride:
    step: int
    R: Optional[float] = None
    U: Optional[float] = None
    theta: Optional[float] = None


@dataclass
class FireConfig:
    R: float = 2.0
    U: float = 5.0
    theta: float = 0.7853981633974483
    dt: float = 1.0
    noise_std: float = 0.1
    overrides: list[ParamOverride] = field(default_factory=list)


@dataclass
class UavConfig:
    x: float
    y: float
    z: float = 0.0


@dataclass
class RendezvousConfig:
    # None means the centroid of the ignition region
    point: Optional[tuple[float, float]] = None
    altitude: float = 35.0
    tolerance: float = 1.0
    max_steps: int = 300


@dataclass
class FleetConfig:
    uavs: list[UavConfig] = field(default_factory=lambda: [
        UavConfig(26.0, 300.0), UavConfig(38.0, 308.0), UavConfig(50.0, 300.0),
        UavConfig(62.0, 308.0), UavConfig(74.0, 300.0)])
    half_angles: tuple[float, float] = (0.7853981633974483, 0.5235987755982988)
    gains: ControlGains = field(default_factory=ControlGains)
    rendezvous: RendezvousConfig = field(default_factory=RendezvousConfig)
    lawnmower_altitude: Optional[float] = None


@dataclass
class HumanConfig:
    id: int
    # [step, x, y] knots; position is piecewise linear in step and held after the last knot
    waypoints: list[tuple[float, float, float]]
    sigma_gps: float = 2.0
    sigma_mob: float = 10.0
    weight: float = 1.0


@dataclass
class ParamTriple:
    R: float = 0.0
    U: float = 0.0
    theta: float = 0.0


@dataclass
class ProcessNoiseConfig:
    position: float = 0.1
    pose: float = 0.5
    pose_correlation: float = 0.1
    R: float = 0.01
    U: float = 0.1
    theta: float = 0.001


@dataclass
class MeasurementNoiseConfig:
    angle: float = 0.2
    R: float = 0.05
    U: float = 0.2
    theta: float = 0.05


@dataclass
class EstimatorConfig:
    alpha: float = 0.95
    # None derives the std from the footprint half-extents at z_min
    position_std: Optional[float] = None
    param_std: ParamTriple = field(default_factory=lambda: ParamTriple(0.2, 0.5, 0.1))
    # filter prior = truth + this bias (model-mismatch experiments)
    param_bias: ParamTriple = field(default_factory=ParamTriple)
    process: ProcessNoiseConfig = field(default_factory=ProcessNoiseConfig)
    measurement: MeasurementNoiseConfig = field(default_factory=MeasurementNoiseConfig)


@dataclass
class RunConfig:
    seed: int
    steps: int = 100
    trials: int = 10
    controller: str = "full"


@dataclass
class ScenarioConfig:
    safety: SafetyConfig
    run: RunConfig
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    ignition: IgnitionConfig = field(default_factory=IgnitionConfig)
    fire: FireConfig = field(default_factory=FireConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    humans: list[HumanConfig] = field(default_factory=list)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (0.0, 0.0, self.terrain.width, self.terrain.height)


# -- loading ---------------------------------------------------------------

def _build(tp: Any, data: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (Union, types.UnionType):
        if data is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _build(inner[0], data, where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}") for k, v in data.items()}
        try:
            return tp(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if origin is list:
        if not isinstance(data, list):
            raise ConfigError(f"{where}: expected a list")
        return [_build(args[0], v, f"{where}[{i}]") for i, v in enumerate(data)]
    if origin is tuple:
        if not isinstance(data, (list, tuple)) or len(data) != len(args):
            raise ConfigError(f"{where}: expected a list of {len(args)} values")
        return tuple(_build(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, data)))
    if tp is float:
        if isinstance(data, bool) or not isinstance(data, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {data!r}")
        return float(data)
    if tp is int:
        if isinstance(data, bool) or not isinstance(data, int):
            raise ConfigError(f"{where}: expected an integer, got {data!r}")
        return data
    if tp is str:
        if not isinstance(data, str):
            raise ConfigError(f"{where}: expected a string, got {data!r}")
        return data
    raise ConfigError(f"{where}: unsupported field type {tp}")


def config_from_dict(data: dict) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "config")
    validate(cfg)
    return cfg


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    """Load a scenario file; ``None`` loads the shipped default scenario."""
    try:
        if path is None:
            text = resources.files("firesense.scenarios").joinpath(DEFAULT_SCENARIO).read_text()
            where = DEFAULT_SCENARIO
        else:
            text = Path(path).read_text()
            where = str(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{where}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: top level must be a mapping")
    return config_from_dict(data)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v
    return conv(cfg)


def validate(cfg: ScenarioConfig) -> list[str]:
    """Check cross-field constraints; return warnings, raise :class:`ConfigError` on violations."""
    warnings = []
    t = cfg.terrain
    if not (t.width > 0 and t.height > 0 and t.resolution > 0):
        raise ConfigError("terrain: width, height and resolution must be > 0")
    xmin, ymin, xmax, ymax = cfg.ignition.region
    if cfg.ignition.count < 1:
        raise ConfigError("ignition.count must be >= 1")
    if not (0 <= xmin <= xmax <= t.width and 0 <= ymin <= ymax <= t.height):
        raise ConfigError(f"ignition.region {cfg.ignition.region} must be a non-empty box inside the terrain")
    f = cfg.fire
    if f.R < 0 or f.U < 0 or not f.dt > 0 or f.noise_std < 0:
        raise ConfigError("fire: need R >= 0, U >= 0, dt > 0, noise_std >= 0")
    for ov in f.overrides:
        if ov.step < 1:
            raise ConfigError("fire.overrides: step must be >= 1")
        if (ov.R is not None and ov.R < 0) or (ov.U is not None and ov.U < 0):
            raise ConfigError("fire.overrides: R and U must be >= 0")
    if f.U < 0.1:
        warnings.append(f"fire.U={f.U} < 0.1: wind partial of the transition Jacobian is near-singular")
    fl = cfg.fleet
    if not fl.uavs:
        raise ConfigError("fleet.uavs must not be empty")
    for i, u in enumerate(fl.uavs):
        if not (0 <= u.x <= t.width and 0 <= u.y <= t.height) or u.z < 0:
            raise ConfigError(f"fleet.uavs[{i}] lies outside the terrain")
    ax, ay = fl.half_angles
    if not (0 < ax < math.pi / 2 and 0 < ay < math.pi / 2):
        raise ConfigError("fleet.half_angles must lie in (0, pi/2)")
    g = fl.gains
    rv = fl.rendezvous
    if not g.z_min <= rv.altitude <= g.z_max:
        raise ConfigError("fleet.rendezvous.altitude must lie within [z_min, z_max]")
    if rv.tolerance <= 0 or rv.max_steps < 0:
        raise ConfigError("fleet.rendezvous: tolerance > 0 and max_steps >= 0 required")
    if rv.point is not None and not (0 <= rv.point[0] <= t.width and 0 <= rv.point[1] <= t.height):
        raise ConfigError("fleet.rendezvous.point must lie inside the terrain")
    if fl.lawnmower_altitude is not None and not g.z_min <= fl.lawnmower_altitude <= g.z_max:
        raise ConfigError("fleet.lawnmower_altitude must lie within [z_min, z_max]")
    ids = [h.id for h in cfg.humans]
    if len(set(ids)) != len(ids):
        raise ConfigError("humans: ids must be distinct")
    for h in cfg.humans:
        if not h.waypoints:
            raise ConfigError(f"humans[{h.id}]: at least one waypoint required")
        steps = [w[0] for w in h.waypoints]
        if steps != sorted(steps):
            raise ConfigError(f"humans[{h.id}]: waypoint steps must be nondecreasing")
        if not (h.sigma_gps > 0 and h.sigma_mob >= h.sigma_gps and h.weight >= 0):
            raise ConfigError(f"humans[{h.id}]: need sigma_gps > 0, sigma_mob >= sigma_gps, weight >= 0")
    e = cfg.estimator
    if not 0 <= e.alpha <= 1:
        raise ConfigError("estimator.alpha must lie in [0, 1]")
    if e.position_std is not None and not e.position_std > 0:
        raise ConfigError("estimator.position_std must be > 0")
    if not abs(e.process.pose_correlation) < 1:
        raise ConfigError("estimator.process.pose_correlation must lie in (-1, 1)")
    for name, v in dataclasses.asdict(e.process).items():
        if name != "pose_correlation" and v < 0:
            raise ConfigError(f"estimator.process.{name} must be >= 0")
    for name, v in dataclasses.asdict(e.measurement).items():
        if not v > 0:
            raise ConfigError(f"estimator.measurement.{name} must be > 0")
    for name, v in dataclasses.asdict(e.param_std).items():
        if v < 0:
            raise ConfigError(f"estimator.param_std.{name} must be >= 0")
    r = cfg.run
    if r.steps < 0 or r.trials < 1:
        raise ConfigError("run: steps >= 0 and trials >= 1 required")
    if not 0 <= r.seed < 2**64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")
    if r.controller not in CONTROLLERS + BASELINES:
        raise ConfigError(f"run.controller must be one of {', '.join(CONTROLLERS + BASELINES)}")
    for w in warnings:
        logger.warning(w)
    return warnings
