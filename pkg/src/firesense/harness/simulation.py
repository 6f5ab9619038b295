"""One trial of the sense / map / control / move loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .. import controllers as ctl
from ..controllers import ControlGains, UavState
from ..estimator import (
    STATE_DIM, FilterInstance, NoiseModel, covariance_residual, init_filter, make_state,
    observation_function, predict, update,
)
from ..fire_model import FireParams, FireState, seed_ignitions, step_fire
from ..safety import SafetyReport, safety_index
from ..uncertainty_map import (
    GridMap, GridSpec, HumanState, fire_uncertainty_map, fuse, human_uncertainty_map,
)
from .baselines import Lawnmower, baseline_controller, lawnmower_plans
from .config import BASELINES, ScenarioConfig

logger = logging.getLogger(__name__)

_STREAMS = ("ignition", "fire", "measurement", "baseline", "estimator")


class InvariantViolation(RuntimeError):
    pass


@dataclass
class StepRecord:
    step: int
    residual: float
    cumulative_residual: float
    coverage: float
    n_covered: int
    consensus_error: float
    connected: bool
    uav_positions: list[list[float]]
    virtual_targets: list[list[float]]
    controls: list[list[float]]
    safety: list[SafetyReport]
    filters: list[dict] = field(default_factory=list)


@dataclass
class TrialMetrics:
    trial: int
    controller: str
    seed: int
    initial: StepRecord
    steps: list[StepRecord]
    rendezvous_steps: int
    flags: list[str]
    wall_time: float = 0.0

    @property
    def summed_residual(self) -> float:
        return self.steps[-1].cumulative_residual if self.steps else 0.0

    @property
    def mean_coverage(self) -> float:
        return float(np.mean([s.coverage for s in self.steps])) if self.steps else self.initial.coverage


def trial_streams(seed: int, trial_index: int) -> dict[str, np.random.Generator]:
    """Independent generators per purpose, derived from ``(seed, trial_index)``."""
    root = np.random.SeedSequence(entropy=seed, spawn_key=(trial_index,))
    return {name: np.random.default_rng(child) for name, child in zip(_STREAMS, root.spawn(len(_STREAMS)))}


# -- sensing ---------------------------------------------------------------

def fov_footprint(uav: UavState) -> tuple[float, float, float, float]:
    """Ground rectangle ``(xmin, ymin, xmax, ymax)`` seen by the camera."""
    px, py, pz = uav.position
    if not pz > 0:
        raise ValueError(f"footprint undefined for altitude {pz} <= 0")
    hx = pz * math.tan(uav.half_angles[0])
    hy = pz * math.tan(uav.half_angles[1])
    return (px - hx, py - hy, px + hx, py + hy)


def assign_observations(fire: FireState, fleet: list[UavState],
                        min_altitude: float = 0.0) -> dict[int, Optional[int]]:
    """Map each spot id to its observing UAV id (or ``None``).

    A spot is observed when it lies inside at least one footprint; among
    several, the UAV with the nearest footprint centre wins, then the lowest id.
    UAVs below ``min_altitude`` do not sense.
    """
    active = [(u, fov_footprint(u)) for u in sorted(fleet, key=lambda u: u.id)
              if u.position[2] > 0 and u.position[2] >= min_altitude]
    out: dict[int, Optional[int]] = {}
    for s in fire.spots:
        best, best_d = None, math.inf
        for u, (x0, y0, x1, y1) in active:
            if x0 <= s.x <= x1 and y0 <= s.y <= y1:
                d = math.hypot(s.x - u.position[0], s.y - u.position[1])
                if d < best_d:
                    best, best_d = u.id, d
        out[s.id] = best
    return out


def cumulative_uncertainty(filters: list[FilterInstance], assignment: dict[int, Optional[int]]) -> float:
    """Sum of ``Tr(S)`` over spots no UAV currently sees."""
    return float(sum(covariance_residual(f)[1] for f in filters if assignment.get(f.spot_id) is None))


# -- scenario helpers ------------------------------------------------------

def human_position(waypoints, step: float) -> tuple[float, float]:
    pts = np.asarray(waypoints, dtype=float)
    if step <= pts[0, 0]:
        return float(pts[0, 1]), float(pts[0, 2])
    if step >= pts[-1, 0]:
        return float(pts[-1, 1]), float(pts[-1, 2])
    return float(np.interp(step, pts[:, 0], pts[:, 1])), float(np.interp(step, pts[:, 0], pts[:, 2]))


def humans_at(cfg: ScenarioConfig, step: int) -> list[HumanState]:
    out = []
    for h in cfg.humans:
        x, y = human_position(h.waypoints, step)
        out.append(HumanState(h.id, x, y, h.sigma_gps, h.sigma_mob, h.weight))
    return out


def fire_params_at(cfg: ScenarioConfig, step: int, current: FireParams) -> FireParams:
    for ov in cfg.fire.overrides:
        if ov.step == step:
            current = FireParams(R=current.R if ov.R is None else ov.R,
                                 U=current.U if ov.U is None else ov.U,
                                 theta=current.theta if ov.theta is None else ov.theta,
                                 dt=current.dt)
    return current


def noise_model(cfg: ScenarioConfig) -> NoiseModel:
    e = cfg.estimator
    pr, ms = e.process, e.measurement
    Q = np.zeros((STATE_DIM, STATE_DIM))
    Q[0, 0] = Q[1, 1] = pr.position**2
    pose_var = pr.pose**2
    # loosely correlated pose axes
    Q[2:5, 2:5] = pose_var * (pr.pose_correlation * np.ones((3, 3)) + (1 - pr.pose_correlation) * np.eye(3))
    Q[5, 5], Q[6, 6], Q[7, 7] = pr.R**2, pr.U**2, pr.theta**2
    Gamma = np.diag([ms.angle**2, ms.angle**2, ms.R**2, ms.U**2, ms.theta**2])
    return NoiseModel(Q=Q, Gamma=Gamma, alpha=e.alpha)


def initial_filters(cfg: ScenarioConfig, fire: FireState, rng: np.random.Generator) -> list[FilterInstance]:
    """One filter per ignition, seeded from the fire-map with footprint-sized position uncertainty."""
    e = cfg.estimator
    g = cfg.fleet.gains
    if e.position_std is None:
        sx = g.z_min * math.tan(cfg.fleet.half_angles[0])
        sy = g.z_min * math.tan(cfg.fleet.half_angles[1])
    else:
        sx = sy = e.position_std
    params = fire.params
    prior = (params.R + e.param_bias.R, max(params.U + e.param_bias.U, 0.0), params.theta + e.param_bias.theta)
    noise = noise_model(cfg)
    P0 = np.diag([sx**2, sy**2, *np.diag(noise.Q)[2:5], e.param_std.R**2, e.param_std.U**2, e.param_std.theta**2])
    P0[2:5, 2:5] = noise.Q[2:5, 2:5]
    out = []
    for s in fire.spots:
        q = (s.x + rng.normal(0.0, sx), s.y + rng.normal(0.0, sy))
        state = make_state(q, (q[0], q[1], g.z_min), *prior)
        out.append(init_filter(s.id, state, P0, noise))
    return out


def synthesize_measurement(cfg: ScenarioConfig, fire: FireState, spot_id: int, uav: UavState,
                           rng: np.random.Generator) -> np.ndarray:
    spot = next(s for s in fire.spots if s.id == spot_id)
    p = fire.params
    truth = make_state((spot.x, spot.y), uav.position, p.R, p.U, p.theta)
    ms = cfg.estimator.measurement
    std = np.array([ms.angle, ms.angle, ms.R, ms.U, ms.theta])
    return observation_function(truth) + rng.normal(0.0, 1.0, size=5) * std


# -- control ---------------------------------------------------------------

def _obstacles(uav: UavState, fleet: list[UavState], gains: ControlGains, altitude_planes: bool):
    obs = [o.position for o in fleet
           if o.id != uav.id and np.linalg.norm(o.position - uav.position) < gains.gamma]
    if altitude_planes:
        x, y, _ = uav.position
        obs += [np.array([x, y, gains.z_min]), np.array([x, y, gains.z_max])]
    return obs


def rendezvous(cfg: ScenarioConfig, fleet: list[UavState]) -> tuple[list[UavState], int, bool]:
    """Fly the fleet to the rendezvous area, keeping its initial layout, and climb to altitude."""
    rv = cfg.fleet.rendezvous
    g = cfg.fleet.gains
    if rv.point is None:
        xmin, ymin, xmax, ymax = cfg.ignition.region
        point = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
    else:
        point = np.asarray(rv.point, dtype=float)
    centroid = np.mean([u.position[:2] for u in fleet], axis=0)
    goals = {u.id: np.array([*(point + u.position[:2] - centroid), rv.altitude]) for u in fleet}
    steps = 0
    arrived = False
    for steps in range(rv.max_steps + 1):
        if all(np.linalg.norm(goals[u.id] - u.position) <= rv.tolerance for u in fleet):
            arrived = True
            break
        if steps == rv.max_steps:
            break
        fleet = [ctl.ppc_step(u, [goals[u.id]], _obstacles(u, fleet, g, False), g, clamp_altitude=False)[0]
                 for u in fleet]
    fleet = [replace(u, position=np.array([u.position[0], u.position[1],
                                           min(max(u.position[2], g.z_min), g.z_max)]))
             for u in fleet]
    fleet = [replace(u, virtual_target=u.position.copy()) for u in fleet]
    return fleet, steps, arrived


def _filter_snapshot(f: FilterInstance, observer: Optional[int], trace_s: float) -> dict:
    return {
        "spot_id": f.spot_id,
        "observer": observer,
        "state": [float(v) for v in f.state],
        "P_diag": [float(v) for v in np.diag(f.P)],
        "trace_S": trace_s,
    }


def run_trial(cfg: ScenarioConfig, trial_index: int, controller: str | None = None,
              steps: int | None = None, on_map: Callable[[int, GridMap], None] | None = None,
              keep_filters: bool = True) -> TrialMetrics:
    """Run one trial; deterministic in ``(cfg, trial_index, controller, steps)``."""
    t0 = time.perf_counter()
    controller = controller or cfg.run.controller
    n_steps = cfg.run.steps if steps is None else steps
    g = cfg.fleet.gains
    dt = g.dt
    bounds = cfg.bounds
    z_band = ctl.altitude_band(g, planes=True)
    rng = trial_streams(cfg.run.seed, trial_index)
    spec = GridSpec.for_terrain(cfg.terrain.width, cfg.terrain.height, cfg.terrain.resolution)
    flags: list[str] = []

    params = FireParams(cfg.fire.R, cfg.fire.U, cfg.fire.theta, cfg.fire.dt)
    fire = seed_ignitions(rng["ignition"], cfg.ignition.count, cfg.ignition.region, params)
    fleet = [UavState(i, (u.x, u.y, u.z), tuple(cfg.fleet.half_angles)) for i, u in enumerate(cfg.fleet.uavs)]
    fleet, rv_steps, arrived = rendezvous(cfg, fleet)
    if not arrived:
        flags.append("rendezvous_incomplete")
    filters = initial_filters(cfg, fire, rng["estimator"])

    plans: dict[int, Lawnmower] = {}
    if controller == "lawnmower":
        alt = cfg.fleet.lawnmower_altitude or cfg.fleet.rendezvous.altitude
        plans = {u.id: p for u, p in zip(sorted(fleet, key=lambda u: u.id),
                                          lawnmower_plans(fleet, (cfg.terrain.width, cfg.terrain.height), alt))}

    def record(step, residual, cum, assignment, controls, humans, trace_by_spot):
        covered = sum(1 for v in assignment.values() if v is not None)
        positions = [u.position for u in fleet]
        conn = ctl.is_connected(positions, g)
        return StepRecord(
            step=step,
            residual=residual,
            cumulative_residual=cum,
            coverage=covered / len(assignment) if assignment else 0.0,
            n_covered=covered,
            consensus_error=ctl.consensus_error(positions, g),
            connected=conn,
            uav_positions=[[float(v) for v in u.position] for u in fleet],
            virtual_targets=[[float(v) for v in u.virtual_target] for u in fleet],
            controls=[[float(v) for v in c] for c in controls],
            safety=[safety_index(h, filters, cfg.safety) for h in humans],
            filters=[_filter_snapshot(f, assignment.get(f.spot_id), trace_by_spot[f.spot_id])
                     for f in filters] if keep_filters else [],
        )

    assignment = assign_observations(fire, fleet, g.z_min)
    traces = {f.spot_id: covariance_residual(f)[1] for f in filters}
    init_res = sum(tr for sid, tr in traces.items() if assignment[sid] is None)
    initial = record(0, init_res, 0.0, assignment, [np.zeros(3)] * len(fleet), humans_at(cfg, 0), traces)

    records: list[StepRecord] = []
    cum = 0.0
    for step in range(1, n_steps + 1):
        params = fire_params_at(cfg, step, fire.params)
        if params is not fire.params:
            fire = replace(fire, params=params)

        # sense: predict every filter, update those in view
        assignment = assign_observations(fire, fleet, g.z_min)
        by_id = {u.id: u for u in fleet}
        residual = 0.0
        traces = {}
        new_filters = []
        for f in filters:
            obs = assignment[f.spot_id]
            pose = by_id[obs].position if obs is not None else None
            f = predict(f, dt, pose)
            tr = covariance_residual(f)[1]
            traces[f.spot_id] = tr
            if obs is None:
                residual += tr
            else:
                z = synthesize_measurement(cfg, fire, f.spot_id, by_id[obs], rng["measurement"])
                f = update(f, z)
                if "update_skipped" in f.flags:
                    flags.append(f"update_skipped:{step}:{f.spot_id}")
            new_filters.append(f)
        filters = new_filters
        cum += residual

        humans = humans_at(cfg, step)
        need_map = controller in ("full", "ucc-only") or on_map is not None
        if need_map:
            fused = fuse(fire_uncertainty_map(filters, spec), human_uncertainty_map(humans, spec))
            if on_map is not None:
                on_map(step, fused)

        # control and move (simultaneous update from one snapshot)
        snapshot = list(fleet)
        positions = {u.id: u.position for u in snapshot}
        moved, controls = [], []
        for uav in snapshot:
            if controller in BASELINES:
                u = baseline_controller(controller, uav, rng["baseline"], g, plans.get(uav.id))
                new = ctl.move(uav, u, g)
                new = replace(new, virtual_target=new.position.copy())
            else:
                own = [f for f in filters if assignment[f.spot_id] == uav.id]
                u_ucc = ctl.ucc_control(uav, fused, own, g) if controller != "fcc-only" else np.zeros(3)
                if controller != "ucc-only":
                    nbrs = [p for i, p in positions.items()
                            if i != uav.id and np.linalg.norm(p - uav.position) < g.Delta_comm]
                    u_fcc = ctl.fcc_control(uav, nbrs, g)
                else:
                    u_fcc = np.zeros(3)
                target = ctl.virtual_position(uav, u_ucc, u_fcc, dt, g, bounds, z_band)
                uav = replace(uav, virtual_target=target)
                new, u = ctl.ppc_step(uav, [target], _obstacles(uav, snapshot, g, True), g)
            p = new.position
            p[0] = min(max(p[0], bounds[0]), bounds[2])
            p[1] = min(max(p[1], bounds[1]), bounds[3])
            moved.append(new)
            controls.append(u)
        fleet = moved
        _check_invariants(fleet, controls, g, step)
        if not ctl.is_connected([u.position for u in fleet], g):
            flags.append(f"disconnected:{step}")

        records.append(record(step, residual, cum, assignment, controls, humans, traces))
        fire = step_fire(fire, rng["fire"].normal(0.0, cfg.fire.noise_std, size=(len(fire.spots), 2)),
                         bounds=bounds)
        if fire.clamped:
            flags.append(f"fire_clamped:{step}:{len(fire.clamped)}")

    return TrialMetrics(trial=trial_index, controller=controller, seed=cfg.run.seed, initial=initial,
                        steps=records, rendezvous_steps=rv_steps, flags=flags,
                        wall_time=time.perf_counter() - t0)


def _check_invariants(fleet: list[UavState], controls, gains: ControlGains, step: int) -> None:
    for u, c in zip(fleet, controls):
        z = u.position[2]
        if not gains.z_min - 1e-9 <= z <= gains.z_max + 1e-9:
            raise InvariantViolation(f"step {step}: uav {u.id} altitude {z} outside [{gains.z_min}, {gains.z_max}]")
        if float(np.linalg.norm(c)) > gains.u_max * (1 + 1e-9):
            raise InvariantViolation(f"step {step}: uav {u.id} control exceeds u_max")
        if not np.all(np.isfinite(u.position)):
            raise InvariantViolation(f"step {step}: uav {u.id} position is not finite")
