"""Node-level UAV control: uncertainty (UCC), formation (FCC) and path planning (PPC).

Sign convention: the UCC output climbs the fused uncertainty map, the FCC
output descends the weighted-consensus error, and the virtual target moves by
their sum. All gains are positive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .estimator import PX, PY, PZ, QX, QY, FilterInstance, _betas, _check_altitude
from .uncertainty_map import GridMap, sample_gradient

logger = logging.getLogger(__name__)

EPS_MIN = 1e-6


@dataclass(frozen=True)
class ControlGains:
    kappa_x: float = 5.0e4
    kappa_y: float = 5.0e4
    kappa_z: float = 0.01
    kappa_2: float = 1.0e7
    kappa_g: float = 1.0
    zeta_scale: float = 1.0e4
    gamma: float = 10.0
    delta_min: float = 50.0
    Delta_comm: float = 500.0
    dt: float = 1.0
    u_max: float = 5.0
    z_min: float = 15.0
    z_max: float = 45.0

    def __post_init__(self):
        for name in ("kappa_x", "kappa_y", "kappa_z", "kappa_2", "kappa_g", "zeta_scale",
                     "gamma", "delta_min", "Delta_comm", "dt", "u_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gain {name} must be > 0")
        if not self.delta_min < self.Delta_comm:
            raise ValueError("need 0 < delta_min < Delta_comm")
        if not 0 < self.z_min <= self.z_max:
            raise ValueError("need 0 < z_min <= z_max")


@dataclass(frozen=True)
class UavState:
    id: int
    position: np.ndarray
    half_angles: tuple[float, float] = (math.pi / 4, math.pi / 6)
    virtual_target: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.array(self.position, dtype=float))
        vt = self.position if self.virtual_target is None else self.virtual_target
        object.__setattr__(self, "virtual_target", np.array(vt, dtype=float))
        ax, ay = self.half_angles
        if not (0 < ax < math.pi / 2 and 0 < ay < math.pi / 2):
            raise ValueError(f"camera half-angles must lie in (0, pi/2), got {self.half_angles}")


def clamp_norm(u, u_max: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = float(np.linalg.norm(u))
    if n > u_max:
        return u * (u_max / n)
    return u


# -- UCC -------------------------------------------------------------------

def _sq_partial_grads(q: float, p: float, pz: float):
    """Gradients of the squared angle partials w.r.t. ``(p, pz)``.

    With ``u = (q - p)/pz`` and ``g = 1/(1+u^2)``, the squared partials are
    ``a^2 = g^2/pz^2`` (same for d/dq and d/dp) and ``c^2 = g^2 u^2 / pz^2``.
    Returns ``(da2_dp, da2_dpz, dc2_dp, dc2_dpz)``.
    """
    _check_altitude(pz)
    u = (q - p) / pz
    g = 1.0 / (1.0 + u * u)
    g3, pz3 = g**3, pz**3
    da2_dp = 4.0 * u * g3 / pz3
    da2_dpz = (4.0 * u * u * g3 - 2.0 * g * g) / pz3
    dc2_dp = -2.0 * g3 * u * (1.0 - u * u) / pz3
    dc2_dpz = -4.0 * g3 * u * u / pz3
    return da2_dp, da2_dpz, dc2_dp, dc2_dpz


def analytic_ucc_gradient(state, P, Q) -> np.ndarray:
    """Gradient of the trace objective w.r.t. the UAV position ``(p_x, p_y, p_z)``."""
    x = np.asarray(state, dtype=float)
    b1, b2, b3, b4, b5 = _betas(P, Q)
    ax_p, ax_z, cx_p, cx_z = _sq_partial_grads(x[QX], x[PX], x[PZ])
    ay_p, ay_z, cy_p, cy_z = _sq_partial_grads(x[QY], x[PY], x[PZ])
    gx = (b1 + b3) * ax_p + b5 * cx_p
    gy = (b2 + b4) * ay_p + b5 * cy_p
    gz = b1 * ax_z + b2 * ay_z + b3 * ax_z + b4 * ay_z + b5 * (cx_z + cy_z)
    return np.array([gx, gy, gz])


def ucc_z_gradient(uav: UavState, filters: Iterable[FilterInstance]) -> float:
    total = 0.0
    for f in filters:
        s = np.array(f.state, dtype=float)
        s[[PX, PY, PZ]] = uav.position
        total += analytic_ucc_gradient(s, f.P, f.noise.Q)[2]
    return total


def ucc_control(uav: UavState, fused_map: GridMap, own_filters: Sequence[FilterInstance],
                gains: ControlGains) -> np.ndarray:
    """Ascent on the fused map horizontally, analytic trace gradient vertically."""
    gx, gy = sample_gradient(fused_map, uav.position[:2])
    gz = ucc_z_gradient(uav, own_filters) if own_filters else 0.0
    u = np.array([gains.kappa_x * gx, gains.kappa_y * gy, gains.kappa_z * gz])
    return clamp_norm(u, gains.u_max)


# -- FCC -------------------------------------------------------------------

def pair_consensus_error(d: float, gains: ControlGains) -> float:
    delta, Delta = gains.delta_min, gains.Delta_comm
    if d >= Delta:
        return math.inf
    return ((d - delta) / (Delta - d)) ** 2 / (2.0 * (Delta - delta))


def neighbor_pairs(positions, gains: ControlGains) -> list[tuple[int, int]]:
    """Ordered pairs ``(i, j)``, ``i != j``, closer than the communication range."""
    pos = np.asarray(positions, dtype=float)
    pairs = []
    for i in range(len(pos)):
        for j in range(len(pos)):
            if i != j and np.linalg.norm(pos[i] - pos[j]) < gains.Delta_comm:
                pairs.append((i, j))
    return pairs


def consensus_error(positions, gains: ControlGains, edges=None) -> float:
    """Weighted-consensus displacement error summed over ordered neighbour pairs.

    ``edges`` defaults to every pair within range; an explicit edge at or past
    the range returns ``inf`` (the network has disconnected).
    """
    pos = np.asarray(positions, dtype=float)
    if edges is None:
        edges = neighbor_pairs(pos, gains)
    return float(sum(pair_consensus_error(float(np.linalg.norm(pos[i] - pos[j])), gains)
                     for i, j in edges))


def is_connected(positions, gains: ControlGains) -> bool:
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    if n <= 1:
        return True
    adj = {i: set() for i in range(n)}
    for i, j in neighbor_pairs(pos, gains):
        adj[i].add(j)
    seen, stack = {0}, [0]
    while stack:
        for j in adj[stack.pop()] - seen:
            seen.add(j)
            stack.append(j)
    return len(seen) == n


def fcc_control(uav: UavState, neighbors, gains: ControlGains, clamp: bool = True) -> np.ndarray:
    """Gradient-descent flow of the consensus error, scaled by ``kappa_2``.

    Coincident neighbours are skipped (logged); neighbours at or beyond the
    communication range are ignored.
    """
    p = uav.position
    u = np.zeros(3)
    for q in np.asarray(neighbors, dtype=float).reshape(-1, 3):
        diff = p - q
        d = float(np.linalg.norm(diff))
        if d < EPS_MIN:
            logger.warning("uav %s: coincident neighbour skipped in formation control", uav.id)
            continue
        if d >= gains.Delta_comm:
            continue
        u -= (1.0 - gains.delta_min / d) * diff / (gains.Delta_comm - d) ** 3
    u *= gains.kappa_2
    return clamp_norm(u, gains.u_max) if clamp else u


def altitude_band(gains: ControlGains, planes: bool) -> tuple[float, float]:
    """Admissible target altitudes.

    With the altitude planes acting as PPC obstacles, a target inside a
    plane's repulsion zone is never reached and the vehicle oscillates, so the
    band shrinks by ``gamma`` on each side when it can.
    """
    lo, hi = gains.z_min, gains.z_max
    if planes and hi - lo >= 2.0 * gains.gamma:
        return lo + gains.gamma, hi - gains.gamma
    return lo, hi


def virtual_position(uav: UavState, u_ucc, u_fcc, dt: float, gains: ControlGains,
                     bounds: tuple[float, float, float, float] | None = None,
                     z_band: tuple[float, float] | None = None) -> np.ndarray:
    v = uav.virtual_target + (np.asarray(u_ucc) + np.asarray(u_fcc)) * dt
    lo, hi = z_band if z_band is not None else (gains.z_min, gains.z_max)
    v[2] = min(max(v[2], lo), hi)
    if bounds is not None:
        xmin, ymin, xmax, ymax = bounds
        v[0] = min(max(v[0], xmin), xmax)
        v[1] = min(max(v[1], ymin), ymax)
    return v


# -- PPC -------------------------------------------------------------------

def attractive_force(p, goal, kappa_g: float) -> np.ndarray:
    return kappa_g * (np.asarray(goal, dtype=float) - np.asarray(p, dtype=float))


def repulsive_force(p, obstacle, kappa_g: float, gamma: float, zeta_scale: float = 1.0) -> np.ndarray:
    """Quadratic-barrier repulsion, active only within ``gamma`` of the obstacle."""
    p = np.asarray(p, dtype=float)
    diff = np.asarray(obstacle, dtype=float) - p
    d = float(np.linalg.norm(diff))
    if d >= gamma:
        return np.zeros(3)
    if d < EPS_MIN:
        logger.warning("repulsion evaluated at an obstacle; magnitude capped")
        d = EPS_MIN
        n = float(np.linalg.norm(diff))
        diff = diff / n * d if n > 0 else np.array([0.0, 0.0, -d])
    return -zeta_scale * kappa_g * (1.0 / d - 1.0 / gamma) * diff / d**3


def ppc_control(uav: UavState, goals, obstacles, gains: ControlGains) -> np.ndarray:
    """Attraction to the goals plus barrier repulsion from the obstacles.

    The summed attraction is saturated at ``u_max`` before the repulsion is
    added, so a far-away goal cannot overpower the barrier near an obstacle.
    """
    p = uav.position
    u = np.zeros(3)
    for g in np.asarray(goals, dtype=float).reshape(-1, 3):
        u += attractive_force(p, g, gains.kappa_g)
    u = clamp_norm(u, gains.u_max)
    for o in np.asarray(obstacles, dtype=float).reshape(-1, 3):
        u += repulsive_force(p, o, gains.kappa_g, gains.gamma, gains.zeta_scale)
    return clamp_norm(u, gains.u_max)


def move(uav: UavState, u, gains: ControlGains, clamp_altitude: bool = True) -> UavState:
    p = uav.position + np.asarray(u, dtype=float) * gains.dt
    if clamp_altitude:
        p[2] = min(max(p[2], gains.z_min), gains.z_max)
    return replace(uav, position=p)


def ppc_step(uav: UavState, goals, obstacles, gains: ControlGains,
             clamp_altitude: bool = True) -> tuple[UavState, np.ndarray]:
    u = ppc_control(uav, goals, obstacles, gains)
    return move(uav, u, gains, clamp_altitude), u
