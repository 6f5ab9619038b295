"""Comparison controllers that ignore the uncertainty map."""

from __future__ import annotations

import math

import numpy as np

from ..controllers import ControlGains, UavState, clamp_norm
from .config import BASELINES, ConfigError


class Lawnmower:
    """Boustrophedon sweep of one column band of the terrain at fixed altitude.

    Lanes run along ``y`` and are spaced one footprint width apart, so a full
    pass over the waypoint list images every column of the band.
    """

    def __init__(self, band: tuple[float, float], height: float, altitude: float,
                 half_angle_x: float):
        self.altitude = altitude
        swath = 2.0 * altitude * math.tan(half_angle_x)
        x0, x1 = band
        n_lanes = max(1, math.ceil((x1 - x0) / swath))
        lanes = [min(x0 + swath * (k + 0.5), x1) for k in range(n_lanes)]
        pts = []
        for k, x in enumerate(lanes):
            ys = (0.0, height) if k % 2 == 0 else (height, 0.0)
            pts += [(x, ys[0], altitude), (x, ys[1], altitude)]
        self.swath = swath
        self.waypoints = np.array(pts)
        self.index = 0

    def period_length(self) -> float:
        """Path length of one sweep, returning to the first waypoint."""
        closed = np.vstack([self.waypoints, self.waypoints[:1]])
        return float(np.linalg.norm(np.diff(closed, axis=0), axis=1).sum())

    def control(self, uav: UavState, gains: ControlGains) -> np.ndarray:
        for _ in range(len(self.waypoints)):
            target = self.waypoints[self.index]
            if np.linalg.norm(target - uav.position) > 1e-6:
                break
            self.index = (self.index + 1) % len(self.waypoints)
        u = (self.waypoints[self.index] - uav.position) / gains.dt
        return clamp_norm(u, gains.u_max)


def lawnmower_plans(fleet: list[UavState], terrain: tuple[float, float], altitude: float) -> list[Lawnmower]:
    """Split the terrain into equal column bands, one per UAV in id order."""
    width, height = terrain
    n = len(fleet)
    return [Lawnmower((width * k / n, width * (k + 1) / n), height, altitude, uav.half_angles[0])
            for k, uav in enumerate(sorted(fleet, key=lambda u: u.id))]


def baseline_controller(name: str, uav: UavState, rng: np.random.Generator,
                        gains: ControlGains, plan: Lawnmower | None = None) -> np.ndarray:
    if name == "stationary":
        return np.zeros(3)
    if name == "random-walk":
        # uniform in a cube inscribed in the u_max ball
        a = gains.u_max / math.sqrt(3.0)
        return rng.uniform(-a, a, size=3)
    if name == "lawnmower":
        if plan is None:
            raise ConfigError("lawnmower baseline needs a sweep plan")
        return plan.control(uav, gains)
    raise ConfigError(f"unknown baseline {name!r}; expected one of {', '.join(BASELINES)}")
