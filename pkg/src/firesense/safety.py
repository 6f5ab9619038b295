"""Per-firefighter breach probabilities and the temporal safety index.

The safety index is a time: for every fire-spot near a firefighter, the time
until the spot closes to within the safe radius at its estimated approach
speed. The smallest such time is scaled by the product of the spots'
stay-clear probabilities. Larger values are safer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .estimator import R_, TH, U_, FilterInstance
from .fire_model import FireParams, propagation_velocity
from .uncertainty_map import HumanState


class Level(str, Enum):
    SAFE = "Safe"
    WARNING = "Warning"
    DANGER = "Danger"


@dataclass(frozen=True)
class SafetyConfig:
    r_s: float
    P_s: float
    T_s: float
    T_w: float
    v_radius: float | None = None
    eps_v: float = 1e-3
    si_max: float = 1e4

    def __post_init__(self):
        if not self.r_s > 0:
            raise ValueError("r_s must be > 0")
        if not 0 < self.P_s < 1:
            raise ValueError("P_s must lie in (0, 1)")
        if not self.T_s > self.T_w > 0:
            raise ValueError("need T_s > T_w > 0")
        if self.v_radius is None:
            object.__setattr__(self, "v_radius", 5.0 * self.r_s)
        if not self.v_radius > 0 or not self.eps_v > 0 or not self.si_max > 0:
            raise ValueError("v_radius, eps_v and si_max must be > 0")


@dataclass(frozen=True)
class SpotContribution:
    spot_id: int
    P_ih: float
    approach_speed: float
    distance: float


@dataclass(frozen=True)
class SafetyReport:
    human_id: int
    si_value: float
    level: Level
    contributing_spots: tuple[SpotContribution, ...] = ()
    min_distance: float = math.inf


def breach_probability(mean, sigma: float, human: HumanState, r_s: float) -> float:
    """Probability that the spot stays at least ``r_s`` away from the human.

    The separation is modelled as a 1D Gaussian with mean ``d`` (distance of
    the spot estimate to the human) and std ``sigma``; the result is
    ``1 - Phi((r_s - d) / sigma)``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    d = math.hypot(float(mean[0]) - human.gps_x, float(mean[1]) - human.gps_y)
    return float(ndtr((d - r_s) / sigma))


def spot_sigma(filt: FilterInstance) -> float:
    """Conservative positional std: sqrt of the largest eigenvalue of the position block."""
    block = 0.5 * (filt.P[:2, :2] + filt.P[:2, :2].T)
    return math.sqrt(max(float(np.linalg.eigvalsh(block).max()), 1e-12))


def _in_vicinity(human: HumanState, filters: Sequence[FilterInstance], radius: float):
    for f in filters:
        d = math.hypot(f.state[0] - human.gps_x, f.state[1] - human.gps_y)
        if d <= radius:
            yield f, d


def vicinity_product(human: HumanState, filters: Sequence[FilterInstance],
                     config: SafetyConfig) -> tuple[float, bool]:
    """Product of stay-clear probabilities over spots within ``v_radius``, and whether it meets ``P_s``."""
    prod = 1.0
    for f, _ in _in_vicinity(human, filters, config.v_radius):
        prod *= breach_probability(f.position, spot_sigma(f), human, config.r_s)
    return prod, prod >= config.P_s


def estimated_velocity(filt: FilterInstance, dt: float = 1.0) -> np.ndarray:
    s = filt.state
    params = FireParams(R=max(float(s[R_]), 0.0), U=max(float(s[U_]), 0.0),
                        theta=float(s[TH]), dt=dt)
    return np.array(propagation_velocity(params))


def classify(si_value: float, config: SafetyConfig) -> Level:
    if si_value >= config.T_s:
        return Level.SAFE
    if si_value >= config.T_w:
        return Level.WARNING
    return Level.DANGER


def safety_index(human: HumanState, filters: Sequence[FilterInstance],
                 config: SafetyConfig) -> SafetyReport:
    """Safety index and level for one human.

    Spots whose approach speed does not exceed ``eps_v`` (receding or
    tangential) never close the gap and contribute no finite time. With no
    approaching spot the index is ``si_max``.
    """
    contributions = []
    prod = 1.0
    min_time = math.inf
    hp = human.position
    min_dist = min((math.hypot(f.state[0] - hp[0], f.state[1] - hp[1]) for f in filters),
                   default=math.inf)
    for f, d in _in_vicinity(human, filters, config.v_radius):
        p_ih = breach_probability(f.position, spot_sigma(f), human, config.r_s)
        prod *= p_ih
        to_human = hp - f.position
        direction = to_human / d if d > 0 else np.zeros(2)
        raw = float(estimated_velocity(f) @ direction)
        speed = max(config.eps_v, raw)
        if raw > config.eps_v:
            min_time = min(min_time, max(d - config.r_s, 0.0) / speed)
        contributions.append(SpotContribution(f.spot_id, p_ih, speed, d))

    si = config.si_max if math.isinf(min_time) else min(config.si_max, min_time * prod)
    return SafetyReport(human.id, si, classify(si, config), tuple(contributions), min_dist)
