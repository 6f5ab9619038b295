"""Simplified FARSITE point propagation for firefront spots.

Each fire-spot drifts with a velocity set by the global spread rate ``R``,
wind speed ``U`` and wind azimuth ``theta`` (measured clockwise from +y, so
``theta = 0`` moves spots along +y). Units are abstract but must be
consistent: terrain distance, time steps and speed share one system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# length-to-breadth coefficients
_LB_A, _LB_B = 0.936, 0.256
_LB_C, _LB_D = 0.461, -0.154
_LB_E = 0.397


@dataclass(frozen=True)
class FireParams:
    R: float
    U: float
    theta: float
    dt: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.R) and self.R >= 0):
            raise ValueError(f"spread rate R must be finite and >= 0, got {self.R}")
        if not (math.isfinite(self.U) and self.U >= 0):
            raise ValueError(f"wind speed U must be finite and >= 0, got {self.U}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "theta", self.theta % TWO_PI)


@dataclass(frozen=True)
class FireSpot:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class FireState:
    spots: tuple[FireSpot, ...]
    params: FireParams
    time: int = 0
    # ids of spots clamped to the terrain boundary on the last step
    clamped: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "spots", tuple(self.spots))
        ids = [s.id for s in self.spots]
        if len(set(ids)) != len(ids):
            raise ValueError("fire-spot ids must be distinct")
        for s in self.spots:
            if not (math.isfinite(s.x) and math.isfinite(s.y)):
                raise ValueError(f"spot {s.id} has a non-finite position")

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.spots]

    def positions(self) -> np.ndarray:
        """Spot positions as an ``(n, 2)`` array, in spot order."""
        return np.array([[s.x, s.y] for s in self.spots], dtype=float).reshape(-1, 2)


def _check_wind(U: float) -> None:
    if not (math.isfinite(U) and U >= 0):
        raise ValueError(f"wind speed must be finite and >= 0, got {U}")


def lb_factor(U: float) -> float:
    """Length-to-breadth ratio ``0.936 e^{0.256U} + 0.461 e^{-0.154U} - 0.397``.

    Evaluated as ``1 + 0.936 expm1(0.256U) + 0.461 expm1(-0.154U)``, which is
    the same expression (the constants sum to one) but exact at ``U = 0``.
    """
    _check_wind(U)
    return 1.0 + _LB_A * math.expm1(_LB_B * U) + _LB_C * math.expm1(_LB_D * U)


def lb_derivative(U: float) -> float:
    _check_wind(U)
    return _LB_A * _LB_B * math.exp(_LB_B * U) + _LB_C * _LB_D * math.exp(_LB_D * U)


def gb_factor(U: float) -> float:
    """``LB(U)^2 - 1``, factored as ``(LB - 1)(LB + 1)`` to keep precision near zero wind."""
    lb = lb_factor(U)
    excess = _LB_A * math.expm1(_LB_B * U) + _LB_C * math.expm1(_LB_D * U)
    return max(excess * (lb + 1.0), 0.0)


def spread_coefficient(R: float, U: float) -> float:
    """Head-fire speed ``R (1 - LB / (LB + sqrt(GB)))``.

    Computed as ``R sqrt(GB) / (LB + sqrt(GB))`` to avoid cancellation.
    Zero wind gives zero spread; the result always lies in ``[0, R]``.
    """
    if not (math.isfinite(R) and R >= 0):
        raise ValueError(f"spread rate must be finite and >= 0, got {R}")
    lb = lb_factor(U)
    root_gb = math.sqrt(gb_factor(U))
    return R * root_gb / (lb + root_gb)


def spread_coefficient_partials(R: float, U: float) -> tuple[float, float]:
    """Return ``(dC/dR, dC/dU)``.

    ``dC/dU = R LB'(U) / (sqrt(GB) (LB + sqrt(GB))^2)`` is singular at
    ``U = 0``; callers must handle that case.
    """
    lb = lb_factor(U)
    root_gb = math.sqrt(gb_factor(U))
    denom = lb + root_gb
    dC_dR = root_gb / denom
    if root_gb == 0.0:
        return dC_dR, math.inf
    dC_dU = R * lb_derivative(U) / (root_gb * denom * denom)
    return dC_dR, dC_dU


def propagation_velocity(params: FireParams) -> tuple[float, float]:
    c = spread_coefficient(params.R, params.U)
    return c * math.sin(params.theta), c * math.cos(params.theta)


def step_fire(
    state: FireState,
    noise: Sequence[Sequence[float]] | np.ndarray | None = None,
    bounds: tuple[float, float, float, float] | None = None,
    params: FireParams | None = None,
) -> FireState:
    """Advance every spot one step: ``q <- q + qdot * dt + noise``.

    Args:
        state: current fire state.
        noise: per-spot ``(dx, dy)`` perturbations, one row per spot.
            ``None`` means no noise.
        bounds: optional ``(xmin, ymin, xmax, ymax)``; spots leaving it are
            clamped and reported in ``clamped`` of the returned state.
        params: scripted override for this step; defaults to ``state.params``.
    """
    params = params or state.params
    n = len(state.spots)
    if noise is None:
        noise_arr = np.zeros((n, 2))
    else:
        noise_arr = np.asarray(noise, dtype=float)
        if noise_arr.shape != (n, 2):
            raise ValueError(f"noise must have shape ({n}, 2), got {noise_arr.shape}")

    vx, vy = propagation_velocity(params)
    dx, dy = vx * params.dt, vy * params.dt
    moved = []
    clamped = set()
    for spot, (nx, ny) in zip(state.spots, noise_arr):
        x = spot.x + dx + float(nx)
        y = spot.y + dy + float(ny)
        if bounds is not None:
            xmin, ymin, xmax, ymax = bounds
            cx, cy = min(max(x, xmin), xmax), min(max(y, ymin), ymax)
            if (cx, cy) != (x, y):
                clamped.add(spot.id)
            x, y = cx, cy
        moved.append(FireSpot(spot.id, x, y))
    return replace(state, spots=tuple(moved), params=params, time=state.time + 1,
                   clamped=frozenset(clamped))


def seed_ignitions(
    rng: np.random.Generator,
    count: int,
    region: tuple[float, float, float, float],
    params: FireParams,
) -> FireState:
    """Place ``count`` ignition points uniformly inside ``(xmin, ymin, xmax, ymax)``."""
    if count < 1:
        raise ValueError("ignition count must be >= 1")
    xmin, ymin, xmax, ymax = region
    if not (xmax >= xmin and ymax >= ymin):
        raise ValueError(f"empty ignition region {region}")
    xs = rng.uniform(xmin, xmax, size=count) if xmax > xmin else np.full(count, float(xmin))
    ys = rng.uniform(ymin, ymax, size=count) if ymax > ymin else np.full(count, float(ymin))
    spots = tuple(FireSpot(i, float(x), float(y)) for i, (x, y) in enumerate(zip(xs, ys)))
    return FireState(spots=spots, params=params, time=0)
