"""Adaptive extended Kalman filter for a single fire-spot.

State layout (8): ``q_x, q_y, p_x, p_y, p_z, R, U, theta`` -- spot position,
observing UAV position, fire parameters.
Observation layout (5): ``phi_x, phi_y, R, U, theta`` -- look angles from the
UAV to the spot, plus direct (forecast) readings of the fire parameters.

The UAV pose is an exogenous input: ``state_transition`` replaces it with the
observer's commanded pose, so its rows in the transition Jacobian are zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fire_model import TWO_PI, spread_coefficient, spread_coefficient_partials

logger = logging.getLogger(__name__)

QX, QY, PX, PY, PZ, R_, U_, TH = range(8)
STATE_DIM = 8
OBS_DIM = 5

FD_STEP = 1e-6


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    return -((-np.asarray(a) + math.pi) % TWO_PI - math.pi)


@dataclass(frozen=True)
class NoiseModel:
    Q: np.ndarray
    Gamma: np.ndarray
    alpha: float = 0.95

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        G = np.array(self.Gamma, dtype=float)
        if Q.shape != (STATE_DIM, STATE_DIM) or G.shape != (OBS_DIM, OBS_DIM):
            raise ValueError("Q must be 8x8 and Gamma 5x5")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name, M in (("Q", Q), ("Gamma", G)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-9:
                raise ValueError(f"{name} must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Gamma", G)


@dataclass(frozen=True)
class FilterInstance:
    spot_id: int
    state: np.ndarray
    P: np.ndarray
    noise: NoiseModel
    last_innovation: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM))
    # predicted covariance P_{t|t-1} from the most recent predict
    P_prior: np.ndarray | None = None
    flags: frozenset[str] = frozenset()

    @property
    def position(self) -> np.ndarray:
        return self.state[[QX, QY]]

    @property
    def pose(self) -> np.ndarray:
        return self.state[[PX, PY, PZ]]


def make_state(q, p, R, U, theta) -> np.ndarray:
    return np.array([q[0], q[1], p[0], p[1], p[2], R, U, theta], dtype=float)


def init_filter(spot_id: int, state, P, noise: NoiseModel) -> FilterInstance:
    state = np.array(state, dtype=float)
    P = np.array(P, dtype=float)
    if state.shape != (STATE_DIM,) or P.shape != (STATE_DIM, STATE_DIM):
        raise ValueError("state must have 8 entries and P be 8x8")
    return FilterInstance(spot_id=spot_id, state=state, P=_symmetrize(P), noise=noise)


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


# -- models ----------------------------------------------------------------

def state_transition(state, dt: float, pose=None) -> np.ndarray:
    """Propagate one step.

    The spot position moves with the fire velocity implied by the state's own
    ``(R, U, theta)``. Parameters are held constant. The pose entries are
    replaced by ``pose`` when given and left as-is otherwise.
    """
    x = np.array(state, dtype=float)
    R, U, th = x[R_], max(x[U_], 0.0), x[TH]
    c = spread_coefficient(max(R, 0.0), U)
    x[QX] += c * math.sin(th) * dt
    x[QY] += c * math.cos(th) * dt
    if pose is not None:
        x[[PX, PY, PZ]] = np.asarray(pose, dtype=float)
    return x


def transition_jacobian(state, dt: float) -> np.ndarray:
    """Analytic 8x8 Jacobian of :func:`state_transition` with exogenous pose.

    At ``U = 0`` the wind partial is singular; a one-sided forward difference
    is substituted there (see :func:`wind_singular`).
    """
    x = np.asarray(state, dtype=float)
    R, U, th = max(x[R_], 0.0), max(x[U_], 0.0), x[TH]
    F = np.eye(STATE_DIM)
    F[PX, PX] = F[PY, PY] = F[PZ, PZ] = 0.0

    c = spread_coefficient(R, U)
    dC_dR, dC_dU = spread_coefficient_partials(R, U)
    if not math.isfinite(dC_dU):
        dC_dU = (spread_coefficient(R, U + FD_STEP) - c) / FD_STEP
    s, co = math.sin(th), math.cos(th)
    F[QX, R_], F[QY, R_] = dC_dR * s * dt, dC_dR * co * dt
    F[QX, U_], F[QY, U_] = dC_dU * s * dt, dC_dU * co * dt
    F[QX, TH], F[QY, TH] = c * co * dt, -c * s * dt
    return F


def wind_singular(state) -> bool:
    return float(np.asarray(state)[U_]) <= 0.0


def _check_altitude(pz: float) -> None:
    if not pz > 0:
        raise ValueError(f"observation undefined for UAV altitude p_z={pz} <= 0")


def observation_function(state) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    _check_altitude(x[PZ])
    phi_x = math.atan((x[QX] - x[PX]) / x[PZ])
    phi_y = math.atan((x[QY] - x[PY]) / x[PZ])
    return np.array([phi_x, phi_y, x[R_], x[U_], x[TH]])


def angle_partials(q: float, p: float, pz: float) -> tuple[float, float, float]:
    """Partials of ``atan((q - p) / pz)`` w.r.t. ``q``, ``p`` and ``pz``."""
    _check_altitude(pz)
    u = (q - p) / pz
    g = 1.0 / (1.0 + u * u)
    return g / pz, -g / pz, -g * u / pz


def observation_jacobian(state) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    H = np.zeros((OBS_DIM, STATE_DIM))
    H[0, QX], H[0, PX], H[0, PZ] = angle_partials(x[QX], x[PX], x[PZ])
    H[1, QY], H[1, PY], H[1, PZ] = angle_partials(x[QY], x[PY], x[PZ])
    H[2, R_] = H[3, U_] = H[4, TH] = 1.0
    return H


def innovation(z, predicted) -> np.ndarray:
    d = np.asarray(z, dtype=float) - np.asarray(predicted, dtype=float)
    d[4] = wrap_angle(d[4])
    return d


# -- filter steps ----------------------------------------------------------

def predict(filt: FilterInstance, dt: float, pose=None) -> FilterInstance:
    """Time update: ``x <- f(x)``, ``P <- F P F^T + Q``."""
    F = transition_jacobian(filt.state, dt)
    x = state_transition(filt.state, dt, pose)
    P = _symmetrize(F @ filt.P @ F.T + filt.noise.Q)
    flags = set(filt.flags) - {"update_skipped"}
    if wind_singular(filt.state):
        flags.add("wind_singular")
    else:
        flags.discard("wind_singular")
    return replace(filt, state=x, P=P, P_prior=P, flags=frozenset(flags))


def update(filt: FilterInstance, z) -> FilterInstance:
    """Measurement update with innovation/residual-adaptive noise.

    Joseph-form covariance update, then
    ``Q <- a Q + (1-a) K d d^T K^T`` and
    ``Gamma <- a Gamma + (1-a) (r r^T + H P_prior H^T)`` where ``d`` is the
    innovation and ``r`` the post-update residual.
    """
    x_pred, P_pred = filt.state, filt.P
    H = observation_jacobian(x_pred)
    d = innovation(z, observation_function(x_pred))
    HPH = H @ P_pred @ H.T
    S = HPH + filt.noise.Gamma
    try:
        K = np.linalg.solve(S, H @ P_pred).T
    except np.linalg.LinAlgError:
        logger.warning("spot %s: singular innovation covariance, update skipped", filt.spot_id)
        return replace(filt, flags=filt.flags | {"update_skipped"})

    x = x_pred + K @ d
    x[R_] = max(x[R_], 0.0)
    x[U_] = max(x[U_], 0.0)
    x[TH] = x[TH] % TWO_PI
    I_KH = np.eye(STATE_DIM) - K @ H
    P = _symmetrize(I_KH @ P_pred @ I_KH.T + K @ filt.noise.Gamma @ K.T)

    a = filt.noise.alpha
    Kd = K @ d
    Q = a * filt.noise.Q + (1.0 - a) * np.outer(Kd, Kd)
    resid = innovation(z, observation_function(x))
    Gamma = a * filt.noise.Gamma + (1.0 - a) * (np.outer(resid, resid) + HPH)
    noise = replace(filt.noise, Q=_symmetrize(Q), Gamma=_symmetrize(Gamma))
    return replace(filt, state=x, P=P, noise=noise, last_innovation=d,
                   flags=filt.flags - {"update_skipped"})


def covariance_residual(filt: FilterInstance) -> tuple[np.ndarray, float]:
    """Innovation covariance ``S = H P_{t|t-1} H^T + Gamma`` and its trace."""
    P = filt.P_prior if filt.P_prior is not None else filt.P
    H = observation_jacobian(filt.state)
    S = H @ P @ H.T + filt.noise.Gamma
    return S, float(np.trace(S))


def _betas(P, Q) -> tuple[float, float, float, float, float]:
    P = np.asarray(P)
    Q = np.asarray(Q)
    return (P[QX, QX] + Q[QX, QX], P[QY, QY] + Q[QY, QY], Q[PX, PX], Q[PY, PY], Q[PZ, PZ])


def trace_objective(state, P, Q) -> float:
    """Geometry-dependent part of ``Tr(S)`` as a beta-weighted sum of squared angle partials.

    ``beta1 = P11 + Q11``, ``beta2 = P22 + Q22`` and ``beta3..5`` are the pose
    process-noise variances; ``P`` is the previous posterior covariance.
    """
    x = np.asarray(state, dtype=float)
    b1, b2, b3, b4, b5 = _betas(P, Q)
    ax_q, ax_p, ax_z = angle_partials(x[QX], x[PX], x[PZ])
    ay_q, ay_p, ay_z = angle_partials(x[QY], x[PY], x[PZ])
    return (b1 * ax_q**2 + b2 * ay_q**2 + b3 * ax_p**2 + b4 * ay_p**2
            + b5 * (ax_z**2 + ay_z**2))
