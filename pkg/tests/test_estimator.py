from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firesense.estimator import (
    OBS_DIM, PX, PY, PZ, QX, QY, R_, STATE_DIM, TH, U_, NoiseModel, angle_partials, covariance_residual,
    init_filter, innovation, make_state, observation_function, observation_jacobian, predict,
    state_transition, trace_objective, transition_jacobian, update, wrap_angle,
)
from oracles import (
    central_difference_jacobian, max_relative_error, mp_observation, mp_transition, scalar_kalman,
)


def _noise(alpha=0.95, q=0.01, g=0.01):
    return NoiseModel(Q=q * np.eye(STATE_DIM), Gamma=g * np.eye(OBS_DIM), alpha=alpha)


def _state(rng):
    return make_state(rng.uniform(0, 500, 2), [*rng.uniform(0, 500, 2), rng.uniform(1, 60)],
                      rng.uniform(0.1, 10), rng.uniform(0.1, 20), rng.uniform(0, 2 * math.pi))


def _float_fd(fn, x, h=1e-6):
    cols = []
    for j in range(len(x)):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        cols.append((fn(xp) - fn(xm)) / (2 * step))
    return np.array(cols).T


# -- basic types -----------------------------------------------------------

def test_wrap_angle_range():
    a = np.linspace(-20, 20, 1001)
    w = wrap_angle(a)
    assert np.all(w > -math.pi) and np.all(w <= math.pi)
    assert np.allclose(np.cos(w), np.cos(a)) and np.allclose(np.sin(w), np.sin(a))
    assert wrap_angle(math.pi) == pytest.approx(math.pi)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(Q=np.eye(3), Gamma=np.eye(OBS_DIM))
    bad = np.eye(STATE_DIM)
    bad[0, 1] = 0.5
    with pytest.raises(ValueError):
        NoiseModel(Q=bad, Gamma=np.eye(OBS_DIM))
    with pytest.raises(ValueError):
        NoiseModel(Q=-np.eye(STATE_DIM), Gamma=np.eye(OBS_DIM))
    with pytest.raises(ValueError):
        NoiseModel(Q=np.eye(STATE_DIM), Gamma=np.eye(OBS_DIM), alpha=1.5)


def test_init_filter_shapes():
    with pytest.raises(ValueError):
        init_filter(0, np.zeros(5), np.eye(8), _noise())


def test_observation_requires_positive_altitude():
    x = make_state((0, 0), (0, 0, 0), 1, 1, 0)
    with pytest.raises(ValueError):
        observation_function(x)
    with pytest.raises(ValueError):
        observation_jacobian(x)


def test_observation_nadir_angles_are_zero():
    z = observation_function(make_state((3, 4), (3, 4, 20), 1.5, 2.5, 0.5))
    assert z.tolist() == [0.0, 0.0, 1.5, 2.5, 0.5]


def test_angle_partials_hand_values():
    # u = 1 -> g = 1/2
    dq, dp, dz = angle_partials(15.0, 5.0, 10.0)
    assert (dq, dp, dz) == pytest.approx((0.05, -0.05, -0.05))


def test_innovation_wraps_heading():
    d = innovation([0, 0, 0, 0, 0.01], [0, 0, 0, 0, 2 * math.pi - 0.01])
    assert d[4] == pytest.approx(0.02)


# -- Jacobians -------------------------------------------------------------

def test_jacobians_match_extended_precision_oracle():
    rng = np.random.default_rng(11)
    for _ in range(25):
        x = _state(rng)
        dt = rng.uniform(0.1, 5.0)
        pose = x[[PX, PY, PZ]]
        N = central_difference_jacobian(lambda s: mp_transition(s, dt, pose), x)
        assert max_relative_error(transition_jacobian(x, dt), N) <= 1e-6
        assert max_relative_error(observation_jacobian(x), central_difference_jacobian(mp_observation, x)) <= 1e-6


def test_jacobians_consistent_with_float_functions():
    # row-normalized check against the package's own model functions
    rng = np.random.default_rng(12)
    for _ in range(25):
        x = _state(rng)
        dt = rng.uniform(0.1, 5.0)
        pose = x[[PX, PY, PZ]]
        for fn, J in ((lambda s: state_transition(s, dt, pose), transition_jacobian(x, dt)),
                      (observation_function, observation_jacobian(x))):
            N = _float_fd(fn, x)
            for i in range(J.shape[0]):
                scale = max(np.abs(N[i]).max(), 1e-300)
                assert np.abs(J[i] - N[i]).max() / scale < 1e-6


def test_transition_pose_rows_zero():
    F = transition_jacobian(make_state((0, 0), (1, 2, 3), 1.0, 2.0, 0.3), 1.0)
    assert np.all(F[[PX, PY, PZ]] == 0.0)
    assert np.array_equal(F[[R_, U_, TH]][:, [R_, U_, TH]], np.eye(3))


def test_transition_without_pose_keeps_pose():
    x = make_state((0, 0), (1, 2, 3), 1.0, 2.0, 0.3)
    y = state_transition(x, 1.0)
    assert np.array_equal(y[[PX, PY, PZ]], x[[PX, PY, PZ]])


def test_zero_wind_jacobian_is_finite_and_flagged():
    x = make_state((0, 0), (0, 0, 10), 2.0, 0.0, 0.3)
    F = transition_jacobian(x, 1.0)
    assert np.all(np.isfinite(F))
    f = predict(init_filter(0, x, np.eye(8), _noise()), 1.0)
    assert "wind_singular" in f.flags


# -- filter steps ----------------------------------------------------------

def test_predict_sets_prior_and_grows_covariance():
    x = make_state((10, 10), (10, 10, 30), 2.0, 5.0, 0.7)
    f0 = init_filter(0, x, np.eye(8), _noise())
    f1 = predict(f0, 1.0, pose=(12, 12, 30))
    assert np.array_equal(f1.P, f1.P_prior)
    assert np.array_equal(f1.pose, [12.0, 12.0, 30.0])
    assert f1.P[QX, QX] > f0.P[QX, QX]


def test_update_reduces_positional_variance_and_projects():
    x = make_state((10, 10), (10, 10, 30), 0.01, 0.01, 6.2)
    f = predict(init_filter(0, x, np.eye(8), _noise()), 1.0)
    z = np.array([0.0, 0.0, -5.0, -5.0, 0.2])
    g = update(f, z)
    assert g.P[QX, QX] < f.P[QX, QX]
    assert g.state[R_] >= 0 and g.state[U_] >= 0
    assert 0 <= g.state[TH] < 2 * math.pi
    assert np.allclose(g.P, g.P.T)


def test_covariance_residual_uses_prior():
    x = make_state((10, 10), (10, 10, 30), 2.0, 5.0, 0.7)
    f = predict(init_filter(0, x, np.eye(8), _noise()), 1.0)
    S, tr = covariance_residual(f)
    H = observation_jacobian(f.state)
    assert np.allclose(S, H @ f.P_prior @ H.T + f.noise.Gamma)
    assert tr == pytest.approx(np.trace(S))
    g = update(f, observation_function(f.state))
    S2, _ = covariance_residual(g)
    assert np.allclose(S2, H @ f.P_prior @ H.T + g.noise.Gamma)


def test_scalar_kalman_equivalence():
    rng = np.random.default_rng(5)
    q, r, p0 = 0.04, 0.25, 1.0
    noise = NoiseModel(Q=np.diag([0.1, 0.1, 0, 0, 0, q, 0.0, 0.0]),
                       Gamma=np.diag([0.01, 0.01, r, 0.1, 0.1]), alpha=1.0)
    x = make_state((0, 0), (0, 0, 20), 5.0, 0.0, 0.0)
    f = init_filter(0, x, np.diag([1, 1, 0, 0, 0, p0, 1.0, 1.0]), noise)
    truth = 5.0 + np.cumsum(rng.normal(0, math.sqrt(q), 100))
    zs = truth + rng.normal(0, math.sqrt(r), 100)
    ref_x, ref_p = scalar_kalman(5.0, p0, zs, 1.0, 1.0, q, r)
    for k, zr in enumerate(zs):
        f = predict(f, 1.0, pose=(0, 0, 20))
        f = update(f, [0.0, 0.0, zr, 0.0, 0.0])
        assert f.state[R_] == pytest.approx(ref_x[k], abs=1e-12)
        assert f.P[R_, R_] == pytest.approx(ref_p[k], abs=1e-12)


def _fixed_run(alpha, steps, zero_innovation, seed=0):
    rng = np.random.default_rng(seed)
    noise = NoiseModel(Q=0.05 * np.eye(8) + 0.01, Gamma=0.02 * np.eye(5) + 0.005, alpha=alpha)
    f = init_filter(0, make_state((50, 60), (48, 61, 30), 2.0, 5.0, 0.7), 4.0 * np.eye(8), noise)
    out = [f]
    for _ in range(steps):
        f = predict(f, 1.0, pose=(48, 61, 30))
        z = observation_function(f.state)
        if not zero_innovation:
            z = z + rng.normal(0, 0.1, 5)
        f = update(f, z)
        out.append(f)
    return out


def test_alpha_one_keeps_noise_bit_identical():
    run = _fixed_run(1.0, 100, zero_innovation=False)
    for f in run:
        assert np.array_equal(f.noise.Q, run[0].noise.Q)
        assert np.array_equal(f.noise.Gamma, run[0].noise.Gamma)


def test_alpha_half_zero_innovation_decays_q_geometrically():
    run = _fixed_run(0.5, 20, zero_innovation=True)
    for a, b in zip(run, run[1:]):
        assert np.allclose(b.noise.Q, 0.5 * a.noise.Q, rtol=1e-12, atol=0)
        assert np.all(np.diag(b.noise.Q) < np.diag(a.noise.Q))


def test_singular_update_skipped_and_flagged():
    noise = NoiseModel(Q=np.zeros((8, 8)), Gamma=np.zeros((5, 5)), alpha=1.0)
    f = predict(init_filter(0, make_state((0, 0), (0, 0, 10), 1, 1, 0), np.zeros((8, 8)), noise), 1.0)
    g = update(f, [0.1, 0.1, 1, 1, 0])
    assert "update_skipped" in g.flags
    assert np.array_equal(g.state, f.state)


def test_trace_objective_hand_value():
    # nadir: squared angle partials are 1/pz^2 and the p_z partials vanish
    x = make_state((5, 5), (5, 5, 10), 1, 1, 0)
    P = np.diag([2.0, 3.0, 0, 0, 0, 0, 0, 0])
    Q = np.diag([1.0, 1.0, 0.5, 0.25, 7.0, 0, 0, 0])
    assert trace_objective(x, P, Q) == pytest.approx((3.0 + 4.0 + 0.5 + 0.25) / 100.0)


def test_trace_objective_equals_angle_rows_of_predicted_residual():
    # with no parameter uncertainty the predicted position block is P + Q, so
    # the angle rows of H P_prior H^T reduce to the beta-weighted sum
    rng = np.random.default_rng(12)
    for _ in range(50):
        x = _state(rng)
        P = np.diag([*rng.uniform(0.1, 20, 2), 0, 0, 0, 0, 0, 0])
        Q = np.diag(rng.uniform(0.01, 2.0, 8))
        noise = NoiseModel(Q=Q, Gamma=np.diag(rng.uniform(0.01, 1, 5)), alpha=1.0)
        f = predict(init_filter(0, x, P, noise), rng.uniform(0.1, 2.0), pose=x[[PX, PY, PZ]])
        H = observation_jacobian(f.state)[:2]
        ref = float(np.trace(H @ f.P_prior @ H.T))
        assert trace_objective(f.state, P, Q) == pytest.approx(ref, rel=1e-12)


# -- properties ------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_update_keeps_covariance_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(8, 8))
    f = init_filter(0, _state(rng), A @ A.T + 0.1 * np.eye(8), _noise())
    f = predict(f, rng.uniform(0.1, 3.0), pose=f.pose)
    g = update(f, observation_function(f.state) + rng.normal(0, 0.05, 5))
    assert np.array_equal(g.P, g.P.T)
    assert np.linalg.eigvalsh(g.P).min() > -1e-9
    assert np.linalg.eigvalsh(g.noise.Q).min() > -1e-9
    assert np.linalg.eigvalsh(g.noise.Gamma).min() > -1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_predict_only_trace_nondecreasing(alpha, seed):
    rng = np.random.default_rng(seed)
    f = init_filter(0, _state(rng), np.eye(8), _noise(alpha=alpha))
    last = -math.inf
    for _ in range(10):
        f = predict(f, 1.0, pose=f.pose)
        tr = covariance_residual(f)[1]
        assert tr >= last - 1e-12
        last = tr
