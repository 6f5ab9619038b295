from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firesense.fire_model import (
    TWO_PI, FireParams, FireSpot, FireState, gb_factor, lb_derivative, lb_factor,
    propagation_velocity, seed_ignitions, spread_coefficient, spread_coefficient_partials, step_fire,
)

# 50-digit mpmath evaluations of the closed forms, frozen
LB_1 = 1.207282955037844799167075
GB_1 = 0.4575321335249107869410475
C_1_5 = 0.4870121540712230742927177
C_1_1 = 0.3590875985002023437955731
LB_5 = 3.1829038076243235905478


def _mp_lb(U):
    U = mp.mpf(U)
    return mp.mpf("0.936") * mp.e ** (mp.mpf("0.256") * U) + mp.mpf("0.461") * mp.e ** (mp.mpf("-0.154") * U) - mp.mpf("0.397")


def _mp_c(R, U):
    lb = _mp_lb(U)
    gb = lb**2 - 1
    return mp.mpf(R) * (1 - lb / (lb + mp.sqrt(gb)))


def test_frozen_constants_match_fresh_mpmath():
    with mp.workdps(50):
        assert abs(float(_mp_lb(1)) - LB_1) == 0.0
        assert abs(float(_mp_lb(1) ** 2 - 1) - GB_1) == 0.0
        assert abs(float(_mp_c(1, 5)) - C_1_5) == 0.0
        assert abs(float(_mp_c(1, 1)) - C_1_1) == 0.0
        assert abs(float(_mp_lb(5)) - LB_5) == 0.0


def test_lb_exact_at_zero_wind():
    assert lb_factor(0.0) == 1.0
    assert gb_factor(0.0) == 0.0
    assert spread_coefficient(3.7, 0.0) == 0.0


@pytest.mark.parametrize("U,expected", [(1.0, LB_1), (5.0, LB_5)])
def test_lb_values(U, expected):
    assert lb_factor(U) == pytest.approx(expected, rel=1e-13, abs=1e-12)


def test_gb_value():
    assert gb_factor(1.0) == pytest.approx(GB_1, abs=1e-12)


@pytest.mark.parametrize("U,expected", [(5.0, C_1_5), (1.0, C_1_1)])
def test_spread_coefficient_values(U, expected):
    assert spread_coefficient(1.0, U) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("U", [0.1, 0.5, 1.0, 3.0, 7.5, 15.0])
def test_partials_match_mpmath_derivative(U):
    R = 2.3
    dR, dU = spread_coefficient_partials(R, U)
    with mp.workdps(40):
        ref_dU = mp.diff(lambda u: _mp_c(R, u), U)
        ref_dR = mp.diff(lambda r: _mp_c(r, U), R)
        ref_lb = mp.diff(_mp_lb, U)
    assert dU == pytest.approx(float(ref_dU), rel=1e-10)
    assert dR == pytest.approx(float(ref_dR), rel=1e-10)
    assert lb_derivative(U) == pytest.approx(float(ref_lb), rel=1e-12)


def test_wind_partial_singular_at_zero():
    assert math.isinf(spread_coefficient_partials(1.0, 0.0)[1])


def test_negative_wind_rejected():
    with pytest.raises(ValueError):
        lb_factor(-0.1)
    with pytest.raises(ValueError):
        FireParams(R=1.0, U=-1.0, theta=0.0)
    with pytest.raises(ValueError):
        spread_coefficient(-1.0, 1.0)


def test_theta_normalized():
    assert FireParams(1.0, 1.0, -math.pi / 2).theta == pytest.approx(1.5 * math.pi)


def test_velocity_direction_clockwise_from_north():
    vx, vy = propagation_velocity(FireParams(R=2.0, U=4.0, theta=math.pi / 2))
    assert vx > 0 and abs(vy) < 1e-15
    vx, vy = propagation_velocity(FireParams(R=2.0, U=4.0, theta=0.0))
    assert vy > 0 and vx == 0.0


def test_step_fire_moves_by_velocity_plus_noise():
    p = FireParams(R=2.0, U=5.0, theta=0.3, dt=2.0)
    st0 = FireState((FireSpot(0, 10.0, 20.0), FireSpot(1, 0.0, 0.0)), p)
    st1 = step_fire(st0, noise=[[0.5, -0.5], [0.0, 0.0]])
    vx, vy = propagation_velocity(p)
    assert st1.positions()[0] == pytest.approx([10.0 + 2 * vx + 0.5, 20.0 + 2 * vy - 0.5])
    assert st1.time == 1


def test_step_fire_clamps_and_flags():
    p = FireParams(R=5.0, U=10.0, theta=0.0)
    st0 = FireState((FireSpot(0, 5.0, 9.9), FireSpot(1, 5.0, 1.0)), p)
    st1 = step_fire(st0, bounds=(0.0, 0.0, 10.0, 10.0))
    assert st1.spots[0].y == 10.0
    assert st1.clamped == frozenset({0})


def test_step_fire_noise_shape_checked():
    st0 = FireState((FireSpot(0, 0.0, 0.0),), FireParams(1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        step_fire(st0, noise=np.zeros((2, 2)))


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        FireState((FireSpot(0, 0.0, 0.0), FireSpot(0, 1.0, 1.0)), FireParams(1.0, 1.0, 0.0))


def test_seed_ignitions_in_region_and_reproducible():
    p = FireParams(1.0, 1.0, 0.0)
    a = seed_ignitions(np.random.default_rng(3), 20, (50.0, 50.0, 100.0, 100.0), p)
    b = seed_ignitions(np.random.default_rng(3), 20, (50.0, 50.0, 100.0, 100.0), p)
    pos = a.positions()
    assert pos.shape == (20, 2)
    assert np.all((pos >= 50.0) & (pos <= 100.0))
    assert np.array_equal(pos, b.positions())


# -- properties ------------------------------------------------------------

winds = st.floats(min_value=0.0, max_value=40.0, allow_nan=False)
rates = st.floats(min_value=0.0, max_value=100.0, allow_nan=False)


@given(rates, winds)
def test_spread_bounded_by_rate(R, U):
    c = spread_coefficient(R, U)
    assert 0.0 <= c <= R


@given(st.floats(min_value=0.0, max_value=30.0), st.floats(min_value=1e-3, max_value=10.0))
def test_lb_strictly_increasing(U, dU):
    # LB' > 0 for all U >= 0
    assert lb_derivative(U) > 0
    assert lb_factor(U + dU) > lb_factor(U)


@settings(max_examples=200)
@given(rates, st.floats(min_value=0.0, max_value=TWO_PI), st.floats(min_value=1e-3, max_value=10.0),
       st.lists(st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)), min_size=1, max_size=10))
def test_zero_wind_freezes_positions(R, theta, dt, pts):
    st0 = FireState(tuple(FireSpot(i, x, y) for i, (x, y) in enumerate(pts)), FireParams(R, 0.0, theta, dt))
    st1 = step_fire(st0, noise=np.zeros((len(pts), 2)))
    assert np.array_equal(st0.positions(), st1.positions())


@given(rates, winds, st.floats(min_value=0.0, max_value=TWO_PI))
def test_speed_equals_spread_coefficient(R, U, theta):
    vx, vy = propagation_velocity(FireParams(R, U, theta))
    assert math.hypot(vx, vy) == pytest.approx(spread_coefficient(R, U), rel=1e-12, abs=1e-300)
