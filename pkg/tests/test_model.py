import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from greenhouse_bench.model import (DEFAULT_MODEL_PARAMS, DEFAULT_PARAMS, U_MAX, X0, DegenerateDenominator,
                                    ModelParams, NonFiniteState, Trajectory, canopy_fluxes, constant_controller,
                                    derivative_jacobians, measure, measure_jacobian, rk4_step,
                                    rk4_step_jacobians, simulate, state_derivative)
from greenhouse_bench.weather import synthesize

D_TEST = np.array([100.0, 0.001, 10.0, 0.005])


def test_default_parameters_match_table():
    for (i, j), v in O.P.items():
        assert DEFAULT_MODEL_PARAMS[i, j] == v
        assert DEFAULT_PARAMS[f"p_{{{i},{j}}}"] == v
    assert len(DEFAULT_MODEL_PARAMS) == 28


def test_params_validation():
    with pytest.raises(KeyError):
        ModelParams({"p_{9,9}": 1.0})
    with pytest.raises(ValueError):
        ModelParams({(1, 1): 0.0})
    p = ModelParams({(3, 1): 2e4})
    assert p["p_{3,1}"] == 2e4 and p[1, 1] == 0.544


def test_fluxes_match_hand_evaluation():
    fl = canopy_fluxes(X0, np.zeros(3), D_TEST, DEFAULT_MODEL_PARAMS)
    ref = O.fluxes(X0, np.zeros(3), D_TEST)
    got = (fl.phot_c, fl.vent_c, fl.vent_h, fl.transp_h, fl.denom)
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_flux_trivial_cases():
    d = D_TEST.copy()
    d[0] = 0.0
    assert canopy_fluxes(X0, np.zeros(3), d, DEFAULT_MODEL_PARAMS).phot_c == 0.0
    x = np.array(X0)
    x[1] = D_TEST[1]
    assert canopy_fluxes(x, np.zeros(3), D_TEST, DEFAULT_MODEL_PARAMS).vent_c == 0.0


def test_degenerate_denominator():
    x = np.array(X0)
    x[1] = DEFAULT_MODEL_PARAMS[1, 8]
    d = D_TEST.copy()
    d[0] = 0.0
    with pytest.raises(DegenerateDenominator):
        state_derivative(x, np.zeros(3), d, DEFAULT_MODEL_PARAMS)
    with pytest.raises(DegenerateDenominator):
        rk4_step(x, np.zeros(3), d)


def test_derivative_matches_independent_transcription():
    u = np.array([1.2, 7.5, 150.0])
    got = state_derivative(X0, u, D_TEST, DEFAULT_MODEL_PARAMS)
    np.testing.assert_allclose(got, O.rhs(X0, u, D_TEST), rtol=1e-12)


def test_respiration_at_25C_without_light():
    x = np.array([0.01, 0.001, 25.0, 0.008])
    d = np.array([0.0, 0.001, 25.0, 0.008])
    dx = state_derivative(x, np.zeros(3), d, DEFAULT_MODEL_PARAMS)
    assert dx[0] == pytest.approx(-DEFAULT_MODEL_PARAMS[1, 2] * x[0], rel=1e-14)


def test_exchange_vanishes_at_outdoor_equilibrium():
    d = np.array([0.0, 7e-4, 12.0, 0.006])
    x = np.array([0.0, d[1], 15.0, d[3]])
    dx = state_derivative(x, np.zeros(3), d, DEFAULT_MODEL_PARAMS)
    assert dx[1] == 0.0 and dx[3] == 0.0


def test_fixed_point_is_preserved():
    d = np.array([0.0, 7e-4, 12.0, 0.006])
    x = np.array([0.0, d[1], d[2], d[3]])
    assert np.all(state_derivative(x, np.zeros(3), d, DEFAULT_MODEL_PARAMS) == 0.0)
    np.testing.assert_array_equal(rk4_step(x, np.zeros(3), d), x)


def test_rk4_zero_input_matches_fine_euler():
    ref = O.euler(X0, np.zeros(3), D_TEST, 900.0)
    np.testing.assert_allclose(rk4_step(X0, np.zeros(3), D_TEST, DEFAULT_MODEL_PARAMS, 900.0), ref, rtol=1e-4)


def test_rk4_matches_independent_rk4():
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = rng.uniform(0, 1, 3) * U_MAX
        np.testing.assert_allclose(rk4_step(X0, u, D_TEST), O.rk4_many(X0, u, D_TEST, 900.0, 1), rtol=1e-13)


def test_step_halving_local_error_is_fifth_order():
    u = np.array([0.5, 1.0, 40.0])
    errs = []
    hs = [450.0, 225.0, 112.5, 56.25]
    for h in hs:
        one = rk4_step(X0, u, D_TEST, DEFAULT_MODEL_PARAMS, h)
        two = rk4_step(rk4_step(X0, u, D_TEST, DEFAULT_MODEL_PARAMS, h / 2), u, D_TEST, DEFAULT_MODEL_PARAMS, h / 2)
        errs.append(np.max(np.abs(one - two) / np.abs(two)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 4.5 <= slope <= 5.5


def test_batch_and_scalar_paths_agree():
    rng = np.random.default_rng(1)
    u = rng.uniform(0, 1, (8, 3)) * U_MAX
    xb = rk4_step(np.tile(X0, (8, 1)), u, np.tile(D_TEST, (8, 1)))
    xs = np.array([rk4_step(X0, ui, D_TEST) for ui in u])
    np.testing.assert_allclose(xb, xs, rtol=1e-14)


def test_rk4_rejects_nonfinite_stage():
    x = np.array([0.0035, 0.001, -DEFAULT_MODEL_PARAMS[4, 5], 0.008])
    with pytest.raises(NonFiniteState):
        rk4_step(x, np.zeros(3), D_TEST)


def test_measurement_values():
    y = measure(X0, DEFAULT_MODEL_PARAMS)
    assert y[0] == pytest.approx(3.5, rel=1e-15)
    assert y[1] == pytest.approx(0.537, abs=5e-4)
    np.testing.assert_allclose(y, O.measure(X0), rtol=1e-12)
    with pytest.raises(ValueError):
        measure([0.0, 0.0, -300.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.005), st.floats(-10, 45), st.floats(0, 0.05))
def test_measurement_inverse_consistency(x1, x2, x3, x4):
    y = measure([x1, x2, x3, x4])
    assert y[0] / 1e3 == pytest.approx(x1, rel=1e-15, abs=0)
    assert y[2] == x3


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 0.3), st.floats(2e-4, 3e-3), st.floats(0, 35), st.floats(1e-3, 0.02),
       st.floats(0, 1.2), st.floats(0, 7.5), st.floats(0, 150))
def test_dark_nights_lose_dry_matter(x1, x2, x3, x4, u1, u2, u3):
    d = np.array([0.0, 7e-4, 10.0, 0.006])
    dx = state_derivative([x1, x2, x3, x4], [u1, u2, u3], d, DEFAULT_MODEL_PARAMS)
    assert dx[0] < 0


def _fd_jac(f, v, eps):
    v = np.asarray(v, dtype=float)
    cols = []
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = eps[i]
        cols.append((f(v + e) - f(v - e)) / (2 * eps[i]))
    return np.column_stack(cols)


def test_jacobians_match_finite_differences():
    x = np.array([0.02, 0.0012, 17.0, 0.009])
    u = np.array([0.6, 2.0, 50.0])
    ex, eu = x * 1e-6, np.array([1e-6, 1e-5, 1e-3])
    f, A, B = derivative_jacobians(x, u, D_TEST)
    np.testing.assert_allclose(f, state_derivative(x, u, D_TEST, DEFAULT_MODEL_PARAMS), rtol=1e-14)
    np.testing.assert_allclose(A, _fd_jac(lambda v: state_derivative(v, u, D_TEST, DEFAULT_MODEL_PARAMS), x, ex),
                               rtol=1e-5, atol=1e-14)
    np.testing.assert_allclose(B, _fd_jac(lambda v: state_derivative(x, v, D_TEST, DEFAULT_MODEL_PARAMS), u, eu),
                               rtol=1e-5, atol=1e-14)
    xn, Fx, Fu = rk4_step_jacobians(x, u, D_TEST)
    np.testing.assert_allclose(xn, rk4_step(x, u, D_TEST), rtol=1e-14)
    np.testing.assert_allclose(Fx, _fd_jac(lambda v: rk4_step(v, u, D_TEST), x, ex), rtol=1e-5, atol=1e-10)
    np.testing.assert_allclose(Fu, _fd_jac(lambda v: rk4_step(x, v, D_TEST), u, eu), rtol=1e-5, atol=1e-12)
    np.testing.assert_allclose(measure_jacobian(x), _fd_jac(measure, x, ex), rtol=1e-6, atol=1e-12)


# -- simulate ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def day_weather():
    return synthesize(3, seed=2, extra_steps=1)


def test_simulate_zero_steps(day_weather):
    tr = simulate(X0, constant_controller([0, 0, 0]), day_weather, n_steps=0)
    assert tr.n_steps == 0 and tr.x.shape == (1, 4)
    np.testing.assert_array_equal(tr.x[0], X0)


def test_simulate_is_deterministic(day_weather):
    a = simulate(X0, constant_controller([0, 0, 0]), day_weather, n_steps=96)
    b = simulate(X0, constant_controller([0, 0, 0]), day_weather, n_steps=96)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)


def test_simulate_clips_inputs(day_weather):
    tr = simulate(X0, constant_controller([5.0, -1.0, 1e4]), day_weather, n_steps=3)
    np.testing.assert_array_equal(tr.applied_u, np.tile([1.2, 0.0, 150.0], (3, 1)))
    assert np.all(np.isnan(tr.u[-1]))


def test_simulate_tags_model_errors_with_step(day_weather):
    x = np.array(X0)
    x[1] = DEFAULT_MODEL_PARAMS[1, 8]

    class Night:
        t = day_weather.t[:3]
        d = np.tile([0.0, 7e-4, 10.0, 0.006], (3, 1))
        sample_period = 900.0

    with pytest.raises(DegenerateDenominator) as info:
        simulate(x, constant_controller([0, 0, 0]), Night, n_steps=2)
    assert info.value.step == 0


def test_three_day_rollout_grows_by_day_and_respires_by_night(day_weather):
    tr = simulate(X0, constant_controller([0.5, 0.5, 20.0]), day_weather, n_steps=288)
    dy1 = np.diff(tr.y[:, 0])
    day = tr.d[:-1, 0] > 50
    night = tr.d[:-1, 0] == 0
    assert dy1[day].sum() > 0
    assert np.all(dy1[night] < 0)
    assert tr.y[-1, 0] > tr.y[0, 0]


def test_trajectory_csv_roundtrip(tmp_path, day_weather):
    tr = simulate(X0, constant_controller([0.3, 1.0, 10.0]), day_weather, n_steps=5)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "k,t,x1,x2,x3,x4,u1,u2,u3,d1,d2,d3,d4,y1,y2,y3,y4"
    back = Trajectory.from_csv(path)
    np.testing.assert_array_equal(back.x, tr.x)
    np.testing.assert_array_equal(back.y, tr.y)
    np.testing.assert_array_equal(back.applied_u, tr.applied_u)
    assert back.h == tr.h
    assert math.isnan(back.u[-1, 0])
