import numpy as np
import pytest

from hybmot.sim.ship import (
    ShipParams,
    damping_force,
    environment_forces,
    propulsion_force,
    restoring_force,
    rigid_body_coriolis,
    truth_acceleration,
    wave_force,
    wind_force,
)
from hybmot.sim.waves import SeaState


@pytest.fixture(scope="module")
def params():
    return ShipParams()


def test_mass_matrix_spd(params):
    eig = np.linalg.eigvalsh(params.M)
    assert np.all(eig > 0)
    assert np.allclose(params.M, params.M.T)


def test_coriolis_is_power_neutral(params):
    rng = np.random.default_rng(5)
    for _ in range(50):
        v = rng.standard_normal(4) * [5, 2, 0.3, 0.2]
        assert abs(v @ rigid_body_coriolis(v, params)) < 1e-6


def test_damping_strictly_dissipative(params):
    rng = np.random.default_rng(6)
    for _ in range(200):
        v = rng.standard_normal(4) * [10, 5, 1, 1]
        if np.linalg.norm(v) < 1e-9:
            continue
        assert v @ damping_force(v, params) > 0.0


def test_equilibrium(params):
    acc = truth_acceleration(np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4), params)
    assert np.allclose(acc, 0.0)


def test_restoring_opposes_roll(params):
    pose = np.array([0.0, 0.0, 0.1, 0.0])
    acc = truth_acceleration(np.zeros(4), pose, np.zeros(4), np.zeros(4), params)
    assert acc[2] < 0.0  # roll acceleration pulls back toward upright
    expected = -params.M_inv @ np.array([0.0, 0.0, params.g_phi * 0.1, 0.0])
    assert np.allclose(acc, expected)


def test_acceleration_matches_dense_matrix_oracle(params):
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = rng.standard_normal(4) * [5, 2, 0.3, 0.1]
        pose = rng.standard_normal(4) * [10, 10, 0.2, 1.0]
        tau_c = rng.standard_normal(4) * 1e4
        tau_e = rng.standard_normal(4) * 1e4
        # independent dense-matrix evaluation from the same parameters
        m, zg = params.mass, params.z_g
        u, w, p, r = v
        C = np.array(
            [
                [0.0, 0.0, 0.0, -m * w],
                [0.0, 0.0, 0.0, m * u],
                [0.0, 0.0, 0.0, -m * zg * u],
                [m * w, -m * u, m * zg * u, 0.0],
            ]
        )
        D = params.D_lin + np.diag(params.d_quad * np.abs(v))
        G = np.diag([0.0, 0.0, params.g_phi, 0.0])
        eta_r = np.array([0.0, 0.0, pose[2], 0.0])
        oracle = np.linalg.solve(params.M, tau_c + tau_e - D @ v - C @ v - G @ eta_r)
        got = truth_acceleration(v, pose, tau_c, tau_e, params)
        assert np.allclose(got, oracle, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

def test_calm_environment_is_force_free(params):
    sea = SeaState.calm()
    pose = np.array([5.0, -3.0, 0.05, 0.7])
    v = np.array([4.0, 0.5, 0.0, 0.01])
    tau = environment_forces(sea, pose, v, 12.0, params)
    assert np.allclose(tau, 0.0)


def test_head_wind_pure_surge(params):
    # ship at rest heading +x, wind blowing toward -x (i.e. from dead ahead)
    sea = SeaState.calm()
    sea = SeaState(
        0.0, 8.0, 0.0, sea.frequencies, sea.amplitudes, sea.phases, sea.directions,
        wind_speed=12.0, wind_direction=np.pi,
    )
    tau = wind_force(sea, np.zeros(4), np.zeros(4), params)
    assert tau[0] < 0.0
    assert np.allclose(tau[1:], 0.0, atol=1e-9)


def test_beam_wind_pushes_leeward(params):
    sea = SeaState.calm()
    # wind from starboard (+y), blowing toward -y
    sea = SeaState(
        0.0, 8.0, 0.0, sea.frequencies, sea.amplitudes, sea.phases, sea.directions,
        wind_speed=10.0, wind_direction=-np.pi / 2,
    )
    tau = wind_force(sea, np.zeros(4), np.zeros(4), params)
    assert tau[1] < 0.0  # pushed toward port


def test_wave_force_matches_three_component_hand_sum(params):
    omega = np.array([0.6, 0.8, 1.1])
    amp = np.array([0.5, 1.0, 0.25])
    phase = np.array([0.3, 1.9, 4.0])
    direction = 0.9
    sea = SeaState(
        2.0, 8.0, direction, omega, amp, phase, np.full(3, direction), 0.0, 0.0
    )
    pose = np.array([15.0, -4.0, 0.0, 0.3])
    t = 37.0
    # hand superposition with deep-water wave numbers
    proj = pose[0] * np.cos(direction) + pose[1] * np.sin(direction)
    elev = sum(
        a * np.cos(w * t - (w**2 / 9.81) * proj + ph) for w, a, ph in zip(omega, amp, phase)
    )
    gamma = direction - pose[3]
    expected = elev * params.wave_gain * np.array(
        [np.cos(gamma), np.sin(gamma), np.sin(gamma), np.sin(gamma)]
    )
    got = wave_force(sea, pose, t, params)
    assert np.allclose(got, expected, rtol=1e-12)


# ---------------------------------------------------------------------------
# propulsion
# ---------------------------------------------------------------------------

def test_idle_actuators_no_force(params):
    v = np.array([4.0, 0.2, 0.0, 0.01])
    tau = propulsion_force(np.zeros(4), v, params)
    assert np.allclose(tau, 0.0)


def test_symmetric_thrust_pure_surge(params):
    c = np.array([0.8, 0.8, 0.0, 0.0])
    tau = propulsion_force(c, np.zeros(4), params)
    assert tau[0] > 0.0
    assert np.allclose(tau[1:], 0.0, atol=1e-9)


def test_rudder_sign_symmetry(params):
    v = np.array([6.0, 0.0, 0.0, 0.0])
    delta = np.radians(20.0)
    plus = propulsion_force(np.array([0.7, 0.7, delta, delta]), v, params)
    minus = propulsion_force(np.array([0.7, 0.7, -delta, -delta]), v, params)
    assert np.isclose(plus[0], minus[0])
    assert np.allclose(plus[1:], -minus[1:], rtol=1e-12)
    assert plus[3] != 0.0


def test_differential_thrust_yaw_sign(params):
    tau = propulsion_force(np.array([1.0, 0.2, 0.0, 0.0]), np.zeros(4), params)
    # port propeller stronger -> positive yaw moment (x_rudder lever aside)
    assert tau[3] > 0.0


def test_control_clamping(params):
    v = np.zeros(4)
    inside = propulsion_force(np.array([1.0, 1.0, params.rudder_max, params.rudder_max]), v, params)
    outside = propulsion_force(np.array([1.4, 1.4, 1.0, 1.0]), v, params)
    assert np.allclose(inside, outside)
