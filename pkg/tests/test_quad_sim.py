import numpy as np
import pytest

from hybmot.sim.quad import (
    QuadParams,
    hover_speed,
    quat_normalize,
    quat_rotate,
    quat_to_euler,
    rotor_wrench,
    simulate_quad_episode,
)
from hybmot.sim.ship import SimulationDiverged


def _rest_initial():
    Y = np.zeros(17)
    Y[6] = 1.0
    return Y


def test_hover_equilibrium():
    p = QuadParams()
    hs = hover_speed(p)
    Y = _rest_initial()
    Y[13:17] = hs
    ctl = np.full((301, 4), hs)
    ep = simulate_quad_episode(3.0, rng_seed=0, params=p, controls=ctl, initial=Y)
    assert np.allclose(ep.states[:, 2], 0.0, atol=1e-9)   # vertical speed stays ~0
    assert np.allclose(ep.states[:, 3:], 0.0, atol=1e-9)  # no rotation


def test_free_fall_initial_acceleration():
    p = QuadParams()
    ep = simulate_quad_episode(
        0.2, rng_seed=0, params=p, controls=np.zeros((21, 4)), initial=_rest_initial()
    )
    dt = ep.dt
    vz_dot0 = (ep.states[1, 2] - ep.states[0, 2]) / dt
    assert abs(vz_dot0 + p.gravity) < 0.05
    # closed form with linear drag: vz(t) = -(g/k)(1 - e^{-kt}), k = drag_z/m
    k = p.drag[2] / p.mass
    t = 0.2
    expected = -(p.gravity / k) * (1.0 - np.exp(-k * t))
    assert abs(ep.states[-1, 2] - expected) < 1e-4


def test_rotor_wrench_hover_balance():
    p = QuadParams()
    hs = hover_speed(p)
    thrust, tau = rotor_wrench(np.full(4, hs), p)
    assert np.isclose(thrust, p.mass * p.gravity)
    assert np.allclose(tau, 0.0)


def test_impulse_momentum_replay():
    # velocity change each step must equal the RK4-integrated acceleration:
    # re-simulating from any recorded state reproduces the next record
    from hybmot.sim.quad import _rk4

    p = QuadParams()
    ep = simulate_quad_episode(2.0, rng_seed=12, params=p)
    # reconstruct the full internal state is impossible from records alone
    # (rotor lag is latent), so replay the whole episode instead
    ep2 = simulate_quad_episode(2.0, rng_seed=12, params=p)
    assert np.array_equal(ep.states, ep2.states)
    # momentum check on a fixed-command run with a known internal state
    Y = _rest_initial()
    Y[13:17] = hover_speed(p)
    cmd = np.full(4, hover_speed(p) * 0.9)
    dt = 0.01
    Y1 = _rk4(Y.copy(), cmd, dt, p)
    # net force from the midpoint state estimate, trapezoid on acceleration
    def acc(Ys):
        thrust, _ = rotor_wrench(Ys[13:17], p)
        e3 = np.array([0.0, 0.0, 1.0])
        body = e3 * thrust - p.drag * quat_rotate(_conj(Ys[6:10]), Ys[3:6])
        return quat_rotate(Ys[6:10], body) / p.mass - np.array([0.0, 0.0, p.gravity])

    dv = Y1[3:6] - Y[3:6]
    approx = 0.5 * dt * (acc(Y) + acc(Y1))
    assert np.allclose(dv, approx, atol=5e-6)


def _conj(q):
    out = q.copy()
    out[1:] *= -1
    return out


def test_pilot_episode_bounded_and_deterministic():
    ep1 = simulate_quad_episode(10.0, rng_seed=5)
    ep2 = simulate_quad_episode(10.0, rng_seed=5)
    assert np.array_equal(ep1.states, ep2.states)
    assert np.array_equal(ep1.controls, ep2.controls)
    assert len(ep1) == 1001
    assert ep1.states.shape[1] == 6 and ep1.poses.shape[1] == 6
    assert np.all(np.abs(ep1.states[:, :3]) < 30.0)
    assert np.all((ep1.controls >= 0.0) & (ep1.controls <= 1.0))


def test_quaternion_helpers():
    rng = np.random.default_rng(3)
    q = quat_normalize(rng.standard_normal(4))
    v = rng.standard_normal(3)
    # rotation preserves norm
    assert np.isclose(np.linalg.norm(quat_rotate(q, v)), np.linalg.norm(v))
    # identity quaternion
    assert np.allclose(quat_rotate(np.array([1.0, 0, 0, 0]), v), v)
    # yaw quarter turn
    qz = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
    assert np.allclose(quat_rotate(qz, np.array([1.0, 0, 0])), [0.0, 1.0, 0.0], atol=1e-12)
    assert np.allclose(quat_to_euler(qz), [0.0, 0.0, np.pi / 2], atol=1e-12)


def test_envelope_divergence():
    p = QuadParams()
    object.__setattr__(p, "max_rate", 0.05)
    with pytest.raises(SimulationDiverged):
        simulate_quad_episode(5.0, rng_seed=1, params=p)
