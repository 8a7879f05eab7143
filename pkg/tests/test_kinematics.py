import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybmot.sim.ship import kinematic_matrix, pose_rates, wrap_angle


def test_identity_heading():
    pose = np.zeros(4)
    v = np.array([1.0, 0.0, 0.0, 0.0])
    rate = kinematic_matrix(pose) @ v
    assert np.allclose(rate, [1.0, 0.0, 0.0, 0.0])


def test_quarter_turn_heading():
    pose = np.array([0.0, 0.0, 0.0, np.pi / 2])
    v = np.array([1.0, 0.0, 0.0, 0.0])
    rate = kinematic_matrix(pose) @ v
    assert np.allclose(rate, [0.0, 1.0, 0.0, 0.0], atol=1e-15)


def _scalar_oracle(pose, v):
    # component-by-component evaluation of the 4-DOF convention
    _, _, phi, psi = pose
    u, w, p, r = v
    return np.array(
        [
            u * np.cos(psi) - w * np.cos(phi) * np.sin(psi),
            u * np.sin(psi) + w * np.cos(phi) * np.cos(psi),
            p,
            r * np.cos(phi),
        ]
    )


def test_rotation_matches_scalar_oracle():
    rng = np.random.default_rng(42)
    pose = np.array([3.0, -2.0, 0.1, 0.7])
    for _ in range(20):
        v = rng.standard_normal(4)
        assert np.allclose(kinematic_matrix(pose) @ v, _scalar_oracle(pose, v), atol=1e-14)
        assert np.allclose(pose_rates(pose, v), _scalar_oracle(pose, v), atol=1e-14)


@given(
    phi=st.floats(-1.4, 1.4),
    psi=st.floats(-np.pi, np.pi),
    u=st.floats(-20, 20),
    w=st.floats(-8, 8),
    p=st.floats(-1, 1),
    r=st.floats(-1, 1),
)
def test_pose_rates_agree_with_matrix(phi, psi, u, w, p, r):
    pose = np.array([0.0, 0.0, phi, psi])
    v = np.array([u, w, p, r])
    assert np.allclose(pose_rates(pose, v), kinematic_matrix(pose) @ v, atol=1e-12)


def test_batched_kinematics():
    rng = np.random.default_rng(0)
    poses = rng.standard_normal((7, 4))
    vs = rng.standard_normal((7, 4))
    batched = pose_rates(poses, vs)
    for i in range(7):
        assert np.allclose(batched[i], _scalar_oracle(poses[i], vs[i]))


@pytest.mark.parametrize(
    "angle,expected",
    [(0.0, 0.0), (np.pi, np.pi), (-np.pi, np.pi), (3 * np.pi / 2, -np.pi / 2), (2 * np.pi, 0.0)],
)
def test_wrap_angle(angle, expected):
    assert np.isclose(wrap_angle(angle), expected)


@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    wrapped = wrap_angle(a)
    assert -np.pi < wrapped <= np.pi
    assert np.isclose(np.sin(wrapped), np.sin(a), atol=1e-9)
    assert np.isclose(np.cos(wrapped), np.cos(a), atol=1e-9)
