"""Rigid-body quadcopter truth model with aggressive scripted maneuvers.

Frames: inertial z up; body x forward, y left, z up.  Recorded state
z = [vx, vy, vz, p, q, r]: inertial-frame velocities plus body rates.
Rotors follow commands through a first-order lag (tau = 50 ms), so the
recorded commands never fully determine the instantaneous thrust; this
latent actuator state mimics the unmeasured dynamics a ship sees from the
sea state.

A plus-configuration is used: rotor 0 on +x, 1 on +y, 2 on -x, 3 on -y,
with alternating reaction-torque signs (0 and 2 positive).  The "pilot"
is a body-rate P controller tracking random piecewise-constant rate and
climb-rate targets, with a weak attitude recentering term that keeps the
maneuvers aerobatic but bounded.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..data import Episode
from .ship import SimulationDiverged


@dataclass(frozen=True)
class QuadParams:
    mass: float = 0.9
    inertia: np.ndarray = field(default_factory=lambda: np.array([0.008, 0.008, 0.014]))
    arm: float = 0.17
    thrust_max: float = 6.0      # N per rotor at command 1.0
    torque_max: float = 0.08     # N m reaction torque per rotor at command 1.0
    drag: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.25, 0.35]))
    gravity: float = 9.81
    rotor_tau: float = 0.05

    # pilot
    rate_gain: float = 18.0
    level_gain: float = 3.0
    climb_gain: float = 0.35

    # envelope
    max_speed: float = 30.0
    max_rate: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))
        object.__setattr__(self, "drag", np.asarray(self.drag, dtype=float))
        if self.mass <= 0 or np.any(self.inertia <= 0) or self.thrust_max <= 0:
            raise ValueError("mass, inertia and thrust coefficient must be positive")


def hover_speed(params):
    """Rotor command fraction that balances gravity at level attitude."""
    return math.sqrt(params.mass * params.gravity / (4.0 * params.thrust_max))


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-first, batched over leading axes)
# ---------------------------------------------------------------------------

def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_rate(q, omega):
    """q' = 0.5 * q x (0, omega)."""
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    ox, oy, oz = omega[..., 0], omega[..., 1], omega[..., 2]
    return 0.5 * np.stack(
        [
            -qx * ox - qy * oy - qz * oz,
            qw * ox + qy * oz - qz * oy,
            qw * oy - qx * oz + qz * ox,
            qw * oz + qx * oy - qy * ox,
        ],
        axis=-1,
    )


def quat_rotate(q, vec):
    """Rotate body vector into the inertial frame."""
    qw = q[..., 0:1]
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, vec)
    return vec + qw * t + np.cross(qv, t)


def quat_to_euler(q):
    """ZYX Euler angles (roll, pitch, yaw)."""
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    phi = np.arctan2(2.0 * (qw * qx + qy * qz), 1.0 - 2.0 * (qx**2 + qy**2))
    theta = np.arcsin(np.clip(2.0 * (qw * qy - qz * qx), -1.0, 1.0))
    psi = np.arctan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy**2 + qz**2))
    return np.stack([phi, theta, psi], axis=-1)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

_MIX_SIGNS = np.array(
    [
        #  pitch(-x torque from front/back), roll(+y rotors), yaw
        [0.0, -1.0, 1.0],   # rotor 0 (+x)
        [1.0, 0.0, -1.0],   # rotor 1 (+y)
        [0.0, 1.0, 1.0],    # rotor 2 (-x)
        [-1.0, 0.0, -1.0],  # rotor 3 (-y)
    ]
)


def rotor_wrench(speeds, params):
    """Total thrust [N] and body torques [N m] of the four rotors."""
    f = params.thrust_max * speeds**2
    thrust = f.sum(axis=-1)
    tau_x = params.arm * (f[..., 1] - f[..., 3])
    tau_y = params.arm * (f[..., 2] - f[..., 0])
    tau_z = params.torque_max * (
        speeds[..., 0] ** 2 - speeds[..., 1] ** 2 + speeds[..., 2] ** 2 - speeds[..., 3] ** 2
    )
    return thrust, np.stack([tau_x, tau_y, tau_z], axis=-1)


def _quad_rhs(Y, cmd, params):
    """Y = (..., 17): pos 3, vel 3, quat 4, omega 3, rotor speeds 4."""
    vel = Y[..., 3:6]
    q = Y[..., 6:10]
    omega = Y[..., 10:13]
    rotors = Y[..., 13:17]

    thrust, tau = rotor_wrench(rotors, params)
    e_up = np.zeros_like(vel)
    e_up[..., 2] = 1.0
    body_force = e_up * thrust[..., None] - params.drag * _world_to_body(q, vel)
    acc = quat_rotate(q, body_force) / params.mass
    acc[..., 2] -= params.gravity

    inertia = params.inertia
    gyro = np.cross(omega, inertia * omega)
    omega_dot = (tau - gyro) / inertia

    rotor_dot = (cmd - rotors) / params.rotor_tau
    return np.concatenate([vel, acc, quat_rate(q, omega), omega_dot, rotor_dot], axis=-1)


def _world_to_body(q, vec):
    qc = q.copy()
    qc[..., 1:] *= -1.0
    return quat_rotate(qc, vec)


def _rk4(Y, cmd, dt, params):
    k1 = _quad_rhs(Y, cmd, params)
    k2 = _quad_rhs(Y + 0.5 * dt * k1, cmd, params)
    k3 = _quad_rhs(Y + 0.5 * dt * k2, cmd, params)
    k4 = _quad_rhs(Y + dt * k3, cmd, params)
    Y = Y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    Y[..., 6:10] = quat_normalize(Y[..., 6:10])
    return Y


# ---------------------------------------------------------------------------
# scripted pilot
# ---------------------------------------------------------------------------

def _pilot_targets(duration, dt, rng):
    """Piecewise-constant (p*, q*, r*, climb*) targets, holds 0.5 - 2.5 s."""
    n_steps = int(round(duration / dt))
    holds, values = [], []
    total = 0.0
    while total < duration + dt:
        holds.append(rng.uniform(0.5, 2.5))
        values.append(
            [
                rng.uniform(-1.2, 1.2),
                rng.uniform(-1.2, 1.2),
                rng.uniform(-1.5, 1.5),
                rng.uniform(-2.0, 2.0),
            ]
        )
        total += holds[-1]
    edges = np.concatenate([[0.0], np.cumsum(holds)])
    times = np.arange(n_steps + 1) * dt
    seg = np.searchsorted(edges, times, side="right") - 1
    return np.asarray(values)[seg]


def _pilot_command(Y, target, params):
    """Rate P loop with weak attitude recentering, mixed to rotor commands."""
    vel = Y[..., 3:6]
    q = Y[..., 6:10]
    omega = Y[..., 10:13]
    euler = quat_to_euler(q)

    rate_target = target[..., 0:3].copy()
    rate_target[..., 0] -= params.level_gain * euler[..., 0]
    rate_target[..., 1] -= params.level_gain * euler[..., 1]
    tau_star = params.inertia * params.rate_gain * (rate_target - omega)

    weight = params.mass * params.gravity
    tilt = np.clip(np.cos(euler[..., 0]) * np.cos(euler[..., 1]), 0.5, 1.0)
    thrust_star = weight * (1.0 + params.climb_gain * (target[..., 3] - vel[..., 2])) / tilt

    quarter = thrust_star[..., None] / 4.0
    over_arm = tau_star[..., 0:1] / (2.0 * params.arm)
    over_pitch = tau_star[..., 1:2] / (2.0 * params.arm)
    over_yaw = tau_star[..., 2:3] * (params.thrust_max / (4.0 * params.torque_max))
    forces = quarter + np.concatenate(
        [
            -over_pitch + over_yaw,
            over_arm - over_yaw,
            over_pitch + over_yaw,
            -over_arm - over_yaw,
        ],
        axis=-1,
    )
    return np.sqrt(np.clip(forces, 0.0, params.thrust_max) / params.thrust_max)


# ---------------------------------------------------------------------------
# episode generation
# ---------------------------------------------------------------------------

def simulate_quad_episode(
    duration,
    sample_rate=100.0,
    rng_seed=0,
    params=None,
    controls=None,
    initial=None,
):
    """Simulate one quadcopter episode recorded at `sample_rate`.

    With `controls` given (fixed rotor-command schedule, fractions in
    [0, 1]) the pilot is bypassed; otherwise commands come from the
    scripted rate-tracking pilot with seed-determined targets.
    """
    params = params or QuadParams()
    dt = 1.0 / sample_rate
    n_records = int(round(duration * sample_rate))
    if n_records < 1:
        raise ValueError(f"duration too short: {duration}")

    seq = np.random.SeedSequence(rng_seed)
    rng_pilot, rng_init = [np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(2)]

    if initial is None:
        Y = np.zeros(17)
        Y[6] = 1.0
        Y[3:6] = rng_init.uniform(-0.5, 0.5, size=3)
        Y[13:17] = hover_speed(params)
    else:
        Y = np.asarray(initial, dtype=float).copy()

    scripted = controls is None
    if scripted:
        targets = _pilot_targets(duration, dt, rng_pilot)
    else:
        controls = np.clip(np.asarray(controls, dtype=float), 0.0, 1.0)
        if len(controls) < n_records + 1:
            raise ValueError("control sequence shorter than the episode")

    states = np.empty((n_records + 1, 6))
    poses = np.empty((n_records + 1, 6))
    cmds = np.empty((n_records + 1, 4))

    def record(i, Y, cmd):
        states[i] = np.concatenate([Y[3:6], Y[10:13]])
        poses[i] = np.concatenate([Y[0:3], quat_to_euler(Y[6:10])])
        cmds[i] = cmd

    for k in range(n_records + 1):
        cmd = _pilot_command(Y, targets[k], params) if scripted else controls[k]
        record(k, Y, cmd)
        if k == n_records:
            break
        Y = _rk4(Y, cmd, dt, params)
        if (
            np.any(np.abs(Y[3:6]) >= params.max_speed)
            or np.any(np.abs(Y[10:13]) >= params.max_rate)
            or not np.all(np.isfinite(Y))
        ):
            raise SimulationDiverged(
                f"quad state left the envelope at t={(k + 1) * dt:.2f}s (seed {rng_seed})",
                seed=rng_seed,
                t=(k + 1) * dt,
            )

    return Episode(
        dt=dt,
        states=states,
        controls=cmds,
        poses=poses,
        seed=rng_seed,
        vehicle="quad",
        extra={},
    )
