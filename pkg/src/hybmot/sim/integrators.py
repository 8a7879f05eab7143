"""Classical fixed-step Runge-Kutta integration."""

import numpy as np


def rk4_step(f, y, t, dt):
    """One classical 4th-order Runge-Kutta step of y' = f(t, y).

    `y` may be any ndarray (batched states work as long as `f` is
    vectorized over the leading axes).
    """
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_with_jacobian(f, jac, y, t, dt):
    """RK4 step together with the exact Jacobian of the discrete map.

    `jac(t, y)` must return d f / d y.  The step Jacobian is propagated
    through the same four stages (variational equation of the scheme), so
    the result matches finite differences of `rk4_step` to roundoff.

    Batched: y (..., n), jac (..., n, n).
    """
    eye = np.broadcast_to(np.eye(y.shape[-1]), y.shape + (y.shape[-1],))

    k1 = f(t, y)
    j1 = jac(t, y)

    y2 = y + 0.5 * dt * k1
    k2 = f(t + 0.5 * dt, y2)
    j2 = jac(t + 0.5 * dt, y2) @ (eye + 0.5 * dt * j1)

    y3 = y + 0.5 * dt * k2
    k3 = f(t + 0.5 * dt, y3)
    j3 = jac(t + 0.5 * dt, y3) @ (eye + 0.5 * dt * j2)

    y4 = y + dt * k3
    k4 = f(t + dt, y4)
    j4 = jac(t + dt, y4) @ (eye + dt * j3)

    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    j_step = eye + (dt / 6.0) * (j1 + 2.0 * j2 + 2.0 * j3 + j4)
    return y_next, j_step
