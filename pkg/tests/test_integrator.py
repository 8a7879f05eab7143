import numpy as np

from hybmot.sim.integrators import rk4_step, rk4_step_with_jacobian


def test_exponential_decay_one_step():
    f = lambda t, y: -y
    y1 = rk4_step(f, np.array([1.0]), 0.0, 0.1)
    assert abs(y1[0] - np.exp(-0.1)) < 1e-7


def test_local_order_on_decay():
    # halving dt cuts the one-step error by ~2^5 (local order 5)
    f = lambda t, y: -y
    err = []
    for dt in (0.2, 0.1):
        y1 = rk4_step(f, np.array([1.0]), 0.0, dt)
        err.append(abs(y1[0] - np.exp(-dt)))
    ratio = err[0] / err[1]
    assert 24 < ratio < 40


def _damped_oscillator(t, y):
    # x'' = -x - 0.2 x'
    return np.array([y[1], -y[0] - 0.2 * y[1]])


def _integrate(dt, T):
    y = np.array([1.0, 0.0])
    n = int(round(T / dt))
    for k in range(n):
        y = rk4_step(_damped_oscillator, y, k * dt, dt)
    return y


def test_global_order_on_damped_oscillator():
    # reference from a 100x finer grid; halving dt -> error ratio ~16
    ref = _integrate(0.002, 10.0)
    e_coarse = np.linalg.norm(_integrate(0.2, 10.0) - ref)
    e_fine = np.linalg.norm(_integrate(0.1, 10.0) - ref)
    assert 12 < e_coarse / e_fine < 20


def test_force_free_linear_motion():
    f = lambda t, y: np.array([y[1], 0.0])
    y = np.array([0.0, 2.0])
    for k in range(10):
        y = rk4_step(f, y, 0.1 * k, 0.1)
    assert np.allclose(y, [2.0, 2.0], atol=1e-13)


def test_step_jacobian_matches_finite_differences():
    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    f = lambda t, y: y @ A.T
    jac = lambda t, y: np.broadcast_to(A, y.shape + (2,))
    y0 = np.array([[0.7, -0.2]])
    _, J = rk4_step_with_jacobian(f, jac, y0, 0.0, 0.1)
    h = 1e-6
    fd = np.zeros((2, 2))
    for j in range(2):
        yp = y0.copy()
        yp[0, j] += h
        ym = y0.copy()
        ym[0, j] -= h
        fd[:, j] = (rk4_step(f, yp, 0.0, 0.1) - rk4_step(f, ym, 0.0, 0.1))[0] / (2 * h)
    assert np.allclose(J[0], fd, atol=1e-9)


def test_step_jacobian_nonlinear_system():
    f = lambda t, y: np.stack([y[..., 1], -np.sin(y[..., 0]) - 0.1 * y[..., 1]], axis=-1)

    def jac(t, y):
        out = np.zeros(y.shape + (2,))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -np.cos(y[..., 0])
        out[..., 1, 1] = -0.1
        return out

    y0 = np.array([[0.9, 0.4]])
    _, J = rk4_step_with_jacobian(f, jac, y0, 0.0, 0.05)
    h = 1e-6
    for j in range(2):
        yp, ym = y0.copy(), y0.copy()
        yp[0, j] += h
        ym[0, j] -= h
        fd = (rk4_step(f, yp, 0.0, 0.05) - rk4_step(f, ym, 0.0, 0.05))[0] / (2 * h)
        assert np.allclose(J[0, :, j], fd, atol=1e-9)
