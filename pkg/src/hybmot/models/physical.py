"""Discrete one-step physical predictors and their least-squares fitting.

Two families compose a PhysicalModel:

* first-principles parts (ShipMinimal, ShipPropulsion, QuadMinimal) that
  integrate reduced Newtonian dynamics built only from parameters that are
  cheap to measure -- no damping, no environment forces;
* regression parts (Lin / Hyd / Qua / QLag) fit by ordinary least squares
  on the residual of the first-principles part (or on the raw next state
  when there is none).

All step functions are batched over a leading sample axis and expose the
exact Jacobian of the discrete map with respect to the input state(s),
which the free-running trainer needs to push gradients through the
feedback loop.
"""

from dataclasses import dataclass, field

import numpy as np

from ..sim.integrators import rk4_step, rk4_step_with_jacobian

FIRST_PRINCIPLES_KINDS = ("Min", "Pro", "MinQ")
REGRESSION_KINDS = ("Lin", "Hyd", "Qua", "QLag")


class FitError(ValueError):
    """Least-squares fit failed (rank deficiency beyond the ridge rescue)."""


# ---------------------------------------------------------------------------
# first-principles parts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShipMinimalParams:
    """Measurable ship quantities only: inertia, Coriolis builder, restoring."""

    M: np.ndarray
    mass: float
    z_g: float
    g_phi: float

    def __post_init__(self):
        object.__setattr__(self, "M", np.asarray(self.M, dtype=float))
        object.__setattr__(self, "M_inv", np.linalg.inv(self.M))

    @classmethod
    def from_truth(cls, truth):
        return cls(M=truth.M.copy(), mass=truth.mass, z_g=truth.z_g, g_phi=truth.g_phi)


@dataclass(frozen=True)
class ShipActuatorParams:
    n_max: float
    k_thrust: float
    wake_fraction: float
    prop_pitch: float
    k_rudder: float
    race_gain: float
    x_rudder: float
    z_rudder: float
    y_prop: float
    rudder_max: float

    @classmethod
    def from_truth(cls, truth):
        return cls(
            n_max=truth.n_max,
            k_thrust=truth.k_thrust,
            wake_fraction=truth.wake_fraction,
            prop_pitch=truth.prop_pitch,
            k_rudder=truth.k_rudder,
            race_gain=truth.race_gain,
            x_rudder=truth.x_rudder,
            z_rudder=truth.z_rudder,
            y_prop=truth.y_prop,
            rudder_max=truth.rudder_max,
        )


class ShipMinimal:
    """Minimal 4-DOF model: Coriolis and linearized roll restoring only.

    State z = (u, w, p, r, phi); controls are ignored.  Integrated with
    sub-stepped RK4 so the 1 Hz discrete map stays faithful to the roll
    dynamics.
    """

    kind = "Min"
    state_dim = 5
    n_lags = 1

    def __init__(self, params, dt, n_substeps=10):
        self.params = params
        self.dt = dt
        self.n_substeps = n_substeps

    def _rhs(self, z):
        p = self.params
        u, w, pr, r, phi = z[..., 0], z[..., 1], z[..., 2], z[..., 3], z[..., 4]
        cor = np.stack(
            [-p.mass * w * r, p.mass * u * r, -p.mass * p.z_g * u * r, p.mass * p.z_g * u * pr],
            axis=-1,
        )
        rest = np.zeros_like(cor)
        rest[..., 2] = p.g_phi * phi
        acc = (-cor - rest) @ p.M_inv.T
        return np.concatenate([acc, pr[..., None]], axis=-1)

    def _rhs_jac(self, z):
        p = self.params
        u, w, pr, r = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
        B = z.shape[:-1]
        dcor = np.zeros(B + (4, 5))
        m, zg = p.mass, p.z_g
        dcor[..., 0, 1] = -m * r
        dcor[..., 0, 3] = -m * w
        dcor[..., 1, 0] = m * r
        dcor[..., 1, 3] = m * u
        dcor[..., 2, 0] = -m * zg * r
        dcor[..., 2, 3] = -m * zg * u
        dcor[..., 3, 0] = m * zg * pr
        dcor[..., 3, 2] = m * zg * u
        drest = np.zeros(B + (4, 5))
        drest[..., 2, 4] = p.g_phi
        jac = np.zeros(B + (5, 5))
        jac[..., :4, :] = p.M_inv @ (-dcor - drest)
        jac[..., 4, 2] = 1.0
        return jac

    def _control_rhs(self, z, c):
        return 0.0

    def _control_rhs_jac(self, z, c):
        return 0.0

    def step(self, z, c):
        h = self.dt / self.n_substeps
        f = lambda t, y: self._rhs(y) + self._control_rhs(y, c)
        for _ in range(self.n_substeps):
            z = rk4_step(f, z, 0.0, h)
        return z

    def step_with_jacobian(self, z, c):
        h = self.dt / self.n_substeps
        f = lambda t, y: self._rhs(y) + self._control_rhs(y, c)
        jf = lambda t, y: self._rhs_jac(y) + self._control_rhs_jac(y, c)
        jac = np.broadcast_to(np.eye(5), z.shape + (5,)).copy()
        for _ in range(self.n_substeps):
            z, j_sub = rk4_step_with_jacobian(f, jf, z, 0.0, h)
            jac = j_sub @ jac
        return z, jac


class ShipPropulsion(ShipMinimal):
    """Minimal model extended with propeller thrust and rudder forces."""

    kind = "Pro"

    def __init__(self, params, actuators, dt, n_substeps=10):
        super().__init__(params, dt, n_substeps)
        self.actuators = actuators

    def _thrust_lift(self, z, c):
        a = self.actuators
        u = z[..., 0]
        n = np.clip(c[..., 0:2], 0.0, 1.0) * a.n_max
        delta = np.clip(c[..., 2:4], -a.rudder_max, a.rudder_max)
        slip = 1.0 - a.wake_fraction * u[..., None] / (n * a.prop_pitch + 1e-3)
        thrust = a.k_thrust * n * np.abs(n) * slip
        inflow = (1.0 - a.wake_fraction) * u[..., None] + a.race_gain * n
        lift = a.k_rudder * inflow * np.abs(inflow) * np.sin(delta)
        return n, delta, thrust, inflow, lift

    def _control_rhs(self, z, c):
        a = self.actuators
        _, _, thrust, _, lift = self._thrust_lift(z, c)
        surge = thrust.sum(axis=-1)
        sway = lift.sum(axis=-1)
        roll = -a.z_rudder * sway
        yaw = a.x_rudder * sway + a.y_prop * (thrust[..., 0] - thrust[..., 1])
        tau = np.stack([surge, sway, roll, yaw], axis=-1)
        acc = tau @ self.params.M_inv.T
        return np.concatenate([acc, np.zeros(z.shape[:-1] + (1,))], axis=-1)

    def _control_rhs_jac(self, z, c):
        a = self.actuators
        n, delta, _, inflow, _ = self._thrust_lift(z, c)
        dthrust_du = -a.k_thrust * n * np.abs(n) * a.wake_fraction / (n * a.prop_pitch + 1e-3)
        dlift_du = a.k_rudder * 2.0 * np.abs(inflow) * (1.0 - a.wake_fraction) * np.sin(delta)
        dsurge = dthrust_du.sum(axis=-1)
        dsway = dlift_du.sum(axis=-1)
        droll = -a.z_rudder * dsway
        dyaw = a.x_rudder * dsway + a.y_prop * (dthrust_du[..., 0] - dthrust_du[..., 1])
        dtau_du = np.stack([dsurge, dsway, droll, dyaw], axis=-1)
        jac = np.zeros(z.shape[:-1] + (5, 5))
        jac[..., :4, 0] = dtau_du @ self.params.M_inv.T
        return jac


@dataclass(frozen=True)
class QuadMinimalParams:
    mass: float
    inertia: np.ndarray
    gravity: float

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))

    @classmethod
    def from_truth(cls, truth):
        return cls(mass=truth.mass, inertia=truth.inertia.copy(), gravity=truth.gravity)


class QuadMinimal:
    """Rigid-body / gravity quad model: z = (vx, vy, vz, p, q, r).

    Velocity dynamics know only gravity (thrust direction is not part of
    the measured state); rates follow the torque-free Euler equations.
    """

    kind = "MinQ"
    state_dim = 6
    n_lags = 1

    def __init__(self, params, dt, n_substeps=1):
        self.params = params
        self.dt = dt
        self.n_substeps = n_substeps

    def _rhs(self, z):
        ix, iy, iz = self.params.inertia
        p, q, r = z[..., 3], z[..., 4], z[..., 5]
        acc = np.zeros(z.shape[:-1] + (3,))
        acc[..., 2] = -self.params.gravity
        wdot = np.stack(
            [
                -(iz - iy) / ix * q * r,
                -(ix - iz) / iy * r * p,
                -(iy - ix) / iz * p * q,
            ],
            axis=-1,
        )
        return np.concatenate([acc, wdot], axis=-1)

    def _rhs_jac(self, z):
        ix, iy, iz = self.params.inertia
        p, q, r = z[..., 3], z[..., 4], z[..., 5]
        jac = np.zeros(z.shape[:-1] + (6, 6))
        jac[..., 3, 4] = -(iz - iy) / ix * r
        jac[..., 3, 5] = -(iz - iy) / ix * q
        jac[..., 4, 5] = -(ix - iz) / iy * p
        jac[..., 4, 3] = -(ix - iz) / iy * r
        jac[..., 5, 3] = -(iy - ix) / iz * q
        jac[..., 5, 4] = -(iy - ix) / iz * p
        return jac

    def step(self, z, c):
        h = self.dt / self.n_substeps
        for _ in range(self.n_substeps):
            z = rk4_step(lambda t, y: self._rhs(y), z, 0.0, h)
        return z

    def step_with_jacobian(self, z, c):
        h = self.dt / self.n_substeps
        jac = np.broadcast_to(np.eye(6), z.shape + (6,)).copy()
        for _ in range(self.n_substeps):
            z, j_sub = rk4_step_with_jacobian(
                lambda t, y: self._rhs(y), lambda t, y: self._rhs_jac(y), z, 0.0, h
            )
            jac = j_sub @ jac
        return z, jac


def make_first_principles(kind, truth_params, dt):
    if kind in (None, "none"):
        return None
    if kind == "Min":
        return ShipMinimal(ShipMinimalParams.from_truth(truth_params), dt)
    if kind == "Pro":
        return ShipPropulsion(
            ShipMinimalParams.from_truth(truth_params),
            ShipActuatorParams.from_truth(truth_params),
            dt,
        )
    if kind == "MinQ":
        return QuadMinimal(QuadMinimalParams.from_truth(truth_params), dt)
    raise ValueError(f"unknown first-principles kind {kind!r}")


# ---------------------------------------------------------------------------
# regression features
# ---------------------------------------------------------------------------

def _sgn(x):
    return np.sign(x)


# Blanke-style per-output damping/drag terms for the 4-DOF ship state
# (u, w, p, r, phi).  Committed as data so alternates can be swapped in.
def _hyd_features(z):
    u, w, p, r, phi = (z[..., i] for i in range(5))
    au = np.abs(u)
    aw = np.abs(w)
    ar = np.abs(r)
    aphi = np.abs(phi)
    return [
        np.stack([u, au * u, w * r], axis=-1),
        np.stack([w, au * w, u * r, aw * w, ar * w, aw * r, au * aw * phi, u**2 * phi], axis=-1),
        np.stack([p], axis=-1),
        np.stack([r, au * w, aw * r, au * r, ar * r, au * aphi * phi, ar * u * phi], axis=-1),
        np.stack([p, phi], axis=-1),
    ]


def _hyd_feature_jacs(z):
    """d feature / d z per output; shapes (..., F_i, 5)."""
    u, w, p, r, phi = (z[..., i] for i in range(5))
    su, sw, sr = _sgn(u), _sgn(w), _sgn(r)
    sphi = _sgn(phi)
    au, aw, ar, aphi = np.abs(u), np.abs(w), np.abs(r), np.abs(phi)
    zero = np.zeros_like(u)
    one = np.ones_like(u)

    def rows(*rs):
        return np.stack([np.stack(rr, axis=-1) for rr in rs], axis=-2)

    j_u = rows(
        (one, zero, zero, zero, zero),
        (2.0 * au, zero, zero, zero, zero),
        (zero, r, zero, w, zero),
    )
    j_w = rows(
        (zero, one, zero, zero, zero),
        (su * w, au, zero, zero, zero),
        (r, zero, zero, u, zero),
        (zero, 2.0 * aw, zero, zero, zero),
        (zero, ar, zero, sr * w, zero),
        (zero, sw * r, zero, aw, zero),
        (su * aw * phi, au * sw * phi, zero, zero, au * aw),
        (2.0 * u * phi, zero, zero, zero, u**2),
    )
    j_p = rows((zero, zero, one, zero, zero))
    j_r = rows(
        (zero, zero, zero, one, zero),
        (su * w, au, zero, zero, zero),
        (zero, sw * r, zero, aw, zero),
        (su * r, zero, zero, au, zero),
        (zero, zero, zero, 2.0 * ar, zero),
        (su * aphi * phi, zero, zero, zero, au * 2.0 * aphi),
        (ar * phi, zero, zero, sr * u * phi, ar * u),
    )
    j_phi = rows((zero, zero, one, zero, zero), (zero, zero, zero, zero, one))
    return [j_u, j_w, j_p, j_r, j_phi]


class RegressionModel:
    """Linear-in-features one-step predictor.

    kinds:
      Lin  -- [c, z, 1]
      Qua  -- [c, z, c^2, z^2, 1]
      QLag -- [z_{t-H+1..t}, c_{t-H+1..t}, c_t^2, 1] over an H-step window
      Hyd  -- per-output nonlinear damping terms (ship only), no controls
    """

    def __init__(self, kind, state_dim, control_dim, h_lag=4, weights=None):
        if kind not in REGRESSION_KINDS:
            raise ValueError(f"unknown regression kind {kind!r}")
        if kind == "Hyd" and state_dim != 5:
            raise ValueError("Hyd features are defined for the 5-dim ship state")
        self.kind = kind
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.h_lag = int(h_lag) if kind == "QLag" else 1
        self.n_lags = self.h_lag
        self.weights = weights

    # ---- feature construction -------------------------------------------
    def feature_lengths(self):
        s, k = self.state_dim, self.control_dim
        if self.kind == "Lin":
            return [k + s + 1] * s
        if self.kind == "Qua":
            return [2 * k + 2 * s + 1] * s
        if self.kind == "QLag":
            return [self.h_lag * (s + k) + k + 1] * s
        return [f.shape[-1] for f in _hyd_features(np.zeros(s))]

    def features(self, z_hist, c_hist):
        """Shared feature matrix (or per-output list for Hyd).

        z_hist / c_hist: sequences (oldest..newest) of (..., S) / (..., K),
        at least n_lags long; entry [-1] is the current step t.
        """
        z = z_hist[-1]
        c = c_hist[-1]
        ones = np.ones(z.shape[:-1] + (1,))
        if self.kind == "Lin":
            return np.concatenate([c, z, ones], axis=-1)
        if self.kind == "Qua":
            return np.concatenate([c, z, c**2, z**2, ones], axis=-1)
        if self.kind == "QLag":
            zs = list(z_hist[-self.h_lag :])
            cs = list(c_hist[-self.h_lag :])
            return np.concatenate(zs + cs + [c**2, ones], axis=-1)
        return _hyd_features(z)

    def predict(self, z_hist, c_hist):
        feats = self.features(z_hist, c_hist)
        if self.kind == "Hyd":
            return np.stack(
                [feats[i] @ self.weights[i] for i in range(self.state_dim)], axis=-1
            )
        return feats @ self.weights.T

    def jac_state(self, z_hist, c_hist):
        """[(lag, d pred / d z_{t+1-lag})]; lag 1 is the current state."""
        z = z_hist[-1]
        s, k = self.state_dim, self.control_dim
        batch = z.shape[:-1]
        if self.kind == "Lin":
            jac = np.broadcast_to(self.weights[:, k : k + s], batch + (s, s)).copy()
            return [(1, jac)]
        if self.kind == "Qua":
            lin_block = self.weights[:, k : k + s]
            sq_block = self.weights[:, 2 * k + s : 2 * k + 2 * s]
            jac = lin_block + sq_block[..., :, :] * (2.0 * z[..., None, :])
            return [(1, np.broadcast_to(jac, batch + (s, s)).copy())]
        if self.kind == "QLag":
            out = []
            for lag in range(1, self.h_lag + 1):
                # newest state block sits at position (h_lag - 1) * s
                start = (self.h_lag - lag) * s
                block = self.weights[:, start : start + s]
                out.append((lag, np.broadcast_to(block, batch + (s, s)).copy()))
            return out
        fjacs = _hyd_feature_jacs(z)
        jac = np.stack(
            [np.einsum("f,...fs->...s", self.weights[i], fjacs[i]) for i in range(s)],
            axis=-2,
        )
        return [(1, jac)]


# ---------------------------------------------------------------------------
# least-squares fitting
# ---------------------------------------------------------------------------

def _fp_predictions(fp, states, controls):
    if fp is None:
        return np.zeros_like(states)
    return fp.step(states, controls)


def _solve_ridge(X, Y, ridge):
    """Ridge-stabilized normal equations on the column-scaled Gram.

    Scaling by 1/sqrt(diag) makes the deficiency test unit-independent: a
    direction whose scaled eigenvalue is not well above the ridge would be
    determined by the regularizer, not the data, so the fit errors out.
    """
    gram = X.T @ X
    diag = np.sqrt(np.diag(gram))
    scale = np.where(diag > 0.0, diag, 1.0)
    scaled = gram / scale[:, None] / scale[None, :]
    eig = np.linalg.eigvalsh(scaled)
    cond = eig[-1] / max(eig[0], np.finfo(float).tiny)
    if not np.isfinite(cond) or eig[0] < 100.0 * ridge:
        raise FitError(
            f"design matrix is rank deficient beyond the ridge rescue "
            f"(condition number {cond:.3e})"
        )
    return np.linalg.solve(gram + ridge * np.eye(X.shape[1]), X.T @ Y)


def fit_regression(kind, first_principles, episodes, h_lag=4, ridge=1e-8):
    """OLS fit of a regression part on first-principles residuals.

    Targets are z_{t+1} - FirstPrinciples(z_t, c_t) over every transition
    of every episode (the raw next state if there is no first-principles
    part).  Solved per output dimension via ridge-stabilized normal
    equations.
    """
    if not episodes:
        raise ValueError("cannot fit a regression model without training episodes")
    state_dim = episodes[0].states.shape[1]
    control_dim = episodes[0].controls.shape[1]
    model = RegressionModel(kind, state_dim, control_dim, h_lag=h_lag)
    lag = model.n_lags

    feats, targets = [], []
    for ep in episodes:
        z, c = ep.states, ep.controls
        n = len(ep) - 1
        if n < lag:
            continue
        idx = np.arange(lag - 1, n)
        resid = z[idx + 1] - _fp_predictions(first_principles, z[idx], c[idx])
        z_hist = [z[idx - (lag - 1 - j)] for j in range(lag)]
        c_hist = [c[idx - (lag - 1 - j)] for j in range(lag)]
        feats.append(model.features(z_hist, c_hist))
        targets.append(resid)
    if not feats:
        raise ValueError("episodes are too short for the requested lag window")

    if kind == "Hyd":
        per_out = [np.concatenate([f[i] for f in feats], axis=0) for i in range(state_dim)]
        Y = np.concatenate(targets, axis=0)
        model.weights = [
            _solve_ridge(per_out[i], Y[:, i], ridge) for i in range(state_dim)
        ]
    else:
        X = np.concatenate(feats, axis=0)
        Y = np.concatenate(targets, axis=0)
        model.weights = _solve_ridge(X, Y, ridge).T
    return model


def select_qlag_window(first_principles, train_eps, val_eps, candidates=(2, 4, 8), ridge=1e-8):
    """Pick the QLag window by one-step validation MSE."""
    best = None
    for h in candidates:
        model = fit_regression("QLag", first_principles, train_eps, h_lag=h, ridge=ridge)
        err = 0.0
        count = 0
        for ep in val_eps:
            z, c = ep.states, ep.controls
            n = len(ep) - 1
            idx = np.arange(h - 1, n)
            pred = _fp_predictions(first_principles, z[idx], c[idx]) + model.predict(
                [z[idx - (h - 1 - j)] for j in range(h)],
                [c[idx - (h - 1 - j)] for j in range(h)],
            )
            err += np.sum((pred - z[idx + 1]) ** 2)
            count += idx.size
        mse = err / max(count, 1)
        if best is None or mse < best[0]:
            best = (mse, h, model)
    return best[2], best[1]


# ---------------------------------------------------------------------------
# composed physical model
# ---------------------------------------------------------------------------

@dataclass
class PhysicalModel:
    """Sum of an optional first-principles part and an optional regression
    part; at least one must be present."""

    first_principles: object = None
    regression: object = None

    def __post_init__(self):
        if self.first_principles is None and self.regression is None:
            raise ValueError("a physical model needs at least one part")

    @property
    def n_lags(self):
        return self.regression.n_lags if self.regression is not None else 1

    @property
    def state_dim(self):
        part = self.first_principles or self.regression
        return part.state_dim

    def step(self, z_hist, c_hist):
        z, c = z_hist[-1], c_hist[-1]
        out = 0.0
        if self.first_principles is not None:
            out = out + self.first_principles.step(z, c)
        if self.regression is not None:
            out = out + self.regression.predict(z_hist, c_hist)
        return out

    def step_with_jacobian(self, z_hist, c_hist):
        z, c = z_hist[-1], c_hist[-1]
        out = 0.0
        jacs = {}
        if self.first_principles is not None:
            pred, jac = self.first_principles.step_with_jacobian(z, c)
            out = out + pred
            jacs[1] = jac
        if self.regression is not None:
            out = out + self.regression.predict(z_hist, c_hist)
            for lag, jac in self.regression.jac_state(z_hist, c_hist):
                jacs[lag] = jacs.get(lag, 0.0) + jac
        return out, sorted(jacs.items())


def make_physical_model(fp_kind, reg_kind, truth_params, dt, train_episodes=None, h_lag=4, ridge=1e-8):
    """Build a PhysicalModel and fit its regression part if present."""
    fp = make_first_principles(fp_kind, truth_params, dt)
    reg = None
    if reg_kind not in (None, "none"):
        if train_episodes is None:
            raise ValueError(f"regression kind {reg_kind} requires training episodes")
        reg = fit_regression(reg_kind, fp, train_episodes, h_lag=h_lag, ridge=ridge)
    return PhysicalModel(first_principles=fp, regression=reg)


def rollout_physical(model, init_states, init_controls, horizon_controls):
    """Free-running rollout of the physical model alone.

    init_states/init_controls: (B, W, S) / (B, W, K) true history (the
    regression window draws from it); horizon_controls: (B, H, K).
    Returns (B, H, S) predictions (non-finite values flag divergence;
    no exception is raised).
    """
    lag = model.n_lags
    # state window ends at the current state; the control window gains the
    # driving control at each step (horizon_controls[0] aliases the final
    # init control by construction of PredictionSample)
    z_hist = [init_states[:, -j, :] for j in range(lag, 0, -1)]
    c_hist = [init_controls[:, -j, :] for j in range(lag, 1, -1)]
    horizon = horizon_controls.shape[1]
    preds = np.empty((init_states.shape[0], horizon, model.state_dim))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            c_hist = c_hist + [horizon_controls[:, t, :]]
            z_next = model.step(z_hist, c_hist)
            preds[:, t, :] = z_next
            z_hist = z_hist[1:] + [z_next]
            c_hist = c_hist[1:]
    return preds
