"""Residual hybrid model and its two-phase training procedure.

Forward computation per step (free-running):

    z_phy[t]  = physical(z_hat[t-1], c[t])          (raw units)
    h[t]      = LSTM([c[t], normalize(z_phy[t])], h[t-1])
    resid[t]  = constrain(proj_W @ h[t])            (normalized units)
    z_hat[t]  = z_phy[t] + state_std * resid[t]

The previous measured state is never an LSTM input; its information is
already in the hidden state.  Teacher forcing replaces z_hat[t-1] by the
true state, which removes the feedback path.  The free-running backward
pass propagates gradients through the full unrolled graph including the
exact Jacobians of the physical step, so one-phase training reproduces
the divergence that motivates the two-phase schedule instead of hiding
it.

Losses are means over batch, steps and state dimensions of squared
normalized errors, so phase-1 (residual vs LSTM output) and phase-2
(prediction vs truth) objectives agree for horizon 1.
"""

import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from ..data import Normalizer
from .physical import (
    PhysicalModel,
    RegressionModel,
    ShipMinimal,
    ShipPropulsion,
    ShipMinimalParams,
    ShipActuatorParams,
    QuadMinimal,
    QuadMinimalParams,
)
from .recurrent import (
    OutputConstraint,
    RecurrentCorrector,
    adam_init,
    adam_update,
    constrain,
    constrain_backward,
    encode_initial_state,
    encode_initial_state_backward,
    global_norm_clip,
    lstm_step,
    lstm_step_backward,
    lstm_forward,
    lstm_backward,
)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when most batches of an epoch diverge in free-running mode."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class HybridModel:
    physical: PhysicalModel
    corrector: RecurrentCorrector | None
    normalizer: Normalizer

    @property
    def state_dim(self):
        return self.physical.state_dim


@dataclass
class TrainingConfig:
    phase1_epochs: int = 20
    phase2_epochs: int = 30
    learning_rate: float = 3e-3
    clip_norm: float = 5.0
    batch_size: int = 64
    seed: int = 0
    truncation: int = 25
    curriculum: bool = True
    val_patience: int = 10
    curriculum_patience: int = 3
    phase1_patience: int = 3
    divergence_abort_frac: float = 0.5

    def validate(self, horizon):
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.truncation > horizon:
            raise ValueError(f"truncation {self.truncation} exceeds horizon {horizon}")


# ---------------------------------------------------------------------------
# batched samples
# ---------------------------------------------------------------------------

@dataclass
class SampleBatch:
    init_states: np.ndarray      # (B, W, S)
    init_controls: np.ndarray    # (B, W, K)
    horizon_controls: np.ndarray # (B, H, K)
    horizon_states: np.ndarray   # (B, H, S)
    horizon_poses: np.ndarray    # (B, H, P)
    start_poses: np.ndarray      # (B, P)

    @classmethod
    def from_samples(cls, samples):
        if not samples:
            raise ValueError("empty sample list")
        return cls(
            init_states=np.stack([s.init_states for s in samples]),
            init_controls=np.stack([s.init_controls for s in samples]),
            horizon_controls=np.stack([s.horizon_controls for s in samples]),
            horizon_states=np.stack([s.horizon_states for s in samples]),
            horizon_poses=np.stack([s.horizon_poses for s in samples]),
            start_poses=np.stack([s.start_pose for s in samples]),
        )

    def __len__(self):
        return self.init_states.shape[0]

    @property
    def horizon(self):
        return self.horizon_states.shape[1]

    def subset(self, idx):
        return SampleBatch(
            self.init_states[idx],
            self.init_controls[idx],
            self.horizon_controls[idx],
            self.horizon_states[idx],
            self.horizon_poses[idx],
            self.start_poses[idx],
        )

    def truncate(self, horizon):
        if horizon >= self.horizon:
            return self
        return SampleBatch(
            self.init_states,
            self.init_controls,
            self.horizon_controls[:, :horizon],
            self.horizon_states[:, :horizon],
            self.horizon_poses[:, :horizon],
            self.start_poses,
        )


# ---------------------------------------------------------------------------
# forward computation
# ---------------------------------------------------------------------------

def hybrid_step(model, prev_state, control, hidden, cell):
    """Single hybrid step for lag-1 physical models.

    Returns (z_hat, z_phy, z_lstm_raw_units, (h_next, c_next)).
    """
    cor = model.corrector
    nrm = model.normalizer
    z_phy = model.physical.step([prev_state], [control])
    x = np.concatenate([nrm.norm_control(control), nrm.norm_state(z_phy)], axis=-1)
    h_next, c_next, _ = lstm_step(cor.params, "lstm", cor.n_layers, cor.n_hidden, x, hidden, cell)
    raw = h_next[-1] @ cor.params["proj_W"].T
    resid = constrain(raw, cor.constraint)
    z_lstm = nrm.denorm_residual(resid)
    return z_phy + z_lstm, z_phy, z_lstm, (h_next, c_next)


def _encode_window(model, batch):
    nrm = model.normalizer
    zs = np.swapaxes(nrm.norm_state(batch.init_states), 0, 1)
    cs = np.swapaxes(nrm.norm_control(batch.init_controls), 0, 1)
    return encode_initial_state(model.corrector, zs, cs)


def rollout_teacher_forced(model, batch, need_grad=False):
    """Phase-1 rollout: the physical model always consumes true states.

    Loss is the mean squared normalized one-step residual error.
    Returns (loss, predictions (B, H, S), cache or None).
    """
    cor = model.corrector
    nrm = model.normalizer
    B, H = len(batch), batch.horizon
    W = batch.init_states.shape[1]
    lag = model.physical.n_lags
    if lag > W:
        raise ValueError(f"window {W} shorter than the regression lag {lag}")

    full_states = np.concatenate([batch.init_states, batch.horizon_states], axis=1)
    full_controls = np.concatenate([batch.init_controls, batch.horizon_controls[:, 1:]], axis=1)
    z_hist = [
        full_states[:, W - ell : W - ell + H].reshape(B * H, -1) for ell in range(lag, 0, -1)
    ]
    c_hist = [
        full_controls[:, W - ell : W - ell + H].reshape(B * H, -1) for ell in range(lag, 0, -1)
    ]
    z_phy = model.physical.step(z_hist, c_hist).reshape(B, H, -1)

    xs = np.concatenate(
        [nrm.norm_control(batch.horizon_controls), nrm.norm_state(z_phy)], axis=-1
    )
    xs = np.swapaxes(xs, 0, 1)  # (H, B, in)
    h0, c0, init_caches = _encode_window(model, batch)
    tops, _, _, lstm_caches = lstm_forward(cor.params, "lstm", cor.n_layers, cor.n_hidden, xs, h0, c0)
    raw = np.einsum("tbh,sh->tbs", tops, cor.params["proj_W"])
    resid = constrain(raw, cor.constraint)

    target = nrm.norm_residual(batch.horizon_states - z_phy)
    err = resid - np.swapaxes(target, 0, 1)
    loss = float(np.mean(err**2))
    preds = z_phy + np.swapaxes(nrm.denorm_residual(resid), 0, 1)
    cache = None
    if need_grad:
        cache = {"err": err, "raw": raw, "tops": tops, "lstm": lstm_caches, "init": init_caches}
    return loss, preds, cache


def _teacher_forced_backward(model, cache, grads):
    cor = model.corrector
    err, raw, tops = cache["err"], cache["raw"], cache["tops"]
    T, B, S = err.shape
    d_resid = 2.0 * err / err.size
    d_raw = constrain_backward(raw, cor.constraint, d_resid)
    grads["proj_W"] += np.einsum("tbs,tbh->sh", d_raw, tops)
    d_tops = np.einsum("tbs,sh->tbh", d_raw, cor.params["proj_W"])
    zeros = [np.zeros((B, cor.n_hidden)) for _ in range(cor.n_layers)]
    _, dh0, dc0 = lstm_backward(
        cor.params, "lstm", cor.n_layers, cor.n_hidden, cache["lstm"], d_tops, zeros, zeros, grads
    )
    encode_initial_state_backward(model.corrector, cache["init"], dh0, dc0, grads)


def rollout_free_running(model, batch, need_grad=False):
    """Auto-regressive rollout feeding predictions back into the physical
    model.  Divergence (non-finite prediction) is flagged, not raised:
    the returned dict carries `diverged_at`, the loss is NaN and later
    predictions stay NaN.

    Returns (loss, predictions (B, H, S), info dict).
    """
    cor = model.corrector
    nrm = model.normalizer
    B, H = len(batch), batch.horizon
    W = batch.init_states.shape[1]
    lag = model.physical.n_lags
    if lag > W:
        raise ValueError(f"window {W} shorter than the regression lag {lag}")

    z_hist = [batch.init_states[:, -j, :] for j in range(lag, 0, -1)]
    c_hist = [batch.init_controls[:, -j, :] for j in range(lag, 1, -1)]

    use_lstm = cor is not None
    if use_lstm:
        h, c_cell, init_caches = _encode_window(model, batch)
        c_norm_all = nrm.norm_control(batch.horizon_controls)
    preds = np.full((B, H, model.state_dim), np.nan)
    steps = []
    diverged_at = None

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(H):
            c_t = batch.horizon_controls[:, t, :]
            c_hist = c_hist + [c_t]
            if need_grad:
                z_phy, jacs = model.physical.step_with_jacobian(z_hist, c_hist)
            else:
                z_phy, jacs = model.physical.step(z_hist, c_hist), None
            if use_lstm:
                x = np.concatenate([c_norm_all[:, t, :], nrm.norm_state(z_phy)], axis=-1)
                h, c_cell, lstm_cache = lstm_step(
                    cor.params, "lstm", cor.n_layers, cor.n_hidden, x, h, c_cell
                )
                raw = h[-1] @ cor.params["proj_W"].T
                resid = constrain(raw, cor.constraint)
                z_hat = z_phy + nrm.denorm_residual(resid)
            else:
                z_hat = z_phy
            if not np.all(np.isfinite(z_hat)):
                diverged_at = t
                break
            preds[:, t, :] = z_hat
            if need_grad:
                steps.append(
                    {
                        "jacs": jacs,
                        "lstm": lstm_cache if use_lstm else None,
                        "raw": raw if use_lstm else None,
                        "h_top": h[-1] if use_lstm else None,
                    }
                )
            z_hist = z_hist[1:] + [z_hat]
            c_hist = c_hist[1:]

    if diverged_at is not None:
        loss = float("nan")
    else:
        err = nrm.norm_residual(preds - batch.horizon_states)
        loss = float(np.mean(err**2))
    info = {"diverged_at": diverged_at}
    if need_grad and diverged_at is None:
        info.update({"steps": steps, "init": init_caches, "preds": preds})
    return loss, preds, info


def _free_running_backward(model, batch, info, grads):
    """Exact BPTT through the feedback loop, the constraint, the physical
    Jacobians and the initializer."""
    cor = model.corrector
    nrm = model.normalizer
    steps = info["steps"]
    preds = info["preds"]
    B, H, S = preds.shape
    err = nrm.norm_residual(preds - batch.horizon_states)
    d_pred_loss = 2.0 * err / err.size / nrm.state_std

    g_zhat = np.zeros((B, H, S))
    dh_next = [np.zeros((B, cor.n_hidden)) for _ in range(cor.n_layers)]
    dc_next = [np.zeros((B, cor.n_hidden)) for _ in range(cor.n_layers)]
    dh0, dc0 = dh_next, dc_next
    for t in range(H - 1, -1, -1):
        step = steps[t]
        g = g_zhat[:, t, :] + d_pred_loss[:, t, :]
        # through the residual path into the LSTM
        d_resid = nrm.state_std * g
        d_raw = constrain_backward(step["raw"], cor.constraint, d_resid)
        grads["proj_W"] += d_raw.T @ step["h_top"]
        d_top = d_raw @ cor.params["proj_W"]
        dx, dh_next, dc_next = lstm_step_backward(
            cor.params, "lstm", cor.n_layers, step["lstm"], d_top, dh_next, dc_next, grads
        )
        # physical prediction feeds both the sum and the LSTM input
        g_zphy = g + dx[:, cor.control_dim :] / nrm.state_std
        for lag, jac in step["jacs"]:
            src = t - lag
            if src >= 0:
                g_zhat[:, src, :] += np.einsum("bij,bi->bj", jac, g_zphy)
        if t == 0:
            dh0, dc0 = dh_next, dc_next
    encode_initial_state_backward(model.corrector, info["init"], dh0, dc0, grads)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _val_loss(model, val_batch):
    if val_batch is None:
        return float("nan")
    loss, _, _ = rollout_free_running(model, val_batch, need_grad=False)
    return loss if np.isfinite(loss) else float("inf")


def _val_loss_teacher(model, val_batch):
    if val_batch is None:
        return float("nan")
    loss, _, _ = rollout_teacher_forced(model, val_batch, need_grad=False)
    return loss


def _train(model, train_batch, val_batch, config, phase1_epochs, phase2_epochs, curriculum):
    cor = model.corrector
    if cor is None:
        raise ValueError("training requires a recurrent corrector")
    horizon = train_batch.horizon
    config.validate(horizon)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    adam = adam_init(cor.params)
    history = []

    # ---- phase 1: teacher forcing -------------------------------------
    best_tf = float("inf")
    stale = 0
    for epoch in range(phase1_epochs):
        losses = []
        for idx in _epoch_batches(len(train_batch), config.batch_size, rng):
            sub = train_batch.subset(idx)
            grads = cor.zero_grads()
            loss, _, cache = rollout_teacher_forced(model, sub, need_grad=True)
            _teacher_forced_backward(model, cache, grads)
            global_norm_clip(grads, config.clip_norm)
            adam_update(cor.params, grads, adam, config.learning_rate)
            losses.append(loss)
        val = _val_loss_teacher(model, val_batch)
        history.append(
            {
                "phase": 1,
                "epoch": epoch,
                "truncation": 1,
                "train_loss": float(np.mean(losses)),
                "val_loss": val,
                "diverged_batches": 0,
                "n_batches": len(losses),
            }
        )
        if val < best_tf - 1e-12:
            best_tf, stale = val, 0
        else:
            stale += 1
            if stale >= config.phase1_patience:
                break

    # ---- phase 2: free running -----------------------------------------
    # Curriculum stages are short and fixed (advance after
    # curriculum_patience epochs, earlier on plateau) so the schedule is
    # guaranteed to reach the full-horizon objective within the budget.
    trunc = min(config.truncation, horizon) if curriculum else horizon
    best_val = float("inf")
    best_params = None
    stale = 0
    stage_epochs = 0
    for epoch in range(phase2_epochs):
        losses = []
        diverged = 0
        n_batches = 0
        for idx in _epoch_batches(len(train_batch), config.batch_size, rng):
            sub = train_batch.subset(idx).truncate(trunc)
            grads = cor.zero_grads()
            loss, _, info = rollout_free_running(model, sub, need_grad=True)
            n_batches += 1
            if info["diverged_at"] is not None:
                diverged += 1
                continue
            _free_running_backward(model, sub, info, grads)
            global_norm_clip(grads, config.clip_norm)
            adam_update(cor.params, grads, adam, config.learning_rate)
            losses.append(loss)
        val = _val_loss(model, val_batch)
        stage_epochs += 1
        history.append(
            {
                "phase": 2,
                "epoch": epoch,
                "truncation": trunc,
                "train_loss": float(np.mean(losses)) if losses else float("nan"),
                "val_loss": val,
                "diverged_batches": diverged,
                "n_batches": n_batches,
            }
        )
        if diverged > config.divergence_abort_frac * n_batches:
            raise TrainingDiverged(
                f"{diverged}/{n_batches} batches diverged in free-running epoch {epoch}",
                history=history,
            )
        if val < best_val - 1e-12:
            best_val = val
            best_params = {k: v.copy() for k, v in cor.params.items()}
            stale = 0
        else:
            stale += 1
        if trunc < horizon:
            # grow the unroll only while rollouts at the current length are
            # stable; divergent physical models stay at their longest
            # trainable truncation instead of aborting
            stable = diverged == 0
            if stable and (stage_epochs >= config.curriculum_patience or stale >= config.curriculum_patience):
                trunc = min(2 * trunc, horizon)
                stage_epochs = 0
                stale = 0
        elif stale >= config.val_patience:
            break

    if best_params is not None:
        cor.params.update(best_params)
    return model, history


def train_two_phase(model, train_batch, val_batch, config):
    """Teacher-forced warmup followed by curriculum free-running training."""
    return _train(
        model, train_batch, val_batch, config,
        config.phase1_epochs, config.phase2_epochs, config.curriculum,
    )


def train_one_phase(model, train_batch, val_batch, config):
    """Default baseline: free-running objective from epoch 0 at the full
    horizon, same budget (phase1_epochs + phase2_epochs) and machinery."""
    return _train(
        model, train_batch, val_batch, config,
        0, config.phase1_epochs + config.phase2_epochs, False,
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _fp_to_arrays(fp):
    if fp is None:
        return "none", {}
    if isinstance(fp, ShipPropulsion):
        a = fp.actuators
        return "Pro", {
            "fp_M": fp.params.M,
            "fp_scalars": np.array([fp.params.mass, fp.params.z_g, fp.params.g_phi, fp.dt, fp.n_substeps]),
            "fp_act": np.array(
                [a.n_max, a.k_thrust, a.wake_fraction, a.prop_pitch, a.k_rudder,
                 a.race_gain, a.x_rudder, a.z_rudder, a.y_prop, a.rudder_max]
            ),
        }
    if isinstance(fp, ShipMinimal):
        return "Min", {
            "fp_M": fp.params.M,
            "fp_scalars": np.array([fp.params.mass, fp.params.z_g, fp.params.g_phi, fp.dt, fp.n_substeps]),
        }
    if isinstance(fp, QuadMinimal):
        return "MinQ", {
            "fp_quad": np.concatenate(
                [[fp.params.mass], fp.params.inertia, [fp.params.gravity, fp.dt, fp.n_substeps]]
            ),
        }
    raise ValueError(f"cannot serialize first-principles part {type(fp)!r}")


def _fp_from_arrays(kind, arrays):
    if kind == "none":
        return None
    if kind in ("Min", "Pro"):
        mass, z_g, g_phi, dt, n_sub = arrays["fp_scalars"]
        params = ShipMinimalParams(M=arrays["fp_M"], mass=mass, z_g=z_g, g_phi=g_phi)
        if kind == "Min":
            return ShipMinimal(params, dt, int(n_sub))
        act = ShipActuatorParams(*arrays["fp_act"])
        return ShipPropulsion(params, act, dt, int(n_sub))
    if kind == "MinQ":
        vals = arrays["fp_quad"]
        params = QuadMinimalParams(mass=vals[0], inertia=vals[1:4], gravity=vals[4])
        return QuadMinimal(params, vals[5], int(vals[6]))
    raise ValueError(f"unknown first-principles kind {kind!r}")


def save_checkpoint(path, model, meta=None):
    """Self-describing npz container; identical models serialize to
    identical bytes."""
    arrays = {}
    info = {"version": CHECKPOINT_VERSION}
    info.update(meta or {})

    fp_kind, fp_arrays = _fp_to_arrays(model.physical.first_principles)
    info["fp_kind"] = fp_kind
    arrays.update(fp_arrays)

    reg = model.physical.regression
    if reg is None:
        info["reg_kind"] = "none"
    else:
        info["reg_kind"] = reg.kind
        info["reg_h_lag"] = reg.h_lag
        info["reg_dims"] = [reg.state_dim, reg.control_dim]
        if reg.kind == "Hyd":
            for i, w in enumerate(reg.weights):
                arrays[f"reg_W{i}"] = w
        else:
            arrays["reg_W"] = reg.weights

    nrm = model.normalizer
    arrays["norm_state_mean"] = nrm.state_mean
    arrays["norm_state_std"] = nrm.state_std
    arrays["norm_control_mean"] = nrm.control_mean
    arrays["norm_control_std"] = nrm.control_std

    cor = model.corrector
    if cor is None:
        info["corrector"] = None
    else:
        info["corrector"] = {
            "n_layers": cor.n_layers,
            "n_hidden": cor.n_hidden,
            "state_dim": cor.state_dim,
            "control_dim": cor.control_dim,
            "bounded": cor.constraint.bounded,
        }
        for key, value in cor.params.items():
            arrays[f"param_{key}"] = value
        if cor.constraint.bounded:
            arrays["constraint_beta"] = cor.constraint.beta

    arrays["meta_json"] = np.frombuffer(
        json.dumps(info, sort_keys=True).encode(), dtype=np.uint8
    )
    buf = io.BytesIO()
    np.savez(buf, **{k: arrays[k] for k in sorted(arrays)})
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (HybridModel, meta dict)."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    info = json.loads(bytes(arrays.pop("meta_json")).decode())
    if info.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version {info.get('version')} incompatible with {CHECKPOINT_VERSION}"
        )

    fp = _fp_from_arrays(info["fp_kind"], arrays)
    reg = None
    if info["reg_kind"] != "none":
        s, k = info["reg_dims"]
        reg = RegressionModel(info["reg_kind"], s, k, h_lag=info.get("reg_h_lag", 1))
        if reg.kind == "Hyd":
            reg.weights = [arrays[f"reg_W{i}"] for i in range(s)]
        else:
            reg.weights = arrays["reg_W"]
    physical = PhysicalModel(first_principles=fp, regression=reg)

    normalizer = Normalizer(
        arrays["norm_state_mean"],
        arrays["norm_state_std"],
        arrays["norm_control_mean"],
        arrays["norm_control_std"],
    )

    corrector = None
    if info.get("corrector"):
        c = info["corrector"]
        params = {
            key[len("param_") :]: value
            for key, value in arrays.items()
            if key.startswith("param_")
        }
        constraint = OutputConstraint(arrays["constraint_beta"]) if c["bounded"] else OutputConstraint(None)
        corrector = RecurrentCorrector(
            c["n_layers"], c["n_hidden"], c["state_dim"], c["control_dim"], params, constraint
        )
    return HybridModel(physical=physical, corrector=corrector, normalizer=normalizer), info
