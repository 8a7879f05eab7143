"""Prediction metrics: per-state RMSE, dead-reckoned trajectory error and
the relative-threshold interpretability measure with its sweep.

Trajectories are reconstructed from predicted velocities by midpoint RK2
dead reckoning; the same scheme is applied to the true states for the
comparison baseline so the discretization bias cancels.  A rollout that
diverged (non-finite predictions) yields an infinite error rather than an
exception; reports carry the count of diverged samples.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .models.hybrid import (
    SampleBatch,
    TrainingConfig,
    rollout_free_running,
    _train,
)
from .models.physical import rollout_physical
from .models.recurrent import OutputConstraint

SHIP_STATES = ("u", "w", "p", "r", "phi")
QUAD_STATES = ("vx", "vy", "vz", "p", "q", "r")


def state_names(vehicle):
    return SHIP_STATES if vehicle == "ship" else QUAD_STATES


# ---------------------------------------------------------------------------
# state RMSE
# ---------------------------------------------------------------------------

@dataclass
class StateRmseReport:
    rmse: np.ndarray          # (S,) per-state RMSE in raw units
    normalized_sum: float     # sum of per-state RMSE / train std (model selection)
    n_diverged: int = 0


def state_rmse(predictions, truths, state_std=None):
    """Per-dimension sqrt(mean squared error) over all samples and steps.

    predictions/truths: (..., S).  Non-finite predictions poison the
    affected dimensions to +inf.
    """
    predictions = np.asarray(predictions, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if predictions.shape != truths.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {truths.shape}")
    if predictions.size == 0:
        raise ValueError("empty input")
    err = predictions - truths
    flat = err.reshape(-1, err.shape[-1])
    finite = np.all(np.isfinite(flat), axis=1)
    n_diverged = int(np.size(finite) - np.count_nonzero(finite))
    if n_diverged:
        rmse = np.full(err.shape[-1], np.inf)
    else:
        rmse = np.sqrt(np.mean(flat**2, axis=0))
    if state_std is None:
        normalized_sum = float("nan")
    else:
        normalized_sum = float(np.sum(rmse / state_std))
    return StateRmseReport(rmse=rmse, normalized_sum=normalized_sum, n_diverged=n_diverged)


# ---------------------------------------------------------------------------
# trajectory reconstruction and RMSE
# ---------------------------------------------------------------------------

def _ship_pose_rate(x, y, psi, u, w, phi, r):
    cphi = np.cos(phi)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    return u * cpsi - w * cphi * spsi, u * spsi + w * cphi * cpsi, r * cphi


def reconstruct_trajectory(start_state, states, start_pose, dt, vehicle):
    """Dead-reckon positions from predicted states (midpoint RK2, velocities
    linearly interpolated between samples).

    start_state: (B, S) state aligned with start_pose; states: (B, H, S)
    predicted states.  Returns positions (B, H, 2) for ships (x, y) and
    (B, H, 3) for quads.
    """
    start_state = np.atleast_2d(start_state)
    if states.ndim == 2:
        states = states[None]
    B, H, _ = states.shape
    if vehicle == "quad":
        vel = np.concatenate([start_state[:, None, :3], states[..., :3]], axis=1)
        mid = 0.5 * (vel[:, :-1] + vel[:, 1:])
        pos0 = np.asarray(start_pose, dtype=float).reshape(B, -1)[:, :3]
        return pos0[:, None, :] + np.cumsum(mid, axis=1) * dt

    out = np.empty((B, H, 2))
    pose0 = np.asarray(start_pose, dtype=float).reshape(B, -1)
    x, y, psi = pose0[:, 0].copy(), pose0[:, 1].copy(), pose0[:, 3].copy()
    u, w, phi, r = (start_state[:, i].copy() for i in (0, 1, 4, 3))
    for k in range(H):
        un, wn, phin, rn = states[:, k, 0], states[:, k, 1], states[:, k, 4], states[:, k, 3]
        dx1, dy1, dpsi1 = _ship_pose_rate(x, y, psi, u, w, phi, r)
        um, wm, phim, rm = 0.5 * (u + un), 0.5 * (w + wn), 0.5 * (phi + phin), 0.5 * (r + rn)
        dx2, dy2, dpsi2 = _ship_pose_rate(
            x + 0.5 * dt * dx1, y + 0.5 * dt * dy1, psi + 0.5 * dt * dpsi1, um, wm, phim, rm
        )
        x = x + dt * dx2
        y = y + dt * dy2
        psi = psi + dt * dpsi2
        u, w, phi, r = un, wn, phin, rn
        out[:, k, 0] = x
        out[:, k, 1] = y
    return out


@dataclass
class TrajectoryReport:
    mean: float               # mean over samples of per-sample mean distance [m]
    ci95: float               # 1.96 * std / sqrt(n)
    per_sample: np.ndarray    # (B,)
    per_bucket: np.ndarray    # (B, n_buckets) mean distance per time bucket
    bucket_steps: int
    n_diverged: int = 0


def trajectory_rmse(pred_positions, true_positions, bucket_steps=60):
    """Mean pointwise Euclidean distance between trajectories.

    Per sample: mean over steps of the distance; reported as
    mean +- 1.96 std/sqrt(n) over samples, plus per-bucket series for
    boxplots (bucket_steps steps per bucket, e.g. one minute at 1 Hz).
    """
    pred_positions = np.asarray(pred_positions, dtype=float)
    true_positions = np.asarray(true_positions, dtype=float)
    if pred_positions.shape != true_positions.shape:
        raise ValueError("trajectory shapes differ")
    if pred_positions.size == 0:
        raise ValueError("empty input")
    if pred_positions.ndim == 2:
        pred_positions = pred_positions[None]
        true_positions = true_positions[None]
    dist = np.linalg.norm(pred_positions - true_positions, axis=-1)  # (B, H)
    dist = np.where(np.isfinite(dist), dist, np.inf)
    per_sample = dist.mean(axis=1)
    n_diverged = int(np.sum(~np.isfinite(per_sample)))
    finite = per_sample[np.isfinite(per_sample)]
    if n_diverged:
        mean = float("inf")
        ci = float("nan")
    else:
        mean = float(finite.mean())
        ci = float(1.96 * finite.std(ddof=0) / math.sqrt(len(finite))) if len(finite) > 1 else 0.0

    H = dist.shape[1]
    n_buckets = max(1, H // bucket_steps)
    per_bucket = np.stack(
        [dist[:, b * bucket_steps : min((b + 1) * bucket_steps, H)].mean(axis=1) for b in range(n_buckets)],
        axis=1,
    )
    return TrajectoryReport(
        mean=mean,
        ci95=ci,
        per_sample=per_sample,
        per_bucket=per_bucket,
        bucket_steps=bucket_steps,
        n_diverged=n_diverged,
    )


# ---------------------------------------------------------------------------
# relative threshold
# ---------------------------------------------------------------------------

@dataclass
class PhysicalOutputRange:
    low: np.ndarray    # (S,) 2.5th percentile of one-step outputs
    high: np.ndarray   # (S,) 97.5th percentile

    @property
    def size(self):
        return self.high - self.low


def physical_output_range(physical, episodes, percentiles=(2.5, 97.5)):
    """95% range of the physical model's one-step (teacher-forced) outputs
    over the given episodes (train + validation)."""
    lag = physical.n_lags
    outputs = []
    for ep in episodes:
        z, c = ep.states, ep.controls
        n = len(ep) - 1
        if n < lag:
            continue
        idx = np.arange(lag - 1, n)
        z_hist = [z[idx - (lag - 1 - j)] for j in range(lag)]
        c_hist = [c[idx - (lag - 1 - j)] for j in range(lag)]
        outputs.append(physical.step(z_hist, c_hist))
    if not outputs:
        raise ValueError("no transitions available to estimate the output range")
    allout = np.concatenate(outputs, axis=0)
    low, high = np.percentile(allout, percentiles, axis=0, method="linear")
    return PhysicalOutputRange(low=low, high=high)


def relative_threshold(phys_range, beta_raw):
    """Percent ratio 2*beta / (high - low) per state, plus the mean.

    beta_raw is the constraint bound in raw state units; lower percentages
    mean a more interpretable hybrid.
    """
    size = phys_range.size
    if np.any(size <= 0.0):
        bad = np.flatnonzero(size <= 0.0).tolist()
        raise ValueError(f"physical output range has zero size in dimension(s) {bad}")
    per_state = 200.0 * np.asarray(beta_raw, dtype=float) / size
    return per_state, float(per_state.mean())


def beta_for_threshold(phys_range, percent):
    """Raw-unit constraint bounds realizing a given relative threshold."""
    return (percent / 100.0) * phys_range.size / 2.0


# ---------------------------------------------------------------------------
# model evaluation driver
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    vehicle: str
    states: tuple
    state_report: StateRmseReport
    trajectory: TrajectoryReport
    horizon: int
    n_samples: int


def evaluate_model(model, samples, dt, vehicle, bucket_steps=None):
    """Free-running evaluation: state RMSE plus dead-reckoned trajectory
    RMSE against the same reconstruction of the true states."""
    batch = samples if isinstance(samples, SampleBatch) else SampleBatch.from_samples(samples)
    if bucket_steps is None:
        bucket_steps = max(1, int(round(60.0 / dt))) if vehicle == "ship" else max(1, batch.horizon // 10)
    if model.corrector is None:
        preds = rollout_physical(
            model.physical, batch.init_states, batch.init_controls, batch.horizon_controls
        )
    else:
        _, preds, _ = rollout_free_running(model, batch, need_grad=False)
    start_state = batch.init_states[:, -1, :]
    pred_pos = reconstruct_trajectory(start_state, preds, batch.start_poses, dt, vehicle)
    true_pos = reconstruct_trajectory(start_state, batch.horizon_states, batch.start_poses, dt, vehicle)
    report = EvalReport(
        vehicle=vehicle,
        states=state_names(vehicle),
        state_report=state_rmse(preds, batch.horizon_states, model.normalizer.state_std),
        trajectory=trajectory_rmse(pred_pos, true_pos, bucket_steps=bucket_steps),
        horizon=batch.horizon,
        n_samples=len(batch),
    )
    return report


# ---------------------------------------------------------------------------
# threshold sweep
# ---------------------------------------------------------------------------

def _clone_with_beta(model, beta_norm):
    from .models.hybrid import HybridModel  # local import to avoid a cycle
    from .models.recurrent import RecurrentCorrector

    cor = model.corrector
    clone = RecurrentCorrector(
        cor.n_layers,
        cor.n_hidden,
        cor.state_dim,
        cor.control_dim,
        {k: v.copy() for k, v in cor.params.items()},
        OutputConstraint(beta_norm),
    )
    return HybridModel(physical=model.physical, corrector=clone, normalizer=model.normalizer)


@dataclass
class SweepRow:
    threshold: float | None     # None = unconstrained baseline
    rmse_finetuned: np.ndarray  # (S,)
    rmse_clamped: np.ndarray    # (S,)
    trajectory_finetuned: float
    trajectory_clamped: float


def threshold_sweep(
    model,
    thresholds,
    range_episodes,
    train_samples,
    val_samples,
    test_samples,
    dt,
    vehicle,
    finetune_epochs=5,
    seed=0,
    learning_rate=1e-3,
    batch_size=64,
):
    """Error-vs-threshold table for a trained unconstrained model.

    For each relative threshold the constraint bound is set from the 95%
    physical output range, the model is evaluated as-is (clamped) and
    after a fixed free-running fine-tuning budget.  The unconstrained
    baseline row is included.  Endpoint identity: at 0% the constrained
    model equals the pure physical rollout, which is asserted here.
    """
    if model.corrector is None or model.corrector.constraint.bounded:
        raise ValueError("threshold_sweep expects a trained unconstrained hybrid")
    phys_range = physical_output_range(model.physical, range_episodes)
    train_batch = train_samples if isinstance(train_samples, SampleBatch) else SampleBatch.from_samples(train_samples)
    val_batch = val_samples if isinstance(val_samples, SampleBatch) else SampleBatch.from_samples(val_samples)

    base_report = evaluate_model(model, test_samples, dt, vehicle)
    rows = [
        SweepRow(
            threshold=None,
            rmse_finetuned=base_report.state_report.rmse,
            rmse_clamped=base_report.state_report.rmse,
            trajectory_finetuned=base_report.trajectory.mean,
            trajectory_clamped=base_report.trajectory.mean,
        )
    ]
    for pct in thresholds:
        beta_raw = beta_for_threshold(phys_range, pct)
        beta_norm = model.normalizer.norm_residual(beta_raw)
        constrained = _clone_with_beta(model, beta_norm)
        clamped_report = evaluate_model(constrained, test_samples, dt, vehicle)
        if finetune_epochs > 0 and pct > 0.0:
            config = TrainingConfig(
                phase1_epochs=0,
                phase2_epochs=finetune_epochs,
                learning_rate=learning_rate,
                batch_size=batch_size,
                seed=seed,
                truncation=train_batch.horizon,
                curriculum=False,
                val_patience=finetune_epochs + 1,
            )
            _train(constrained, train_batch, val_batch, config, 0, finetune_epochs, False)
        tuned_report = evaluate_model(constrained, test_samples, dt, vehicle)
        if pct == 0.0:
            from .models.hybrid import HybridModel

            pure = HybridModel(physical=model.physical, corrector=None, normalizer=model.normalizer)
            pure_report = evaluate_model(pure, test_samples, dt, vehicle)
            if not np.allclose(tuned_report.state_report.rmse, pure_report.state_report.rmse, equal_nan=True):
                raise AssertionError("0% threshold did not reduce to the pure physical rollout")
        rows.append(
            SweepRow(
                threshold=float(pct),
                rmse_finetuned=tuned_report.state_report.rmse,
                rmse_clamped=clamped_report.state_report.rmse,
                trajectory_finetuned=tuned_report.trajectory.mean,
                trajectory_clamped=clamped_report.trajectory.mean,
            )
        )
    return rows, phys_range
