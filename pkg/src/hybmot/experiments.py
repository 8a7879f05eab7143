"""Experiment plumbing shared by the CLI and the verification suite:
model-string grammar, dataset preparation and the fit-then-train driver.

Model strings follow FIRSTPRINCIPLES+REGRESSION-PHASE, e.g. ``Min+Lin-2P``,
``Lin-1P``, ``QLag-none``, ``Pro-2P``; either part may be ``none`` but not
both.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from .data import (
    Episode,
    Normalizer,
    extract_all_samples,
    load_episode,
    save_episode,
    split_dataset,
    write_manifest,
    read_manifest,
)
from .models.hybrid import (
    HybridModel,
    SampleBatch,
    TrainingConfig,
    train_one_phase,
    train_two_phase,
)
from .models.physical import (
    FIRST_PRINCIPLES_KINDS,
    REGRESSION_KINDS,
    PhysicalModel,
    fit_regression,
    make_first_principles,
)
from .models.recurrent import OutputConstraint, RecurrentCorrector
from .sim.ship import ShipParams, simulate_ship_episode
from .sim.quad import QuadParams, simulate_quad_episode

PHASES = ("1P", "2P", "none")


class UsageError(ValueError):
    """Bad flags or configuration; maps to exit code 2."""


@dataclass(frozen=True)
class ModelSpec:
    fp_kind: str | None
    reg_kind: str | None
    phase: str

    @classmethod
    def parse(cls, text):
        body, _, phase = text.rpartition("-")
        if not body:
            raise UsageError(f"model string {text!r} lacks a -PHASE suffix")
        if phase not in PHASES:
            raise UsageError(f"unknown training phase {phase!r} (use 1P, 2P or none)")
        fp = None
        reg = None
        for token in body.split("+"):
            if token == "none":
                continue
            if token in FIRST_PRINCIPLES_KINDS:
                if fp is not None:
                    raise UsageError(f"{text!r}: more than one first-principles part")
                fp = token
            elif token in REGRESSION_KINDS:
                if reg is not None:
                    raise UsageError(f"{text!r}: more than one regression part")
                reg = token
            else:
                raise UsageError(f"unknown model part {token!r}")
        if fp is None and reg is None:
            raise UsageError(f"{text!r} names no physical model part")
        return cls(fp_kind=fp, reg_kind=reg, phase=phase)

    def check_vehicle(self, vehicle):
        ship_only = {"Min", "Pro", "Hyd"}
        quad_only = {"MinQ"}
        for kind in (self.fp_kind, self.reg_kind):
            if kind in ship_only and vehicle != "ship":
                raise UsageError(f"model part {kind} is ship-only")
            if kind in quad_only and vehicle != "quad":
                raise UsageError(f"model part {kind} is quad-only")

    @property
    def name(self):
        parts = [k for k in (self.fp_kind, self.reg_kind) if k]
        return "+".join(parts) + "-" + self.phase


def truth_params_for(vehicle):
    if vehicle == "ship":
        return ShipParams()
    if vehicle == "quad":
        return QuadParams()
    raise UsageError(f"unknown vehicle {vehicle!r}")


def episode_seed(base_seed, index):
    """Stable per-episode integer seed."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def generate_episodes(vehicle, n_episodes, duration, base_seed, params=None, sample_rate=None):
    params = params or truth_params_for(vehicle)
    if sample_rate is None:
        sample_rate = 1.0 if vehicle == "ship" else 100.0
    episodes = []
    for i in range(n_episodes):
        seed = episode_seed(base_seed, i)
        if vehicle == "ship":
            episodes.append(simulate_ship_episode(duration, sample_rate, seed, params))
        else:
            episodes.append(simulate_quad_episode(duration, sample_rate, seed, params))
    return episodes


@dataclass
class DataBundle:
    vehicle: str
    dt: float
    train_eps: list
    val_eps: list
    test_eps: list
    normalizer: Normalizer
    train_batch: SampleBatch
    val_batch: SampleBatch
    test_batch: SampleBatch
    window: int
    horizon: int


def prepare_bundle(episodes, ratios, split_seed, window, horizon, train_stride, eval_stride):
    train_eps, val_eps, test_eps = split_dataset(episodes, ratios, split_seed)
    normalizer = Normalizer.fit(train_eps)
    train_batch = SampleBatch.from_samples(extract_all_samples(train_eps, window, horizon, train_stride))
    val_batch = SampleBatch.from_samples(extract_all_samples(val_eps, window, horizon, eval_stride))
    test_batch = SampleBatch.from_samples(extract_all_samples(test_eps, window, horizon, eval_stride))
    ep0 = episodes[0]
    return DataBundle(
        vehicle=ep0.vehicle,
        dt=ep0.dt,
        train_eps=train_eps,
        val_eps=val_eps,
        test_eps=test_eps,
        normalizer=normalizer,
        train_batch=train_batch,
        val_batch=val_batch,
        test_batch=test_batch,
        window=window,
        horizon=horizon,
    )


def build_physical(spec, bundle, truth_params, h_lag=4, ridge=1e-8):
    fp = make_first_principles(spec.fp_kind, truth_params, bundle.dt)
    reg = None
    if spec.reg_kind is not None:
        reg = fit_regression(spec.reg_kind, fp, bundle.train_eps, h_lag=h_lag, ridge=ridge)
    return PhysicalModel(first_principles=fp, regression=reg)


def train_model(spec, bundle, config, truth_params=None, n_layers=1, n_hidden=32, h_lag=4):
    """Fit the regression part, then train the corrector per the phase tag.

    Returns (HybridModel, history).  Phase "none" yields a pure physical
    model with no corrector (the regression baselines).
    """
    truth_params = truth_params or truth_params_for(bundle.vehicle)
    physical = build_physical(spec, bundle, truth_params, h_lag=h_lag)
    if spec.phase == "none":
        model = HybridModel(physical=physical, corrector=None, normalizer=bundle.normalizer)
        return model, []
    corrector = RecurrentCorrector.create(
        config.seed,
        n_layers,
        n_hidden,
        bundle.train_batch.horizon_states.shape[-1],
        bundle.train_batch.horizon_controls.shape[-1],
        OutputConstraint(None),
    )
    model = HybridModel(physical=physical, corrector=corrector, normalizer=bundle.normalizer)
    trainer = train_two_phase if spec.phase == "2P" else train_one_phase
    model, history = trainer(model, bundle.train_batch, bundle.val_batch, config)
    return model, history


# ---------------------------------------------------------------------------
# dataset directory layout
# ---------------------------------------------------------------------------

MANIFESTS = ("train.txt", "val.txt", "test.txt")


def write_dataset(out_dir, episodes, ratios, split_seed):
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for ep in episodes:
        name = f"ep_{ep.vehicle}_{ep.seed:020d}.csv"
        save_episode(ep, os.path.join(out_dir, name))
        names.append(name)
    splits = split_dataset(list(range(len(episodes))), ratios, split_seed)
    for manifest, idxs in zip(MANIFESTS, splits):
        write_manifest(os.path.join(out_dir, manifest), [names[i] for i in idxs])
    return names


def load_dataset(dataset_dir):
    """Episodes per split from the manifest files."""
    out = []
    for manifest in MANIFESTS:
        path = os.path.join(dataset_dir, manifest)
        if not os.path.exists(path):
            raise UsageError(f"missing manifest {path}")
        out.append([load_episode(os.path.join(dataset_dir, n)) for n in read_manifest(path)])
    return tuple(out)


def bundle_from_dir(dataset_dir, window, horizon, train_stride, eval_stride):
    train_eps, val_eps, test_eps = load_dataset(dataset_dir)
    if not train_eps:
        raise UsageError(f"{dataset_dir}: empty training split")
    normalizer = Normalizer.fit(train_eps)
    ep0 = train_eps[0]

    def batch(eps, stride):
        samples = extract_all_samples(eps, window, horizon, stride)
        if not samples:
            raise UsageError("no prediction samples; episodes shorter than window + horizon?")
        return SampleBatch.from_samples(samples)

    return DataBundle(
        vehicle=ep0.vehicle,
        dt=ep0.dt,
        train_eps=train_eps,
        val_eps=val_eps,
        test_eps=test_eps,
        normalizer=normalizer,
        train_batch=batch(train_eps, train_stride),
        val_batch=batch(val_eps, eval_stride),
        test_batch=batch(test_eps, eval_stride),
        window=window,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# committed desk-scale presets (used by scripts/ and the acceptance suite)
# ---------------------------------------------------------------------------

DESK_SHIP = {
    "vehicle": "ship",
    "episodes": 8,
    "duration": 3600.0,
    "seed": 77,
    "ratios": (0.6, 0.1, 0.3),
    "window": 60,
    "horizon": 300,
    "train_stride": 60,
    "eval_stride": 300,
    "n_layers": 1,
    "n_hidden": 32,
    "qlag_h": 4,
}

DESK_SHIP_TRAINING = TrainingConfig(
    phase1_epochs=8,
    phase2_epochs=14,
    learning_rate=3e-3,
    clip_norm=5.0,
    batch_size=64,
    seed=13,
    truncation=25,
    curriculum=True,
    val_patience=10,
)

DESK_QUAD = {
    "vehicle": "quad",
    "episodes": 16,
    "duration": 60.0,
    "seed": 33,
    "ratios": (0.6, 0.1, 0.3),
    "window": 100,
    "horizon": 100,
    "train_stride": 100,
    "eval_stride": 100,
    "n_layers": 1,
    "n_hidden": 32,
    "qlag_h": 4,
}

DESK_QUAD_TRAINING = TrainingConfig(
    phase1_epochs=6,
    phase2_epochs=10,
    learning_rate=3e-3,
    clip_norm=5.0,
    batch_size=128,
    seed=29,
    truncation=25,
    curriculum=True,
    val_patience=10,
)

SHIP_MODEL_GRID = (
    "Lin-1P", "Lin-2P",
    "Min+Lin-1P", "Min+Lin-2P",
    "Pro+Lin-1P", "Pro+Lin-2P",
    "Hyd-1P", "Hyd-2P",
)

QUAD_MODEL_GRID = ("MinQ-2P", "Lin-2P", "Qua-2P", "MinQ+Lin-2P", "MinQ+Qua-2P")
