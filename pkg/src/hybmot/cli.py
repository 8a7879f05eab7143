"""Command-line surface: simulate / train / evaluate / sweep.

Every command is a pure function of its flags, config file and input
files, so reruns produce byte-identical outputs.  A flat ``key = value``
config file can hold any long-flag value; explicit flags win.  Exit
codes: 0 success, 2 usage or configuration error, 3 divergence (in
training or simulation), 4 I/O error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import experiments as ex
from .data import FLOAT_FMT, read_manifest, load_episode, extract_all_samples
from .experiments import ModelSpec, UsageError
from .metrics import (
    evaluate_model,
    state_names,
    threshold_sweep,
)
from .models.hybrid import (
    SampleBatch,
    TrainingConfig,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
)
from .sim.ship import SimulationDiverged

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _default_out():
    return os.environ.get("HYBMOT_OUT", ".")


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"cannot parse boolean {text!r}")


def _parse_ratios(text):
    parts = tuple(float(x) for x in str(text).split(","))
    if len(parts) != 3:
        raise UsageError(f"ratios need three comma-separated values, got {text!r}")
    return parts


def _parse_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as err:
        raise UsageError(f"cannot read config file {path}: {err}")
    return values


def _merge(args, table):
    """flags > config file > defaults; rejects unknown config keys."""
    cfg = _parse_config_file(args.config) if args.config else {}
    unknown = set(cfg) - set(table)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    out = {}
    for key, (typ, default) in table.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            out[key] = typ(cfg[key])
        else:
            out[key] = default
    return argparse.Namespace(**out)


def _fmt(x):
    return FLOAT_FMT % float(x)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SIMULATE_TABLE = {
    "vehicle": (str, "ship"),
    "hours": (int, None),
    "episodes": (int, None),
    "duration": (float, None),
    "seed": (int, 0),
    "ratios": (_parse_ratios, (0.6, 0.1, 0.3)),
    "out": (str, None),
}


def cmd_simulate(args):
    opt = _merge(args, SIMULATE_TABLE)
    out_dir = opt.out or _default_out()
    if opt.vehicle not in ("ship", "quad"):
        raise UsageError(f"unknown vehicle {opt.vehicle!r}")
    if opt.hours is not None:
        if opt.vehicle != "ship":
            raise UsageError("--hours applies to ship datasets; use --episodes/--duration")
        if opt.hours <= 0:
            raise UsageError(f"--hours must be positive, got {opt.hours}")
        n_episodes, duration = opt.hours, 3600.0
    else:
        if opt.episodes is None or opt.episodes <= 0:
            raise UsageError("need --hours or a positive --episodes count")
        duration = opt.duration or (3600.0 if opt.vehicle == "ship" else 60.0)
        n_episodes = opt.episodes

    params = ex.truth_params_for(opt.vehicle)
    sample_rate = 1.0 if opt.vehicle == "ship" else 100.0
    episodes = []
    failed_seeds = []
    for i in range(n_episodes):
        seed = ex.episode_seed(opt.seed, i)
        try:
            if opt.vehicle == "ship":
                episodes.append(ex.simulate_ship_episode(duration, sample_rate, seed, params))
            else:
                episodes.append(ex.simulate_quad_episode(duration, sample_rate, seed, params))
        except SimulationDiverged:
            failed_seeds.append(seed)
    if failed_seeds:
        print(f"simulation diverged for seed(s): {failed_seeds}", file=sys.stderr)
        return EXIT_DIVERGED
    ex.write_dataset(out_dir, episodes, opt.ratios, opt.seed)
    print(f"wrote {len(episodes)} {opt.vehicle} episode(s) to {out_dir} (0 diverged)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_TABLE = {
    "data": (str, None),
    "model": (str, None),
    "out": (str, None),
    "window": (int, None),
    "horizon": (int, None),
    "train_stride": (int, 60),
    "eval_stride": (int, None),
    "layers": (int, 1),
    "hidden": (int, 32),
    "phase1_epochs": (int, 20),
    "phase2_epochs": (int, 30),
    "lr": (float, 3e-3),
    "clip": (float, 5.0),
    "batch": (int, 64),
    "seed": (int, 0),
    "truncation": (int, 25),
    "curriculum": (_parse_bool, True),
    "qlag_window": (int, 4),
}


def _write_history(path, history):
    with open(path, "w") as fh:
        fh.write("phase,epoch,truncation,train_loss,val_loss,diverged_batches,n_batches\n")
        for row in history:
            fh.write(
                f"{row['phase']},{row['epoch']},{row['truncation']},"
                f"{_fmt(row['train_loss'])},{_fmt(row['val_loss'])},"
                f"{row['diverged_batches']},{row['n_batches']}\n"
            )


def _bundle_for(opt, vehicle_hint=None):
    if not opt.data:
        raise UsageError("--data DIR is required")
    probe = read_manifest(os.path.join(opt.data, "train.txt"))
    if not probe:
        raise UsageError(f"{opt.data}: empty training manifest")
    first = load_episode(os.path.join(opt.data, probe[0]))
    vehicle = first.vehicle
    window = opt.window or (60 if vehicle == "ship" else 100)
    horizon = opt.horizon or (900 if vehicle == "ship" else 100)
    eval_stride = opt.eval_stride or horizon
    return ex.bundle_from_dir(opt.data, window, horizon, opt.train_stride, eval_stride)


def cmd_train(args):
    opt = _merge(args, TRAIN_TABLE)
    if not opt.model:
        raise UsageError("--model STRING is required (e.g. Min+Lin-2P)")
    spec = ModelSpec.parse(opt.model)
    bundle = _bundle_for(opt)
    spec.check_vehicle(bundle.vehicle)
    out_dir = opt.out or _default_out()
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, f"{spec.name}.npz")
    hist_path = os.path.join(out_dir, f"{spec.name}.history.csv")

    config = TrainingConfig(
        phase1_epochs=opt.phase1_epochs,
        phase2_epochs=opt.phase2_epochs,
        learning_rate=opt.lr,
        clip_norm=opt.clip,
        batch_size=opt.batch,
        seed=opt.seed,
        truncation=min(opt.truncation, bundle.horizon),
        curriculum=opt.curriculum,
    )
    meta = {
        "model": spec.name,
        "vehicle": bundle.vehicle,
        "dt": bundle.dt,
        "window": bundle.window,
        "horizon": bundle.horizon,
        "seed": opt.seed,
    }
    try:
        model, history = ex.train_model(
            spec, bundle, config, n_layers=opt.layers, n_hidden=opt.hidden, h_lag=opt.qlag_window
        )
    except TrainingDiverged as err:
        _write_history(hist_path, err.history)
        print(f"training diverged: {err} (history in {hist_path})", file=sys.stderr)
        return EXIT_DIVERGED
    _write_history(hist_path, history)
    save_checkpoint(ckpt_path, model, meta)
    print(f"wrote {ckpt_path} and {hist_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

EVALUATE_TABLE = {
    "checkpoint": (str, None),
    "data": (str, None),
    "split": (str, "test"),
    "window": (int, None),
    "horizon": (int, None),
    "stride": (int, None),
    "out": (str, None),
}


def _split_samples(opt, meta):
    manifest = {"train": "train.txt", "val": "val.txt", "test": "test.txt"}.get(opt.split)
    if manifest is None:
        raise UsageError(f"unknown split {opt.split!r}")
    if not opt.data:
        raise UsageError("--data DIR is required")
    names = read_manifest(os.path.join(opt.data, manifest))
    if not names:
        raise UsageError(f"{opt.data}/{manifest} lists no episodes")
    episodes = [load_episode(os.path.join(opt.data, n)) for n in names]
    window = opt.window or meta.get("window", 60)
    horizon = opt.horizon or meta.get("horizon", 900)
    stride = opt.stride or horizon
    samples = extract_all_samples(episodes, window, horizon, stride)
    if not samples:
        raise UsageError("episodes too short for the requested window + horizon")
    return SampleBatch.from_samples(samples), episodes


def _write_report(out_dir, report):
    states = report.states
    rows = []
    for name, value in zip(states, report.state_report.rmse):
        rows.append(("state_rmse", name, _fmt(value), ""))
    rows.append(("normalized_sum", "", _fmt(report.state_report.normalized_sum), ""))
    rows.append(("trajectory_rmse", "", _fmt(report.trajectory.mean), _fmt(report.trajectory.ci95)))
    rows.append(("n_diverged", "", str(report.trajectory.n_diverged), ""))
    rows.append(("n_samples", "", str(report.n_samples), ""))
    with open(os.path.join(out_dir, "report.csv"), "w") as fh:
        fh.write("metric,state,value,ci\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    summary = {
        "state_rmse": {n: float(v) for n, v in zip(states, report.state_report.rmse)},
        "normalized_sum": report.state_report.normalized_sum,
        "trajectory_rmse": {
            "mean": report.trajectory.mean if np.isfinite(report.trajectory.mean) else None,
            "ci95": report.trajectory.ci95 if np.isfinite(report.trajectory.ci95) else None,
        },
        "n_diverged": report.trajectory.n_diverged,
        "n_samples": report.n_samples,
        "horizon": report.horizon,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "per_minute.csv"), "w") as fh:
        fh.write("sample_id,minute,rmse\n")
        per_bucket = report.trajectory.per_bucket
        for sample_id in range(per_bucket.shape[0]):
            for minute in range(per_bucket.shape[1]):
                fh.write(f"{sample_id},{minute},{_fmt(per_bucket[sample_id, minute])}\n")


def cmd_evaluate(args):
    opt = _merge(args, EVALUATE_TABLE)
    if not opt.checkpoint:
        raise UsageError("--checkpoint PATH is required")
    try:
        model, meta = load_checkpoint(opt.checkpoint)
    except (ValueError, KeyError) as err:
        raise UsageError(f"cannot load checkpoint {opt.checkpoint}: {err}")
    batch, _ = _split_samples(opt, meta)
    out_dir = opt.out or _default_out()
    os.makedirs(out_dir, exist_ok=True)
    report = evaluate_model(model, batch, meta["dt"], meta["vehicle"])
    _write_report(out_dir, report)
    print(f"wrote report.csv / report.json / per_minute.csv to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_TABLE = {
    "checkpoint": (str, None),
    "data": (str, None),
    "thresholds": (str, "0,5,10,15,25,50,100"),
    "window": (int, None),
    "horizon": (int, None),
    "train_stride": (int, 60),
    "finetune_epochs": (int, 5),
    "lr": (float, 1e-3),
    "seed": (int, 0),
    "out": (str, None),
}


def cmd_sweep(args):
    opt = _merge(args, SWEEP_TABLE)
    if not opt.checkpoint:
        raise UsageError("--checkpoint PATH is required")
    try:
        model, meta = load_checkpoint(opt.checkpoint)
    except (ValueError, KeyError) as err:
        raise UsageError(f"cannot load checkpoint {opt.checkpoint}: {err}")
    if model.corrector is None:
        raise UsageError("sweep needs a trained hybrid checkpoint (with a corrector)")
    try:
        thresholds = [float(x) for x in opt.thresholds.split(",") if x.strip() != ""]
    except ValueError:
        raise UsageError(f"cannot parse thresholds {opt.thresholds!r}")
    if not opt.data:
        raise UsageError("--data DIR is required")
    window = opt.window or meta.get("window", 60)
    horizon = opt.horizon or meta.get("horizon", 900)
    bundle = ex.bundle_from_dir(opt.data, window, horizon, opt.train_stride, horizon)
    out_dir = opt.out or _default_out()
    os.makedirs(out_dir, exist_ok=True)

    rows, _ = threshold_sweep(
        model,
        thresholds,
        bundle.train_eps + bundle.val_eps,
        bundle.train_batch,
        bundle.val_batch,
        bundle.test_batch,
        meta["dt"],
        meta["vehicle"],
        finetune_epochs=opt.finetune_epochs,
        seed=opt.seed,
        learning_rate=opt.lr,
    )
    names = state_names(meta["vehicle"])
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w") as fh:
        fh.write("threshold,state,rmse_finetuned,rmse_clamped\n")
        for row in rows:
            label = "unconstrained" if row.threshold is None else _fmt(row.threshold)
            for i, name in enumerate(names):
                fh.write(
                    f"{label},{name},{_fmt(row.rmse_finetuned[i])},{_fmt(row.rmse_clamped[i])}\n"
                )
            fh.write(
                f"{label},trajectory,{_fmt(row.trajectory_finetuned)},{_fmt(row.trajectory_clamped)}\n"
            )
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(parser, table):
    parser.add_argument("--config", help="flat key = value config file; flags win")
    for key, (typ, _) in table.items():
        flag = "--" + key.replace("_", "-")
        if typ is _parse_bool:
            parser.add_argument(flag, type=_parse_bool, default=None, metavar="BOOL")
        elif typ is _parse_ratios:
            parser.add_argument(flag, type=_parse_ratios, default=None, metavar="A,B,C")
        else:
            parser.add_argument(flag, type=typ, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hybmot",
        description="Hybrid physical + recurrent vehicle motion prediction toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, table, fn, help_text in (
        ("simulate", SIMULATE_TABLE, cmd_simulate, "generate truth episodes and split manifests"),
        ("train", TRAIN_TABLE, cmd_train, "fit the physical part and train a hybrid model"),
        ("evaluate", EVALUATE_TABLE, cmd_evaluate, "state/trajectory error reports for a checkpoint"),
        ("sweep", SWEEP_TABLE, cmd_sweep, "relative-threshold interpretability sweep"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p, table)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
