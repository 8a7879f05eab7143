"""Episode persistence, dataset splitting, normalization and windowing.

An episode is one continuous simulation: time-aligned state, control and
pose sequences sampled at a fixed rate.  Episodes are stored one per file
as CSV with a small comment header carrying the seed, the sample interval
and the vehicle kind.  Train/val/test splits operate at episode
granularity and are written as plain-text manifests listing file names.
"""

import os
from dataclasses import dataclass, field

import numpy as np

SHIP_STATE_COLS = ["u", "w", "p", "r", "phi"]
SHIP_POSE_COLS = ["x", "y", "psi"]          # phi is already a state column
QUAD_STATE_COLS = ["vx", "vy", "vz", "p", "q", "r"]
QUAD_POSE_COLS = ["x", "y", "z", "phi", "theta", "psi"]

FLOAT_FMT = "%.9g"


@dataclass
class Episode:
    """One simulated run: states z_t, controls c_t and poses at a fixed dt.

    ``states[t + 1]`` is the successor of ``states[t]`` under control
    ``controls[t]``; the final control is recorded but drives nothing.
    """

    dt: float
    states: np.ndarray      # (T+1, S)
    controls: np.ndarray    # (T+1, K)
    poses: np.ndarray       # (T+1, P)
    seed: int
    vehicle: str            # "ship" | "quad"
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not (len(self.states) == len(self.controls) == len(self.poses)):
            raise ValueError("states/controls/poses must have equal length")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def __len__(self):
        return len(self.states)


def _columns(vehicle, n_controls):
    ctl = [f"c{i + 1}" for i in range(n_controls)]
    if vehicle == "ship":
        return ["t"] + SHIP_STATE_COLS + SHIP_POSE_COLS + ctl
    if vehicle == "quad":
        return ["t"] + QUAD_STATE_COLS + QUAD_POSE_COLS + ctl
    raise ValueError(f"unknown vehicle kind {vehicle!r}")


def save_episode(episode, path):
    """Write one episode in the documented CSV format (9 significant digits)."""
    n = len(episode)
    t = np.arange(n) * episode.dt
    if episode.vehicle == "ship":
        # pose columns x, y, psi; phi is column 5 of the state block
        pose_block = episode.poses[:, [0, 1, 3]]
    else:
        pose_block = episode.poses
    table = np.column_stack([t, episode.states, pose_block, episode.controls])
    cols = _columns(episode.vehicle, episode.controls.shape[1])
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={episode.seed}\n")
        fh.write(f"# dt={FLOAT_FMT % episode.dt}\n")
        fh.write(f"# vehicle={episode.vehicle}\n")
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, table, fmt=FLOAT_FMT, delimiter=",")


def load_episode(path):
    header = {}
    with open(path) as fh:
        line = fh.readline()
        while line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
            line = fh.readline()
        cols = line.strip().split(",")
        table = np.loadtxt(fh, delimiter=",", ndmin=2)
    vehicle = header.get("vehicle", "ship")
    seed = int(header.get("seed", "0"))
    dt = float(header.get("dt", "1"))
    n_states = len(SHIP_STATE_COLS) if vehicle == "ship" else len(QUAD_STATE_COLS)
    n_pose = len(SHIP_POSE_COLS) if vehicle == "ship" else len(QUAD_POSE_COLS)
    expect = _columns(vehicle, len(cols) - 1 - n_states - n_pose)
    if cols != expect:
        raise ValueError(f"{path}: unexpected columns {cols}")
    states = table[:, 1 : 1 + n_states]
    pose_block = table[:, 1 + n_states : 1 + n_states + n_pose]
    controls = table[:, 1 + n_states + n_pose :]
    if vehicle == "ship":
        # reassemble (x, y, phi, psi) with phi taken from the state block
        poses = np.column_stack(
            [pose_block[:, 0], pose_block[:, 1], states[:, 4], pose_block[:, 2]]
        )
    else:
        poses = pose_block
    return Episode(dt=dt, states=states, controls=controls, poses=poses, seed=seed, vehicle=vehicle)


def split_dataset(episodes, ratios, rng_seed):
    """Deterministic shuffled partition of episodes into train/val/test.

    Integer counts come from the largest-remainder rule on
    ``len(episodes) * ratio`` with ties favoring earlier splits, so e.g.
    96 episodes at 60-10-30 give (58, 9, 29).
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"need three nonnegative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(episodes)
    n_parts = sum(1 for r in ratios if r > 0)
    if n < n_parts:
        raise ValueError(f"{n} episodes cannot fill {n_parts} nonempty splits")

    exact = [n * r for r in ratios]
    counts = [int(np.floor(round(e, 9))) for e in exact]
    rest = n - sum(counts)
    # largest remainder; float-insensitive ties favor earlier splits
    order = sorted(range(3), key=lambda i: (-round(exact[i] - counts[i], 9), i))
    for i in order[:rest]:
        counts[i] += 1

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    perm = rng.permutation(n)
    items = [episodes[i] for i in perm]
    train = items[: counts[0]]
    val = items[counts[0] : counts[0] + counts[1]]
    test = items[counts[0] + counts[1] :]
    return train, val, test


class Normalizer:
    """Per-dimension z-score statistics fit on the training split only."""

    def __init__(self, state_mean, state_std, control_mean, control_std):
        self.state_mean = np.asarray(state_mean, dtype=float)
        self.state_std = np.asarray(state_std, dtype=float)
        self.control_mean = np.asarray(control_mean, dtype=float)
        self.control_std = np.asarray(control_std, dtype=float)
        for name, std, mean in (
            ("state", self.state_std, self.state_mean),
            ("control", self.control_std, self.control_mean),
        ):
            # constant columns give std ~1e-16 from summation roundoff
            floor = 1e-12 * np.maximum(1.0, np.abs(mean))
            if np.any(std <= floor):
                bad = np.flatnonzero(std <= floor).tolist()
                raise ValueError(f"zero-variance {name} dimension(s) {bad}")

    @classmethod
    def fit(cls, episodes):
        if not episodes:
            raise ValueError("cannot fit a normalizer on an empty training set")
        states = np.concatenate([ep.states for ep in episodes], axis=0)
        controls = np.concatenate([ep.controls for ep in episodes], axis=0)
        return cls(
            states.mean(axis=0),
            states.std(axis=0),
            controls.mean(axis=0),
            controls.std(axis=0),
        )

    def norm_state(self, z):
        return (z - self.state_mean) / self.state_std

    def denorm_state(self, z):
        return z * self.state_std + self.state_mean

    def norm_control(self, c):
        return (c - self.control_mean) / self.control_std

    def denorm_control(self, c):
        return c * self.control_std + self.control_mean

    # residuals are differences of states: only the scale applies
    def norm_residual(self, d):
        return d / self.state_std

    def denorm_residual(self, d):
        return d * self.state_std


@dataclass
class PredictionSample:
    """Initialization window plus a prediction horizon from one episode.

    ``init_states[-1]`` is the last true state before the horizon;
    ``horizon_controls[k]`` drives the transition onto
    ``horizon_states[k]``.
    """

    init_states: np.ndarray       # (W, S)
    init_controls: np.ndarray     # (W, K)
    horizon_controls: np.ndarray  # (H, K)
    horizon_states: np.ndarray    # (H, S)
    horizon_poses: np.ndarray     # (H, P)
    start_pose: np.ndarray        # (P,) pose aligned with init_states[-1]

    @property
    def window(self):
        return self.init_states.shape[0]

    @property
    def horizon(self):
        return self.horizon_states.shape[0]


def extract_samples(episode, window, horizon, stride):
    """Sliding (window, horizon) samples; empty list if the episode is short."""
    if window < 1 or horizon < 1 or stride < 1:
        raise ValueError("window, horizon and stride must all be >= 1")
    length = len(episode)
    samples = []
    start = 0
    while start + window + horizon <= length:
        w_end = start + window
        h_end = w_end + horizon
        samples.append(
            PredictionSample(
                init_states=episode.states[start:w_end],
                init_controls=episode.controls[start:w_end],
                horizon_controls=episode.controls[w_end - 1 : h_end - 1],
                horizon_states=episode.states[w_end:h_end],
                horizon_poses=episode.poses[w_end:h_end],
                start_pose=episode.poses[w_end - 1],
            )
        )
        start += stride
    return samples


def extract_all_samples(episodes, window, horizon, stride):
    out = []
    for ep in episodes:
        out.extend(extract_samples(ep, window, horizon, stride))
    return out


def write_manifest(path, names):
    with open(path, "w") as fh:
        for name in names:
            fh.write(name + "\n")


def read_manifest(path):
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def load_manifest_episodes(dataset_dir, manifest_name):
    names = read_manifest(os.path.join(dataset_dir, manifest_name))
    return [load_episode(os.path.join(dataset_dir, name)) for name in names]
