import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybmot.data import (
    Episode,
    Normalizer,
    PredictionSample,
    extract_samples,
    load_episode,
    save_episode,
    split_dataset,
)


def _episode(length=50, seed=0, vehicle="ship"):
    rng = np.random.default_rng(seed)
    s = 5 if vehicle == "ship" else 6
    p = 4 if vehicle == "ship" else 6
    k = 4
    states = rng.standard_normal((length, s))
    poses = rng.standard_normal((length, p))
    if vehicle == "ship":
        poses[:, 2] = states[:, 4]  # roll angle appears in both blocks
    return Episode(
        dt=1.0 if vehicle == "ship" else 0.01,
        states=states,
        controls=rng.standard_normal((length, k)),
        poses=poses,
        seed=seed,
        vehicle=vehicle,
    )


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def test_split_96_episodes_at_60_10_30():
    train, val, test = split_dataset(list(range(96)), (0.6, 0.1, 0.3), rng_seed=0)
    assert (len(train), len(val), len(test)) == (58, 9, 29)


def test_split_degenerate_all_train():
    train, val, test = split_dataset(list(range(7)), (1.0, 0.0, 0.0), rng_seed=1)
    assert len(train) == 7 and not val and not test


def test_split_determinism_and_partition():
    items = list(range(23))
    a = split_dataset(items, (0.6, 0.1, 0.3), rng_seed=5)
    b = split_dataset(items, (0.6, 0.1, 0.3), rng_seed=5)
    assert a == b
    joined = sorted(a[0] + a[1] + a[2])
    assert joined == items


def test_split_too_few_episodes():
    with pytest.raises(ValueError):
        split_dataset([1, 2], (0.6, 0.1, 0.3), rng_seed=0)


def test_split_bad_ratios():
    with pytest.raises(ValueError):
        split_dataset(list(range(10)), (0.5, 0.2, 0.2), rng_seed=0)


@given(n=st.integers(3, 200), seed=st.integers(0, 100))
@settings(max_examples=40)
def test_split_counts_property(n, seed):
    train, val, test = split_dataset(list(range(n)), (0.6, 0.1, 0.3), rng_seed=seed)
    assert len(train) + len(val) + len(test) == n
    assert abs(len(train) - 0.6 * n) <= 1
    assert sorted(train + val + test) == list(range(n))


# ---------------------------------------------------------------------------
# sample extraction
# ---------------------------------------------------------------------------

def _count_oracle(L, W, H, stride):
    # index arithmetic oracle: floor((L - W - H) / stride) + 1 when feasible
    return 0 if L < W + H else (L - W - H) // stride + 1


def test_extract_examples_from_contract():
    ep = _episode(3600)
    samples = extract_samples(ep, 60, 900, 900)
    assert len(samples) == 3 == _count_oracle(3600, 60, 900, 900)
    assert len(extract_samples(_episode(90), 30, 60, 7)) == 1
    assert len(extract_samples(_episode(92), 30, 60, 1)) == 3


def test_extract_too_short_episode_gives_empty():
    assert extract_samples(_episode(50), 30, 30, 5) == []


@given(
    L=st.integers(2, 300),
    W=st.integers(1, 50),
    H=st.integers(1, 50),
    stride=st.integers(1, 40),
)
@settings(max_examples=60)
def test_extract_count_matches_oracle(L, W, H, stride):
    samples = extract_samples(_episode(L), W, H, stride)
    assert len(samples) == _count_oracle(L, W, H, stride)


def test_extract_alignment():
    ep = _episode(40)
    s = extract_samples(ep, 5, 10, 3)[1]  # starts at index 3
    assert np.array_equal(s.init_states, ep.states[3:8])
    assert np.array_equal(s.horizon_states, ep.states[8:18])
    # horizon_controls[k] drives the step onto horizon_states[k]
    assert np.array_equal(s.horizon_controls, ep.controls[7:17])
    assert np.array_equal(s.horizon_controls[0], s.init_controls[-1])
    assert np.array_equal(s.start_pose, ep.poses[7])
    assert np.array_equal(s.horizon_poses, ep.poses[8:18])


def test_no_leak_across_episodes():
    a, b = _episode(30, seed=1), _episode(30, seed=2)
    from hybmot.data import extract_all_samples

    samples = extract_all_samples([a, b], 10, 20, 1)
    assert len(samples) == 2
    assert np.array_equal(samples[0].horizon_states, a.states[10:30])
    assert np.array_equal(samples[1].horizon_states, b.states[10:30])


# ---------------------------------------------------------------------------
# normalizer
# ---------------------------------------------------------------------------

def test_normalizer_zscore_and_roundtrip():
    eps = [_episode(200, seed=i) for i in range(3)]
    nrm = Normalizer.fit(eps)
    stacked = np.concatenate([e.states for e in eps])
    normed = nrm.norm_state(stacked)
    assert np.allclose(normed.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(normed.std(axis=0), 1.0, atol=1e-9)


def test_normalizer_zero_variance_rejected():
    ep = _episode(50)
    ep.states[:, 2] = 3.14
    with pytest.raises(ValueError, match="zero-variance"):
        Normalizer.fit([ep])


def test_normalizer_empty_rejected():
    with pytest.raises(ValueError):
        Normalizer.fit([])


@given(st.integers(0, 1000))
@settings(max_examples=25)
def test_normalizer_roundtrip_property(seed):
    nrm = Normalizer.fit([_episode(100, seed=7)])
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((11, 5)) * 10.0
    c = rng.standard_normal((11, 4)) * 10.0
    assert np.max(np.abs(nrm.denorm_state(nrm.norm_state(z)) - z)) < 1e-12
    assert np.max(np.abs(nrm.denorm_control(nrm.norm_control(c)) - c)) < 1e-12
    assert np.max(np.abs(nrm.denorm_residual(nrm.norm_residual(z)) - z)) < 1e-12


# ---------------------------------------------------------------------------
# episode file round trip
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("vehicle", ["ship", "quad"])
def test_episode_csv_roundtrip(tmp_path, vehicle):
    ep = _episode(25, seed=3, vehicle=vehicle)
    path = tmp_path / "ep.csv"
    save_episode(ep, path)
    back = load_episode(path)
    assert back.vehicle == vehicle
    assert back.seed == ep.seed
    assert back.dt == ep.dt
    # 9 significant digits in the file
    assert np.allclose(back.states, ep.states, rtol=1e-8, atol=1e-12)
    assert np.allclose(back.controls, ep.controls, rtol=1e-8, atol=1e-12)
    assert np.allclose(back.poses, ep.poses, rtol=1e-8, atol=1e-12)


def test_episode_csv_header_format(tmp_path):
    ep = _episode(5, seed=9)
    path = tmp_path / "ep.csv"
    save_episode(ep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=9"
    assert lines[1].startswith("# dt=")
    assert lines[2] == "# vehicle=ship"
    assert lines[3] == "t,u,w,p,r,phi,x,y,psi,c1,c2,c3,c4"
    assert len(lines) == 4 + 5


def test_episode_save_deterministic(tmp_path):
    ep = _episode(25, seed=3)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_episode(ep, p1)
    save_episode(ep, p2)
    assert p1.read_bytes() == p2.read_bytes()
