import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogfed.data_stream import (
    Dataset,
    Frame,
    Shard,
    is_critical,
    label_of_distance,
    load,
    load_csv,
    next_window,
    partition,
    range_bin,
    save_csv,
    save_raw,
    synth_generate,
)
from fogfed.errors import DataParseError, InvalidArgumentError


def tiny_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, 512)).astype(np.float32), rng.integers(0, 8, n).astype(np.uint8))


# --- Table 1 -----------------------------------------------------------------


@pytest.mark.parametrize(
    "d,label",
    [(0.3, 1), (0.0, 1), (0.5, 2), (0.75, 2), (1.0, 3), (1.25, 3), (1.5, 4), (1.75, 4),
     (2.0, 5), (2.25, 5), (2.5, 6), (2.75, 6), (3.0, 7), (3.25, 7), (3.5, 0), (10.0, 0)],
)
def test_label_of_distance(d, label):
    assert label_of_distance(d) == label


@pytest.mark.parametrize("d", [-0.1, float("nan")])
def test_label_of_distance_rejects(d):
    with pytest.raises(InvalidArgumentError):
        label_of_distance(d)


def test_is_critical():
    assert [is_critical(c) for c in range(8)] == [False, True, True, True, False, False, False, False]
    with pytest.raises(InvalidArgumentError):
        is_critical(8)


@given(st.floats(0, 50, allow_nan=False))
def test_critical_iff_closer_than_1_5(d):
    assert is_critical(label_of_distance(d)) == (d < 1.5)


@given(st.floats(0, 3.49), st.floats(0, 3.49))
def test_label_monotone_below_wraparound(a, b):
    lo, hi = sorted((a, b))
    assert label_of_distance(lo) <= label_of_distance(hi)


# --- loading -----------------------------------------------------------------


def test_csv_roundtrip_order(tmp_path):
    data = tiny_dataset(3)
    path = tmp_path / "d.csv"
    save_csv(data, path)
    back = load(path)
    assert len(back) == 3
    assert back.equals(data)


def test_csv_wrong_column_count_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    good = ",".join(["0.5"] * 512) + ",3"
    short = ",".join(["0.5"] * 511) + ",3"
    path.write_text(f"{good}\n{short}\n")
    with pytest.raises(DataParseError) as info:
        load_csv(path)
    assert info.value.location.endswith(":2")


@pytest.mark.parametrize("label,field", [("8", "0.5"), ("x", "0.5"), ("1", "abc")])
def test_csv_bad_fields(tmp_path, label, field):
    path = tmp_path / "bad.csv"
    path.write_text(",".join([field] * 512) + f",{label}\n")
    with pytest.raises(DataParseError):
        load_csv(path)


def test_raw_roundtrip_bit_identical(tmp_path):
    data = synth_generate(50, 3, 0.1)
    path = tmp_path / "d.bin"
    save_raw(data, path)
    blob = path.read_bytes()
    assert len(blob) == 8 + 50 * (512 * 4 + 1)
    assert int.from_bytes(blob[:4], "little") == 50
    assert int.from_bytes(blob[4:8], "little") == 512
    assert load(path).equals(data)


def test_raw_truncated_and_bad_label(tmp_path):
    data = tiny_dataset(4)
    path = tmp_path / "d.bin"
    save_raw(data, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(DataParseError, match="truncated"):
        load(path)
    bad = bytearray(blob)
    bad[8 + 512 * 4] = 9  # label of frame 0
    path.write_bytes(bytes(bad))
    with pytest.raises(DataParseError, match="frame 0"):
        load(path)
    path.write_bytes(b"\x01")
    with pytest.raises(DataParseError):
        load(path)


def test_frame_validation():
    with pytest.raises(InvalidArgumentError):
        Frame(np.zeros(511), 0)
    with pytest.raises(InvalidArgumentError):
        Frame(np.zeros(512), 8)
    assert tiny_dataset(2)[1].label == int(tiny_dataset(2).labels[1])


# --- partition / windows -----------------------------------------------------


def test_partition_paper_sizes():
    shards = partition(tiny_dataset(16000), 5, seed=0)
    assert [len(s) for s in shards] == [3200] * 5


def test_partition_single_is_permuted_copy():
    data = tiny_dataset(100)
    (shard,) = partition(data, 1, seed=4)
    assert sorted(shard.indices.tolist()) == list(range(100))
    assert shard.data.equals(data.take(shard.indices))
    assert partition(data, 1, seed=4)[0].data.equals(shard.data)


def test_partition_rejects_too_many_shards():
    with pytest.raises(InvalidArgumentError):
        partition(tiny_dataset(3), 4, seed=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(1, 20), st.integers(0, 1000))
def test_partition_is_disjoint_cover(n, k, seed):
    if k > n:
        return
    shards = partition(Dataset(np.zeros((n, 2), np.float32), np.zeros(n, np.uint8)), k, seed)
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= 1
    all_idx = np.concatenate([s.indices for s in shards])
    assert sorted(all_idx.tolist()) == list(range(n))


def test_next_window_paper_counts():
    data = tiny_dataset(3200)
    shard = Shard(0, data)
    windows = []
    while (w := next_window(shard, 60)) is not None:
        windows.append(w)
    assert len(windows) == 53
    assert shard.cursor == 3180
    assert next_window(shard, 60) is None and shard.cursor == 3180
    joined = np.concatenate([w.features for w in windows])
    assert joined.tobytes() == data.features[:3180].tobytes()


def test_next_window_whole_shard():
    shard = Shard(0, tiny_dataset(30))
    assert len(next_window(shard, 30)) == 30
    assert next_window(shard, 30) is None


# --- synthetic generator -----------------------------------------------------


def test_synth_noiseless_peak_at_range_bin():
    rng = np.random.default_rng(1)
    data = synth_generate(400, 1, 0.0)
    # Regenerate the distances the generator drew to check the bump location.
    labels = rng.integers(0, 8, 400)
    assert (labels == data.labels).all()
    peaks = data.features.argmax(axis=1)
    for peak, label in zip(peaks, data.labels):
        d_lo = {0: 3.5, 1: 0.05}.get(int(label), 0.5 * (int(label) - 1))
        d_hi = {0: 4.0, 1: 0.5}.get(int(label), 0.5 * int(label))
        assert math.floor(512 * d_lo / 4.0) <= peak <= math.floor(512 * d_hi / 4.0)
    assert (data.features.max(axis=1) == 1.0).all()


def test_synth_peak_equals_floor_bin():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 8, 200)
    lo = np.array([3.5, 0.05, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])[labels]
    hi = np.array([4.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5])[labels]
    distances = rng.uniform(lo, hi)
    data = synth_generate(200, 2, 0.0)
    expected = np.floor(512 * distances / 4.0).astype(int)
    assert (data.features.argmax(axis=1) == expected).all()
    assert (range_bin(distances) == expected).all()


def test_synth_labels_match_table():
    # The peak bin maps back to a distance inside the frame's class interval.
    data = synth_generate(500, 5, 0.0)
    for peak, label in zip(data.features.argmax(axis=1), data.labels):
        assert label_of_distance((peak + 0.5) * 4.0 / 512) == label


def test_synth_deterministic():
    assert synth_generate(8000, 3, 0.05).equals(synth_generate(8000, 3, 0.05))


def test_synth_class_histogram():
    n = 80_000
    counts = np.bincount(synth_generate(n, 12, 0.0).labels, minlength=8)
    sigma = math.sqrt(n * (1 / 8) * (7 / 8))
    assert (np.abs(counts - n / 8) <= 3 * sigma).all()


@pytest.mark.parametrize("n,sigma", [(0, 0.1), (5, -1.0), (5, float("nan"))])
def test_synth_rejects(n, sigma):
    with pytest.raises(InvalidArgumentError):
        synth_generate(n, 0, sigma)


def test_synthetic_data_is_learnable_centrally():
    from fogfed.nn_core import HyperParams, evaluate, init_params, train_local

    train = synth_generate(4800, 100, 0.05)
    held_out = synth_generate(1600, 101, 0.05)
    params, _ = train_local(init_params(0), train, HyperParams(local_epochs=3), seed=0)
    assert evaluate(params, held_out)[1] >= 0.95
