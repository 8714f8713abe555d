import json

import numpy as np
import pytest

from codaadapt.data import (
    CLASS_NAMES,
    BenchmarkConfig,
    CyclicBatches,
    ShiftConfig,
    SignalDataset,
    batch_iterator,
    damage_trajectory,
    generate_benchmark,
    load_dataset,
    save_dataset,
    stage_of_load,
)
from codaadapt.errors import FormatError, ValidationError

SMALL = dict(signal_length=64, config=BenchmarkConfig(coda_length=256))


@pytest.fixture(scope="module")
def small_pair():
    return generate_benchmark(60, 40, shift=ShiftConfig(0.6), seed=11, **SMALL)


def _random_ds(n=17, length=32, seed=0):
    rng = np.random.default_rng(seed)
    return SignalDataset(rng.normal(size=(n, length)).astype(np.float32), rng.integers(0, 3, n))


# ---- format ------------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path):
    ds = _random_ds()
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.labels, ds.labels)
    assert back.class_names == CLASS_NAMES
    assert (tmp_path / "d" / "signals.bin").stat().st_size == 4 * 17 * 32


def test_meta_and_labels_layout(tmp_path):
    ds = _random_ds(n=3, length=4)
    save_dataset(ds, tmp_path / "d")
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta["num_samples"] == 3 and meta["signal_length"] == 4 and meta["dtype"] == "f32le"
    lines = (tmp_path / "d" / "labels.csv").read_text().splitlines()
    assert lines[0] == "index,label" and len(lines) == 4


def test_unlabeled_round_trip(tmp_path):
    ds = _random_ds().without_labels()
    save_dataset(ds, tmp_path / "d")
    assert load_dataset(tmp_path / "d").labels is None


def test_truncated_signals_names_expected_size(tmp_path):
    ds = _random_ds(n=5, length=8)
    d = save_dataset(ds, tmp_path / "d")
    blob = (tmp_path / "d" / "signals.bin").read_bytes()
    (tmp_path / "d" / "signals.bin").write_bytes(blob[:-3])
    with pytest.raises(FormatError, match="160"):
        load_dataset(d)


def test_label_out_of_range(tmp_path):
    ds = _random_ds(n=4, length=8)
    save_dataset(ds, tmp_path / "d")
    p = tmp_path / "d" / "labels.csv"
    lines = p.read_text().splitlines()
    lines[2] = "1,5"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError):
        load_dataset(tmp_path / "d")


@pytest.mark.parametrize("victim", ["meta.json", "signals.bin", "labels.csv"])
def test_missing_file(tmp_path, victim):
    save_dataset(_random_ds(), tmp_path / "d")
    (tmp_path / "d" / victim).unlink()
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "d")


def test_corrupt_meta(tmp_path):
    save_dataset(_random_ds(), tmp_path / "d")
    (tmp_path / "d" / "meta.json").write_text("{not json")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "d")


def test_dataset_validation():
    with pytest.raises(ValidationError):
        SignalDataset(np.zeros((3, 4)), [0, 1])
    with pytest.raises(ValidationError):
        SignalDataset(np.zeros((2, 4)), [0, 3])
    with pytest.raises(ValidationError):
        SignalDataset(np.full((2, 4), np.nan), [0, 1])


# ---- batching ----------------------------------------------------------------

def test_batch_sizes():
    ds = _random_ds(n=10)
    assert [len(y) for _, y in batch_iterator(ds, 4)] == [4, 4, 2]


def test_batches_in_order_without_shuffle():
    ds = _random_ds(n=10)
    xs = np.concatenate([x for x, _ in batch_iterator(ds, 3)])
    assert np.array_equal(xs, ds.features)


def test_shuffle_covers_every_sample_once_and_is_seeded():
    ds = SignalDataset(np.arange(23, dtype=np.float32)[:, None].repeat(2, 1), np.zeros(23, int))
    a = [x[:, 0].copy() for x, _ in batch_iterator(ds, 5, True, np.random.default_rng(3))]
    b = [x[:, 0].copy() for x, _ in batch_iterator(ds, 5, True, np.random.default_rng(3))]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(23))
    assert not np.array_equal(np.concatenate(a), np.arange(23))


def test_batch_size_must_be_positive():
    with pytest.raises(ValidationError):
        list(batch_iterator(_random_ds(), 0))


def test_cyclic_batches_reshuffle_and_state():
    x = np.arange(10, dtype=np.float32)[:, None]
    it = CyclicBatches(x, 4, np.random.default_rng(0))
    first = [next(it)[:, 0].copy() for _ in range(3)]
    # batches keep their size and wrap into the next shuffled pass
    assert [len(b) for b in first] == [4, 4, 4]
    assert sorted(np.concatenate(first)[:10].tolist()) == list(range(10))
    state = it.state_dict()
    ahead = [next(it)[:, 0].copy() for _ in range(4)]
    it.load_state_dict(state)
    again = [next(it)[:, 0].copy() for _ in range(4)]
    assert all(np.array_equal(u, v) for u, v in zip(ahead, again))


# ---- damage phenomenology --------------------------------------------------------

def test_trajectory_three_linear_segments():
    cfg = BenchmarkConfig()
    traj = damage_trajectory(cfg, 1001)
    slopes = np.diff(traj.dvv_curve) / np.diff(traj.normalized_load)
    lo, hi = cfg.class_boundaries
    mid = 0.5 * (traj.normalized_load[1:] + traj.normalized_load[:-1])
    p = cfg.peak_stress_mpa
    for seg, s in zip([mid < lo - 1e-3, (mid > lo + 1e-3) & (mid < hi - 1e-3), mid > hi + 1e-3], cfg.slopes):
        assert np.allclose(slopes[seg], s * p, rtol=1e-9)
    assert cfg.dvv_at(lo) == pytest.approx(cfg.peak_dvv, rel=1e-12)


def test_coherence_profile():
    cfg = BenchmarkConfig()
    assert cfg.coherence_at(0.2) == 1.0
    assert cfg.coherence_at(0.35) == pytest.approx(0.7)
    assert cfg.coherence_at(0.8) == pytest.approx(0.45)
    assert cfg.coherence_at(1.0) == pytest.approx(0.1)
    c = cfg.coherence_at(np.linspace(0, 1, 201))
    assert np.all(np.diff(c) <= 0)


def test_stage_of_load():
    assert stage_of_load([0.0, 0.3499, 0.35, 0.7999, 0.8, 1.0]).tolist() == [0, 0, 1, 1, 2, 2]


def test_bad_configs():
    with pytest.raises(ValidationError):
        BenchmarkConfig(class_boundaries=(0.8, 0.35))
    with pytest.raises(ValidationError):
        ShiftConfig(shift_intensity=1.5)
    with pytest.raises(ValidationError):
        generate_benchmark(10, 10, signal_length=32)
    with pytest.raises(ValidationError):
        generate_benchmark(2, 10, signal_length=64)


# ---- generator -------------------------------------------------------------------

def test_generator_shapes_and_ranges(small_pair):
    src, tgt = small_pair
    assert src.features.shape == (60, 64) and tgt.features.shape == (40, 64)
    assert src.domain == "source" and tgt.domain == "target"
    assert np.all(np.abs(src.features) <= 1.0 + 1e-6)
    assert np.all(np.isfinite(tgt.features))


def test_generator_deterministic(small_pair):
    again = generate_benchmark(60, 40, shift=ShiftConfig(0.6), seed=11, **SMALL)
    for a, b in zip(small_pair, again):
        assert a.features.tobytes() == b.features.tobytes()
        assert np.array_equal(a.labels, b.labels)


def test_generator_seed_changes_data(small_pair):
    other, _ = generate_benchmark(60, 40, shift=ShiftConfig(0.6), seed=12, **SMALL)
    assert not np.array_equal(other.features, small_pair[0].features)


def test_generator_label_consistency(small_pair):
    # independent restatement of the stage rule on the drawn loads
    src, _ = small_pair
    expected = [0 if l < 0.35 else (1 if l < 0.80 else 2) for l in src.loads.tolist()]
    assert src.labels.tolist() == expected


def test_zero_shift_is_identity_process():
    src, tgt = generate_benchmark(40, 40, shift=ShiftConfig(0.0), seed=5, **SMALL)
    assert ShiftConfig(0.0).effective == {"coherent_gain": 1.0, "noise_sigma": 0.0, "freq_scale": 1.0, "distortion": 0.0}
    # target uses its own sample streams, so values differ but the distribution matches
    assert abs(src.features.mean() - tgt.features.mean()) < 0.05


def test_class_proportions():
    src, _ = generate_benchmark(4000, 3, seed=1, **SMALL)
    frac = src.class_counts() / 4000
    assert np.allclose(frac, [0.35, 0.45, 0.20], atol=0.03)


def test_balanced_mode():
    src, _ = generate_benchmark(300, 3, seed=1, signal_length=64,
                                config=BenchmarkConfig(coda_length=256, balanced=True))
    assert src.class_counts().tolist() == [100, 100, 100]


def test_monotone_shift():
    # paired source/target samples share their index; the mean feature distance
    # must not decrease as the shift grows
    dists = []
    for s in (0.0, 0.3, 0.6, 1.0):
        src, tgt = generate_benchmark(120, 120, shift=ShiftConfig(s), seed=2, **SMALL)
        dists.append(float(np.mean(np.linalg.norm(src.features - tgt.features, axis=1))))
    assert all(b >= a for a, b in zip(dists, dists[1:])), dists


def test_signal_length_padding():
    src, _ = generate_benchmark(5, 3, signal_length=300, seed=0, config=BenchmarkConfig(coda_length=256, max_lag=100))
    assert src.features.shape == (5, 300)
    assert np.all(src.features[:, 201:] == 0)
