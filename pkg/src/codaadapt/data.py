"""Datasets, the on-disk directory format, batching, and the synthetic
source/target benchmark.

Directory format (all three files required)::

    meta.json    {"num_samples", "signal_length", "num_classes", "class_names",
                  "domain", "dtype": "f32le", "labeled"}
    signals.bin  row-major little-endian float32, no header,
                 exactly 4 * num_samples * signal_length bytes
    labels.csv   header "index,label"; one row per sample, label empty when
                 the dataset is unlabeled
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, ValidationError
from .signal_processing import minmax_scale, normalize_waveform, two_point_stats

__all__ = [
    "CLASS_NAMES",
    "SignalDataset",
    "ShiftConfig",
    "BenchmarkConfig",
    "DamageTrajectory",
    "damage_trajectory",
    "stage_of_load",
    "generate_benchmark",
    "save_dataset",
    "load_dataset",
    "batch_iterator",
    "CyclicBatches",
]

CLASS_NAMES = ("elastic", "diffuse_microcracking", "localized_damage")
DOMAINS = ("source", "target")
_DOMAIN_STREAM = {"source": 0, "target": 1}
_SHIFT_STREAM = 2
_SPECIMEN_STREAM = 3


@dataclass
class SignalDataset:
    """Fixed-length feature vectors with optional integer labels."""

    features: np.ndarray
    labels: np.ndarray | None
    domain: str = "source"
    num_classes: int = 3
    class_names: tuple[str, ...] = CLASS_NAMES
    loads: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ValidationError(f"features must be 2D, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features must be finite")
        if self.domain not in DOMAINS:
            raise ValidationError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        self.class_names = tuple(self.class_names)
        if len(self.class_names) != self.num_classes:
            raise ValidationError("class_names length must equal num_classes")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValidationError(
                    f"{self.labels.shape[0] if self.labels.ndim else 0} labels for "
                    f"{self.features.shape[0]} feature rows")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ValidationError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def signal_length(self) -> int:
        return self.features.shape[1]

    def without_labels(self) -> "SignalDataset":
        return replace(self, labels=None, loads=None)

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise ValidationError("dataset is unlabeled")
        return np.bincount(self.labels, minlength=self.num_classes)


# ---- damage phenomenology ----------------------------------------------------

@dataclass(frozen=True)
class DamageTrajectory:
    normalized_load: np.ndarray
    dvv_curve: np.ndarray
    class_boundaries: tuple[float, float] = (0.35, 0.80)


def stage_of_load(load, boundaries=(0.35, 0.80)):
    """Damage stage index (0, 1, 2) for normalized load levels."""
    lo, hi = boundaries
    return np.where(np.asarray(load) < lo, 0, np.where(np.asarray(load) < hi, 1, 2))


@dataclass(frozen=True)
class BenchmarkConfig:
    """Parameters of the synthetic coda model.

    dv/v follows three linear segments over normalized load: a rise at
    ``slopes[0]`` %/MPa up to the first boundary, then declines at
    ``slopes[1]`` and ``slopes[2]``. ``peak_stress_mpa`` converts the per-MPa
    slopes to normalized load and is chosen so the first segment peaks at
    ``peak_dvv``.

    Coherence (the fraction of the perturbed coda still correlated with the
    reference) is 1 in the elastic stage, drops to ``coherence_levels[0]`` at
    the onset of microcracking, falls linearly to ``coherence_levels[1]`` at
    the second boundary and to ``coherence_levels[2]`` at full load.

    All samples of one seed share a specimen: a fixed set of damped modes.
    Each sample perturbs the mode frequencies and amplitudes by the relative
    ``mode_freq_jitter`` and ``mode_amp_jitter`` and draws fresh phases.
    """

    coda_length: int = 1024
    n_modes: int = 8
    freq_range: tuple[float, float] = (0.02, 0.10)
    decay_range: tuple[float, float] = (250.0, 900.0)
    class_boundaries: tuple[float, float] = (0.35, 0.80)
    peak_dvv: float = 1.235
    slopes: tuple[float, float, float] = (0.084, -0.112, -0.331)
    dvv_jitter: float = 0.34
    coherence_levels: tuple[float, float, float] = (0.7, 0.45, 0.1)
    mode_freq_jitter: float = 0.01
    mode_amp_jitter: float = 0.1
    max_lag: int | None = None
    balanced: bool = False

    def __post_init__(self):
        lo, hi = self.class_boundaries
        if not 0.0 < lo < hi < 1.0:
            raise ValidationError(f"class boundaries must satisfy 0 < lo < hi < 1, got {self.class_boundaries}")
        if self.coda_length < 64:
            raise ValidationError("coda_length must be >= 64")
        if self.n_modes < 1:
            raise ValidationError("n_modes must be >= 1")
        if not 0.0 < self.freq_range[0] < self.freq_range[1] < 0.5:
            raise ValidationError("freq_range must lie inside (0, 0.5) cycles/sample")
        if not all(0.0 <= c <= 1.0 for c in self.coherence_levels):
            raise ValidationError(f"coherence_levels must lie in [0, 1], got {self.coherence_levels}")
        if self.mode_freq_jitter < 0 or self.mode_amp_jitter < 0 or self.dvv_jitter < 0:
            raise ValidationError("jitter parameters must be >= 0")

    @property
    def peak_stress_mpa(self) -> float:
        return self.peak_dvv / (self.slopes[0] * self.class_boundaries[0])

    def dvv_at(self, load) -> np.ndarray:
        load = np.asarray(load, dtype=np.float64)
        lo, hi = self.class_boundaries
        p = self.peak_stress_mpa
        s1, s2, s3 = self.slopes
        at_lo = s1 * p * lo
        at_hi = at_lo + s2 * p * (hi - lo)
        return np.where(load < lo, s1 * p * load,
                        np.where(load < hi, at_lo + s2 * p * (load - lo),
                                 at_hi + s3 * p * (load - hi)))

    def coherence_at(self, load) -> np.ndarray:
        """Fraction of the perturbed coda that stays coherent with the reference."""
        load = np.asarray(load, dtype=np.float64)
        lo, hi = self.class_boundaries
        c_lo, c_hi, c_end = self.coherence_levels
        return np.where(load < lo, 1.0,
                        np.where(load < hi, c_lo + (c_hi - c_lo) * (load - lo) / (hi - lo),
                                 c_hi + (c_end - c_hi) * (load - hi) / (1.0 - hi)))


def damage_trajectory(cfg: BenchmarkConfig | None = None, n_points: int = 101) -> DamageTrajectory:
    cfg = cfg or BenchmarkConfig()
    load = np.linspace(0.0, 1.0, n_points)
    return DamageTrajectory(load, cfg.dvv_at(load), cfg.class_boundaries)


@dataclass(frozen=True)
class ShiftConfig:
    """Target-domain perturbations, each interpolated from identity by ``shift_intensity``.

    amplitude_gain
        Gain on the coherent part of the perturbed coda (< 1 makes target
        samples look more decorrelated than source samples at equal load).
    extra_noise_sigma
        White measurement noise added to both normalized waveforms.
    frequency_offset_frac
        Relative shift of every coda frequency.
    waveform_distortion
        Strength of a tanh soft-clipping of both waveforms.
    """

    shift_intensity: float = 0.6
    amplitude_gain: float = 0.75
    extra_noise_sigma: float = 0.5
    frequency_offset_frac: float = 0.15
    waveform_distortion: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.shift_intensity <= 1.0:
            raise ValidationError(f"shift_intensity must lie in [0, 1], got {self.shift_intensity}")
        if self.amplitude_gain < 0 or self.extra_noise_sigma < 0 or self.waveform_distortion < 0:
            raise ValidationError("amplitude_gain, extra_noise_sigma and waveform_distortion must be >= 0")
        if self.frequency_offset_frac <= -1:
            raise ValidationError("frequency_offset_frac must be > -1")

    @property
    def effective(self) -> dict:
        s = self.shift_intensity
        return {
            "coherent_gain": 1.0 + s * (self.amplitude_gain - 1.0),
            "noise_sigma": s * self.extra_noise_sigma,
            "freq_scale": 1.0 + s * self.frequency_offset_frac,
            "distortion": s * self.waveform_distortion,
        }


# ---- generator ---------------------------------------------------------------

def _modes(rng, cfg: BenchmarkConfig, freq_scale: float):
    k = cfg.n_modes
    return (rng.normal(size=k),
            rng.uniform(*cfg.freq_range, size=k) * freq_scale,
            rng.uniform(*cfg.decay_range, size=k),
            rng.uniform(0.0, 2 * np.pi, size=k))


def _coda(t, modes):
    amp, freq, decay, phase = modes
    arg = 2 * np.pi * freq[:, None] * t[None, :] + phase[:, None]
    return np.sum(amp[:, None] * np.exp(-t[None, :] / decay[:, None]) * np.sin(arg), axis=0)


def _distort(x, beta):
    if beta <= 0:
        return x
    return np.tanh(beta * x) / beta


def _specimen_modes(rng, specimen, cfg: BenchmarkConfig, freq_scale: float):
    amp, freq, decay, _ = specimen
    k = cfg.n_modes
    return (amp * (1.0 + cfg.mode_amp_jitter * rng.normal(size=k)),
            freq * freq_scale * (1.0 + cfg.mode_freq_jitter * rng.normal(size=k)),
            decay,
            rng.uniform(0.0, 2 * np.pi, size=k))


def _sample(rng: np.random.Generator, shift_rng, load: float, cfg: BenchmarkConfig,
            eff: dict | None, signal_length: int, max_lag: int, specimen):
    t = np.arange(cfg.coda_length, dtype=np.float64)
    freq_scale = eff["freq_scale"] if eff else 1.0
    ref_modes = _specimen_modes(rng, specimen, cfg, freq_scale)
    other_modes = _modes(rng, cfg, freq_scale)
    jitter = rng.normal() * cfg.dvv_jitter * load
    alpha = (float(cfg.dvv_at(load)) + jitter) / 100.0

    ref = normalize_waveform(_coda(t, ref_modes))
    # perturbed(t) = reference(t / (1 + alpha)): positive dv/v under the stretching estimator
    coherent = normalize_waveform(_coda(t / (1.0 + alpha), ref_modes))
    incoherent = normalize_waveform(_coda(t, other_modes))
    c = float(cfg.coherence_at(load))
    if eff:
        c = min(1.0, c * eff["coherent_gain"])
    pert = c * coherent + math.sqrt(max(0.0, 1.0 - c * c)) * incoherent
    pert = normalize_waveform(pert)

    if eff:
        if eff["noise_sigma"] > 0:
            ref = ref + shift_rng.normal(0.0, eff["noise_sigma"], size=ref.size)
            pert = pert + shift_rng.normal(0.0, eff["noise_sigma"], size=pert.size)
        ref = normalize_waveform(_distort(ref, eff["distortion"]))
        pert = normalize_waveform(_distort(pert, eff["distortion"]))

    tp = two_point_stats(ref, pert, max_lag).values
    feat = minmax_scale(tp)
    out = np.zeros(signal_length)
    n = min(signal_length, feat.size)
    out[:n] = feat[:n]
    return out


def _draw_loads(rng, n, cfg: BenchmarkConfig):
    if not cfg.balanced:
        return rng.uniform(0.0, 1.0, size=n)
    edges = np.r_[0.0, cfg.class_boundaries, 1.0]
    cls = np.arange(n) % 3
    rng.shuffle(cls)
    return rng.uniform(edges[cls], edges[cls + 1])


def _generate_domain(n, domain, signal_length, seed, cfg, shift: ShiftConfig | None):
    stream = _DOMAIN_STREAM[domain]
    loads = _draw_loads(np.random.default_rng([seed, stream, 10**6]), n, cfg)
    max_lag = cfg.max_lag if cfg.max_lag is not None else (signal_length - 1) // 2
    if max_lag >= cfg.coda_length:
        raise ValidationError(f"max_lag {max_lag} must be < coda_length {cfg.coda_length}")
    eff = shift.effective if shift is not None else None
    specimen = _modes(np.random.default_rng([seed, _SPECIMEN_STREAM]), cfg, 1.0)
    feats = np.empty((n, signal_length), dtype=np.float32)
    for i in range(n):
        rng = np.random.default_rng([seed, stream, i])
        shift_rng = np.random.default_rng([seed, _SHIFT_STREAM, i])
        feats[i] = _sample(rng, shift_rng, float(loads[i]), cfg, eff, signal_length, max_lag, specimen)
    labels = stage_of_load(loads, cfg.class_boundaries).astype(np.int64)
    return SignalDataset(feats, labels, domain=domain, loads=loads)


def generate_benchmark(n_source: int, n_target: int, signal_length: int = 1024,
                       shift: ShiftConfig | None = None, seed: int = 0,
                       config: BenchmarkConfig | None = None) -> tuple[SignalDataset, SignalDataset]:
    """Synthetic source/target datasets with a three-stage damage label.

    Each sample draws a normalized load, builds a reference coda (sum of damped
    sinusoids from the specimen shared by both domains) and a perturbed coda that is stretched by the dv/v of that load
    and partially replaced by an independent coda as damage grows. The feature
    is the min-max scaled two-point statistics of the normalized pair, zero
    padded or truncated to ``signal_length``. Target samples also go through the
    ``shift`` perturbations. Each sample has its own RNG substream derived from
    ``(seed, domain, index)``, so output is deterministic and order independent.
    """
    cfg = config or BenchmarkConfig()
    shift = shift if shift is not None else ShiftConfig()
    if n_source < 3 or n_target < 3:
        raise ValidationError("need at least num_classes samples per domain")
    if signal_length < 64:
        raise ValidationError(f"signal_length must be >= 64, got {signal_length}")
    src = _generate_domain(n_source, "source", signal_length, seed, cfg, None)
    tgt = _generate_domain(n_target, "target", signal_length, seed, cfg, shift)
    return src, tgt


# ---- persistence -------------------------------------------------------------

def save_dataset(ds: SignalDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_samples": len(ds),
        "signal_length": ds.signal_length,
        "num_classes": ds.num_classes,
        "class_names": list(ds.class_names),
        "domain": ds.domain,
        "dtype": "f32le",
        "labeled": ds.labels is not None,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    ds.features.astype("<f4").tofile(d / "signals.bin")
    with open(d / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for i in range(len(ds)):
            w.writerow([i, "" if ds.labels is None else int(ds.labels[i])])
    return d


def load_dataset(directory) -> SignalDataset:
    d = Path(directory)
    for name in ("meta.json", "signals.bin", "labels.csv"):
        if not (d / name).is_file():
            raise FormatError(f"{d}: missing {name}")
    try:
        meta = json.loads((d / "meta.json").read_text())
        n, length = int(meta["num_samples"]), int(meta["signal_length"])
        num_classes = int(meta["num_classes"])
        class_names = tuple(meta["class_names"])
        domain = meta["domain"]
        dtype = meta.get("dtype", "f32le")
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{d / 'meta.json'}: corrupt metadata ({exc})") from exc
    if dtype != "f32le":
        raise FormatError(f"unsupported dtype {dtype!r}")
    expected = 4 * n * length
    actual = (d / "signals.bin").stat().st_size
    if actual != expected:
        raise FormatError(f"{d / 'signals.bin'}: expected {expected} bytes "
                          f"(4 * {n} * {length}), found {actual}")
    features = np.fromfile(d / "signals.bin", dtype="<f4").reshape(n, length)

    with open(d / "labels.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["index", "label"]:
        raise FormatError(f"{d / 'labels.csv'}: header must be 'index,label'")
    rows = rows[1:]
    if len(rows) != n:
        raise FormatError(f"{d / 'labels.csv'}: {len(rows)} rows for {n} samples")
    try:
        raw = [r[1] for r in sorted(rows, key=lambda r: int(r[0]))]
        labels = None if all(v == "" for v in raw) else np.array([int(v) for v in raw], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{d / 'labels.csv'}: unreadable row ({exc})") from exc
    return SignalDataset(features, labels, domain=domain, num_classes=num_classes,
                         class_names=class_names)


# ---- batching ----------------------------------------------------------------

def batch_iterator(ds, batch_size: int, shuffle: bool = False,
                   rng: np.random.Generator | None = None) -> Iterator[tuple[np.ndarray, np.ndarray | None]]:
    """One pass over ``ds`` in ``ceil(N / batch_size)`` batches.

    Accepts a SignalDataset or a bare feature matrix. With ``shuffle`` the
    order is a permutation drawn from ``rng``.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    if isinstance(ds, SignalDataset):
        x, y = ds.features, ds.labels
    else:
        x, y = np.asarray(ds), None
    n = x.shape[0]
    if shuffle:
        if rng is None:
            raise ValidationError("shuffle requires an rng")
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield x[idx], (None if y is None else y[idx])


class CyclicBatches:
    """Endless fixed-size batches, reshuffled on every pass over the data.

    Only features are served. The state (rng, permutation, cursor) can be
    exported and restored for exact resumption.
    """

    def __init__(self, features: np.ndarray, batch_size: int, rng: np.random.Generator):
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        self.features = features
        self.batch_size = batch_size
        self.rng = rng
        self.order = rng.permutation(features.shape[0])
        self.cursor = 0

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        n = self.features.shape[0]
        take = []
        need = min(self.batch_size, n)
        while need > 0:
            if self.cursor >= n:
                self.order = self.rng.permutation(n)
                self.cursor = 0
            chunk = self.order[self.cursor:self.cursor + need]
            self.cursor += chunk.size
            need -= chunk.size
            take.append(chunk)
        return self.features[np.concatenate(take)]

    def state_dict(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "order": self.order.tolist(), "cursor": self.cursor}

    def load_state_dict(self, state: dict):
        self.rng.bit_generator.state = state["rng"]
        self.order = np.asarray(state["order"], dtype=np.int64)
        self.cursor = int(state["cursor"])
