"""
The synthetic damage benchmark
==============================

Specimens pass through three damage stages as the normalized load grows:
elastic, diffuse microcracking and localized damage. Each sample is the two-point
statistic of a reference and a loaded coda. The target domain applies a
shift (gain, noise, frequency offset and distortion) to the same physics.
"""
import numpy as np

from codaadapt.data import (
    BenchmarkConfig,
    ShiftConfig,
    batch_iterator,
    damage_trajectory,
    generate_benchmark,
    load_dataset,
    save_dataset,
)

cfg = BenchmarkConfig()
traj = damage_trajectory(cfg, n_points=11)
for load, dvv, coh in zip(traj.normalized_load, traj.dvv_curve, cfg.coherence_at(traj.normalized_load)):
    print(f"load {load:.1f}   dv/v {dvv:+.3f} %   coherent fraction {coh:.2f}")

src, tgt = generate_benchmark(600, 300, signal_length=64, shift=ShiftConfig(0.6), seed=0)
print("source", src.features.shape, "class counts", src.class_counts())
print("target", tgt.features.shape, "class counts", tgt.class_counts())

# the shift moves the class means of the features apart between domains
for k, name in enumerate(src.class_names):
    gap = np.linalg.norm(src.features[src.labels == k].mean(0) - tgt.features[tgt.labels == k].mean(0))
    print(f"{name:>14s}: distance between domain means {gap:.3f}")

# datasets round-trip through a directory: raw float32 signals, a label CSV and a JSON sidecar
path = save_dataset(src, "/tmp/codaadapt_demo/source")
back = load_dataset(path)
print("round trip identical:", np.array_equal(back.features, src.features))

for xb, yb in batch_iterator(src, 256):
    print("batch", xb.shape, yb.shape)
