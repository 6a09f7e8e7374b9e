"""
ESP against the baselines
=========================

Same stream, same seed, every method. Branches are fitted a little longer
than the default here so that their entropies, and hence the per-block
plasticity factors, actually differ.
"""

import numpy as np

from espcl.continual import METHODS, TrainSettings, run_sequence
from espcl.data import GaussianSpec, generate_gaussian_stream

stream = generate_gaussian_stream(GaussianSpec(seed=0), tasks=5)
settings = TrainSettings(replay_fraction=0.2, branch_epochs=5, branch_lr=0.05)

print(f"{'method':<11} {'final avg':>9} {'reg. s':>8}")
for method in METHODS:
    res = run_sequence(stream, method, settings, seed=0)
    reg = sum(r.regularizer_seconds for r in res.records)
    print(f"{method:<11} {res.average_accuracy:9.1f} {reg:8.3f}")
    if method == "esp":
        pf = np.array([p for _, p, _ in res.pf_history])
        esp_pf = pf.mean(axis=0)

print("\nmean ESP plasticity factor per block:", esp_pf.round(3))
