"""
Catastrophic forgetting and replay
==================================

Ten Gaussian classes arrive two at a time. Training plain SGD on each task
in turn wipes out the earlier ones; keeping a fraction of each finished
task in a replay buffer brings much of that back.
"""

import numpy as np

from espcl.continual import TrainSettings, run_sequence
from espcl.data import GaussianSpec, generate_gaussian_stream

stream = generate_gaussian_stream(GaussianSpec(seed=0), tasks=5)
print([t.classes for t in stream])

for fraction in (0.0, 0.2, 0.5):
    res = run_sequence(stream, "plasticity", TrainSettings(replay_fraction=fraction), seed=0)
    acc = res.accuracy
    print(f"\nreplay {fraction:.1f}: final average {res.average_accuracy:.1f}")
    # row t = accuracy on every task after learning task t
    print(np.array2string(acc, precision=1, suppress_small=True))
    print("forgetting per task", np.round(res.forgetting, 1))
