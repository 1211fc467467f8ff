"""Stagewise learning in a deep linear network.

Trains the 8-item hierarchy network with default settings and shows two
views of the same process: the strength of each input-output mode against
its closed-form sigmoid, and the epochs at which the hidden representation
splits each node of the tree.

Run: python3 demos/01_stagewise_learning.py  (a few seconds)
"""
import numpy as np

from stagewise import build_hierarchy_dataset
from stagewise.analytic import calibrate_mode_state, measured_mode_strengths, mode_strength
from stagewise.linnet import TrainConfig
from stagewise.mds import detect_branches, embed_checkpoints

ds = build_hierarchy_dataset(3)
cfg = TrainConfig()
ms, trace = calibrate_mode_state(ds, cfg)

print("singular values of the input-output correlation:")
print("  " + "  ".join(f"{s:.3f}" for s in ms.s))

# a mode is "learned" once it reaches half its final strength
epochs, g = measured_mode_strengths(trace, ms)
print("\nmode  s      half-learned epoch  max rel. error vs closed form")
for k in range(ms.rank):
    closed = mode_strength(ms.s[k], ms.g0[k], ms.tau, epochs)
    half = epochs[np.argmax(g[:, k] >= ms.s[k] / 2)]
    m = closed >= 0.05 * ms.s[k]
    err = np.max(np.abs(g[m, k] - closed[m]) / closed[m])
    print(f"{k:4d}  {ms.s[k]:.3f}  {half:18d}  {err:.3f}")

# the same stages seen from the hidden layer
marks = {e: trace.checkpoints[e] for e in range(0, cfg.epochs + 1, 50)}
frames = embed_checkpoints(marks, ds, 2**3 - 1)
print("\nbranch events (children separate past half their final distance):")
for ev in sorted(detect_branches(frames, ds), key=lambda e: e.epoch):
    print(f"  epoch {ev.epoch:5d}  {ev.label}")
