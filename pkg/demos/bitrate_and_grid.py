"""
Where 7.5 kbit/s comes from
===========================

A second of 16 kHz audio with a 128-sample hop gives 125 mel frames.
Grouping 4 frames and 4 bands per token leaves 31.25 token rows of 20
tokens each, and every token is a 12-bit index into a 4096-entry codebook.
"""

import numpy as np

from melpatch import BitrateSpec, FrontendConfig, bitrate_bps, grid_dims
from melpatch.patches import tokens_per_second

cfg = FrontendConfig()
print("frames per second:", cfg.sample_rate / cfg.hop)
print("tokens per second:", tokens_per_second(cfg))
print("bits per second:  ", bitrate_bps(BitrateSpec()))

# A real utterance has one extra centre-padded frame, so the grid gets a
# padded final row.
for seconds in (1, 10, 60):
    t = seconds * cfg.sample_rate // cfg.hop + 1
    rows, cols = grid_dims(t, cfg.n_mels)
    print(f"{seconds:3d} s -> {t} frames -> {rows}x{cols} grid, {rows * cols * 12 / seconds:.1f} bps")

# Bitrate is set by the codebook size and the patch geometry.
print()
print(" K      bps")
for k in 2 ** np.arange(6, 15, 2):
    print(f"{k:5d}  {bitrate_bps(BitrateSpec(k=int(k))):7.1f}")
for dt, df in [(2, 4), (4, 4), (4, 8), (8, 8)]:
    spec = BitrateSpec(downsample_t=dt, downsample_f=df)
    print(f"patch {dt}x{df}: {spec.tokens_per_second:7.2f} tokens/s, {bitrate_bps(spec):8.1f} bps")
