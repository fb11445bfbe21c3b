"""
Streaming encode and the .mpc bitstream
=======================================

Tokens leave the encoder one row at a time, every 4 mel frames (32 ms at
the default hop).  The batch path gives the same bits.
"""

import numpy as np

from melpatch import Codebook, MelPatchCodec, mel_spectrogram, unpack
from melpatch.synth import speech_like

# An untrained identity codebook is enough to look at the plumbing.
rng = np.random.default_rng(0)
codec = MelPatchCodec(Codebook(rng.normal(-6.0, 3.0, size=(4096, 16))))

m = mel_spectrogram(speech_like(3, 1.0))
enc = codec.stream_encoder()
rows = []
for start in range(0, m.n_frames, 3):
    out = enc.push_frames(m.values[start : start + 3])
    if len(out):
        rows.append(out)
    if start < 12:
        print(f"pushed {enc.frames_seen:3d} frames -> {len(out)} new rows")
rows.append(enc.flush())
streamed = np.concatenate(rows)
batch = codec.encode_mel(m)
print("stream grid:", streamed.shape, "identical to batch:", np.array_equal(streamed, batch.indices))

data = codec.encode(speech_like(3, 1.0))
header, grid = unpack(data)
print(f"\n{len(data)} bytes = 40 header + {len(data) - 40} payload")
print(f"k={header.k}, {header.bits_per_index} bits/index, original_t={header.original_t}, grid {grid.rows}x{grid.cols}")
print("first payload bytes:", data[40:46].hex(" "))
print("first tokens:", grid.indices[0, :4].tolist(), "->", " ".join(format(int(i), "012b") for i in grid.indices[0, :4]))
