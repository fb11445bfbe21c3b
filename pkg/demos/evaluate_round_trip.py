"""
Objective scores for a round trip
=================================

Mel-cepstral distance and STOI of decoded speech-like signals, with the
encoder's real-time factor.  The k-means-only codebook here skips the
gradient stage, so numbers are modest.
"""

import time

import numpy as np

from melpatch import MelPatchCodec, mel_spectrogram
from melpatch.autoencoder import AutoencoderParams, collect_patches
from melpatch.metrics import mcd, rtf, stoi
from melpatch.quantizer import Codebook, kmeans_fit
from melpatch.synth import speech_like

train = [speech_like(i, 1.5) for i in range(8)]
patches, _ = collect_patches([mel_spectrogram(w) for w in train])
codec = MelPatchCodec(Codebook(kmeans_fit(patches, 256, max_iters=20).entries))

print(f"{'utt':>4} {'mcd':>7} {'stoi':>6} {'rtf_enc':>8}")
for seed in range(100, 104):
    ref = speech_like(seed, 2.0)
    t0 = time.perf_counter()
    data = codec.encode(ref)
    elapsed = time.perf_counter() - t0
    deg = codec.decode(data)
    print(f"{seed:4d} {mcd(ref, deg):7.2f} {stoi(ref, deg):6.3f} {rtf(elapsed, ref.duration):8.4f}")

# For scale: the same signal against itself, and against plain noise.
ref = speech_like(100, 2.0)
noise = type(ref)(np.random.default_rng(0).normal(0, 0.05, len(ref)), ref.sample_rate)
print(f"\nself: mcd {mcd(ref, ref):.2f}, stoi {stoi(ref, ref):.3f}")
print(f"noise: mcd {mcd(ref, noise):.2f}, stoi {stoi(ref, noise):.3f}")
