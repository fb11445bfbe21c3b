"""
Log-mel analysis and Griffin-Lim resynthesis
============================================

The codec works on 80-band log-mel frames.  Phase is thrown away, so the
decoder rebuilds a waveform by iterating between the STFT and its inverse.
"""

import math

import numpy as np

from melpatch import griffin_lim, mel_filterbank, mel_spectrogram
from melpatch.synth import speech_like

w = speech_like(seed=1, duration=2.0)
m = mel_spectrogram(w)
print("waveform:", len(w), "samples at", w.sample_rate, "Hz")
print("log-mel:", m.values.shape, "range", m.values.min().round(2), "to", m.values.max().round(2))

fb = mel_filterbank(m.config)
print("filterbank:", fb.shape, "widest band spans", int((fb > 0).sum(axis=1).max()), "bins")

# Re-analyse the resynthesis and compare with the input spectrogram.
floor = math.log(m.config.log_floor)
silence = np.abs(m.values - floor).mean()
print(f"\ndistance to silence: {silence:.3f}")
for iters in (0, 4, 16, 32, 64):
    out = griffin_lim(m, iters)
    again = mel_spectrogram(out).values[: m.n_frames]
    err = np.abs(again - m.values[: again.shape[0]]).mean()
    print(f"{iters:3d} iterations: log-mel L1 {err:.3f}")
