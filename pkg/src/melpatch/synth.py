"""Deterministic speech-like test signals.

Utterances are built from voiced "syllables" (a gliding harmonic source
shaped by three formant resonances, plus some breath noise) separated by short pauses and
fricative-like noise bursts.  Nothing here is meant to sound like speech;
it only needs speech-like spectral and temporal structure so the codec and
the metrics have something non-trivial to chew on.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .frontend import Waveform, write_wav


def speech_like(seed: int, duration: float = 1.5, sample_rate: int = 16000) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    out = np.zeros(n)

    f0_base = rng.uniform(95.0, 210.0)
    f0 = f0_base * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t)) * (1.0 - 0.1 * t / max(duration, 1e-9))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    pos = int(rng.uniform(0.02, 0.08) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.12, 0.28) * sample_rate)
        stop = min(n, pos + length)
        seg = slice(pos, stop)
        formants = np.sort(rng.uniform([300, 900, 2000], [900, 2200, 3500]))
        widths = np.array([80.0, 120.0, 200.0])
        voiced = np.zeros(stop - pos)
        for h in range(1, int(7000 // f0_base) + 1):
            fh = h * f0[seg]
            gain = (1.0 / (1.0 + ((fh[:, None] - formants) / widths) ** 2)).sum(axis=1) / h**0.5
            gain = np.where(fh < sample_rate / 2 - 200, gain, 0.0)
            voiced += gain * np.sin(h * phase[seg])
        breath = signal.lfilter([1.0], [1.0, -0.9], rng.normal(0.0, 0.02, stop - pos))
        out[seg] += (voiced + breath) * np.hanning(stop - pos)

        pos = stop + int(rng.uniform(0.03, 0.12) * sample_rate)
        if rng.random() < 0.5 and pos < n:
            burst = min(n - pos, int(rng.uniform(0.04, 0.1) * sample_rate))
            noise = rng.normal(0.0, 1.0, burst)
            b, a = signal.butter(4, rng.uniform(2500, 4500) / (sample_rate / 2), btype="high")
            out[pos : pos + burst] += 0.3 * signal.lfilter(b, a, noise) * np.hanning(burst)
            pos += burst + int(rng.uniform(0.02, 0.06) * sample_rate)

    out += 1e-4 * rng.normal(0.0, 1.0, n)
    peak = np.abs(out).max()
    return Waveform(0.5 * out / peak if peak > 0 else out, sample_rate)


def tone(freq: float, duration: float = 1.0, sample_rate: int = 16000, amplitude: float = 0.5) -> Waveform:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)


def two_cluster_corpus(count: int = 4, duration: float = 1.0, sample_rate: int = 16000, seed: int = 0) -> list[Waveform]:
    """Alternating loud and quiet (-40 dB) white noise.

    The 40 dB level gap dwarfs the spread across bands, so patches fall into
    two well-separated, equally populated clusters.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    return [
        Waveform((0.25 if i % 2 == 0 else 0.0025) * np.clip(rng.normal(0.0, 1.0, n), -3.9, 3.9), sample_rate)
        for i in range(count)
    ]


def write_corpus(out_dir, count: int = 8, duration: float = 1.5, seed: int = 0, sample_rate: int = 16000) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out_dir / f"utt{i:03d}.wav"
        write_wav(path, speech_like(seed * 1000 + i, duration, sample_rate))
        paths.append(path)
    return paths
