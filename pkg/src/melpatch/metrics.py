"""Objective quality metrics: mel-cepstral distance, STOI and real-time factor."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.fft import dct

from .errors import ShapeError
from .frontend import FrontendConfig, Waveform, mel_spectrogram, resample

MCD_COEFFS = 13
MCD_SCALE = 10.0 / math.log(10.0)

# STOI constants (Taal et al. 2011)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


@dataclass
class MetricReport:
    utterance_id: str
    duration_s: float
    mcd: float
    stoi: float
    rtf_encode: float
    rtf_decode: float
    bitrate_bps: float


def _aligned(ref: Waveform, deg: Waveform) -> tuple[np.ndarray, np.ndarray]:
    if ref.sample_rate != deg.sample_rate:
        raise ValueError(f"sample rates differ: {ref.sample_rate} vs {deg.sample_rate}")
    n = min(len(ref), len(deg))
    return ref.samples[:n], deg.samples[:n]


# ---------------------------------------------------------------------------
# MCD
# ---------------------------------------------------------------------------


def mel_cepstrum(w: Waveform, n_coeffs: int = MCD_COEFFS) -> np.ndarray:
    """Coefficients 1..n_coeffs of the orthonormal DCT-II of each 80-band log-mel frame."""
    m = mel_spectrogram(w, FrontendConfig(sample_rate=w.sample_rate))
    return dct(m.values, type=2, norm="ortho", axis=1)[:, 1 : n_coeffs + 1]


def mcd_from_cepstra(c_ref: np.ndarray, c_deg: np.ndarray) -> float:
    if c_ref.shape != c_deg.shape:
        raise ShapeError(f"cepstra shapes differ: {c_ref.shape} vs {c_deg.shape}")
    per_frame = np.sqrt(2.0 * np.sum((c_ref - c_deg) ** 2, axis=1))
    return float(MCD_SCALE * per_frame.mean())


def mcd(ref: Waveform, deg: Waveform) -> float:
    """Frame-aligned mel-cepstral distance (no time warping)."""
    a, b = _aligned(ref, deg)
    return mcd_from_cepstra(
        mel_cepstrum(Waveform(a, ref.sample_rate)), mel_cepstrum(Waveform(b, deg.sample_rate))
    )


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------


def _stoi_window() -> np.ndarray:
    return np.hanning(STOI_FRAME + 2)[1:-1]


def third_octave_bands(fs=STOI_FS, nfft=STOI_NFFT, num_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    """One-third-octave band matrix (num_bands, nfft // 2 + 1) and centre frequencies."""
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands, dtype=np.float64)
    centers = 2.0 ** (k / 3.0) * min_freq
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((num_bands, freqs.size))
    for i in range(num_bands):
        lo_bin = int(np.argmin((freqs - lo[i]) ** 2))
        hi_bin = int(np.argmin((freqs - hi[i]) ** 2))
        obm[i, lo_bin:hi_bin] = 1.0
    return obm, centers


def _frames(x: np.ndarray, hop: int) -> np.ndarray:
    starts = range(0, len(x) - STOI_FRAME + 1, hop)
    return np.array([x[s : s + STOI_FRAME] for s in starts]).reshape(-1, STOI_FRAME)


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range=STOI_DYN_RANGE):
    """Drop frames more than ``dyn_range`` dB below the loudest frame of ``x``."""
    hop = STOI_FRAME // 2
    win = _stoi_window()
    x_frames = _frames(x, hop) * win
    y_frames = _frames(y, hop) * win
    energies = 20.0 * np.log10(np.linalg.norm(x_frames, axis=1) + _EPS)
    keep = (energies.max() - dyn_range - energies) < 0
    x_frames, y_frames = x_frames[keep], y_frames[keep]

    def overlap_add(frames):
        if frames.shape[0] == 0:
            return np.zeros(0)
        out = np.zeros((frames.shape[0] - 1) * hop + STOI_FRAME)
        for i, f in enumerate(frames):
            out[i * hop : i * hop + STOI_FRAME] += f
        return out

    return overlap_add(x_frames), overlap_add(y_frames)


def _stoi_spectrum(x: np.ndarray) -> np.ndarray:
    frames = _frames(x, STOI_FRAME // 2) * _stoi_window()
    return np.fft.rfft(frames, n=STOI_NFFT, axis=1)  # (frames, bins)


def stoi(ref: Waveform, deg: Waveform, beta: float = STOI_BETA) -> float:
    """Short-time objective intelligibility of ``deg`` against ``ref``.

    ``beta`` is the lower signal-to-distortion bound (dB) used to clip the
    normalized degraded envelopes; the standard measure uses -15.
    """
    if ref.sample_rate < STOI_FS:
        raise ValueError(f"STOI needs at least {STOI_FS} Hz input, got {ref.sample_rate}")
    a, b = _aligned(ref, deg)
    min_len = math.ceil(0.384 * ref.sample_rate)
    if a.shape[0] < min_len:
        raise ValueError(f"STOI needs at least 384 ms of audio, got {a.shape[0] / ref.sample_rate:.3f} s")
    x = resample(Waveform(a, ref.sample_rate), STOI_FS).samples
    y = resample(Waveform(b, deg.sample_rate), STOI_FS).samples

    x, y = remove_silent_frames(x, y)
    if x.shape[0] < STOI_FRAME:
        raise ValueError("not enough non-silent audio for STOI")
    obm, _ = third_octave_bands()
    x_tob = np.sqrt(obm @ (np.abs(_stoi_spectrum(x)) ** 2).T)  # (bands, frames)
    y_tob = np.sqrt(obm @ (np.abs(_stoi_spectrum(y)) ** 2).T)
    n_frames = x_tob.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError(
            f"only {n_frames} non-silent STOI frames; need {STOI_SEGMENT} (384 ms of speech)"
        )

    starts = range(0, n_frames - STOI_SEGMENT + 1)
    x_seg = np.stack([x_tob[:, s : s + STOI_SEGMENT] for s in starts])  # (segs, bands, N)
    y_seg = np.stack([y_tob[:, s : s + STOI_SEGMENT] for s in starts])

    gain = np.linalg.norm(x_seg, axis=2, keepdims=True) / (np.linalg.norm(y_seg, axis=2, keepdims=True) + _EPS)
    y_norm = y_seg * gain
    clip = 10.0 ** (-beta / 20.0)
    y_prime = np.minimum(y_norm, x_seg * (1.0 + clip))

    y_prime = y_prime - y_prime.mean(axis=2, keepdims=True)
    x_c = x_seg - x_seg.mean(axis=2, keepdims=True)
    y_prime = y_prime / (np.linalg.norm(y_prime, axis=2, keepdims=True) + _EPS)
    x_c = x_c / (np.linalg.norm(x_c, axis=2, keepdims=True) + _EPS)
    return float(np.sum(x_c * y_prime) / (x_c.shape[0] * x_c.shape[1]))


# ---------------------------------------------------------------------------
# RTF and reporting
# ---------------------------------------------------------------------------


def rtf(processing_elapsed: float, signal_duration: float) -> float:
    if signal_duration <= 0:
        raise ValueError("signal duration must be positive")
    return processing_elapsed / signal_duration


def write_report(path, reports: list[MetricReport]) -> None:
    """CSV with one row per utterance plus a trailing ``mean`` row."""
    columns = [f.name for f in fields(MetricReport)]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for r in reports:
            writer.writerow(asdict(r))
        if reports:
            summary = {"utterance_id": "mean"}
            for col in columns[1:]:
                summary[col] = float(np.mean([getattr(r, col) for r in reports]))
            writer.writerow(summary)
