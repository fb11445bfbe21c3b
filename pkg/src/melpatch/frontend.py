"""Waveform I/O and spectral transforms.

STFT framing uses a periodic Hann window of ``win_length`` (zero-padded to
``n_fft``) and reflect center padding, so a signal of ``n`` samples yields
``n // hop + 1`` frames.  Mel energies are ``filterbank @ |X|**2`` compressed
with a natural log above ``log_floor``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import ConfigError, FormatError

# windowed-sinc resampler
KAISER_BETA = 8.6
SINC_ZERO_CROSSINGS = 64


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    n_fft: int = 512
    hop: int = 128
    win_length: int = 512
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2)
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not (1 <= self.hop <= self.win_length <= self.n_fft):
            raise ConfigError(
                f"need 1 <= hop <= win_length <= n_fft, got "
                f"hop={self.hop} win_length={self.win_length} n_fft={self.n_fft}"
            )
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin} fmax={self.fmax}"
            )
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def log_min(self) -> float:
        return math.log(self.log_floor)


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel grid of shape (T, n_mels), time-major."""

    values: np.ndarray
    config: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.config.n_mels:
            raise ValueError(
                f"expected (T, {self.config.n_mels}) mel values, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def load_wav(path) -> Waveform:
    """Read a PCM16 or float32 RIFF/WAVE file, averaging channels to mono."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise FormatError(f"{path}: unsupported sample encoding {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise FormatError(f"{path}: no audio frames")
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{path}: non-finite samples")
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write ``w`` as mono little-endian PCM16."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(Path(path), w.sample_rate, pcm)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def resample(w: Waveform, target: int) -> Waveform:
    """Band-limited rational resampling with a Kaiser-windowed sinc filter.

    The output has ``round(len(w) * target / w.sample_rate)`` samples.
    """
    target = int(target)
    if target <= 0:
        raise ValueError(f"target rate must be positive, got {target}")
    if target == w.sample_rate:
        return Waveform(w.samples.copy(), target)

    g = math.gcd(target, w.sample_rate)
    up, down = target // g, w.sample_rate // g
    max_rate = max(up, down)
    half_len = SINC_ZERO_CROSSINGS * max_rate
    taps = signal.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))
    out = signal.resample_poly(w.samples, up, down, window=taps)

    n_out = int(round(len(w) * target / w.sample_rate))
    if out.shape[0] >= n_out:
        out = out[:n_out]
    else:
        out = np.pad(out, (0, n_out - out.shape[0]))
    return Waveform(out, target)


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------


def analysis_window(cfg: FrontendConfig) -> np.ndarray:
    win = signal.get_window("hann", cfg.win_length, fftbins=True)
    left = (cfg.n_fft - cfg.win_length) // 2
    return np.pad(win, (left, cfg.n_fft - cfg.win_length - left))


def _frames(x: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    pad = cfg.n_fft // 2
    if x.shape[0] > 1:
        padded = np.pad(x, pad, mode="reflect")
    else:
        padded = np.pad(x, pad, mode="edge")
    n_frames = x.shape[0] // cfg.hop + 1
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft)
    return view[: (n_frames - 1) * cfg.hop + 1 : cfg.hop]


def stft(x: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Complex STFT, shape (T, n_fft // 2 + 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("cannot analyse an empty signal")
    return np.fft.rfft(_frames(x, cfg) * analysis_window(cfg), n=cfg.n_fft, axis=1)


def istft(spec: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`; returns ``(T - 1) * hop`` samples."""
    n_frames = spec.shape[0]
    window = analysis_window(cfg)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1) * window
    total = cfg.n_fft + cfg.hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = window**2
    for t in range(n_frames):
        start = t * cfg.hop
        out[start : start + cfg.n_fft] += frames[t]
        norm[start : start + cfg.n_fft] += wsq
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    pad = cfg.n_fft // 2
    return out[pad : pad + (n_frames - 1) * cfg.hop]


def stft_magnitude(w: Waveform, cfg: FrontendConfig | None = None) -> np.ndarray:
    cfg = cfg or FrontendConfig(sample_rate=w.sample_rate)
    return np.abs(stft(w.samples, cfg))


# ---------------------------------------------------------------------------
# mel
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FrontendConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg: FrontendConfig | None = None) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1), peak value 1."""
    cfg = cfg or FrontendConfig()
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.n_fft
    lower = (freqs[None, :] - edges[:-2, None]) / np.diff(edges)[:-1, None]
    upper = (edges[2:, None] - freqs[None, :]) / np.diff(edges)[1:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    empty = np.flatnonzero(fb.max(axis=1) <= 0.0)
    if empty.size:
        raise ConfigError(
            f"mel filters {empty.tolist()} cover no FFT bin; "
            f"n_mels={cfg.n_mels} is too large for n_fft={cfg.n_fft}"
        )
    return fb


def mel_spectrogram(w: Waveform, cfg: FrontendConfig | None = None) -> MelSpectrogram:
    cfg = cfg or FrontendConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform is {w.sample_rate} Hz but frontend expects {cfg.sample_rate} Hz; resample first"
        )
    power = stft_magnitude(w, cfg) ** 2
    energy = power @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(energy, cfg.log_floor)), cfg)


def mel_to_magnitude(m: MelSpectrogram) -> np.ndarray:
    """Linear STFT magnitude estimate from log-mel values.

    Energy at the floor is treated as silence; the clamped pseudo-inverse of
    the filterbank maps the rest back to per-bin power.
    """
    cfg = m.config
    energy = np.maximum(np.exp(m.values) - cfg.log_floor, 0.0)
    power = energy @ np.linalg.pinv(mel_filterbank(cfg)).T
    return np.sqrt(np.maximum(power, 0.0))


def griffin_lim(m: MelSpectrogram, iters: int = 32) -> Waveform:
    """Reconstruct a waveform of ``(T - 1) * hop`` samples from a log-mel grid.

    Starts from zero phase, so the result is deterministic for any ``iters``.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    cfg = m.config
    mag = mel_to_magnitude(m)
    spec = mag.astype(np.complex128)
    x = istft(spec, cfg)
    for _ in range(iters):
        if x.shape[0] == 0:
            break
        rebuilt = stft(x, cfg)
        phase = np.exp(1j * np.angle(rebuilt))
        x = istft(mag * phase, cfg)
    return Waveform(np.clip(x, -1.0, 1.0), cfg.sample_rate)
