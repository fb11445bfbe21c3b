import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from melpatch.errors import ConfigError, FormatError
from melpatch.frontend import (
    FrontendConfig,
    MelSpectrogram,
    Waveform,
    griffin_lim,
    load_wav,
    mel_center_frequencies,
    mel_filterbank,
    mel_spectrogram,
    resample,
    stft_magnitude,
    write_wav,
)
from melpatch.synth import tone

CFG = FrontendConfig()


def direct_dft_peak(frame: np.ndarray) -> int:
    """Index of the largest-magnitude bin, DFT computed from its definition."""
    n = frame.shape[0]
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * t / n)
    return int(np.argmax(np.abs(basis @ frame)))


class TestWav:
    def test_pcm16_full_scale(self, tmp_path):
        path = tmp_path / "a.wav"
        wavfile.write(path, 16000, np.array([32767, -32768, 0], dtype=np.int16))
        w = load_wav(path)
        assert w.samples[0] == pytest.approx(32767 / 32768)
        assert w.samples[1] == -1.0
        assert w.sample_rate == 16000

    def test_stereo_averaged(self, tmp_path):
        path = tmp_path / "s.wav"
        frames = np.tile(np.array([[0.5, -0.5]], dtype=np.float32), (10, 1))
        wavfile.write(path, 16000, frames)
        w = load_wav(path)
        np.testing.assert_array_equal(w.samples, np.zeros(10))

    def test_one_second(self, tmp_path):
        path = tmp_path / "t.wav"
        write_wav(path, tone(440.0, 1.0))
        w = load_wav(path)
        assert len(w) == 16000 and w.sample_rate == 16000

    def test_float32_roundtrip_values(self, tmp_path):
        path = tmp_path / "f.wav"
        data = np.linspace(-1, 1, 101).astype(np.float32)
        wavfile.write(path, 8000, data)
        np.testing.assert_allclose(load_wav(path).samples, data, atol=0)

    def test_errors(self, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"RIFF\x00\x00\x00\x00JUNKdata")
        with pytest.raises(FormatError):
            load_wav(bad)
        empty = tmp_path / "empty.wav"
        wavfile.write(empty, 16000, np.zeros(0, dtype=np.int16))
        with pytest.raises(FormatError):
            load_wav(empty)
        u8 = tmp_path / "u8.wav"
        wavfile.write(u8, 16000, np.zeros(10, dtype=np.uint8))
        with pytest.raises(FormatError, match="unsupported"):
            load_wav(u8)


class TestResample:
    def test_noop(self):
        w = tone(300.0, 0.1)
        np.testing.assert_array_equal(resample(w, 16000).samples, w.samples)

    def test_length(self):
        assert len(resample(tone(300.0, 1.0, 48000), 16000)) == 16000
        assert len(resample(Waveform(np.zeros(1001), 44100), 16000)) == round(1001 * 16000 / 44100)

    def test_sine_peak_bin(self):
        out = resample(tone(440.0, 1.0, 48000), 16000)
        frame = out.samples[4000:4512]
        # 440 Hz at 31.25 Hz per bin -> bin 14
        assert direct_dft_peak(frame) == round(440 / (16000 / 512))

    def test_passband_accuracy(self):
        out = resample(tone(440.0, 1.0, 48000), 16000)
        ref = tone(440.0, 1.0, 16000)
        np.testing.assert_allclose(out.samples[1000:-1000], ref.samples[1000:-1000], atol=1e-4)


class TestStft:
    def test_silence(self):
        assert not stft_magnitude(Waveform(np.zeros(4000), 16000), CFG).any()

    def test_frame_count(self):
        assert stft_magnitude(Waveform(np.zeros(16000), 16000), CFG).shape == (126, 257)
        assert stft_magnitude(Waveform(np.zeros(100), 16000), CFG).shape == (1, 257)

    def test_peak_bin_matches_direct_dft(self):
        w = tone(1000.0, 0.5)
        mag = stft_magnitude(w, CFG)
        frame = w.samples[2048 - 256 : 2048 + 256] * np.hanning(513)[:-1]
        assert direct_dft_peak(frame) == 32
        assert int(np.argmax(mag[16])) == 32


class TestMel:
    def test_filterbank_shape_and_coverage(self):
        fb = mel_filterbank(CFG)
        assert fb.shape == (80, 257)
        assert (fb >= 0).all()
        assert (fb.sum(axis=1) > 0).all()
        assert np.all(np.diff(mel_center_frequencies(CFG)) > 0)

    def test_htk_centres(self):
        # first centre: 1/81 of the way to mel(8000) on the HTK scale
        top = 2595 * math.log10(1 + 8000 / 700)
        first = 700 * (10 ** (top / 81 / 2595) - 1)
        assert mel_center_frequencies(CFG)[0] == pytest.approx(first)

    def test_degenerate(self):
        with pytest.raises(ConfigError):
            mel_filterbank(FrontendConfig(n_fft=64, win_length=64, hop=16, n_mels=80))

    def test_silence_is_floor(self):
        m = mel_spectrogram(Waveform(np.zeros(16000), 16000), CFG)
        np.testing.assert_array_equal(m.values, np.full((126, 80), math.log(1e-5)))

    def test_shape(self):
        assert mel_spectrogram(tone(440.0, 1.0), CFG).values.shape == (126, 80)

    def test_noise_finite_above_floor(self):
        rng = np.random.default_rng(0)
        m = mel_spectrogram(Waveform(np.clip(rng.normal(0, 0.3, 16000), -1, 1), 16000), CFG)
        assert np.isfinite(m.values).all() and (m.values >= math.log(1e-5)).all()

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            mel_spectrogram(tone(440.0, 0.1, 8000), CFG)

    def test_deterministic(self):
        w = tone(523.0, 0.3)
        a, b = mel_spectrogram(w, CFG), mel_spectrogram(w, CFG)
        assert a.values.tobytes() == b.values.tobytes()

    @settings(max_examples=25, deadline=None)
    @given(st.floats(1.01, 20.0), st.integers(0, 2**31 - 1))
    def test_energy_monotone(self, alpha, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-0.04, 0.04, 2048)
        base = mel_spectrogram(Waveform(x, 16000), CFG).values
        louder = mel_spectrogram(Waveform(alpha * x, 16000), CFG).values
        above = base > math.log(1e-5)
        assert np.all(louder[above] >= base[above])


def reanalysis_error(m: MelSpectrogram, iters: int) -> float:
    return float(np.abs(mel_spectrogram(griffin_lim(m, iters), m.config).values - m.values).mean())


class TestGriffinLim:
    def test_silence(self):
        m = MelSpectrogram(np.full((50, 80), math.log(1e-5)), CFG)
        assert np.abs(griffin_lim(m, 16).samples).max() < 1e-3

    def test_length_and_clip(self):
        m = mel_spectrogram(tone(440.0, 1.0, amplitude=0.9), CFG)
        w = griffin_lim(m, 4)
        assert len(w) == (m.n_frames - 1) * 128
        assert np.abs(w.samples).max() <= 1.0

    def test_zero_iters_deterministic(self):
        m = mel_spectrogram(tone(440.0, 0.5), CFG)
        assert griffin_lim(m, 0).samples.tobytes() == griffin_lim(m, 0).samples.tobytes()

    def test_beats_silence(self):
        m = mel_spectrogram(tone(440.0, 1.0), CFG)
        silence = float(np.abs(m.values - math.log(1e-5)).mean())
        assert reanalysis_error(m, 32) < silence

    def test_error_non_increasing_in_iters(self):
        m = mel_spectrogram(tone(440.0, 1.0), CFG)
        errs = [reanalysis_error(m, n) for n in (0, 8, 32)]
        assert errs[0] >= errs[1] >= errs[2]
