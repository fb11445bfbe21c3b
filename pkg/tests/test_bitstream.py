import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melpatch.bitstream import (
    HEADER_SIZE,
    BitrateSpec,
    CodecHeader,
    StreamEncoder,
    bitrate_bps,
    pack,
    payload_size,
    unpack,
)
from melpatch.errors import CorruptStreamError, FormatError, ShapeError, TruncatedStreamError
from melpatch.frontend import MelSpectrogram
from melpatch.quantizer import TokenGrid

GOLDEN = Path(__file__).parent / "data" / "golden_k4096_tokens_1_2.mpc"


def golden_header():
    return CodecHeader(n_mels=8, codebook_id=bytes(range(8)), original_t=4)


def bitstring_oracle(indices, nbits):
    bits = "".join(format(int(i), f"0{nbits}b") for i in indices)
    bits += "0" * (-len(bits) % 8)
    return bytes(int(bits[i : i + 8], 2) for i in range(0, len(bits), 8))


class TestBitrate:
    def test_defaults(self):
        assert bitrate_bps(BitrateSpec(16000, 128, 4, 4, 80, 4096)) == 7500.0

    def test_variants(self):
        assert bitrate_bps(BitrateSpec(16000, 128, 4, 4, 80, 1024)) == 6250.0
        assert bitrate_bps(BitrateSpec(8000, 128, 4, 4, 80, 4096)) == 3750.0

    def test_header_spec(self):
        assert bitrate_bps(CodecHeader().bitrate_spec()) == 7500.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            BitrateSpec(hop=0)
        with pytest.raises(ShapeError):
            BitrateSpec(n_mels=81)


class TestPack:
    def test_golden_file(self):
        data = pack(TokenGrid([[1, 2]], 4), golden_header())
        assert data == GOLDEN.read_bytes()
        assert data[HEADER_SIZE:] == b"\x00\x10\x02"

    def test_all_ones(self):
        data = pack(TokenGrid([[4095]], 4), CodecHeader(n_mels=4, original_t=4))
        assert data[HEADER_SIZE:] == b"\xff\xf0"

    def test_header_size(self):
        assert len(CodecHeader().to_bytes()) == 40

    def test_matches_bitstring_oracle(self):
        rng = np.random.default_rng(0)
        for k in (2, 3, 5, 100, 1024, 4096):
            idx = rng.integers(0, k, size=(3, 5))
            h = CodecHeader(n_mels=20, k=k, original_t=12)
            assert pack(TokenGrid(idx), h)[HEADER_SIZE:] == bitstring_oracle(idx.ravel(), (k - 1).bit_length())

    def test_geometry_mismatch(self):
        with pytest.raises(ShapeError):
            pack(TokenGrid(np.zeros((2, 20), int)), CodecHeader(original_t=4))

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            pack(TokenGrid([[4096]]), CodecHeader(n_mels=4, original_t=1))


class TestUnpack:
    def test_golden(self):
        h, g = unpack(GOLDEN.read_bytes())
        assert h == golden_header()
        assert g == TokenGrid([[1, 2]], 4)

    def test_full_grid(self):
        rng = np.random.default_rng(1)
        g = TokenGrid(rng.integers(0, 4096, size=(32, 20)), 125)
        h = CodecHeader(original_t=125, codebook_id=b"abcdefgh")
        data = pack(g, h)
        assert len(data) == HEADER_SIZE + payload_size(32, 20, 4096) == HEADER_SIZE + 960
        h2, g2 = unpack(data)
        assert h2 == h and g2 == g and (g2.rows, g2.cols) == (32, 20)

    def test_truncated(self):
        data = GOLDEN.read_bytes()
        with pytest.raises(TruncatedStreamError):
            unpack(data[:-1])
        with pytest.raises(TruncatedStreamError):
            unpack(data[:20])

    def test_bad_magic(self):
        data = bytearray(GOLDEN.read_bytes())
        data[0] ^= 0xFF
        with pytest.raises(FormatError, match="magic"):
            unpack(bytes(data))

    def test_trailing_bytes(self):
        with pytest.raises(CorruptStreamError):
            unpack(GOLDEN.read_bytes() + b"\x00")

    def test_pad_bits(self):
        # one 12-bit token leaves 4 pad bits in the last byte
        one = bytearray(pack(TokenGrid([[7]], 4), CodecHeader(n_mels=4, original_t=4)))
        one[-1] |= 0x01
        with pytest.raises(CorruptStreamError, match="padding"):
            unpack(bytes(one))

    def test_index_beyond_k(self):
        h = CodecHeader(n_mels=4, k=5, original_t=1)
        data = bytearray(pack(TokenGrid([[4]]), h))
        data[-1] = 0b11100000  # 7 >= 5
        with pytest.raises(CorruptStreamError):
            unpack(bytes(data))

    def test_reserved(self):
        data = bytearray(GOLDEN.read_bytes())
        data[37] = 1
        with pytest.raises(CorruptStreamError):
            unpack(bytes(data))

    @settings(max_examples=300, deadline=None)
    @given(
        k=st.integers(2, 4096),
        cols=st.integers(1, 20),
        pf=st.sampled_from([1, 2, 4]),
        pt=st.integers(1, 6),
        original_t=st.integers(0, 40),
        seed=st.integers(0, 2**31 - 1),
        cid=st.binary(min_size=8, max_size=8),
    )
    def test_roundtrip_property(self, k, cols, pf, pt, original_t, seed, cid):
        h = CodecHeader(
            sample_rate=16000, n_mels=cols * pf, patch_t=pt, patch_f=pf, k=k,
            codebook_id=cid, original_t=original_t,
        )
        rows = math.ceil(original_t / pt)
        g = TokenGrid(np.random.default_rng(seed).integers(0, k, size=(rows, cols)), original_t)
        assert unpack(pack(g, h)) == (h, g)


def toy_row_encoder(block):
    """Deterministic stand-in for a codec row: quantised band means."""
    cols = block.shape[1] // 4
    means = block.reshape(4, cols, 4).mean(axis=(0, 2))
    return (np.floor(means * 10) % 64).astype(np.int64)


class TestStreamEncoder:
    def test_latency(self):
        enc = StreamEncoder(toy_row_encoder, 80)
        assert enc.push_frames(np.zeros((3, 80))).shape == (0, 20)
        out = enc.push_frames(np.zeros((1, 80)))
        assert out.shape == (1, 20)

    def test_flush_empty(self):
        assert StreamEncoder(toy_row_encoder, 80).flush().shape == (0, 20)

    def test_wrong_bands(self):
        with pytest.raises(ShapeError):
            StreamEncoder(toy_row_encoder, 80).push_frames(np.zeros((4, 40)))

    def test_batch_equivalence_with_codec(self, toy_codec):
        rng = np.random.default_rng(2)
        for t in (1, 3, 4, 5, 125, 126, 131):
            m = MelSpectrogram(rng.normal(-4.0, 3.0, size=(t, 80)), toy_codec.frontend)
            batch = toy_codec.encode_mel(m).indices
            enc = toy_codec.stream_encoder()
            rows, pos = [], 0
            while pos < t:
                n = int(rng.integers(1, 9))
                rows.append(enc.push_frames(m.values[pos : pos + n]))
                pos += n
            rows.append(enc.flush())
            streamed = np.concatenate(rows)
            assert streamed.shape == (math.ceil(t / 4), 20)
            np.testing.assert_array_equal(streamed, batch)

    def test_125_frames(self, toy_codec):
        m = MelSpectrogram(np.random.default_rng(3).normal(-4.0, 3.0, size=(125, 80)), toy_codec.frontend)
        enc = toy_codec.stream_encoder()
        first = enc.push_frames(m.values)
        last = enc.flush()
        assert first.shape[0] + last.shape[0] == 32
        np.testing.assert_array_equal(np.concatenate([first, last]), toy_codec.encode_mel(m).indices)
