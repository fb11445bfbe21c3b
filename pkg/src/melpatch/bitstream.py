"""Token-grid serialization, bitrate arithmetic and the streaming encoder.

Stream layout (``.mpc``)::

    offset size  field
    0      4     magic b"MPC1"
    4      2     version (=1)
    6      4     sample_rate
    10     2     n_mels
    12     2     hop
    14     2     win_length
    16     2     patch_t
    18     2     patch_f
    20     4     k (codebook size)
    24     8     codebook_id (SHA-256 prefix of the codebook file)
    32     4     original_t (mel frames before padding)
    36     4     reserved, zero
    40     ...   indices, time-major, ceil(log2 k) bits each, MSB first,
                 last byte zero-padded

All header integers are unsigned little-endian.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CorruptStreamError, FormatError, ShapeError, TruncatedStreamError
from .quantizer import TokenGrid, bits_per_index

MAGIC = b"MPC1"
VERSION = 1
HEADER_FORMAT = "<4sHIHHHHHI8sI4s"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
assert HEADER_SIZE == 40


@dataclass(frozen=True)
class CodecHeader:
    sample_rate: int = 16000
    n_mels: int = 80
    hop: int = 128
    win_length: int = 512
    patch_t: int = 4
    patch_f: int = 4
    k: int = 4096
    codebook_id: bytes = bytes(8)
    original_t: int = 0
    version: int = VERSION
    reserved: bytes = field(default=bytes(4), repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise FormatError("codebook size k must be >= 1")
        if self.original_t < 0:
            raise FormatError("original_t must be >= 0")
        if len(self.codebook_id) != 8:
            raise FormatError("codebook_id must be 8 bytes")
        if self.patch_t < 1 or self.patch_f < 1 or self.n_mels % self.patch_f:
            raise FormatError(
                f"n_mels={self.n_mels} must be a multiple of patch_f={self.patch_f}"
            )

    @property
    def grid_shape(self) -> tuple[int, int]:
        return math.ceil(self.original_t / self.patch_t), self.n_mels // self.patch_f

    @property
    def bits_per_index(self) -> int:
        return bits_per_index(self.k)

    def bitrate_spec(self) -> "BitrateSpec":
        return BitrateSpec(self.sample_rate, self.hop, self.patch_t, self.patch_f, self.n_mels, self.k)

    def to_bytes(self) -> bytes:
        return struct.pack(
            HEADER_FORMAT, MAGIC, self.version, self.sample_rate, self.n_mels, self.hop,
            self.win_length, self.patch_t, self.patch_f, self.k, bytes(self.codebook_id),
            self.original_t, bytes(self.reserved),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodecHeader":
        if len(data) < HEADER_SIZE:
            raise TruncatedStreamError(f"stream has {len(data)} bytes, header needs {HEADER_SIZE}")
        fields = struct.unpack(HEADER_FORMAT, data[:HEADER_SIZE])
        magic, version, sr, n_mels, hop, win, pt, pf, k, cid, orig, reserved = fields
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"unsupported stream version {version}")
        if reserved != bytes(4):
            raise CorruptStreamError("reserved header bytes are not zero")
        return cls(sr, n_mels, hop, win, pt, pf, k, cid, orig, version, reserved)


@dataclass(frozen=True)
class BitrateSpec:
    sample_rate: int = 16000
    hop: int = 128
    downsample_t: int = 4
    downsample_f: int = 4
    n_mels: int = 80
    k: int = 4096

    def __post_init__(self):
        for name in ("sample_rate", "hop", "downsample_t", "downsample_f", "n_mels", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_mels % self.downsample_f:
            raise ShapeError(f"n_mels={self.n_mels} not divisible by downsample_f={self.downsample_f}")

    @property
    def tokens_per_second(self) -> float:
        return self.sample_rate / (self.hop * self.downsample_t) * (self.n_mels // self.downsample_f)


def bitrate_bps(spec: BitrateSpec) -> float:
    """Token rate times bits per token (625 * 12 = 7500 at the defaults)."""
    return spec.tokens_per_second * bits_per_index(spec.k)


def payload_size(rows: int, cols: int, k: int) -> int:
    return (rows * cols * bits_per_index(k) + 7) // 8


def pack(g: TokenGrid, header: CodecHeader) -> bytes:
    rows, cols = header.grid_shape
    if g.indices.shape != (rows, cols):
        raise ShapeError(
            f"grid {g.indices.shape} does not match header geometry {(rows, cols)} "
            f"(original_t={header.original_t})"
        )
    idx = g.indices.ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= header.k):
        raise ValueError(f"token index out of range for k={header.k}")
    nbits = header.bits_per_index
    shifts = np.arange(nbits - 1, -1, -1, dtype=np.int64)
    bits = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
    return header.to_bytes() + np.packbits(bits.ravel()).tobytes()


def unpack(data: bytes) -> tuple[CodecHeader, TokenGrid]:
    header = CodecHeader.from_bytes(data)
    rows, cols = header.grid_shape
    nbits = header.bits_per_index
    expected = payload_size(rows, cols, header.k)
    payload = data[HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedStreamError(f"payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise CorruptStreamError(f"{len(payload) - expected} unexpected trailing bytes")
    n = rows * cols
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    if bits[n * nbits :].any():
        raise CorruptStreamError("nonzero padding bits after the last index")
    if nbits:
        weights = 1 << np.arange(nbits - 1, -1, -1, dtype=np.int64)
        idx = bits[: n * nbits].reshape(n, nbits).astype(np.int64) @ weights
    else:
        idx = np.zeros(n, dtype=np.int64)
    if idx.size and idx.max() >= header.k:
        raise CorruptStreamError(f"token index {int(idx.max())} >= k={header.k}")
    return header, TokenGrid(idx.reshape(rows, cols), header.original_t)


class StreamEncoder:
    """Incremental encoder: one token row out per ``patch_t`` mel frames in.

    ``encode_row`` maps a (patch_t, n_mels) block of log-mel frames to the
    ``n_mels // patch_f`` token indices of that row.  Owned by one thread at a
    time.
    """

    def __init__(
        self,
        encode_row: Callable[[np.ndarray], np.ndarray],
        n_mels: int,
        patch_t: int = 4,
        patch_f: int = 4,
        pad_value: float = math.log(1e-5),
    ):
        if n_mels % patch_f:
            raise ShapeError(f"n_mels={n_mels} not divisible by patch_f={patch_f}")
        self.encode_row = encode_row
        self.n_mels = n_mels
        self.patch_t = patch_t
        self.cols = n_mels // patch_f
        self.pad_value = pad_value
        self._pending = np.empty((0, n_mels))
        self.frames_seen = 0
        self.rows_emitted = 0

    def push_frames(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[None, :]
        if frames.ndim != 2 or frames.shape[1] != self.n_mels:
            raise ShapeError(f"expected frames with {self.n_mels} bands, got shape {frames.shape}")
        self.frames_seen += frames.shape[0]
        buf = np.concatenate([self._pending, frames])
        n_rows = buf.shape[0] // self.patch_t
        out = np.empty((n_rows, self.cols), dtype=np.int64)
        for r in range(n_rows):
            out[r] = self.encode_row(buf[r * self.patch_t : (r + 1) * self.patch_t])
        self._pending = buf[n_rows * self.patch_t :]
        self.rows_emitted += n_rows
        return out

    def flush(self) -> np.ndarray:
        if self._pending.shape[0] == 0:
            return np.empty((0, self.cols), dtype=np.int64)
        block = np.full((self.patch_t, self.n_mels), self.pad_value)
        block[: self._pending.shape[0]] = self._pending
        self._pending = np.empty((0, self.n_mels))
        self.rows_emitted += 1
        return np.asarray(self.encode_row(block), dtype=np.int64)[None, :]
