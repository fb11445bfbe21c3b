"""The single shared codebook.

Nearest-neighbour search returns the exact squared-Euclidean minimizer with
ties going to the lowest index; the same routine backs encoding, training assignment and the
k-means initializer, so every path agrees on which code a vector maps to.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import FormatError, ShapeError, TruncatedStreamError

CODEBOOK_MAGIC = b"MPCB"
CODEBOOK_VERSION = 1

# (n, K) distance matrix budget per chunk
_SCAN_BUDGET = 1 << 18


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray  # (K, D)
    projection: tuple[np.ndarray, ...] | None = None
    ema_counts: np.ndarray | None = None
    ema_sums: np.ndarray | None = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise ShapeError(f"codebook entries must be (K>=1, D>=1), got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("codebook entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @property
    def bits_per_index(self) -> int:
        return bits_per_index(self.k)

    def to_bytes(self) -> bytes:
        out = bytearray(CODEBOOK_MAGIC)
        out += struct.pack("<BIH", CODEBOOK_VERSION, self.k, self.dim)
        out += self.entries.astype("<f4").tobytes()
        if self.projection is None:
            out += b"\x00"
        else:
            out += struct.pack("<BB", 1, len(self.projection))
            for tensor in self.projection:
                tensor = np.asarray(tensor)
                out += struct.pack("<B", tensor.ndim)
                out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
                out += tensor.astype("<f4").tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Codebook":
        reader = _Reader(data)
        if reader.take(4) != CODEBOOK_MAGIC:
            raise FormatError("not a codebook file (bad magic)")
        version, k, dim = reader.unpack("<BIH")
        if version != CODEBOOK_VERSION:
            raise FormatError(f"unsupported codebook version {version}")
        entries = reader.floats(k * dim).reshape(k, dim)
        (flag,) = reader.unpack("<B")
        projection = None
        if flag == 1:
            (count,) = reader.unpack("<B")
            tensors = []
            for _ in range(count):
                (ndim,) = reader.unpack("<B")
                shape = reader.unpack(f"<{ndim}I")
                tensors.append(reader.floats(math.prod(shape)).reshape(shape))
            projection = tuple(tensors)
        elif flag != 0:
            raise FormatError(f"bad projection flag {flag}")
        if reader.remaining:
            raise FormatError(f"{reader.remaining} trailing bytes after codebook")
        return cls(entries, projection)

    def digest(self) -> bytes:
        """First 8 bytes of the SHA-256 of the serialized codebook."""
        return hashlib.sha256(self.to_bytes()).digest()[:8]

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_bytes(Path(path).read_bytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise TruncatedStreamError(f"need {n} bytes at offset {self.pos}, have {self.remaining}")
        chunk = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64)


@dataclass(frozen=True)
class TokenGrid:
    indices: np.ndarray  # (rows, cols) integer codes, time-major
    original_t: int | None = None

    def __post_init__(self):
        indices = np.asarray(self.indices)
        if indices.ndim != 2:
            raise ShapeError(f"token grid must be 2-D, got shape {indices.shape}")
        if indices.size and not np.issubdtype(indices.dtype, np.integer):
            raise ShapeError("token indices must be integers")
        object.__setattr__(self, "indices", indices.astype(np.int64))

    @property
    def rows(self) -> int:
        return self.indices.shape[0]

    @property
    def cols(self) -> int:
        return self.indices.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return self.original_t == other.original_t and np.array_equal(self.indices, other.indices)


class VqLossTerms(NamedTuple):
    codebook_term: float
    commitment_term: float
    beta: float


class Utilization(NamedTuple):
    histogram: np.ndarray
    perplexity: float
    dead_count: int


def bits_per_index(k: int) -> int:
    if k < 1:
        raise ValueError("codebook size must be >= 1")
    return (k - 1).bit_length()


def assign(entries: np.ndarray, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest entry for each row of ``vectors``: (indices, squared distances)."""
    entries = np.asarray(entries, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != entries.shape[1]:
        raise ShapeError(
            f"vectors of shape {vectors.shape} do not match codebook dimension {entries.shape[1]}"
        )
    n = vectors.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    if n == 0:
        return idx, dist
    e_sq = (entries**2).sum(axis=1)
    chunk = max(1, _SCAN_BUDGET // entries.shape[0])
    for start in range(0, n, chunk):
        block = vectors[start : start + chunk]
        # cheap expanded distances pick candidates; the margin covers their rounding error
        v_sq = (block**2).sum(axis=1)
        approx = v_sq[:, None] - 2.0 * (block @ entries.T) + e_sq[None, :]
        margin = 1e-9 * (v_sq + e_sq.max()) + 1e-300
        rows, cols = np.nonzero(approx <= approx.min(axis=1)[:, None] + margin[:, None])
        exact = ((block[rows] - entries[cols]) ** 2).sum(axis=1)
        order = np.lexsort((cols, exact, rows))  # by row, then distance, then lowest index
        first = order[np.r_[True, rows[order][1:] != rows[order][:-1]]]
        idx[start : start + chunk] = cols[first]
        dist[start : start + chunk] = exact[first]
    return idx, dist


def nearest(cb: Codebook, v) -> tuple[int, float]:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cb.dim,):
        raise ShapeError(f"expected a {cb.dim}-vector, got shape {v.shape}")
    idx, dist = assign(cb.entries, v[None, :])
    return int(idx[0]), float(dist[0])


def quantize(cb: Codebook, latents, original_t: int | None = None) -> TokenGrid:
    """Map a (rows, cols, D) grid of latent vectors to code indices."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 3 or latents.shape[2] != cb.dim:
        raise ShapeError(f"expected (rows, cols, {cb.dim}) latents, got {latents.shape}")
    rows, cols, _ = latents.shape
    idx, _ = assign(cb.entries, latents.reshape(-1, cb.dim))
    return TokenGrid(idx.reshape(rows, cols), original_t)


def dequantize(cb: Codebook, g: TokenGrid) -> np.ndarray:
    idx = g.indices
    if idx.size and (idx.min() < 0 or idx.max() >= cb.k):
        bad = idx[(idx < 0) | (idx >= cb.k)]
        raise FormatError(f"token index {int(bad[0])} out of range for codebook of size {cb.k}")
    return cb.entries[idx]


def vq_loss(z, e, beta: float = 0.25) -> VqLossTerms:
    """Codebook and commitment terms for one latent/code pair.

    Both terms have the value ||z - e||^2 (the commitment one scaled by
    ``beta``); stop-gradient only decides which side each one trains.
    """
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    sq = float(np.sum((z - e) ** 2))
    return VqLossTerms(sq, beta * sq, beta)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def kmeans_plusplus(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = samples.shape[0]
    centers = np.empty((k, samples.shape[1]))
    centers[0] = samples[rng.integers(n)]
    closest = ((samples - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(n, p=closest / total)
        else:
            pick = rng.integers(n)
        centers[i] = samples[pick]
        closest = np.minimum(closest, ((samples - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(
    samples,
    k: int,
    max_iters: int = 50,
    seed: int = 0,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd's algorithm from a k-means++ start.

    Returns ``(centroids, labels, inertia_history)``; ``inertia_history[i]``
    is the inertia of the i-th assignment step.  Clusters left empty are
    re-seeded with the sample farthest from its own centroid.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ShapeError("samples must be an (n, D) matrix")
    if k < 1 or samples.shape[0] < k:
        raise ValueError(f"need at least k={k} samples, got {samples.shape[0]}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(samples, k, rng)
    history = []
    labels, dist = assign(centroids, samples)
    history.append(float(dist.sum()))
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, samples)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            own = ((samples - new[labels]) ** 2).sum(axis=1)
            for j in empty:
                far = int(np.argmax(own))
                new[j] = samples[far]
                own[far] = -1.0
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels, dist = assign(centroids, samples)
        history.append(float(dist.sum()))
        if shift < tol:
            break
    return centroids, labels, history


def kmeans_fit(samples, k: int, max_iters: int = 50, seed: int = 0, tol: float = 1e-6) -> Codebook:
    centroids, _, _ = kmeans(samples, k, max_iters=max_iters, seed=seed, tol=tol)
    return Codebook(centroids)


# ---------------------------------------------------------------------------
# EMA updates and diagnostics
# ---------------------------------------------------------------------------


def ema_update(
    cb: Codebook,
    vectors,
    assignments,
    gamma: float = 0.99,
    epsilon: float = 1e-5,
) -> Codebook:
    """Exponential-moving-average codebook update.

    Running counts start at 1 and running sums at the entries themselves, so
    an untouched codebook is a fixed point.  Entries that received no vector
    in this batch keep their value.
    """
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, cb.dim)
    assignments = np.asarray(assignments, dtype=np.int64).reshape(-1)
    counts = np.ones(cb.k) if cb.ema_counts is None else cb.ema_counts
    sums = cb.entries.copy() if cb.ema_sums is None else cb.ema_sums

    batch_counts = np.bincount(assignments, minlength=cb.k).astype(np.float64)
    batch_sums = np.zeros_like(cb.entries)
    np.add.at(batch_sums, assignments, vectors)

    counts = gamma * counts + (1.0 - gamma) * batch_counts
    sums = gamma * sums + (1.0 - gamma) * batch_sums
    entries = cb.entries.copy()
    hit = batch_counts > 0
    entries[hit] = sums[hit] / (counts[hit, None] + epsilon)
    return replace(cb, entries=entries, ema_counts=counts, ema_sums=sums)


def utilization(history: Iterable[TokenGrid], k: int) -> Utilization:
    """Code-usage histogram, perplexity (exp of usage entropy) and dead-code count."""
    grids = list(history)
    if not grids:
        raise ValueError("utilization needs at least one token grid")
    hist = np.zeros(k, dtype=np.int64)
    for g in grids:
        hist += np.bincount(g.indices.ravel(), minlength=k)[:k]
    total = hist.sum()
    if total == 0:
        return Utilization(hist, 1.0, k)
    p = hist[hist > 0] / total
    entropy = float(-(p * np.log(p)).sum())
    return Utilization(hist, math.exp(entropy), int((hist == 0).sum()))
