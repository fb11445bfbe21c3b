"""Tiling a mel spectrogram into non-overlapping time x frequency patches.

Only the time axis is ever padded (with ``pad_value``, log-silence by
default).  Patch vectors are flattened frame-major: element ``r * patch_f + c``
holds frame ``r``, band ``c`` of the patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .frontend import FrontendConfig, MelSpectrogram


@dataclass(frozen=True)
class PatchGridSpec:
    patch_t: int = 4
    patch_f: int = 4
    pad_value: float | None = None  # None -> log(config.log_floor)

    def __post_init__(self):
        if self.patch_t < 1 or self.patch_f < 1:
            raise ShapeError("patch sizes must be >= 1")

    @property
    def patch_size(self) -> int:
        return self.patch_t * self.patch_f

    def pad_for(self, cfg: FrontendConfig) -> float:
        return cfg.log_min if self.pad_value is None else float(self.pad_value)


@dataclass(frozen=True)
class PatchSet:
    patches: np.ndarray  # (rows, cols, patch_t * patch_f)
    original_t: int
    config: FrontendConfig

    @property
    def rows(self) -> int:
        return self.patches.shape[0]

    @property
    def cols(self) -> int:
        return self.patches.shape[1]

    def flat(self) -> np.ndarray:
        """Patch vectors as an (rows * cols, patch_size) matrix, row-major over the grid."""
        return self.patches.reshape(-1, self.patches.shape[2])


def grid_dims(t: int, f: int, spec: PatchGridSpec | None = None) -> tuple[int, int]:
    spec = spec or PatchGridSpec()
    if f % spec.patch_f:
        raise ShapeError(f"{f} bands not divisible by patch_f={spec.patch_f}")
    return math.ceil(t / spec.patch_t), f // spec.patch_f


def patchify(m: MelSpectrogram, spec: PatchGridSpec | None = None) -> PatchSet:
    spec = spec or PatchGridSpec()
    t, f = m.values.shape
    rows, cols = grid_dims(t, f, spec)
    padded = np.full((rows * spec.patch_t, f), spec.pad_for(m.config))
    padded[:t] = m.values
    blocks = padded.reshape(rows, spec.patch_t, cols, spec.patch_f).transpose(0, 2, 1, 3)
    return PatchSet(blocks.reshape(rows, cols, spec.patch_size).copy(), t, m.config)


def unpatchify(p: PatchSet, spec: PatchGridSpec | None = None) -> MelSpectrogram:
    spec = spec or PatchGridSpec()
    rows, cols, size = p.patches.shape
    if size != spec.patch_size:
        raise ShapeError(f"patch vectors have length {size}, spec expects {spec.patch_size}")
    if not (rows - 1) * spec.patch_t < p.original_t <= rows * spec.patch_t:
        if not (rows == 0 and p.original_t == 0):
            raise ShapeError(f"{rows} patch rows cannot hold original_t={p.original_t} frames")
    blocks = p.patches.reshape(rows, cols, spec.patch_t, spec.patch_f).transpose(0, 2, 1, 3)
    values = blocks.reshape(rows * spec.patch_t, cols * spec.patch_f)
    return MelSpectrogram(values[: p.original_t].copy(), p.config)


def tokens_per_second(cfg: FrontendConfig, spec: PatchGridSpec | None = None) -> float:
    """Latent grid cells per second of audio, e.g. 125 / 4 * 20 = 625 at defaults."""
    spec = spec or PatchGridSpec()
    _, cols = grid_dims(0, cfg.n_mels, spec)
    return cfg.sample_rate / (cfg.hop * spec.patch_t) * cols
