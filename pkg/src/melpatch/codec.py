"""End-to-end codec: waveform -> tokens -> bytes and back."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autoencoder import AutoencoderParams, decode_tokens, encode_patches
from .bitstream import CodecHeader, StreamEncoder, pack, unpack
from .errors import CodebookMismatchError, ConfigError
from .frontend import FrontendConfig, MelSpectrogram, Waveform, griffin_lim, mel_spectrogram, resample
from .patches import PatchGridSpec, patchify
from .quantizer import Codebook, TokenGrid


@dataclass
class MelPatchCodec:
    codebook: Codebook
    frontend: FrontendConfig = FrontendConfig()
    grid: PatchGridSpec = PatchGridSpec()
    griffin_lim_iters: int = 32

    def __post_init__(self):
        self.params = AutoencoderParams.from_codebook(self.codebook)
        patch = self.grid.patch_size
        in_dim = patch if self.params.identity_mode else self.params.patch_dim
        if in_dim != patch:
            raise ConfigError(f"codebook expects {in_dim}-element patches, grid gives {patch}")
        self._digest = self.codebook.digest()

    @property
    def pad_value(self) -> float:
        return self.grid.pad_for(self.frontend)

    def encode_row(self, block: np.ndarray) -> np.ndarray:
        """Tokens for one (patch_t, n_mels) block of mel frames."""
        g = self.grid
        cols = block.shape[1] // g.patch_f
        vecs = block.reshape(g.patch_t, cols, g.patch_f).transpose(1, 0, 2).reshape(cols, g.patch_size)
        return encode_patches(self.params, self.codebook, vecs)

    def encode_mel(self, m: MelSpectrogram) -> TokenGrid:
        # row by row, so batch and streaming encodes are bit-identical
        ps = patchify(m, self.grid)
        idx = np.empty((ps.rows, ps.cols), dtype=np.int64)
        for r in range(ps.rows):
            idx[r] = encode_patches(self.params, self.codebook, ps.patches[r])
        return TokenGrid(idx, m.n_frames)

    def stream_encoder(self) -> StreamEncoder:
        return StreamEncoder(
            self.encode_row, self.frontend.n_mels, self.grid.patch_t, self.grid.patch_f, self.pad_value
        )

    def header(self, original_t: int) -> CodecHeader:
        f = self.frontend
        return CodecHeader(
            sample_rate=f.sample_rate, n_mels=f.n_mels, hop=f.hop, win_length=f.win_length,
            patch_t=self.grid.patch_t, patch_f=self.grid.patch_f, k=self.codebook.k,
            codebook_id=self._digest, original_t=original_t,
        )

    def analyse(self, w: Waveform) -> MelSpectrogram:
        if w.sample_rate != self.frontend.sample_rate:
            w = resample(w, self.frontend.sample_rate)
        return mel_spectrogram(w, self.frontend)

    def encode(self, w: Waveform) -> bytes:
        m = self.analyse(w)
        return pack(self.encode_mel(m), self.header(m.n_frames))

    def decode_mel(self, g: TokenGrid) -> MelSpectrogram:
        return decode_tokens(self.params, self.codebook, g, self.frontend, self.grid)

    def decode(self, data: bytes) -> Waveform:
        """Bytes -> waveform of ``original_t * hop`` samples."""
        header, grid = unpack(data)
        if header.codebook_id != self._digest:
            raise CodebookMismatchError(
                f"stream was encoded with codebook {header.codebook_id.hex()}, "
                f"loaded codebook is {self._digest.hex()}"
            )
        codec = self.for_header(header)
        m = codec.decode_mel(grid)
        w = griffin_lim(m, self.griffin_lim_iters)
        n = header.original_t * header.hop
        samples = np.pad(w.samples, (0, max(0, n - len(w))))[:n]
        return Waveform(samples, header.sample_rate)

    def for_header(self, header: CodecHeader) -> "MelPatchCodec":
        """Same codec with frontend/grid geometry taken from a stream header."""
        f = self.frontend
        frontend = replace(
            f, sample_rate=header.sample_rate, n_mels=header.n_mels, hop=header.hop,
            win_length=header.win_length,
            fmax=f.fmax if f.sample_rate == header.sample_rate else None,
        )
        grid = replace(self.grid, patch_t=header.patch_t, patch_f=header.patch_f)
        if frontend == f and grid == self.grid:
            return self
        return MelPatchCodec(self.codebook, frontend, grid, self.griffin_lim_iters)
