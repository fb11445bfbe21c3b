"""melpatch: a speech codec that quantizes 4x4 log-mel patches with one shared codebook."""

__version__ = "0.1.0"

from .bitstream import BitrateSpec, CodecHeader, StreamEncoder, bitrate_bps, pack, unpack
from .codec import MelPatchCodec
from .frontend import (
    FrontendConfig,
    MelSpectrogram,
    Waveform,
    griffin_lim,
    load_wav,
    mel_filterbank,
    mel_spectrogram,
    resample,
    stft_magnitude,
    write_wav,
)
from .patches import PatchGridSpec, PatchSet, grid_dims, patchify, unpatchify
from .quantizer import (
    Codebook,
    TokenGrid,
    dequantize,
    ema_update,
    kmeans_fit,
    nearest,
    quantize,
    utilization,
    vq_loss,
)
