"""
Training a small patch codebook
===============================

Desk-scale version of the codec: a per-patch MLP encoder and decoder
around a single codebook.  The codebook starts from k-means on the initial
latents, then everything is refined by AdamW on the L1 reconstruction
plus the codebook and commitment terms.
"""

import numpy as np

from melpatch import MelPatchCodec, mel_spectrogram
from melpatch.autoencoder import TrainConfig, batch_loss, codebook_perplexity, train
from melpatch.synth import speech_like

mels = [mel_spectrogram(speech_like(i, 1.5)) for i in range(8)]
cfg = TrainConfig(lr_peak=3e-4, warmup_steps=20, total_steps=200, batch_size=8)


def show(step, params, cb, rep):
    if step % 40 == 0 or step == cfg.total_steps - 1:
        print(f"step {step:4d}  total {rep.total:.4f}  recon {rep.recon_l1:.4f}  commit {rep.commitment_loss:.4f}")


result = train(mels, k=64, cfg=cfg, hidden=64, latent=16, kmeans_iters=25, post_step=show)
final = batch_loss(result.params, result.codebook, mels)
print(f"\nafter training: total {final.total:.4f}, dead codes reseeded {result.reseeded}")
print(f"perplexity: {codebook_perplexity(result.params, result.codebook, mels):.2f} of 64")

# The codebook file carries the projection weights, so it is all a decoder needs.
codec = MelPatchCodec(result.to_codebook())
data = codec.encode(speech_like(100, 1.0))
print(f"held-out second: {len(data)} bytes, id {codec.codebook.digest().hex()}")
recon = codec.decode_mel(codec.encode_mel(mel_spectrogram(speech_like(100, 1.0))))
print("decoded mel shape:", recon.values.shape, "finite:", bool(np.isfinite(recon.values).all()))
