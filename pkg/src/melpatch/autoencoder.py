"""Per-patch encoder/decoder around the codebook, with training.

Each flattened patch ``p`` goes through ``z = W2 tanh(W1 p + b1) + b2``, is
snapped to its nearest code ``e``, and is rebuilt as
``V2 tanh(V1 e + c1) + c2``.  In identity mode both maps are the identity and
the codebook quantizes raw patches.

Gradients are written out by hand:

* reconstruction (mean absolute error over real, unpadded cells) reaches the
  decoder, and the encoder through a straight-through copy of the decoder
  input gradient;
* the codebook term ``mean ||sg(z) - e||^2`` reaches the selected entries only;
* the commitment term ``beta * mean ||z - sg(e)||^2`` reaches the encoder only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError
from .frontend import MelSpectrogram
from .patches import PatchGridSpec, PatchSet, patchify, unpatchify
from .quantizer import Codebook, TokenGrid, assign, dequantize, kmeans_fit, utilization

PARAM_NAMES = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2")


@dataclass(frozen=True)
class AutoencoderParams:
    weights: dict = field(default_factory=dict)  # name -> array; empty in identity mode
    identity_mode: bool = False

    @property
    def patch_dim(self) -> int | None:
        return None if self.identity_mode else self.weights["enc_w1"].shape[0]

    @property
    def hidden(self) -> int | None:
        return None if self.identity_mode else self.weights["enc_w1"].shape[1]

    @property
    def latent_dim(self) -> int | None:
        return None if self.identity_mode else self.weights["enc_w2"].shape[1]

    def to_tensors(self) -> tuple[np.ndarray, ...] | None:
        if self.identity_mode:
            return None
        return tuple(self.weights[name] for name in PARAM_NAMES)

    @classmethod
    def from_tensors(cls, tensors) -> "AutoencoderParams":
        if tensors is None:
            return cls(identity_mode=True)
        if len(tensors) != len(PARAM_NAMES):
            raise ShapeError(f"expected {len(PARAM_NAMES)} projection tensors, got {len(tensors)}")
        params = cls({n: np.asarray(t, dtype=np.float64) for n, t in zip(PARAM_NAMES, tensors)})
        params.check()
        return params

    @classmethod
    def from_codebook(cls, cb: Codebook) -> "AutoencoderParams":
        params = cls.from_tensors(cb.projection)
        latent = cb.dim if params.identity_mode else params.latent_dim
        if latent != cb.dim:
            raise ShapeError(f"projection latent dim {latent} != codebook dim {cb.dim}")
        return params

    def check(self) -> None:
        w = self.weights
        p, h = w["enc_w1"].shape
        d = w["enc_w2"].shape[1]
        expected = {
            "enc_w1": (p, h), "enc_b1": (h,), "enc_w2": (h, d), "enc_b2": (d,),
            "dec_w1": (d, h), "dec_b1": (h,), "dec_w2": (h, p), "dec_b2": (p,),
        }
        for name, shape in expected.items():
            if w[name].shape != shape:
                raise ShapeError(f"{name} has shape {w[name].shape}, expected {shape}")
            if not np.all(np.isfinite(w[name])):
                raise NumericalError(f"{name} has non-finite values")


def init_params(
    patch_dim: int = 16,
    hidden: int = 64,
    latent: int = 16,
    seed: int = 0,
    identity: bool = False,
    data_mean: float | np.ndarray = 0.0,
    data_scale: float = 1.0,
) -> AutoencoderParams:
    """Glorot-uniform weights.

    ``data_mean`` and ``data_scale`` fold a standardization of the patch
    values into the first encoder layer and the last decoder layer.
    """
    if identity:
        return AutoencoderParams(identity_mode=True)
    rng = np.random.default_rng(seed)

    def glorot(n_in, n_out):
        limit = math.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_in, n_out))

    mean = np.broadcast_to(np.asarray(data_mean, dtype=np.float64), (patch_dim,)).copy()
    enc_w1 = glorot(patch_dim, hidden) / data_scale
    weights = {
        "enc_w1": enc_w1,
        "enc_b1": -mean @ enc_w1,
        "enc_w2": glorot(hidden, latent),
        "enc_b2": np.zeros(latent),
        "dec_w1": glorot(latent, hidden),
        "dec_b1": np.zeros(hidden),
        "dec_w2": glorot(hidden, patch_dim) * data_scale,
        "dec_b2": mean,
    }
    return AutoencoderParams(weights)


def encode(params: AutoencoderParams, patches: np.ndarray) -> np.ndarray:
    if params.identity_mode:
        return np.asarray(patches, dtype=np.float64)
    w = params.weights
    return np.tanh(patches @ w["enc_w1"] + w["enc_b1"]) @ w["enc_w2"] + w["enc_b2"]


def decode(params: AutoencoderParams, latents: np.ndarray) -> np.ndarray:
    if params.identity_mode:
        return np.asarray(latents, dtype=np.float64)
    w = params.weights
    return np.tanh(latents @ w["dec_w1"] + w["dec_b1"]) @ w["dec_w2"] + w["dec_b2"]


def encode_patches(params: AutoencoderParams, cb: Codebook, patches: np.ndarray) -> np.ndarray:
    """Token index for each row of an (n, patch_size) matrix."""
    idx, _ = assign(cb.entries, encode(params, patches))
    return idx


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossReport:
    recon_l1: float
    codebook_loss: float
    commitment_loss: float
    total: float
    step: int = 0

    @classmethod
    def from_terms(cls, recon, codebook, commitment, step=0) -> "LossReport":
        recon, codebook, commitment = float(recon), float(codebook), float(commitment)
        return cls(recon, codebook, commitment, recon + codebook + commitment, step)


def recon_loss(x: MelSpectrogram, xhat: MelSpectrogram) -> float:
    """Mean absolute difference over all T x F cells."""
    if x.values.shape != xhat.values.shape:
        raise ShapeError(f"shape mismatch {x.values.shape} vs {xhat.values.shape}")
    return float(np.mean(np.abs(x.values - xhat.values)))


def _valid_mask(ps: PatchSet, spec: PatchGridSpec) -> np.ndarray:
    frame = np.arange(ps.rows * spec.patch_t).reshape(ps.rows, spec.patch_t) < ps.original_t
    cell = np.repeat(frame, spec.patch_f, axis=1)  # (rows, patch_t * patch_f), frame-major
    return np.broadcast_to(cell[:, None, :], ps.patches.shape).reshape(-1, spec.patch_size)


def collect_patches(
    mels: Sequence[MelSpectrogram], spec: PatchGridSpec | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Stack patch vectors of several spectrograms with their real-cell masks."""
    spec = spec or PatchGridSpec()
    vecs, masks = [], []
    for m in mels:
        ps = patchify(m, spec)
        vecs.append(ps.flat())
        masks.append(_valid_mask(ps, spec))
    return np.concatenate(vecs), np.concatenate(masks).astype(np.float64)


def loss_and_grads(
    params: AutoencoderParams,
    entries: np.ndarray,
    patches: np.ndarray,
    mask: np.ndarray,
    beta: float = 0.25,
    quantize: bool = True,
) -> tuple[tuple[float, float, float], dict, np.ndarray]:
    """Loss terms, gradients and assignments for a stack of patches.

    Returns ``((recon, codebook, commitment), grads, indices)``; ``grads`` is
    keyed by parameter name plus ``"codebook"``.  With ``quantize=False`` the
    decoder is fed the latents directly (a plain autoencoder).
    """
    n = patches.shape[0]
    ident = params.identity_mode
    w = params.weights

    if ident:
        z = patches
    else:
        h1 = np.tanh(patches @ w["enc_w1"] + w["enc_b1"])
        z = h1 @ w["enc_w2"] + w["enc_b2"]

    if quantize:
        idx, _ = assign(entries, z)
        q = entries[idx]
    else:
        idx = np.zeros(n, dtype=np.int64)
        q = z

    if ident:
        xhat = q
    else:
        g1 = np.tanh(q @ w["dec_w1"] + w["dec_b1"])
        xhat = g1 @ w["dec_w2"] + w["dec_b2"]

    resid = xhat - patches
    n_valid = mask.sum()
    recon = float(np.sum(np.abs(resid) * mask) / n_valid)
    diff = z - q
    sq = float(np.sum(diff**2) / n) if quantize else 0.0
    terms = (recon, sq, beta * sq)

    grads = {}
    d_xhat = np.sign(resid) * mask / n_valid
    if ident:
        d_q = d_xhat
    else:
        grads["dec_w2"] = g1.T @ d_xhat
        grads["dec_b2"] = d_xhat.sum(axis=0)
        d_a1 = (d_xhat @ w["dec_w2"].T) * (1.0 - g1**2)
        grads["dec_w1"] = q.T @ d_a1
        grads["dec_b1"] = d_a1.sum(axis=0)
        d_q = d_a1 @ w["dec_w1"].T

    d_codebook = np.zeros_like(entries)
    if quantize:
        np.add.at(d_codebook, idx, -2.0 * diff / n)
        d_z = d_q + 2.0 * beta * diff / n
    else:
        d_z = d_q
    grads["codebook"] = d_codebook

    if not ident:
        grads["enc_w2"] = h1.T @ d_z
        grads["enc_b2"] = d_z.sum(axis=0)
        d_h = (d_z @ w["enc_w2"].T) * (1.0 - h1**2)
        grads["enc_w1"] = patches.T @ d_h
        grads["enc_b1"] = d_h.sum(axis=0)
    return terms, grads, idx


def forward(
    params: AutoencoderParams,
    cb: Codebook,
    m: MelSpectrogram,
    spec: PatchGridSpec | None = None,
    beta: float = 0.25,
) -> tuple[MelSpectrogram, TokenGrid, LossReport]:
    """patchify -> encode -> quantize -> dequantize -> decode -> unpatchify."""
    spec = spec or PatchGridSpec()
    ps = patchify(m, spec)
    flat = ps.flat()
    z = encode(params, flat)
    idx, dist = assign(cb.entries, z)
    xhat = decode(params, cb.entries[idx])
    recon_set = PatchSet(xhat.reshape(ps.patches.shape), ps.original_t, m.config)
    recon = unpatchify(recon_set, spec)
    sq = float(dist.mean())
    report = LossReport.from_terms(recon_loss(m, recon), sq, beta * sq)
    return recon, TokenGrid(idx.reshape(ps.rows, ps.cols), ps.original_t), report


def decode_tokens(
    params: AutoencoderParams,
    cb: Codebook,
    g: TokenGrid,
    config,
    spec: PatchGridSpec | None = None,
) -> MelSpectrogram:
    spec = spec or PatchGridSpec()
    vecs = decode(params, dequantize(cb, g).reshape(-1, cb.dim))
    original_t = g.rows * spec.patch_t if g.original_t is None else g.original_t
    return unpatchify(PatchSet(vecs.reshape(g.rows, g.cols, -1), original_t, config), spec)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 3e-4
    warmup_steps: int = 1000
    total_steps: int = 150_000
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    batch_size: int = 8
    commitment_beta: float = 0.25
    seed: int = 0
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to ``lr_peak`` then half-cosine decay to zero at ``total_steps``."""
    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    decay_steps = cfg.total_steps - cfg.warmup_steps
    if decay_steps <= 0:
        return cfg.lr_peak
    progress = min(step - cfg.warmup_steps, decay_steps) / decay_steps
    return cfg.lr_peak * (1.0 + math.cos(math.pi * progress)) / 2.0


@dataclass
class OptState:
    m: dict
    v: dict
    t: int = 0


def init_opt_state(params: AutoencoderParams, cb: Codebook) -> OptState:
    shapes = {name: arr.shape for name, arr in params.weights.items()}
    shapes["codebook"] = cb.entries.shape
    return OptState({k: np.zeros(s) for k, s in shapes.items()}, {k: np.zeros(s) for k, s in shapes.items()})


def _adamw(values: dict, grads: dict, state: OptState, lr: float, cfg: TrainConfig) -> tuple[dict, OptState]:
    t = state.t + 1
    new_m, new_v, out = {}, {}, {}
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, value in values.items():
        g = grads[name]
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        if name != "codebook":  # never decay codes towards zero
            update = update + cfg.weight_decay * value
        out[name] = value - lr * update
        new_m[name], new_v[name] = m, v
    return out, OptState(new_m, new_v, t)


def train_step(
    params: AutoencoderParams,
    cb: Codebook,
    batch: Sequence[MelSpectrogram],
    opt_state: OptState,
    step: int,
    cfg: TrainConfig,
    spec: PatchGridSpec | None = None,
) -> tuple[AutoencoderParams, Codebook, OptState, LossReport]:
    if step < 0:
        raise ValueError("step must be >= 0")
    patches, mask = collect_patches(batch, spec)
    terms, grads, _ = loss_and_grads(params, cb.entries, patches, mask, cfg.commitment_beta)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name} at step {step}")
    values = dict(params.weights)
    values["codebook"] = cb.entries
    new, opt_state = _adamw(values, grads, opt_state, lr_schedule(step, cfg), cfg)
    entries = new.pop("codebook")
    params = replace(params, weights=new)
    report = LossReport.from_terms(*terms, step=step)
    return params, replace(cb, entries=entries), opt_state, report


def batch_loss(
    params: AutoencoderParams,
    cb: Codebook,
    mels: Sequence[MelSpectrogram],
    spec: PatchGridSpec | None = None,
    beta: float = 0.25,
) -> LossReport:
    patches, mask = collect_patches(mels, spec)
    terms, _, _ = loss_and_grads(params, cb.entries, patches, mask, beta)
    return LossReport.from_terms(*terms)


@dataclass
class TrainResult:
    params: AutoencoderParams
    codebook: Codebook
    history: list = field(default_factory=list)
    reseeded: int = 0

    def to_codebook(self) -> Codebook:
        """Codebook with the projection attached, ready to save."""
        return Codebook(self.codebook.entries, self.params.to_tensors())


def train(
    mels: Sequence[MelSpectrogram],
    k: int,
    cfg: TrainConfig,
    spec: PatchGridSpec | None = None,
    hidden: int = 64,
    latent: int = 16,
    identity: bool = False,
    kmeans_iters: int = 50,
    post_step: Callable[[int, AutoencoderParams, Codebook, LossReport], None] | None = None,
) -> TrainResult:
    """Desk-scale training: k-means codebook init, then gradient steps.

    After every epoch (one pass worth of utterances), codes that were never
    selected are moved onto the latent farthest from its current code.
    """
    spec = spec or PatchGridSpec()
    mels = list(mels)
    if not mels:
        raise ValueError("no training spectrograms")
    rng = np.random.default_rng(cfg.seed)
    all_patches, _ = collect_patches(mels, spec)
    if k > all_patches.shape[0]:
        raise ValueError(f"codebook size {k} exceeds the {all_patches.shape[0]} available training patches")
    if identity and latent != spec.patch_size:
        latent = spec.patch_size

    params = init_params(
        spec.patch_size, hidden, latent, seed=cfg.seed, identity=identity,
        data_mean=all_patches.mean(axis=0), data_scale=float(all_patches.std()) or 1.0,
    )
    cb = kmeans_fit(encode(params, all_patches), k, max_iters=kmeans_iters, seed=cfg.seed)
    opt = init_opt_state(params, cb)
    result = TrainResult(params, cb)

    batch_size = min(cfg.batch_size, len(mels))
    steps_per_epoch = max(1, math.ceil(len(mels) / batch_size))
    usage = np.zeros(k, dtype=np.int64)
    for step in range(cfg.total_steps):
        pick = np.sort(rng.choice(len(mels), size=batch_size, replace=False))
        batch = [mels[i] for i in pick]
        patches, _ = collect_patches(batch, spec)
        usage += np.bincount(encode_patches(params, cb, patches), minlength=k)
        params, cb, opt, report = train_step(params, cb, batch, opt, step, cfg, spec)
        result.history.append(report)
        if post_step is not None:
            post_step(step, params, cb, report)
        if (step + 1) % steps_per_epoch == 0:
            dead = np.flatnonzero(usage == 0)
            if dead.size:
                cb, opt = _reseed(params, cb, opt, all_patches, dead)
                result.reseeded += int(dead.size)
            usage[:] = 0
    result.params, result.codebook = params, cb
    return result


def _reseed(params, cb, opt, patches, dead):
    z = encode(params, patches)
    _, dist = assign(cb.entries, z)
    entries = cb.entries.copy()
    for j in dead:
        far = int(np.argmax(dist))
        entries[j] = z[far]
        dist[far] = -1.0
        opt.m["codebook"][j] = 0.0
        opt.v["codebook"][j] = 0.0
    return replace(cb, entries=entries), opt


def codebook_perplexity(params, cb, mels, spec=None) -> float:
    spec = spec or PatchGridSpec()
    grids = []
    for m in mels:
        ps = patchify(m, spec)
        grids.append(TokenGrid(encode_patches(params, cb, ps.flat()).reshape(ps.rows, ps.cols)))
    return utilization(grids, cb.k).perplexity


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def grad_check(
    params: AutoencoderParams,
    cb: Codebook,
    batch: Sequence[MelSpectrogram],
    spec: PatchGridSpec | None = None,
    beta: float = 0.25,
    n_probe: int = 200,
    h: float = 1e-4,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The finite differences are taken on the stop-gradient surrogate frozen at
    the current point: decoder input ``z + (e0 - z0)``, codebook term
    ``||z0 - e||^2`` and commitment ``beta ||z - e0||^2``.  Probes that move
    any patch to a different code, or flip the sign of any reconstruction
    residual, are skipped.  Relative error uses ``max(|a|, |n|, 1e-6)`` as
    denominator.
    """
    patches, mask = collect_patches(batch, spec)
    _, grads, idx0 = loss_and_grads(params, cb.entries, patches, mask, beta)
    z0 = encode(params, patches)
    e0 = cb.entries[idx0]
    n = patches.shape[0]
    n_valid = mask.sum()

    def surrogate(weights, entries):
        p = replace(params, weights=weights)
        z = encode(p, patches)
        idx, _ = assign(entries, z)
        xhat = decode(p, z + (e0 - z0))
        resid = xhat - patches
        value = (
            np.sum(np.abs(resid) * mask) / n_valid
            + np.sum((z0 - entries[idx]) ** 2) / n
            + beta * np.sum((z - e0) ** 2) / n
        )
        return value, idx, np.sign(resid) * mask

    _, _, sign0 = surrogate(params.weights, cb.entries)
    coords = [(name, i) for name in params.weights for i in range(params.weights[name].size)]
    coords += [("codebook", i) for i in range(cb.entries.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_probe:
        coords = [coords[i] for i in rng.choice(len(coords), size=n_probe, replace=False)]

    worst = 0.0
    for name, i in coords:
        evals = []
        for delta in (h, -h):
            weights = {k: v.copy() for k, v in params.weights.items()}
            entries = cb.entries.copy()
            target = entries if name == "codebook" else weights[name]
            target.flat[i] += delta
            evals.append(surrogate(weights, entries))
        (f_plus, idx_p, s_p), (f_minus, idx_m, s_m) = evals
        if not (np.array_equal(idx_p, idx0) and np.array_equal(idx_m, idx0)):
            continue
        if not (np.array_equal(s_p, sign0) and np.array_equal(s_m, sign0)):
            continue
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = grads[name].flat[i]
        if not (np.isfinite(numeric) and np.isfinite(analytic)):
            return math.inf
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst
