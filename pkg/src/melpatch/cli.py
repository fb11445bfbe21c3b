"""``melpatch`` command line.

Exit codes: 0 success, 2 usage/config error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import codebook_perplexity, train
from .bitstream import BitrateSpec, bitrate_bps, unpack
from .codec import MelPatchCodec
from .config import CliConfig
from .errors import ConfigError, FormatError, MelpatchError, NumericalError
from .frontend import load_wav, mel_spectrogram, resample, write_wav
from .metrics import MetricReport, mcd, rtf, stoi, write_report
from .patches import grid_dims
from .quantizer import Codebook, utilization
from .synth import write_corpus

log = logging.getLogger("melpatch")


def _corpus(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav")
    if not files:
        raise FormatError(f"no .wav files in {directory}")
    return files


def _codec(cfg: CliConfig, codebook_path) -> MelPatchCodec:
    cb = Codebook.load(codebook_path)
    codec = MelPatchCodec(cb, cfg.frontend, cfg.grid, cfg["decode.griffin_lim_iters"])
    if "model.k" in cfg.explicit and cfg["model.k"] != cb.k:
        raise ConfigError(f"config sets model.k={cfg['model.k']} but codebook has K={cb.k}")
    if "model.latent_dim" in cfg.explicit and cfg["model.latent_dim"] != cb.dim:
        raise ConfigError(f"config sets model.latent_dim={cfg['model.latent_dim']} but codebook has D={cb.dim}")
    if "model.identity_mode" in cfg.explicit and cfg["model.identity_mode"] != codec.params.identity_mode:
        raise ConfigError("config identity_mode does not match the codebook's projection block")
    return codec


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args, cfg: CliConfig) -> int:
    files = _corpus(args.corpus)
    fcfg, grid = cfg.frontend, cfg.grid
    mels = []
    for path in files:
        w = load_wav(path)
        if w.sample_rate != fcfg.sample_rate:
            w = resample(w, fcfg.sample_rate)
        mels.append(mel_spectrogram(w, fcfg))
    n_patches = sum(math.prod(grid_dims(m.n_frames, m.n_mels, grid)) for m in mels)
    if cfg["model.k"] > n_patches:
        raise ConfigError(f"model.k={cfg['model.k']} exceeds the {n_patches} training patches in {args.corpus}")
    log.info("training on %d utterances (%d patches)", len(mels), n_patches)

    history = []
    result = train(
        mels, cfg["model.k"], cfg.train, grid,
        hidden=cfg["model.hidden"], latent=cfg["model.latent_dim"],
        identity=cfg["model.identity_mode"], kmeans_iters=cfg["train.kmeans_iters"],
        post_step=lambda step, p, cb, rep: history.append(rep),
    )
    codebook = result.to_codebook()
    out = Path(args.out)
    codebook.save(out)

    with open(out.with_name(out.name + ".losses.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "recon_l1", "codebook_loss", "commitment_loss", "total"])
        for r in history:
            writer.writerow([r.step, repr(r.recon_l1), repr(r.codebook_loss), repr(r.commitment_loss), repr(r.total)])
    meta = {
        "step": len(history),
        "codebook_id": codebook.digest().hex(),
        "reseeded_codes": result.reseeded,
        "config": cfg.echo(),
    }
    out.with_name(out.name + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    saved = Codebook.load(out)
    codec = MelPatchCodec(saved, fcfg, grid)
    perplexity = codebook_perplexity(codec.params, saved, mels, grid)
    last = history[-1] if history else None
    print(f"codebook: {out} (K={saved.k}, D={saved.dim}, id {saved.digest().hex()})")
    print(f"perplexity: {perplexity:.4f}")
    if last is not None:
        print(
            f"final loss: total={last.total:.6f} recon_l1={last.recon_l1:.6f} "
            f"codebook={last.codebook_loss:.6f} commitment={last.commitment_loss:.6f}"
        )
    return 0


def cmd_encode(args, cfg: CliConfig) -> int:
    codec = _codec(cfg, args.codebook)
    w = load_wav(args.input)
    data = codec.encode(w)
    Path(args.out).write_bytes(data)
    header, grid = unpack(data)
    duration = len(w) / w.sample_rate
    tokens = grid.rows * grid.cols
    payload_bits = (len(data) - 40) * 8
    print(f"grid: {grid.rows}x{grid.cols} ({tokens} tokens, original_t={header.original_t})")
    if duration:
        print(f"tokens/s: {tokens / duration:.2f}")
        print(f"measured: {payload_bits / duration:.1f} bps (nominal {bitrate_bps(header.bitrate_spec()):g} bps)")
    print(f"payload: {payload_bits} bits + 40-byte header")
    return 0


def cmd_decode(args, cfg: CliConfig) -> int:
    codec = _codec(cfg, args.codebook)
    w = codec.decode(Path(args.input).read_bytes())
    write_wav(args.out, w)
    print(f"wrote {args.out}: {len(w)} samples at {w.sample_rate} Hz ({w.duration:.3f} s)")
    return 0


def _evaluate(codec: MelPatchCodec, path: Path, bypass: bool) -> MetricReport:
    ref = load_wav(path)
    if ref.sample_rate != codec.frontend.sample_rate:
        ref = resample(ref, codec.frontend.sample_rate)
    t0 = time.perf_counter()
    data = codec.encode(ref)
    t1 = time.perf_counter()
    deg = codec.decode(data)
    t2 = time.perf_counter()
    if bypass:
        deg = ref
    header, _ = unpack(data)
    return MetricReport(
        utterance_id=path.stem,
        duration_s=ref.duration,
        mcd=mcd(ref, deg),
        stoi=stoi(ref, deg),
        rtf_encode=rtf(t1 - t0, ref.duration),
        rtf_decode=rtf(t2 - t1, ref.duration),
        bitrate_bps=bitrate_bps(header.bitrate_spec()),
    )


def cmd_eval(args, cfg: CliConfig) -> int:
    codec = _codec(cfg, args.codebook)
    files = _corpus(args.corpus)
    workers = min(len(files), int(os.environ.get("MELPATCH_THREADS", os.cpu_count() or 1)))

    def run(path):
        try:
            return _evaluate(codec, path, args.bypass_codec)
        except (MelpatchError, ValueError) as exc:
            log.error("%s: %s", path.name, exc)
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, files))
    reports = [r for r in results if r is not None]
    if not reports:
        print("every utterance failed", file=sys.stderr)
        return 3
    write_report(args.report, reports)
    print(
        f"{len(reports)}/{len(files)} utterances: "
        f"mcd={np.mean([r.mcd for r in reports]):.4f} stoi={np.mean([r.stoi for r in reports]):.4f} "
        f"rtf_encode={np.mean([r.rtf_encode for r in reports]):.4f} "
        f"rtf_decode={np.mean([r.rtf_decode for r in reports]):.4f}"
    )
    return 0


def cmd_info(args, cfg: CliConfig) -> int:
    header, grid = unpack(Path(args.input).read_bytes())
    print(f"magic: MPC1 version {header.version}")
    print(f"sample_rate: {header.sample_rate}")
    print(f"n_mels: {header.n_mels}")
    print(f"hop: {header.hop}")
    print(f"win_length: {header.win_length}")
    print(f"patch: {header.patch_t}x{header.patch_f}")
    print(f"k: {header.k} ({header.bits_per_index} bits/index)")
    print(f"codebook_id: {header.codebook_id.hex()}")
    print(f"original_t: {header.original_t}")
    print(f"grid: {grid.rows}x{grid.cols}")
    print(f"bitrate: {bitrate_bps(header.bitrate_spec()):g} bps")
    if grid.indices.size:
        usage = utilization([grid], header.k)
        top = np.argsort(-usage.histogram, kind="stable")[:5]
        print(f"distinct codes: {header.k - usage.dead_count} of {header.k}, perplexity {usage.perplexity:.3f}")
        print("top codes: " + ", ".join(f"{i}:{usage.histogram[i]}" for i in top if usage.histogram[i]))
    return 0


def cmd_bitrate(args, cfg: CliConfig) -> int:
    spec = BitrateSpec(args.sr, args.hop, args.dt, args.df, args.mels, args.k)
    print(f"tokens/s: {spec.tokens_per_second:g}")
    print(f"{bitrate_bps(spec):g} bps")
    return 0


def cmd_synth_corpus(args, cfg: CliConfig) -> int:
    paths = write_corpus(args.out, args.count, args.duration, cfg["seed"], cfg["frontend.sample_rate"])
    print(f"wrote {len(paths)} utterances to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML config with dotted keys")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="melpatch", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="fit a codebook (and projection) on a WAV corpus")
    p.add_argument("corpus")
    p.add_argument("out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="WAV -> .mpc bitstream")
    p.add_argument("codebook")
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help=".mpc bitstream -> WAV")
    p.add_argument("codebook")
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="round-trip a corpus and write a metrics CSV")
    p.add_argument("codebook")
    p.add_argument("corpus")
    p.add_argument("report")
    p.add_argument("--bypass-codec", action="store_true", help="score the reference against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", parents=[common], help="describe a .mpc bitstream")
    p.add_argument("input")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("bitrate", parents=[common], help="nominal bitrate for a configuration")
    p.add_argument("--sr", type=int, default=16000)
    p.add_argument("--hop", type=int, default=128)
    p.add_argument("--dt", type=int, default=4)
    p.add_argument("--df", type=int, default=4)
    p.add_argument("--mels", type=int, default=80)
    p.add_argument("--k", type=int, default=4096)
    p.set_defaults(func=cmd_bitrate)

    p = sub.add_parser("synth-corpus", parents=[common], help="write deterministic speech-like WAVs")
    p.add_argument("out")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--duration", type=float, default=1.5)
    p.set_defaults(func=cmd_synth_corpus)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = {"seed": args.seed} if hasattr(args, "seed") else None
        cfg = CliConfig.load(getattr(args, "config", None), overrides)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"melpatch: config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericalError as exc:
        print(f"melpatch: numerical failure: {exc}", file=sys.stderr)
        return exc.exit_code
    except FormatError as exc:
        print(f"melpatch: corrupt or unsupported data: {exc}", file=sys.stderr)
        return exc.exit_code
    except MelpatchError as exc:
        print(f"melpatch: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, ValueError) as exc:
        print(f"melpatch: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
