"""Command-line entry point: ``semcodec <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import bitstream
from .audio_io import read_wav, write_wav
from .clustering import load_family, save_family
from .errors import CodecError, NumericError
from .evaluation import eval_reconstruction, spectral_distance
from .pipeline import (Codec, CodecConfig, checkpoint_hash, decode_file, encode_file, fit_family,
                       fit_latent, load_checkpoint, parse_value, prepare_windows,
                       save_checkpoint, train_codec, validation_curve)
from .synthcorpus import generate_corpus, read_corpus, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args) -> CodecConfig:
    base = CodecConfig.paper() if getattr(args, "profile", "desk") == "paper" else CodecConfig.desk()
    if getattr(args, "config", None):
        base = CodecConfig.from_text(Path(args.config).read_text(), base)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        overrides[k] = parse_value(k, v)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return base.replace(**overrides) if overrides else base


def _header(args, extra: dict) -> None:
    """Reproducibility header on stderr."""
    fields = {"command": args.command, "seed": args.seed}
    fields.update(extra)
    print("# " + " ".join(f"{k}={v}" for k, v in fields.items()), file=sys.stderr)


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def cmd_synth_data(args):
    _header(args, {"per_class": args.per_class, "duration": args.duration})
    from .synthcorpus import default_classes
    clips = generate_corpus(args.per_class, default_classes(args.duration), seed=args.seed or 0)
    out = write_corpus(clips, args.out)
    print(f"wrote {len(clips)} clips to {out}")


def cmd_train_kmeans(args):
    cfg = _config(args)
    _header(args, {"config_hash": cfg.digest()})
    windows = prepare_windows(cfg, read_corpus(args.data))
    family = fit_family(cfg, windows)
    save_family(args.out, family)
    print(f"codebook sizes {family.sizes} (K={family.stack_factor}, E={family.embed_dim}) -> {args.out}")


def cmd_train_codec(args):
    if args.resume:
        codec = load_checkpoint(args.resume)
        cfg = codec.config
        if args.steps is not None:
            cfg = cfg.replace(train_steps=args.steps)
            codec.config = cfg
    else:
        cfg = _config(args)
        if args.steps is not None:
            cfg = cfg.replace(train_steps=args.steps)
        family = load_family(args.codebooks)
        train = prepare_windows(cfg, read_corpus(args.data))
        codec = Codec(cfg, family, fit_latent(cfg, train))
    _header(args, {"config_hash": cfg.digest(),
                   "codebooks": _file_hash(args.codebooks) if args.codebooks else "-",
                   "resume": _file_hash(args.resume) if args.resume else "-"})
    train = prepare_windows(codec, read_corpus(args.data))
    val = prepare_windows(codec, read_corpus(args.val_data)) if args.val_data else None
    before = codec.digests()

    def show(entry):
        val_s = f" val_loss={entry['val_loss']:.4f}" if "val_loss" in entry else ""
        print(f"step={entry['step']} recon={entry['recon']:.4f} commit={entry['commit']:.4f} "
              f"usage={entry['usage']:.3f}{val_s}", flush=True)

    train_codec(codec, train, val, steps=cfg.train_steps, callback=show)
    if codec.digests() != before:
        raise NumericError("a frozen component changed during training")
    save_checkpoint(args.out, codec)
    curve = validation_curve(codec.history)
    if curve:
        print("validation " + " ".join(f"{s}:{v:.4f}" for s, v in curve))
    print(f"checkpoint {args.out} sha256={checkpoint_hash(args.out)[:16]}")


def cmd_encode(args):
    codec = load_checkpoint(args.checkpoint)
    _header(args, {"checkpoint": _file_hash(args.checkpoint), "config_hash": codec.config.digest()})
    pkt = encode_file(read_wav(args.inp), codec, args.vocab)
    Path(args.out).write_bytes(pkt.to_bytes())
    print(bitstream.format_report(pkt.header), end="")


def cmd_decode(args):
    codec = load_checkpoint(args.checkpoint)
    _header(args, {"checkpoint": _file_hash(args.checkpoint), "config_hash": codec.config.digest(),
                   "steps": args.steps, "cfg": args.cfg})
    wav = decode_file(Path(args.inp).read_bytes(), codec, seed=args.seed or 0, steps=args.steps,
                      w=args.cfg)
    if not np.all(np.isfinite(wav.samples)):
        raise NumericError("decoder produced non-finite samples")
    write_wav(args.out, wav)
    print(f"wrote {len(wav)} samples to {args.out}")


def cmd_eval(args):
    if args.ref:
        _header(args, {"ref": _file_hash(args.ref), "deg": _file_hash(args.deg)})
        m, s = spectral_distance(read_wav(args.ref), read_wav(args.deg))
        print(f"mel_distance={m:.4f}\nstft_distance={s:.4f}")
        return
    codec = load_checkpoint(args.checkpoint)
    _header(args, {"checkpoint": _file_hash(args.checkpoint), "config_hash": codec.config.digest()})
    clips = read_corpus(args.data)
    if args.limit:
        clips = clips[:args.limit]
    rep = eval_reconstruction(clips, codec, seed=args.seed or 0, steps=args.steps, w=args.cfg,
                              vocab=args.vocab)
    print(rep.to_text(), end="")
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())


def cmd_info(args):
    _header(args, {"packet": _file_hash(args.inp)})
    header, _, _ = bitstream.unpack(Path(args.inp).read_bytes())
    print(bitstream.format_report(header), end="")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semcodec", description="Ultra-low-bitrate semantic audio codec")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text, config=False):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", help="key = value config file")
            sp.add_argument("--profile", choices=("desk", "paper"), default="desk")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override one config key (repeatable)")
        return sp

    sp = add("synth-data", cmd_synth_data, "generate the labelled synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-per-class", dest="per_class", type=int, default=200)
    sp.add_argument("--duration", type=float, default=2.56)

    sp = add("train-kmeans", cmd_train_kmeans, "fit the semantic codebook family", config=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("train-codec", cmd_train_codec, "train acoustic encoder, codebook and decoder",
             config=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--val-data")
    sp.add_argument("--codebooks")
    sp.add_argument("--resume")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out", required=True)

    sp = add("encode", cmd_encode, "encode a WAV file to a packet")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", type=int)

    sp = add("decode", cmd_decode, "decode a packet to a WAV file")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--cfg", type=float, default=3.0)

    sp = add("eval", cmd_eval, "spectral distances for a file pair or a corpus")
    sp.add_argument("--ref")
    sp.add_argument("--deg")
    sp.add_argument("--data")
    sp.add_argument("--checkpoint")
    sp.add_argument("--limit", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--cfg", type=float)
    sp.add_argument("--vocab", type=int)
    sp.add_argument("--csv")

    sp = add("info", cmd_info, "print a packet header and its bitrate")
    sp.add_argument("--in", dest="inp", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval" and not ((args.ref and args.deg) or (args.data and args.checkpoint)):
            parser.error("eval needs --ref and --deg, or --data and --checkpoint")
        if args.command == "train-codec" and not (args.codebooks or args.resume):
            parser.error("train-codec needs --codebooks or --resume")
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        args.fn(args)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"semcodec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CodecError, OSError) as exc:
        stage = getattr(getattr(exc, "__class__", None), "__name__", "error")
        print(f"semcodec: {stage} in {sys.argv[1] if argv is None and len(sys.argv) > 1 else 'command'}: {exc}",
              file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
