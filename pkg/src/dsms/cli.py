"""Command-line entry point: ``dsms {gen-data,analyze,resynth,train,eval,embed}``.

Errors print one line ``dsms: error: <kind>: <message>`` to stderr and exit
nonzero. All randomness comes from ``--seed`` (default 0).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

DEFAULT_SEED = 0
STRATEGIES = ("s", "s+n", "t(s)", "t(s+n)", "t(s)+n", "t(s)+s+n")


class CliError(Exception):
    def __init__(self, kind, message, code=2):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("bad-argument", message)


def _strategy(value):
    v = value.strip().lower()
    if v not in STRATEGIES:
        raise argparse.ArgumentTypeError(f"invalid strategy {value!r}; valid strategies: {', '.join(STRATEGIES)}")
    return v


def _existing(path):
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"{p} does not exist")
    return p


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("DSMS_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError("bad-argument", f"DSMS_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def build_parser():
    p = _Parser(prog="dsms", description="Sines + noise + transient resynthesis of one-shot drums.")
    p.add_argument("--version", action="version", version=f"dsms {__version__}")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (default: $DSMS_THREADS or all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic drum dataset with manifest and splits")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--seconds", type=float, default=2.0)

    a = sub.add_parser("analyze", help="sinusoidal analysis to a track CSV")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--max-tracks", type=int, default=64)

    r = sub.add_parser("resynth", help="resynthesise one file")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--model", default=None, help="checkpoint (optional for strategy s)")
    r.add_argument("--strategy", type=_strategy, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=DEFAULT_SEED)

    t = sub.add_parser("train", help="train encoders, FiLM MLPs and TCN")
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest", default=None, help="validation manifest (default: split --manifest)")
    t.add_argument("--strategy", type=_strategy, default="t(s)+n")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch", type=int, default=12)
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--max-hours", type=float, default=4.0)
    t.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="desk: 8-channel encoders and 24576-sample clips for CPU runs")
    t.add_argument("--clip-samples", type=int, default=None)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--clip-samples", type=int, default=None)

    m = sub.add_parser("embed", help="export transient embeddings")
    m.add_argument("--manifest", required=True)
    m.add_argument("--model", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--clip-samples", type=int, default=None)
    return p


# --- commands ------------------------------------------------------------------------------

def cmd_gen_data(args):
    from .audio_io import make_synthetic_dataset

    if args.count < 3:
        raise CliError("bad-argument", "--count must be at least 3")
    ds = make_synthetic_dataset(args.out, args.count, args.seed, seconds=args.seconds)
    print(f"wrote {len(ds.items)} items, manifest {ds.manifest}")


def cmd_analyze(args):
    from .audio_io import load_wav
    from .sinusoidal import analyze, write_bank_csv

    buf = load_wav(_existing(args.input))
    bank = analyze(buf, max_tracks=args.max_tracks)
    write_bank_csv(bank, args.out)
    print(f"{len(bank.tracks)} tracks -> {args.out}")


def _load_model(path):
    from .neural import DrumModel

    try:
        return DrumModel.load(_existing(path))
    except ValueError as exc:
        raise CliError("bad-checkpoint", str(exc)) from None


def cmd_resynth(args):
    from .audio_io import AudioBuffer, load_wav, save_wav
    from .neural import DrumModel, desk_config
    from .pipeline import resynthesize

    buf = load_wav(_existing(args.input))
    if args.model:
        model = _load_model(args.model)
    elif args.strategy in (None, "s"):
        model = DrumModel(desk_config("s"))  # weights unused under s
    else:
        raise CliError("bad-argument", f"--model is required for strategy {args.strategy}")
    strategy = args.strategy or model.strategy
    x = buf.samples
    pad = (-len(x)) % 256
    if pad and strategy != "s":
        x = np.pad(x, (0, pad))
    out = resynthesize(x, model, seed=args.seed, strategy=strategy)
    save_wav(args.out, AudioBuffer(out.samples[:len(buf)], buf.sample_rate), bit_depth=32)
    print(f"{strategy} -> {args.out}")


def _examples(manifest, clip_samples=None):
    from .audio_io import read_manifest
    from .pipeline import load_examples

    items = read_manifest(_existing(manifest))
    for it in items:
        _existing(it.path)
    return load_examples(items, n_samples=clip_samples)


def cmd_train(args):
    from .audio_io import read_manifest, split_dataset
    from .neural import DrumModel, ModelConfig, desk_config
    from .pipeline import TrainConfig, load_examples, train

    if args.strategy == "s":
        raise CliError("bad-argument", "strategy s has nothing to train")
    clip = args.clip_samples or (24576 if args.preset == "desk" else None)
    items = read_manifest(_existing(args.manifest))
    if args.val_manifest:
        train_items, val_items = items, read_manifest(_existing(args.val_manifest))
    else:
        train_items, val_items, _ = split_dataset(items, seed=args.seed)
    if args.preset == "desk":
        config = desk_config(args.strategy, seed=args.seed)
    else:
        config = ModelConfig(strategy=args.strategy, seed=args.seed)
    model = DrumModel(config)
    cfg = TrainConfig(lr=args.lr, batch=args.batch, seed=args.seed, max_epochs=args.epochs,
                      max_steps=args.max_steps, max_wall_clock=args.max_hours * 3600.0, out_dir=args.out_dir)
    res = train(load_examples(train_items, n_samples=clip), load_examples(val_items, n_samples=clip), model, cfg)
    print(f"stopped: {res.stopped}; val mss {res.initial_val:.4f} -> best {res.best_val:.4f}; "
          f"checkpoints in {args.out_dir}")


def cmd_eval(args):
    from .pipeline import evaluate

    model = _load_model(args.model)
    report = evaluate(_examples(args.manifest, args.clip_samples), model, out_csv=args.out)
    print(f"{len(report.rows)} groups -> {args.out}")


def cmd_embed(args):
    from .pipeline import export_embeddings

    model = _load_model(args.model)
    rows = export_embeddings(_examples(args.manifest, args.clip_samples), model, args.out)
    print(f"{len(rows)} embeddings -> {args.out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "analyze": cmd_analyze,
    "resynth": cmd_resynth,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_threads(args)):
            COMMANDS[args.command](args)
        return 0
    except CliError as exc:
        print(f"dsms: error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        kind = "missing-file" if isinstance(exc, FileNotFoundError) else type(exc).__name__
        print(f"dsms: error: {kind}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
