"""Command-line workflow: gen-data, train, predict, fuse, eval, ablate.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure. Errors go
to stderr prefixed with ``error:``. ``TERRAFUSE_THREADS`` caps BLAS threads
(default 1, for reproducible bytes).
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _files(pattern: str):
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no files match {pattern!r}")
    return paths


def cmd_gen_data(args):
    from .synth import generate_dataset

    entries = generate_dataset(args.patches, args.size, args.seed, args.out)
    print(f"wrote {len(entries)} patches to {args.out}")


def cmd_train(args):
    from .augment import AugmentConfig
    from .checkpoint import save_checkpoint
    from .trainer import TrainConfig, train

    cfg = TrainConfig(model=args.model, epochs=args.epochs, batch_size=args.batch, lr=args.lr, beta=args.beta,
                      seed=args.seed, augment=AugmentConfig.identity() if args.no_augment else AugmentConfig())
    ckpt, history = train(cfg, args.data)
    save_checkpoint(args.out, ckpt)
    print(f"best epoch {history.best_epoch} val_iou {ckpt.meta.get('val_iou')} -> {args.out}")


def cmd_predict(args):
    from .checkpoint import load_checkpoint
    from .trainer import predict_files

    written = predict_files(load_checkpoint(args.ckpt), _files(args.input), args.out)
    print(f"wrote {len(written)} probability maps to {args.out}")


def cmd_fuse(args):
    from .formats import read_probs, write_mask
    from .fusion import FusionConfig, argmax_map, fuse

    fused = fuse(read_probs(args.a), read_probs(args.b), FusionConfig(args.alpha))
    write_mask(args.out, argmax_map(fused))


def cmd_eval(args):
    from .formats import read_mask
    from .metrics import pooled_confusion, report_from_confusion

    truth = {Path(p).stem: p for p in _files(args.truth)}
    preds = _files(args.pred)
    missing = [Path(p).stem for p in preds if Path(p).stem not in truth]
    if missing:
        raise FileNotFoundError(f"no ground truth for: {', '.join(missing)}")
    pairs = ((read_mask(p), read_mask(truth[Path(p).stem])) for p in preds)
    report = report_from_confusion(pooled_confusion(pairs))
    Path(args.report).write_text(report.to_kv(), encoding="utf-8")
    sys.stdout.write(report.to_table())


def cmd_ablate(args):
    from .ablation import run_ablation
    from .checkpoint import load_checkpoint
    from .data import load_split
    from .fusion import FusionConfig

    if args.single == "unet":
        paths = [args.ckpt_unet]
    elif args.single == "deeplab":
        paths = [args.ckpt_deeplab]
    else:
        paths = [args.ckpt_unet, args.ckpt_deeplab]
    if any(p is None for p in paths):
        raise UsageError("ablate needs --ckpt-unet and --ckpt-deeplab (or --single with that checkpoint)")
    report = run_ablation([load_checkpoint(p) for p in paths], load_split(args.data, "val"),
                          FusionConfig(args.alpha), zero_after_normalization=not args.raw_zero)
    Path(args.report).write_text(report.to_kv(), encoding="utf-8")
    sys.stdout.write(report.to_table())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="terrafuse", description="Two-model terrain segmentation with soft-score fusion.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--patches", type=int, default=20)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model, write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=["unet", "deeplab"], default="unet")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--beta", type=float, default=0.5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="write PRB probability maps")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--input", required=True, help="glob of .mcr files")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    f = sub.add_parser("fuse", help="fuse two PRB files into an MSK class map")
    f.add_argument("--a", required=True, help="U-Net probabilities")
    f.add_argument("--b", required=True, help="DeepLab probabilities")
    f.add_argument("--alpha", type=float, default=0.5)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    e = sub.add_parser("eval", help="pooled metrics of predicted vs true masks")
    e.add_argument("--pred", required=True, help="glob of predicted .msk files")
    e.add_argument("--truth", required=True, help="glob of ground-truth .msk files (matched by stem)")
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="channel-zeroing feature importance on the val split")
    a.add_argument("--ckpt-unet")
    a.add_argument("--ckpt-deeplab")
    a.add_argument("--alpha", type=float, default=0.5)
    a.add_argument("--data", required=True)
    a.add_argument("--report", required=True)
    a.add_argument("--single", choices=["unet", "deeplab"], help="ablate one model instead of the fusion")
    a.add_argument("--raw-zero", action="store_true", help="zero raw values instead of normalized ones")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from threadpoolctl import threadpool_limits

    from .formats import FormatError

    threads = int(os.environ.get("TERRAFUSE_THREADS", "1"))
    try:
        with threadpool_limits(limits=max(threads, 1)), np.errstate(all="ignore"):
            args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, ValueError, KeyError, IndexError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
