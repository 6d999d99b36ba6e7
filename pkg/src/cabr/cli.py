"""``cabr`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_rows(spec: str, height: int):
    from .imaging import RowLabels

    try:
        a, b = (int(v) for v in spec.split(":"))
    except ValueError:
        raise UsageError(f"--rows expects a:b, got {spec!r}") from None
    if not 0 <= a <= b <= height:
        raise UsageError(f"--rows {a}:{b} outside image height {height}")
    return RowLabels.from_rows(height, a, b)


def write_overlay(image, labels, path) -> None:
    """Binary PPM: gray image, stripe rows tinted red."""
    g = image.data
    rgb = np.repeat(g[:, :, None], 3, axis=2).astype(np.uint16)
    rows = labels.labels.astype(bool)
    rgb[rows, :, 0] = (rgb[rows, :, 0] + 255) // 2
    h, w = g.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(rgb.astype(np.uint8).tobytes())


def _config(args):
    from .config import load_config

    return load_config(getattr(args, "config", None))


def _checkpoint_options(meta: dict, cfg):
    """GS mode and AF flag the network was trained with."""
    from .imaging import GradientMode

    train = meta.get("train", {})
    gs = train.get("gs_mode", cfg.train.gs_mode)
    return (None if gs == "none" else GradientMode(gs)), bool(train.get("appearance", cfg.train.appearance))


# ------------------------------------------------------------ commands

def cmd_phantom(args) -> int:
    from .phantom import PhantomParams, generate_corpus

    cfg = _config(args)
    params = cfg.phantom
    if args.seed is not None:
        params = PhantomParams.from_dict({**params.to_dict(), "seed": args.seed})
    manifest = generate_corpus(args.count, params, args.out, threads=args.threads)
    print(f"wrote {len(manifest)} phantoms to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .imaging import load_labels, load_pgm, write_labels, write_pgm
    from .synth import adbma_stripe, compute_breakpoints, gauss_stripe

    cfg = _config(args)
    image = load_pgm(args.image)
    if (args.labels is None) == (args.rows is None):
        raise UsageError("give exactly one of --labels or --rows")
    labels = load_labels(args.labels) if args.labels else _parse_rows(args.rows, image.height)
    seed = cfg.synth.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    if args.mode == "adbma":
        out = adbma_stripe(image, labels, compute_breakpoints(image, cfg.synth), cfg.synth.sigma, rng)
    else:
        out = gauss_stripe(image, labels, cfg.synth.sigma, args.offset, rng)
    write_pgm(out, args.out)
    if args.labels_out:
        write_labels(labels, args.labels_out)
    if args.row_csv:
        row = args.row if args.row is not None else (labels.runs()[0][0] if labels.runs() else 0)
        if not 0 <= row < image.height:
            raise UsageError(f"--row {row} outside image height {image.height}")
        lines = ["column,original,synthesized"]
        lines += [f"{c},{a},{b}" for c, (a, b) in enumerate(zip(image.data[row], out.data[row]))]
        Path(args.row_csv).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import load_corpus
    from .model import build_cabr, save_model
    from .trainer import TrainConfig, fit

    cfg = _config(args)
    tc = cfg.train.to_dict()
    for key in ("seed", "epochs", "steps_per_epoch", "batch_size"):
        value = getattr(args, key)
        if value is not None:
            tc[key] = value
    cfg.train = TrainConfig.from_dict(tc)
    items = load_corpus(args.corpus)
    ckpt = Path(args.out_checkpoint)
    run_dir = Path(args.log_dir) if args.log_dir else ckpt.with_name(ckpt.stem + "_run")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.dumps())
    m = cfg.model
    net = build_cabr(m.base_channels, m.variant, m.slope, seed=cfg.train.seed)
    report = fit(net, items, cfg.train, run_dir)
    save_model(net, ckpt, {"train": cfg.train.to_dict(), "epoch": report.best_epoch, "val_dice": report.best_val})
    print(f"best val dice {report.best_val:.4f} at epoch {report.best_epoch}; saved {ckpt}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .imaging import load_labels, load_mask, load_pgm, write_pgm
    from .model import infer_image, load_model

    cfg = _config(args)
    image, mask, labels = load_pgm(args.image), load_mask(args.mask), load_labels(args.labels)
    net, meta = load_model(args.checkpoint)
    gs, af = _checkpoint_options(meta, cfg)
    out = infer_image(net, mask, image, labels, window_height=cfg.eval.window_height,
                      gs_mode=gs, threshold=cfg.eval.threshold, appearance=af)
    write_pgm(out, args.out_mask)
    if args.overlay:
        from .imaging import enhance

        write_overlay(enhance(image, out), labels, args.overlay)
    return EXIT_OK


def cmd_enhance(args) -> int:
    from .imaging import enhance, load_labels, load_mask, load_pgm, write_pgm

    out = enhance(load_pgm(args.image), load_mask(args.mask))
    write_pgm(out, args.out)
    if args.overlay:
        if not args.labels:
            raise UsageError("--overlay needs --labels")
        write_overlay(out, load_labels(args.labels), args.overlay)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_corpus
    from .evaluator import evaluate_dataset
    from .model import load_model

    cfg = _config(args)
    items = load_corpus(args.corpus)
    net, meta = load_model(args.checkpoint)
    gs, af = _checkpoint_options(meta, cfg)
    report = evaluate_dataset(
        net, items, pooled=args.pooled or cfg.eval.pooled, window_height=cfg.eval.window_height,
        gs_mode=gs, appearance=af, threshold=cfg.eval.threshold, threads=args.threads,
    )
    Path(args.report).write_text(report.to_csv())
    summary = report.summary()
    Path(str(args.report) + ".summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import full_suite

    reports = full_suite(args.seed)
    for r in reports:
        print(r)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NUMERIC


def cmd_params(args) -> int:
    from .model import build_cabr
    from .nn.layers import param_count

    print(param_count(build_cabr(args.channels, args.variant)))
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(_config(args).dumps())
    return EXIT_OK


# -------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    from .model import Backbone

    p = _Parser(prog="cabr", description="Content-aware stripe removal for vessel masks.")
    p.add_argument("--threads", type=int, default=1, help="worker threads for corpus generation and evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        return sp

    sp = add("phantom", cmd_phantom, "generate a phantom corpus")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    sp = add("synth", cmd_synth, "synthesise a stripe into an image")
    sp.add_argument("--image", required=True)
    sp.add_argument("--labels")
    sp.add_argument("--rows", help="stripe rows as start:stop")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["adbma", "gauss"], default="adbma")
    sp.add_argument("--offset", type=float, help="Gauss brightening offset (default P90 - P50)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--labels-out")
    sp.add_argument("--row-csv", help="write per-column intensities of one row, before and after")
    sp.add_argument("--row", type=int, help="row for --row-csv (default: first stripe row)")

    sp = add("train", cmd_train, "self-supervised training on a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out-checkpoint", required=True)
    sp.add_argument("--log-dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps-per-epoch", type=int)
    sp.add_argument("--batch-size", type=int)

    sp = add("infer", cmd_infer, "correct the stripe rows of one mask")
    for name in ("--image", "--mask", "--labels", "--checkpoint", "--out-mask"):
        sp.add_argument(name, required=True)
    sp.add_argument("--overlay", help="also write an enhanced PPM with stripe rows tinted")

    sp = add("enhance", cmd_enhance, "multiply an image by its vessel mask")
    sp.add_argument("--image", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--labels")
    sp.add_argument("--overlay")

    sp = add("eval", cmd_eval, "stripe-restricted Dice over a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--pooled", action="store_true", help="pool pixel counts instead of averaging per image")

    sp = add("gradcheck", cmd_gradcheck, "run the finite-difference gradient suite")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("params", cmd_params, "print the trainable parameter count")
    sp.add_argument("--channels", type=int, default=16)
    sp.add_argument("--variant", choices=[b.value for b in Backbone], default=Backbone.TWO_BRANCH.value)

    add("config", cmd_config, "print the effective configuration")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    from .config import ConfigError
    from .imaging import FormatError
    from .nn.checkpoint import CheckpointError
    from .trainer import NonFiniteLossError, SamplingError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cabr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"cabr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, CheckpointError, SamplingError, OSError, ValueError, KeyError) as exc:
        print(f"cabr {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
