"""``picr {gen|train|eval|infer|gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(unreadable data, checkpoint refusal, failed gradient check, ...).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import checkpoint as ckpt_mod
from . import config as config_mod
from . import engine, gradcheck
from .config import PRESETS, Config
from .data import generate_to_dir, load_dataset, synthetic_dataset
from .errors import (CheckpointError, ConfigError, DatasetError, DomainError, ShapeError, TapeError,
                     TrainingError)
from .model import PICRNet

log = logging.getLogger("picr")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SEED_ENV = "PICR_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it through our own code instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64 or 48x64, got {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"size must look like 64 or 48x64, got {text!r}")
    return dims


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (later sources override earlier ones)")
    g.add_argument("--preset", choices=sorted(PRESETS), default="toy", help="base settings (default: toy)")
    g.add_argument("--config", metavar="FILE", help="flat 'section.key = value' file applied over the preset")
    g.add_argument("--ablation", type=int, metavar="ID", help="ablation variant id, see the list below")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. --set optim.lr=5e-4 (repeatable)")
    g.add_argument("--seed", type=int, help=f"random seed; falls back to ${SEED_ENV}, then the config")


def build_config(args) -> Config:
    """Preset, then --config file, then --ablation, then --set / dedicated flags."""
    cfg = PRESETS[args.preset]()
    file_has_seed = False
    if args.config:
        text = Path(args.config).read_text()
        cfg = config_mod.loads(text, cfg)
        file_has_seed = any(line.split("#", 1)[0].partition("=")[0].strip() == "seed" for line in text.splitlines())
    if args.ablation is not None:
        cfg = config_mod.apply_ablation(cfg, args.ablation)
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
        file_has_seed |= key.strip() == "seed"
    for flag, key in (("lr", "optim.lr"), ("batch", "optim.batch"), ("epochs", "optim.epochs"),
                      ("steps", "optim.max_steps"), ("checkpoint_every", "optim.checkpoint_every")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg.set(key, value)
    if args.seed is not None:
        cfg.seed = args.seed
    elif not file_has_seed and (env := _env_seed()) is not None:
        cfg.seed = env
    return cfg.validate()


def _load_model(path) -> PICRNet:
    ckpt = ckpt_mod.load(path)
    model = PICRNet(ckpt.config)
    ckpt_mod.apply_to_model(ckpt, model)
    return model


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    generate_to_dir(args.out, args.count, args.size, seed, args.quality, args.format)
    print(f"wrote {args.count} samples ({args.size[0]}x{args.size[1]}, {args.quality}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    size = cfg.model.input_size
    if args.synthetic is not None:
        samples = synthetic_dataset(args.synthetic, (size, size), seed=cfg.seed)
    else:
        samples = engine.load_samples(load_dataset(args.data))
    if not samples:
        raise DatasetError("dataset is empty")
    for s in samples:
        if s.gt.shape != (size, size):
            raise ShapeError(f"sample {s.name} is {s.gt.shape[0]}x{s.gt.shape[1]}, the config expects {size}x{size}")
    out = Path(args.out)
    result = engine.train(cfg, samples, out)
    (out / "config.txt").write_text(cfg.dumps())
    totals = result.totals
    print(f"steps={len(totals)} initial_loss={totals[0]:.6f} final_loss={totals[-1]:.6f} "
          f"checkpoint={out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    samples = engine.load_samples(load_dataset(args.data))
    report = engine.evaluate(model, samples, args.dump)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    else:
        sys.stdout.write(report.to_csv())
    print(report.summary())
    return EXIT_OK


def cmd_infer(args) -> int:
    model = _load_model(args.checkpoint)
    res = engine.infer(model, args.rgb, args.depth, args.out, args.gt)
    H, W = res.saliency.shape
    print(f"wrote {args.out} ({H}x{W})")
    if res.mae is not None:
        print(f"mae={res.mae:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.scope == "full":
        cfg = build_config(args)
        t0 = time.perf_counter()
        rows = gradcheck.check_full(cfg, seed=cfg.seed)
        elapsed = time.perf_counter() - t0
    else:
        names = gradcheck.OP_NAMES if args.scope == "op" else gradcheck.MODULE_NAMES
        if args.target and args.target not in names:
            raise UsageError(f"unknown {args.scope} target {args.target!r}; choose from {', '.join(names)}")
        seed = args.seed if args.seed is not None else (_env_seed() or 0)
        rows, elapsed = gradcheck.run(args.scope, args.target, seed)
    print(gradcheck.format_table(rows))
    ok = all(r.passed for r in rows)
    print(f"{'PASS' if ok else 'FAIL'} scope={args.scope} groups={len(rows)} "
          f"max_rel_err={max(r.max_rel_err for r in rows):.3e} time={elapsed:.1f}s")
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="picr", description="RGB-D salient object detection: data, training, evaluation, checks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.RawDescriptionHelpFormatter
    epilog = "ablation ids:\n" + config_mod.ablation_help()

    g = sub.add_parser("gen", help="write synthetic samples as <out>/{rgb,depth,gt}/<name>.png")
    g.add_argument("--out", required=True, metavar="DIR")
    g.add_argument("-n", "--count", type=int, default=8)
    g.add_argument("--size", type=_size, default=(64, 64), help="64 or HxW (default 64)")
    g.add_argument("--quality", choices=("good", "degraded"), default="good")
    g.add_argument("--format", choices=("png", "pgm"), default="png")
    g.add_argument("--seed", type=int, help=f"first sample seed; falls back to ${SEED_ENV}, then 0")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train and write model.ckpt + losses.csv", epilog=epilog, formatter_class=fmt)
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="DIR", help="dataset root with rgb/ depth/ gt/")
    src.add_argument("--synthetic", type=int, metavar="N", help="train on N generated samples")
    t.add_argument("--out", required=True, metavar="DIR")
    t.add_argument("--steps", type=int, help="stop after this many optimizer steps (optim.max_steps)")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--checkpoint-every", type=int, metavar="K", help="also save every K epochs")
    _add_config_args(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-image MAE / max-F / S-measure CSV and a summary line")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, metavar="DIR")
    e.add_argument("--csv", metavar="FILE", help="write the per-image CSV here instead of stdout")
    e.add_argument("--dump", metavar="DIR", help="also write predictions as 8-bit PNGs")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict one saliency map at the input's original size")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--rgb", required=True)
    i.add_argument("--depth", required=True)
    i.add_argument("--out", required=True, help="output PNG path")
    i.add_argument("--gt", help="optional ground truth; prints MAE")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks", epilog=epilog, formatter_class=fmt)
    c.add_argument("--scope", choices=("op", "module", "full"), default="op")
    c.add_argument("--target", help="single op or module name (op/module scopes)")
    _add_config_args(c)
    c.set_defaults(func=cmd_gradcheck)
    return p


RUNTIME_ERRORS = (OSError, DatasetError, CheckpointError, ShapeError, TrainingError, DomainError, TapeError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"picr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"picr {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
