"""Command line entry point.

Subcommands: synth, train, infer, eval, check, scan-dump, kernel-dump.
Configuration comes from ``key = value`` files (``#`` comments) overridden
by repeatable ``--set key=value`` flags; the effective configuration is
echoed to the log.  ``DEFLARE_LOG`` in {quiet, info, debug} controls
verbosity.

Exit codes: 0 success, 1 failed property check, 2 unusable output
directory, 3 malformed image file, 4 unusable checkpoint, 5 image extents
not divisible as the network requires.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import autodiff as ad
from .checks import run_suites
from .errors import CheckpointError, PpmError, ShapeError
from .flare import make_pair
from .metrics import psnr, ssim
from .network import NetworkConfig, load_checkpoint, save_checkpoint
from .ppm import read_ppm, write_ppm
from .scan import local_window_order
from .ssm import discretize_zoh, ssm_kernel
from .training import TrainConfig, build_dataset, train, write_metric_log

log = logging.getLogger("deflare")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_OUTDIR = 2
EXIT_BAD_IMAGE = 3
EXIT_BAD_CHECKPOINT = 4
EXIT_BAD_EXTENTS = 5


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("DEFLARE_LOG", "info"), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", force=True)


def parse_config_file(path: str) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment, blanks ignored."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: malformed config line {raw.strip()!r}")
            values[key.strip()] = val.strip()
    return values


def _coerce(text: str, target_type):
    if target_type is bool:
        return text.lower() in ("1", "true", "yes", "on")
    if target_type is tuple:
        return tuple(int(v) for v in text.split(","))
    return target_type(text)


def _apply(cfg, values: dict[str, str]):
    kwargs = {}
    for f in fields(cfg):
        if f.name in values:
            base = type(getattr(cfg, f.name))
            kwargs[f.name] = _coerce(values[f.name], base)
    return replace(cfg, **kwargs)


def build_configs(args) -> tuple[NetworkConfig, TrainConfig]:
    """Defaults, then config file, then --set overrides; echo the result."""
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = val.strip()
    if getattr(args, "seed", None) is not None:
        values.setdefault("seed", str(args.seed))
        values.setdefault("dataset_seed", str(args.seed + 1))
    if getattr(args, "iters", None) is not None:
        values["iters"] = str(args.iters)
    net_cfg = _apply(NetworkConfig(), values)
    train_cfg = _apply(TrainConfig(), values)
    for key, val in sorted(values.items()):
        log.info("config override: %s = %s", key, val)
    log.info("effective network config: %s", net_cfg)
    log.info("effective training config: %s", train_cfg)
    return net_cfg, train_cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        os.makedirs(args.out, exist_ok=True)
        probe = os.path.join(args.out, ".write-probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        log.error("output directory %s is not writable: %s", args.out, exc)
        return EXIT_BAD_OUTDIR
    for i in range(args.count):
        pair = make_pair(args.height, args.width, args.seed + i)
        stem = os.path.join(args.out, f"{i:04d}")
        write_ppm(stem + "_input.ppm", pair.image)
        write_ppm(stem + "_gt.ppm", pair.background)
        write_ppm(stem + "_flare.ppm", np.clip(pair.flare, 0.0, 1.0))
        with open(stem + "_meta.txt", "w") as fh:
            for key, val in sorted(pair.meta.items()):
                fh.write(f"{key}={val}\n")
    log.info("wrote %d pairs to %s", args.count, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    net_cfg, train_cfg = build_configs(args)
    state, breakdowns = train(net_cfg, train_cfg)
    save_checkpoint(state, args.out)
    write_metric_log(args.out + ".log", breakdowns)
    log.info("checkpoint: %s  metric log: %s (%d lines)",
             args.out, args.out + ".log", len(breakdowns))
    return EXIT_OK


def cmd_infer(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_BAD_CHECKPOINT
    try:
        image = read_ppm(args.input)
    except PpmError as exc:
        log.error("%s", exc)
        return EXIT_BAD_IMAGE
    try:
        with ad.no_grad():
            i0_hat, f_hat = state.net(image)
    except ShapeError as exc:
        log.error("%s", exc)
        return EXIT_BAD_EXTENTS
    write_ppm(args.out_prefix + "_deflared.ppm", np.clip(i0_hat.data, 0, 1))
    write_ppm(args.out_prefix + "_flare.ppm", np.clip(f_hat.data, 0, 1))
    log.info("wrote %s_deflared.ppm and %s_flare.ppm", args.out_prefix, args.out_prefix)
    return EXIT_OK


def _eval_rows(state, directory: str):
    ids = sorted(
        name[:-len("_input.ppm")]
        for name in os.listdir(directory) if name.endswith("_input.ppm")
    )
    rows = []
    for stem in ids:
        inp = read_ppm(os.path.join(directory, stem + "_input.ppm"))
        gt = read_ppm(os.path.join(directory, stem + "_gt.ppm"))
        with ad.no_grad():
            i0_hat, _ = state.net(inp)
        pred = np.clip(i0_hat.data, 0, 1)
        rows.append((stem, psnr(inp, gt), ssim(inp, gt), psnr(pred, gt), ssim(pred, gt)))
    return rows


def cmd_eval(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_BAD_CHECKPOINT
    try:
        rows = _eval_rows(state, args.dir)
    except PpmError as exc:
        log.error("%s", exc)
        return EXIT_BAD_IMAGE
    except ShapeError as exc:
        log.error("%s", exc)
        return EXIT_BAD_EXTENTS
    print(f"{'id':<12}{'psnr_in':>9}{'ssim_in':>9}{'psnr_out':>10}{'ssim_out':>10}")
    for stem, pi, si, po, so in rows:
        print(f"{stem:<12}{pi:>9.2f}{si:>9.4f}{po:>10.2f}{so:>10.4f}")
    if rows:
        mp_in = float(np.mean([r[1] for r in rows]))
        ms_in = float(np.mean([r[2] for r in rows]))
        mp_out = float(np.mean([r[3] for r in rows]))
        ms_out = float(np.mean([r[4] for r in rows]))
        print(f"{'mean':<12}{mp_in:>9.2f}{ms_in:>9.4f}{mp_out:>10.2f}{ms_out:>10.4f}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_suites(args.suite, seed=args.seed or 0)
    failed = 0
    for suite, name, ok, detail in results:
        line = f"{'PASS' if ok else 'FAIL'} {suite}:{name}"
        if detail:
            line += f" ({detail})"
        print(line)
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} properties failed")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_scan_dump(args) -> int:
    order = local_window_order(args.height, args.width, args.win_h, args.win_w)
    print(",".join(str(int(v)) for v in order.forward))
    return EXIT_OK


def cmd_kernel_dump(args) -> int:
    a = np.array([float(v) for v in args.a.split(",")])
    b = np.array([float(v) for v in args.b.split(",")])
    c = np.array([float(v) for v in args.c.split(",")])
    d = discretize_zoh(a, b, np.full(args.length, args.delta), c=c)
    for coeff in ssm_kernel(d):
        print(f"{coeff:.17g}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deflare",
        description="Synthesize flare imagery, train and run the removal network.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic flare pair files")
    s.add_argument("--count", "-n", type=int, default=8)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train from scratch and write a checkpoint")
    s.add_argument("--config", help="key = value configuration file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--seed", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--out", required=True, help="checkpoint path; log goes to <out>.log")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", help="run a checkpoint on one PPM image")
    s.add_argument("checkpoint")
    s.add_argument("input")
    s.add_argument("out_prefix")
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", help="score a checkpoint against a pair directory")
    s.add_argument("checkpoint")
    s.add_argument("dir")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("check", help="run property suites")
    s.add_argument("suite", nargs="?", default="all",
                   choices=["all", "ssm", "scan", "grad", "net"])
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_check)

    s = sub.add_parser("scan-dump", help="print a window scan order as CSV")
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--win-h", type=int, required=True)
    s.add_argument("--win-w", type=int, required=True)
    s.set_defaults(fn=cmd_scan_dump)

    s = sub.add_parser("kernel-dump", help="print the causal kernel, one value per line")
    s.add_argument("--a", required=True, help="comma-separated state diagonal")
    s.add_argument("--b", required=True)
    s.add_argument("--c", required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--length", type=int, required=True)
    s.set_defaults(fn=cmd_kernel_dump)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
