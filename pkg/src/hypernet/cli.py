"""Command-line entry point: ``hypernet <subcommand> ...``.

Exit codes: 0 success, 1 a check reported FAIL, 2 bad configuration or
arguments, 3 unreadable or inconsistent data or checkpoint, 4 numerical abort
(non-finite values or state reconstruction drift).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import blocks as hb
from .config import ConfigError, load_config
from .data import TASKS, DataError, generate_synthetic, load_dataset
from .grad import (FD_TOL, MODE_TOL, ReconstructionError, flatness, measure_peak, memory_report,
                   oracle_chain, reversal_errors, corrupted_vjp)
from .htns import TensorFormatError, read_tensor, write_tensor
from .losses import cross_entropy_loss, l2_loss
from .train import check_compatible, class_weights, evaluate, load_checkpoint, make_loss, train_loop
from .wavelet import band_tensors, dwt_decompose, dwt_reconstruct

log = logging.getLogger("hypernet")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
REVERSAL_TOL = 1e-9


class UsageError(Exception):
    """Arguments that parse but make no sense together."""


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from e


def _modes(s: str) -> list[str]:
    modes = [m.strip() for m in s.split(",") if m.strip()]
    for m in modes:
        if m not in ("reversible", "stored"):
            raise argparse.ArgumentTypeError(f"unknown mode {m!r}")
    return modes


def _small_spec(depth: int, levels: int, topology: str, width: int, channels: int = 1):
    stages = max(levels, 1) * (2 if topology == "downup" else 1)
    if depth < stages or depth % stages:
        raise UsageError(f"depth {depth} is not a positive multiple of the {stages} stages "
                         f"implied by levels={levels}, topology={topology}")
    head = "classifier" if topology == "down" else "segmenter"
    return hb.NetworkSpec(input_channels=channels, width=width, levels=levels,
                          blocks_per_level=depth // stages, head=head, classes=3, topology=topology)


def _small_problem(spec: hb.NetworkSpec, seed: int):
    rng = np.random.default_rng(seed)
    size = max(8, 2**spec.levels)
    params = hb.init_params(spec, rng)
    x = rng.standard_normal((2, spec.input_channels, size, size))
    if spec.head == "classifier":
        target = rng.integers(0, spec.classes, size=2)
    else:
        target = rng.integers(0, spec.classes, size=(2, size, size))
    return params, x, target


# --- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tc = cfg.train_config()
    log.info("train: config %s seed %d mode %s", args.config, tc.seed, tc.mode)
    train = load_dataset(cfg.path("data.train"))
    val = load_dataset(cfg.path("data.val")) if cfg.get("data.val") else None
    model = cfg.model(train.task, train.x.shape[1], train.classes)
    try:
        check_compatible(model, train)
        if val is not None:
            check_compatible(model, val)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    resume = None
    if args.resume:
        resume = _load_ckpt(args.resume)
        if resume.model.to_json() != model.to_json():
            raise ConfigError("checkpoint network does not match the config's net.* settings")
    res = train_loop(model, tc, train, val, cfg.path("out.dir"), resume)
    m = evaluate(model, res.params, train, make_loss(tc, resume.weights if resume else class_weights(tc, train)))
    print(_metric_line("train", res.epoch, m))
    return EXIT_OK


def _metric_line(tag: str, epoch: int, m: dict) -> str:
    return (f"{tag} epoch={epoch} loss={m['loss']!r} global_accuracy={m['global_accuracy']!r} "
            f"class_average_accuracy={m['class_average_accuracy']!r}")


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load checkpoint {path}: {e}") from e


def cmd_eval(args) -> int:
    ck = _load_ckpt(args.checkpoint)
    data = load_dataset(args.data)
    try:
        check_compatible(ck.model, data)
    except ValueError as e:
        raise DataError(str(e)) from e
    m = evaluate(ck.model, ck.params, data, make_loss(ck.config, ck.weights))
    csv = ("epoch,loss,global_acc,class_avg\n"
           f"{ck.epoch},{m['loss']!r},{m['global_accuracy']!r},{m['class_average_accuracy']!r}\n")
    print(_metric_line("eval", ck.epoch, m))
    sys.stdout.write(csv)
    if args.csv:
        Path(args.csv).write_text(csv, encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = _small_spec(args.depth, args.levels, args.topology, args.width)
    params, x, target = _small_problem(spec, args.seed)
    print(f"# gradcheck depth={args.depth} levels={args.levels} topology={args.topology} seed={args.seed}")
    if args.corrupt_vjp:
        with corrupted_vjp(args.corrupt_vjp):
            rows = oracle_chain(spec, params, x, cross_entropy_loss, target)
    else:
        rows = oracle_chain(spec, params, x, cross_entropy_loss, target)
    print("param,fd_vs_stored,stored_vs_reversible,excluded")
    for r in rows:
        print(f"{r.name},{r.fd_vs_stored:.3e},{r.stored_vs_reversible:.3e},{r.excluded}")
    fd = max(r.fd_vs_stored for r in rows)
    md = max(r.stored_vs_reversible for r in rows)
    ok_fd, ok_md = fd <= FD_TOL, md <= MODE_TOL
    print(f"{'PASS' if ok_fd else 'FAIL'} fd_vs_stored max={fd:.3e} tol={FD_TOL:g}")
    print(f"{'PASS' if ok_md else 'FAIL'} stored_vs_reversible max={md:.3e} tol={MODE_TOL:g}")
    return EXIT_OK if ok_fd and ok_md else EXIT_FAIL


def cmd_revcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    print(f"# revcheck levels={args.levels} topology={args.topology} seed={args.seed}")
    print("depth,max_rel_error")
    worst = 0.0
    for depth in args.depths:
        spec = _small_spec(depth, args.levels, args.topology, args.width, channels=3)
        params = hb.init_params(spec, rng)
        x = rng.standard_normal((1, 3, args.size, args.size))
        err = max(reversal_errors(x, spec, params))
        worst = max(worst, err)
        print(f"{depth},{err:.3e}")
    ok = worst < REVERSAL_TOL
    print(f"{'PASS' if ok else 'FAIL'} reversal max={worst:.3e} tol={REVERSAL_TOL:g}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_membench(args) -> int:
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((1, 3, args.size, args.size))
    runs = []
    for mode in args.mode:
        for depth in args.depths:
            # no coarsening, so every block sees a state of the same size
            spec = hb.NetworkSpec(input_channels=3, width=args.width, levels=0, blocks_per_level=depth,
                                  head="regressor", mode=mode)
            params = hb.init_params(spec, np.random.default_rng(args.seed))
            target = np.zeros((1, 1, args.size, args.size))
            runs.append((depth, mode, measure_peak(spec, params, x, l2_loss, target, mode)))
    report = memory_report(runs)
    sys.stdout.write(report.to_csv())
    for mode in args.mode:
        log.info("%s peak spread across depths: %.3f", mode, flatness(report.curve(mode)))
    return EXIT_OK


def cmd_dwt(args) -> int:
    if args.levels < 1:
        raise UsageError("levels must be >= 1")
    try:
        x = read_tensor(args.input)
    except (OSError, TensorFormatError) as e:
        raise DataError(f"cannot read {args.input}: {e}") from e
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise UsageError(f"expected a (c,h,w) or (h,w) tensor, got shape {x.shape}")
    x = x.astype(np.float64)
    s = 2**args.levels
    if x.shape[1] % s or x.shape[2] % s:
        raise UsageError(f"spatial dims {x.shape[1]}x{x.shape[2]} must be divisible by {s} "
                         f"for {args.levels} level(s)")
    stacks = dwt_decompose(x, args.levels)
    bands = band_tensors(stacks)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for name, t in bands.items():
        write_tensor(out / f"{name}.htns", t)
    err = float(np.max(np.abs(dwt_reconstruct(stacks) - x))) if x.size else 0.0
    print(f"bands={len(bands)}")
    print(f"reconstruction_error={err:.3e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    m = generate_synthetic(args.task, args.n, args.seed, args.output)
    print(f"wrote {len(m.entries)} {args.task} samples to {Path(args.output) / 'manifest.tsv'}")
    return EXIT_OK


# --- wiring --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypernet", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest file or its directory")
    p.add_argument("--csv", help="also write the metrics CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite differences vs stored vs reversible gradients")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", choices=["down", "downup"], default="down")
    p.add_argument("--width", type=int, default=1)
    p.add_argument("--corrupt-vjp", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("revcheck", help="state reconstruction error over a depth sweep")
    p.add_argument("--depths", type=_int_list, default=[8, 16, 34])
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", choices=["down", "downup"], default="down")
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_revcheck)

    p = sub.add_parser("membench", help="peak activation bytes against depth")
    p.add_argument("--depths", type=_int_list, default=[8, 16, 32, 64])
    p.add_argument("--mode", type=_modes, default=["reversible", "stored"])
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_membench)

    p = sub.add_parser("dwt", help="Haar pyramid of an HTNS image with a reconstruction check")
    p.add_argument("--input", required=True)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_dwt)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TensorFormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ReconstructionError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
