"""Command-line entry point: synthesis, training, restoration, evaluation,
gradient verification and checkpoint inspection.

Exit codes: 0 success, 1 runtime error, 2 usage error. Every command
prints an ``effective-config:`` line from which the run can be reproduced
given the same input files.
"""

from __future__ import annotations

import os

# DAN_THREADS caps worker threads, including the BLAS pools, so it must be
# applied before numpy is first imported.
_dan_threads = os.environ.get("DAN_THREADS")
if _dan_threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _dan_threads)

import argparse
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .expert import ExpertConfig, expert_forward
from .gating import colorize_jet, dan_forward
from .gradcheck import run_battery
from .losses import LossConfig, psnr, ssim
from .ppm import PpmError, read_ppm, write_pgm, write_ppm
from .synth import MODES, DegradationSpec, make_dataset
from .tensor import Tensor, no_grad
from .train import (
    TrainConfig,
    TrainingDiverged,
    dan_from_checkpoint,
    expert_from_checkpoint,
    train_expert,
    train_gate,
)


class UsageError(ValueError):
    pass


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _manifest_path(data_arg: str) -> str:
    if os.path.isdir(data_arg):
        return os.path.join(data_arg, "manifest.tsv")
    return data_arg


def _check_size(size: int):
    if size < 32 or size > 128 or size & (size - 1):
        raise UsageError(f"--size must be a power of two in [32, 128], got {size}")


def _print_config(name: str, items: dict):
    body = " ".join(f"{k}={v}" for k, v in items.items())
    print(f"effective-config: {name} {body}")


# -- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    _check_size(args.size)
    if args.count < 1:
        raise UsageError(f"--count must be positive, got {args.count}")
    spec = DegradationSpec(mode=args.mode, seed=args.seed, size=args.size)
    _print_config("synth", {"mode": args.mode, "count": args.count, "size": args.size,
                            "seed": args.seed, "out": args.out})
    manifest = make_dataset(spec, args.count, args.out)
    print(f"wrote {args.count} pairs ({2 * args.count} images) and {manifest}")
    return 0


# -- training ----------------------------------------------------------------


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(
        base_lr=args.base_lr,
        max_lr=args.max_lr,
        batch_size=args.batch,
        iterations=args.iters,
        patch_size=args.patch,
        loss=LossConfig(epsilon=args.charbonnier_eps, lambda_st=args.lambda_st),
        seed=args.seed,
    )
    cfg.validate()
    return cfg


def _config_items(cfg: TrainConfig) -> dict:
    return {
        "base_lr": cfg.base_lr, "max_lr": cfg.max_lr, "cyclic_mode": cfg.cyclic_mode,
        "gamma": cfg.gamma, "beta1": cfg.base_momentum, "beta2": cfg.beta2,
        "adam_eps": cfg.adam_eps, "batch": cfg.batch_size, "iters": cfg.iterations,
        "patch": cfg.patch_size, "cycle": cfg.resolved_cycle(),
        "charbonnier_eps": cfg.loss.epsilon, "lambda_st": cfg.loss.lambda_st,
        "seed": cfg.seed,
    }


def cmd_train_expert(args) -> int:
    cfg = _train_config(args)
    expert_cfg = ExpertConfig(
        base_channels=args.channels,
        mst_variant=args.mst_variant,
        attention_variant=args.attn_variant,
    )
    expert_cfg.validate()
    manifest = _manifest_path(args.data)
    if not os.path.exists(manifest):
        return _fail(f"manifest not found: {manifest}")
    out = args.out or os.path.join(os.path.dirname(manifest), f"expert_{args.task}.ckpt")
    items = _config_items(cfg)
    items.update({"task": args.task, "channels": args.channels,
                  "mst_variant": args.mst_variant, "attn_variant": args.attn_variant,
                  "data": manifest, "out": out})
    _print_config("train-expert", items)
    result = train_expert(args.task, manifest, cfg, expert_cfg,
                          ckpt_path=out, log_path=args.log)
    val = "n/a" if result.val_psnr is None else f"{result.val_psnr:.3f} dB"
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final validation PSNR: {val}")
    return 0


def cmd_train_gate(args) -> int:
    cfg = _train_config(args)
    manifest = _manifest_path(args.data)
    for path in (args.dehaze, args.desnow, manifest):
        if not os.path.exists(path):
            return _fail(f"file not found: {path}")
    out = args.out or os.path.join(os.path.dirname(manifest), "dan.ckpt")
    items = _config_items(cfg)
    items.update({"dehaze": args.dehaze, "desnow": args.desnow, "data": manifest, "out": out})
    _print_config("train-gate", items)
    result = train_gate(args.dehaze, args.desnow, manifest, cfg,
                        ckpt_path=out, log_path=args.log)
    val = "n/a" if result.val_psnr is None else f"{result.val_psnr:.3f} dB"
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final validation PSNR: {val}")
    return 0


# -- restore -----------------------------------------------------------------


def _parse_force_gates(text: str):
    try:
        wh, ws = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--force-gates expects 'WH,WS', got {text!r}") from None
    return wh, ws


def cmd_restore(args) -> int:
    if (args.ckpt is None) == (args.dan is None):
        raise UsageError("restore needs exactly one of --ckpt or --dan")
    if args.emit_gates and args.dan is None:
        raise UsageError("--emit-gates requires --dan")
    if not os.path.exists(args.input):
        return _fail(f"input image not found: {args.input}")
    image = read_ppm(args.input)
    h, w = image.shape[1:]
    if h & (h - 1) or w & (w - 1) or h % 4 or w % 4:
        raise UsageError(f"input dims must be powers of two divisible by 4, got {w}x{h}")
    _print_config("restore", {"ckpt": args.ckpt or args.dan, "input": args.input,
                              "output": args.output,
                              "emit_gates": args.emit_gates or "-",
                              "force_gates": args.force_gates or "-"})

    x = Tensor(image[None])
    with no_grad():
        if args.ckpt is not None:
            net = expert_from_checkpoint(load_checkpoint(args.ckpt), trainable=False)
            restored = expert_forward(net, x)
            gates = None
        else:
            dan = dan_from_checkpoint(load_checkpoint(args.dan))
            force = _parse_force_gates(args.force_gates) if args.force_gates else None
            restored, gates = dan_forward(dan, x, force_gates=force)

    write_ppm(args.output, np.clip(restored.data[0], 0.0, 1.0))
    print(f"wrote {args.output}")
    if args.emit_gates:
        os.makedirs(args.emit_gates, exist_ok=True)
        for name, field in (("w_haze", gates.w_haze), ("w_snow", gates.w_snow)):
            plane = field.data[0, 0]
            write_pgm(os.path.join(args.emit_gates, f"{name}_gray.pgm"), plane)
            write_ppm(os.path.join(args.emit_gates, f"{name}_jet.ppm"),
                      colorize_jet(plane).astype(np.float64) / 255.0)
        print(f"wrote gate maps to {args.emit_gates}")
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    pred_files = sorted(f for f in os.listdir(args.pred) if f.endswith(".ppm"))
    gt_files = sorted(f for f in os.listdir(args.gt) if f.endswith(".ppm"))
    if not pred_files:
        return _fail(f"no .ppm files found in {args.pred}")
    for name in pred_files:
        if name not in gt_files:
            return _fail(f"missing ground-truth counterpart for {name}")
    for name in gt_files:
        if name not in pred_files:
            return _fail(f"missing prediction counterpart for {name}")
    _print_config("eval", {"pred": args.pred, "gt": args.gt})

    def score(name):
        a = read_ppm(os.path.join(args.pred, name))
        b = read_ppm(os.path.join(args.gt, name))
        return name, psnr(a, b), ssim(a, b)

    workers = int(os.environ.get("DAN_THREADS", "1"))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(score, pred_files))
    else:
        rows = [score(name) for name in pred_files]

    lines = ["image_id,psnr_db,ssim"]
    for name, p, s in rows:
        lines.append(f"{name},{p:.6f},{s:.6f}")
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_s = float(np.mean([r[2] for r in rows]))
    lines.append(f"mean,{mean_p:.6f},{mean_s:.6f}")
    csv = "\n".join(lines) + "\n"
    print(csv, end="")
    if args.out:
        tmp = args.out + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            f.write(csv)
        os.replace(tmp, args.out)
    return 0


# -- gradcheck / inspect -------------------------------------------------------


def cmd_gradcheck(args) -> int:
    dtype = np.float64 if args.dtype == "float64" else np.float32
    _print_config("gradcheck", {"dtype": args.dtype, "seed": args.seed})
    results = run_battery(dtype=dtype, seed=args.seed, report=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_inspect(args) -> int:
    if not os.path.exists(args.ckpt):
        return _fail(f"checkpoint not found: {args.ckpt}")
    ckpt = load_checkpoint(args.ckpt)
    _print_config("inspect", {"ckpt": args.ckpt})
    total = sum(int(np.prod(t.shape)) for t in ckpt.tensors.values())
    print(f"kind: {ckpt.kind}")
    print(f"task_tag: {ckpt.task_tag}")
    print(f"iteration: {ckpt.iteration}")
    print(f"config: {ckpt.config}")
    print(f"tensors: {len(ckpt.tensors)} ({total} scalars)")
    for name in sorted(ckpt.tensors)[: args.limit]:
        print(f"  {name} {tuple(ckpt.tensors[name].shape)}")
    return 0


# -- parser ---------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-lr", type=float, default=2e-4)
    p.add_argument("--max-lr", type=float, default=3e-4)
    p.add_argument("--lambda-st", type=float, default=0.2)
    p.add_argument("--charbonnier-eps", type=float, default=1e-3)
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.add_argument("--log", default=None, help="CSV training-log path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dannet",
        description="Gated two-expert restoration for hazy and snowy images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a degraded/clean dataset")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-expert", help="pre-train a task expert")
    p.add_argument("--task", choices=("dehaze", "desnow"), required=True)
    p.add_argument("--channels", type=int, default=16, help="base channel count (16 tiny, 32 full)")
    p.add_argument("--mst-variant", default="full",
                   choices=("full", "vc", "local_only", "global_only", "no_spectral"))
    p.add_argument("--attn-variant", default="full",
                   choices=("full", "no_dp", "ca_only", "pa_only"))
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_expert)

    p = sub.add_parser("train-gate", help="train the gate over two frozen experts")
    p.add_argument("--dehaze", required=True, help="dehazing expert checkpoint")
    p.add_argument("--desnow", required=True, help="desnowing expert checkpoint")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_gate)

    p = sub.add_parser("restore", help="restore one image")
    p.add_argument("--ckpt", default=None, help="single-expert checkpoint")
    p.add_argument("--dan", default=None, help="composed two-expert checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--emit-gates", default=None, help="directory for gate-map images")
    p.add_argument("--force-gates", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="PSNR/SSIM over matching prediction/truth dirs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and block")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="print a checkpoint's manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--limit", type=int, default=8, help="tensor names to list")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, PpmError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
