"""Command-line interface: gen, train, refine, eval, gradcheck, params.

Exit codes are a stable scripting contract: 0 success, 1 usage or
configuration error, 2 data error (unreadable or inconsistent files),
3 numerical failure (divergence, non-finite values, failed gradient
check).  Reports go to stdout; diagnostics go to stderr.  The PPAC_THREADS
environment variable caps the worker threads of the numeric libraries
(default 1, keeping runs reproducible).
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import fileio
from .adaptive_conv import (AdaptiveConvConfig, AdaptiveKernelParams,
                            NormalizationMode)
from .config import ConfigError, load_config
from .datagen import N_CLASSES, SceneSpec, generate_dataset
from .gradcheck import check_adaptive_conv, check_network
from .metrics import eval_flow, eval_segmentation
from .networks import NetInputs, build_net
from .optim import LrSchedule
from .tensor import Tensor
from .training import TrainingDiverged, train_epochs

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        raise _UsageError(message)


def _limit_threads() -> None:
    value = os.environ.get("PPAC_THREADS", "1")
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise _UsageError(f"PPAC_THREADS must be a positive integer, got {value!r}")
    import threadpoolctl
    threadpoolctl.threadpool_limits(n)


def _task_name(value: str) -> str:
    aliases = {"flow": "flow", "seg": "segmentation", "segmentation": "segmentation"}
    if value not in aliases:
        raise _UsageError(f"unknown task {value!r}")
    return aliases[value]


def _parse_size(value: str) -> tuple[int, int]:
    try:
        h, w = value.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise _UsageError(f"--size expects HxW, got {value!r}") from None


# ------------------------------------------------------------------ gen

def _cmd_gen(args) -> int:
    task = _task_name(args.task)
    h, w = _parse_size(args.size)
    try:
        spec = SceneSpec(h=h, w=w, n_objects=args.objects,
                         outlier_density=args.density,
                         blur_radius=args.blur, task=task)
    except ValueError as e:
        raise _UsageError(str(e))
    scenes = generate_dataset(spec, args.count, args.seed)
    manifest = fileio.save_dataset(args.out, scenes, spec, args.seed)
    print(f"wrote {len(scenes)} scenes to {args.out} (manifest {manifest})")
    return EXIT_OK


# ---------------------------------------------------------------- train

def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if not cfg.data:
        raise ConfigError("data: required for training")
    scenes = fileio.load_dataset(cfg.data)
    if cfg.task != scenes[0].spec.task:
        raise fileio.FileFormatError(
            f"config task {cfg.task!r} != dataset task {scenes[0].spec.task!r}")
    if cfg.val_count >= len(scenes):
        raise ConfigError("val_count: must leave at least one training scene")
    train_scenes = scenes[:len(scenes) - cfg.val_count]
    val_scenes = scenes[len(scenes) - cfg.val_count:]

    net = build_net(cfg.kind, cfg.task, seed=cfg.seed, mode=cfg.mode,
                    epsilon_denom=cfg.epsilon_denom)
    group_base = {}
    if cfg.lr_combination is not None:
        group_base["combination"] = cfg.lr_combination
    schedule = LrSchedule(base_lr=cfg.base_lr, halve_every=cfg.halve_every,
                          group_base=group_base)
    loss = "aee" if cfg.task == "flow" else "cross_entropy"
    result = train_epochs(net, train_scenes, val_scenes, schedule,
                          epochs=cfg.epochs, loss=loss, batch_size=cfg.batch,
                          crop=cfg.crop, seed=cfg.seed)

    os.makedirs(cfg.out_dir, exist_ok=True)
    best_path = os.path.join(cfg.out_dir, "best.ckpt")
    final_path = os.path.join(cfg.out_dir, "final.ckpt")
    fileio.save_checkpoint(best_path, net)        # best-on-val params restored
    for p in net.store:
        np.copyto(p.value, result.final_params[p.name])
    fileio.save_checkpoint(final_path, net)
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    with open(log_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "lr", "train_loss", "val_metric"])
        for row in result.log:
            writer.writerow([row["epoch"], f"{row['lr']:.9g}",
                             f"{row['train_loss']:.9g}",
                             f"{row['val_metric']:.9g}"])
    print(f"best epoch {result.best_epoch} "
          f"{result.val_metric} {result.best_val:.6f}")
    print(f"checkpoints: {best_path} {final_path}")
    print(f"log: {log_path}")
    return EXIT_OK


# --------------------------------------------------------------- refine

def _load_guidance(path) -> np.ndarray:
    return (fileio.read_png_image(path) - 0.5) * 2.0


def _logprob_prefix(path) -> str:
    return os.path.join(path, "logprob") if os.path.isdir(path) else path


def _cmd_refine(args) -> int:
    net = fileio.load_checkpoint(args.checkpoint)
    if net.task == "flow":
        estimate = fileio.read_flo(args.estimate)
    else:
        estimate = fileio.read_channels(args.estimate, N_CLASSES)
    log_prob = fileio.read_channels(_logprob_prefix(args.logprob),
                                    net.probability_channels)
    guidance = _load_guidance(args.guidance)

    shapes = {"estimate": estimate.shape[1:], "logprob": log_prob.shape[1:],
              "guidance": guidance.shape[1:]}
    base = shapes["estimate"]
    for name, shape in shapes.items():
        if shape != base:
            raise fileio.FileFormatError(
                f"resolution mismatch: {name} is {shape[0]}x{shape[1]}, "
                f"estimate is {base[0]}x{base[1]}")

    inputs = NetInputs(
        estimate=Tensor(estimate[None].astype(net.dtype)),
        log_probability=Tensor(log_prob[None].astype(net.dtype)),
        guidance=Tensor(guidance[None].astype(net.dtype)),
    )
    out, _ = net.forward(inputs)
    refined = out.data[0]
    if not np.all(np.isfinite(refined)):
        print("non-finite values in refined output", file=sys.stderr)
        return EXIT_NUMERIC
    if net.task == "flow":
        fileio.write_flo(args.out, refined)
    else:
        fileio.write_png_labels(args.out, np.argmax(refined, axis=0))
    print(f"wrote {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- eval

def _cmd_eval(args) -> int:
    task = _task_name(args.task)
    lines = []
    if task == "flow":
        pred = fileio.read_flo(args.pred)
        gt = fileio.read_flo(args.gt)
        labels = None
        if args.labels:
            labels = fileio.read_png_labels(args.labels)[None]
        elif args.boundary:
            print("warning: --boundary needs --labels; skipping boundary_aee",
                  file=sys.stderr)
        report = eval_flow(pred[None], gt[None], labels=labels,
                           boundary_radius=args.boundary_radius)
        lines.append(("aee", report.aee))
        lines.append(("out", report.outlier_rate_3px))
        if labels is not None and report.boundary_aee is not None:
            lines.append(("boundary_aee", report.boundary_aee))
    else:
        pred = fileio.read_png_labels(args.pred)
        gt = fileio.read_png_labels(args.gt)
        if pred.shape != gt.shape:
            raise fileio.FileFormatError(
                f"resolution mismatch: pred {pred.shape} vs gt {gt.shape}")
        onehot = np.zeros((1, N_CLASSES) + pred.shape, dtype=np.float32)
        clipped = np.clip(pred, 0, N_CLASSES - 1)
        onehot[0, clipped, np.arange(pred.shape[0])[:, None],
               np.arange(pred.shape[1])[None, :]] = 1.0
        report = eval_segmentation(onehot, gt[None])
        lines.append(("miou", report.miou))

    for name, value in lines:
        print(f"{name} {value:.6f}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([n for n, _ in lines])
            writer.writerow([f"{v:.6f}" for _, v in lines])
    return EXIT_OK


# ------------------------------------------------------------ gradcheck

def _gradcheck_layer_cases(rng):
    """Layer-level cases: all modes with and without features/confidences."""
    n, d, h, w = 1, 2, 5, 6
    for mode in NormalizationMode:
        for use_f in (False, True):
            for use_c in (False, True):
                for shared in (False, True):
                    d_out = d if shared else 3
                    s = 3
                    if shared:
                        weight = rng.uniform(0.05, 0.15, size=(1, 1, s, s))
                    else:
                        weight = rng.normal(size=(d_out, d, s, s)) * 0.3
                    lw = (np.log(np.abs(weight) + 0.05)
                          if mode is NormalizationMode.ADVANCED else None)
                    params = AdaptiveKernelParams(
                        weight, lw, rng.normal(size=(d_out,)) * 0.1, shared)
                    cfg = AdaptiveConvConfig(
                        mode=mode,
                        features=Tensor(rng.normal(size=(n, 2, h, w)) * 0.7)
                        if use_f else None,
                        confidences=Tensor(rng.uniform(0.1, 1.0, size=(n, 1, h, w)))
                        if use_c else None)
                    x = Tensor(rng.normal(size=(n, d, h, w)))
                    label = (f"{mode.value} shared={int(shared)} "
                             f"features={int(use_f)} confidences={int(use_c)}")
                    yield label, params, cfg, x


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    failed = False
    for label, params, cfg, x in _gradcheck_layer_cases(rng):
        report = check_adaptive_conv(params, cfg, x, seed=args.seed)
        print(f"layer {label}: {report}")
        failed |= not report.passed

    for kind in ("ppac", "pac", "simple"):
        net = build_net(kind, "flow", seed=args.seed, dtype=np.float64)
        inputs = NetInputs(
            estimate=Tensor(rng.normal(size=(1, 2, 6, 7))),
            log_probability=Tensor(rng.uniform(-3, 0, size=(1, 5, 6, 7))),
            guidance=Tensor(rng.uniform(-1, 1, size=(1, 3, 6, 7))))
        report = check_network(net, inputs, seed=args.seed,
                               max_coords=args.net_coords)
        print(f"network {kind}-flow: {report}")
        failed |= not report.passed

    return EXIT_NUMERIC if failed else EXIT_OK


# --------------------------------------------------------------- params

def _cmd_params(args) -> int:
    task = _task_name(args.task)
    net = build_net(args.kind, task, seed=0)
    by_branch = {}
    for p in net.store:
        branch = p.name.split(".")[0]
        by_branch[branch] = by_branch.get(branch, 0) + p.value.size
    for branch in ("guidance", "probability", "combination"):
        if branch in by_branch:
            print(f"{branch} {by_branch[branch]}")
    print(f"total {net.parameter_count()}")
    return EXIT_OK


# ----------------------------------------------------------------- main

def _build_parser() -> _Parser:
    parser = _Parser(prog="ppac",
                     description="Confidence-adaptive refinement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", default="flow")
    p.add_argument("--size", default="96x128", help="HxW")
    p.add_argument("--objects", type=int, default=5)
    p.add_argument("--density", type=float, default=0.05)
    p.add_argument("--blur", type=float, default=2.0)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a refinement network")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("refine", help="refine one estimate with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--estimate", required=True,
                   help=".flo (flow) or channel-file prefix (segmentation)")
    p.add_argument("--logprob", required=True,
                   help="channel-file prefix or directory")
    p.add_argument("--guidance", required=True, help="PNG image")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="compare a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--task", default="flow")
    p.add_argument("--labels", help="object label PNG for boundary metrics")
    p.add_argument("--boundary", action="store_true",
                   help="request the boundary-band metric")
    p.add_argument("--boundary-radius", type=float, default=10.0)
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--net-coords", type=int, default=300,
                   help="sampled coordinates per full network")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("params", help="parameter counts of an architecture")
    p.add_argument("--kind", required=True, choices=("ppac", "pac", "simple"))
    p.add_argument("--task", required=True)
    p.set_defaults(func=_cmd_params)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        _limit_threads()
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (fileio.FileFormatError, FileNotFoundError, IsADirectoryError,
            PermissionError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
