"""Command-line entry point tying the pipeline together.

Subcommands:

* generate-data     — synthesize a split and write it as a container file
* train             — train one condition, write its loss-sample CSV
* experiment        — run all three conditions, write per-condition CSVs
                      plus summary.csv, print the ordering verdict
* eval              — load a checkpoint, report accuracy on a dataset
* preview-transform — PPM contact sheet: originals over warped copies
* grad-check        — finite-difference audit of every op, table of errors

Exit codes: 0 success, 1 usage error, 2 data/IO error, 3 numeric failure.
Every subcommand leaves its input files untouched.
"""

import argparse
import os
import sys

import numpy as np

from .augment import AugmentSpec, NormStats, apply_affine, random_affine_params
from .container import ContainerError
from .data import batch_iter, load_dataset, save_dataset, synthesize_dataset
from .gradcheck import suite
from .model import ModelConfig, init_model, load_model, save_model
from .optim import Optimizer
from .tensor import NumericError, ShapeError, Tensor
from .train import (
    CONDITIONS,
    TrainConfig,
    _TAG_SHUFFLE,
    _TAG_TRAIN_AUG,
    _write_lines,
    derived_seed,
    evaluate,
    export_report,
    run_experiment,
    train_epoch,
)

__all__ = ["main", "parse_args", "dispatch"]

GRAD_TOL = 1e-4


class _DataError(Exception):
    """File or container content problem — distinct exit code from usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_train_flags(p, with_condition):
    if with_condition:
        p.add_argument("--condition", required=True, choices=CONDITIONS,
                       help="which of the three models to train")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.5,
                   help="sgd momentum (ignored by adam)")
    p.add_argument("--loss-stride", type=int, default=1,
                   help="record the loss every Nth batch")
    p.add_argument("--seed", type=int, default=0)


def parse_args(argv):
    top = _Parser(prog="stdense",
                  description="Spatially transformed dense CNN toolkit")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", parents=[], help="synthesize a dataset")
    p.add_argument("--n", type=int, default=2000, help="number of images")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True, help="container file to write")

    p = sub.add_parser("train", help="train a single condition")
    p.add_argument("--data", required=True, help="training-split container")
    _add_train_flags(p, with_condition=True)
    p.add_argument("--out", required=True, help="directory for the loss CSV")
    p.add_argument("--save-model", default=None, help="checkpoint file")

    p = sub.add_parser("experiment",
                       help="train all three conditions and judge the ordering")
    p.add_argument("--data", default=None,
                   help="training container (default: synthesize)")
    p.add_argument("--test-data", default=None,
                   help="test container (default: synthesize)")
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--image-size", type=int, default=32)
    _add_train_flags(p, with_condition=False)
    p.add_argument("--out", required=True, help="directory for report CSVs")

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--condition", choices=CONDITIONS, default="plain_no_stn",
                   help="evaluation input policy")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preview-transform",
                       help="PPM grid of images over their warped copies")
    p.add_argument("--data", default=None,
                   help="container to sample from (default: synthesize)")
    p.add_argument("--n", type=int, default=8, help="number of columns")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="PPM file to write")

    p = sub.add_parser("grad-check",
                       help="compare every op's gradients to finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)

    return top.parse_args(argv)


def _load_split(path, split):
    try:
        return load_dataset(path, split)
    except (OSError, ContainerError, KeyError, ValueError, ShapeError) as exc:
        raise _DataError(f"{path}: {exc}") from exc


def _load_model(path):
    try:
        return load_model(path)
    except (OSError, ContainerError, KeyError, ValueError, ShapeError) as exc:
        raise _DataError(f"{path}: {exc}") from exc


def _cmd_generate_data(args):
    ds = synthesize_dataset(args.n, args.image_size, args.seed, args.split)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} {args.split} images "
          f"({args.image_size}x{args.image_size}) to {args.out}")
    return 0


def _train_config(args, condition):
    return TrainConfig(condition=condition, epochs=args.epochs,
                       batch_size=args.batch_size, optimizer=args.optimizer,
                       lr=args.lr, momentum=args.momentum,
                       loss_stride=args.loss_stride, seed=args.seed)


def _cmd_train(args):
    train_ds = _load_split(args.data, "train")
    cfg = _train_config(args, args.condition)
    image_size = train_ds.images.shape[2]
    model = init_model(
        ModelConfig(use_stn=cfg.with_stn, image_size=image_size,
                    in_channels=train_ds.images.shape[1]), seed=cfg.seed)
    optimizer = Optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
    augment = None
    if cfg.transformed:
        augment = AugmentSpec(seed=derived_seed(cfg.seed, _TAG_TRAIN_AUG))
    stats = NormStats()
    samples = []
    step = 0
    for epoch in range(cfg.epochs):
        batches = batch_iter(train_ds, cfg.batch_size,
                             shuffle_seed=derived_seed(cfg.seed, _TAG_SHUFFLE),
                             augment=augment, stats=stats, epoch=epoch)
        ep = train_epoch(model, batches, optimizer, cfg, step)
        step += ep.steps
        samples.extend(ep.samples)
        print(f"{cfg.condition} epoch {epoch + 1}/{cfg.epochs}: "
              f"train loss {ep.mean_loss:.4f} acc {ep.accuracy:.3f}")
    os.makedirs(args.out, exist_ok=True)
    lines = ["batch,loss"]
    lines += [f"{batch},{value:.6f}" for batch, value in samples]
    out_csv = os.path.join(args.out, f"{cfg.condition}.csv")
    _write_lines(out_csv, lines)
    print(f"wrote {out_csv}")
    if args.save_model:
        save_model(args.save_model, model)
        print(f"wrote {args.save_model}")
    return 0


def _cmd_experiment(args):
    if args.data:
        train_ds = _load_split(args.data, "train")
    else:
        train_ds = synthesize_dataset(args.train_size, args.image_size,
                                      args.seed, "train")
    if args.test_data:
        test_ds = _load_split(args.test_data, "test")
    else:
        test_ds = synthesize_dataset(args.test_size, args.image_size,
                                     args.seed + 1, "test")
    cfg = _train_config(args, "plain_no_stn")
    report = run_experiment(train_ds, test_ds, cfg, progress=print)
    os.makedirs(args.out, exist_ok=True)
    export_report(report, args.out)
    for condition in CONDITIONS:
        r = report.conditions[condition]
        if r.aborted:
            print(f"{condition}: aborted — {r.aborted}")
        else:
            print(f"{condition}: final loss {r.final_mean_loss:.4f} "
                  f"slope {r.final_slope:+.6f} "
                  f"test acc {r.final_test_accuracy:.3f}")
    print(f"ordering_loss={report.ordering_loss} "
          f"ordering_slope={report.ordering_slope} passed={report.passed}")
    print(f"wrote report to {args.out}")
    return 3 if report.failed else 0


def _cmd_eval(args):
    model = _load_model(args.model)
    ds = _load_split(args.data, args.split)
    acc, loss = evaluate(model, ds, args.condition, seed=args.seed,
                         batch_size=args.batch_size)
    print(f"accuracy {acc:.4f}")
    print(f"mean_loss {loss:.4f}")
    return 0


def _preview_grid(images, warped, gap=2):
    """Stack two image rows into one [H,W,3] uint8 canvas, white gutters."""
    n, _c, h, w = images.shape

    def to_u8(batch):
        return np.clip(np.rint(batch * 255.0), 0, 255).astype(np.uint8)

    canvas = np.full((2 * h + 3 * gap, n * w + (n + 1) * gap, 3), 255, np.uint8)
    for row, batch in enumerate((to_u8(images), to_u8(warped))):
        y0 = gap + row * (h + gap)
        for i in range(n):
            x0 = gap + i * (w + gap)
            canvas[y0:y0 + h, x0:x0 + w] = batch[i].transpose(1, 2, 0)
    return canvas


def _cmd_preview_transform(args):
    if args.n < 1:
        raise ValueError(f"need at least one column, got {args.n}")
    if args.data:
        ds = _load_split(args.data, "train")
    else:
        ds = synthesize_dataset(max(args.n, 2), args.image_size, args.seed)
    if len(ds) < args.n:
        raise _DataError(f"{args.n} columns requested but the dataset "
                         f"holds {len(ds)} images")
    images = ds.images.data[:args.n]
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 3]))
    spec = AugmentSpec(seed=args.seed)
    thetas = [random_affine_params(spec, rng) for _ in range(args.n)]
    warped = apply_affine(Tensor(images, _check=False), thetas).data
    canvas = _preview_grid(images, warped)
    header = b"P6\n%d %d\n255\n" % (canvas.shape[1], canvas.shape[0])
    with open(args.out, "wb") as fh:
        fh.write(header + canvas.tobytes())
    print(f"wrote {canvas.shape[1]}x{canvas.shape[0]} preview to {args.out}")
    return 0


def _cmd_grad_check(args):
    results = suite(seed=args.seed, eps=args.eps)
    width = max(len(name) for name in results)
    worst = 0.0
    for name, err in results.items():
        flag = "" if err < GRAD_TOL else "  <-- FAIL"
        print(f"{name:<{width}}  {err:.3e}{flag}")
        worst = max(worst, err)
    print(f"{'worst':<{width}}  {worst:.3e}  (tolerance {GRAD_TOL:.0e})")
    return 0 if worst < GRAD_TOL else 3


_HANDLERS = {
    "generate-data": _cmd_generate_data,
    "train": _cmd_train,
    "experiment": _cmd_experiment,
    "eval": _cmd_eval,
    "preview-transform": _cmd_preview_transform,
    "grad-check": _cmd_grad_check,
}


def dispatch(args):
    """Run a parsed invocation; map failures onto the documented exit codes."""
    try:
        return _HANDLERS[args.command](args)
    except _DataError as exc:
        print(f"stdense: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"stdense: io error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"stdense: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, ShapeError, TypeError) as exc:
        print(f"stdense: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(dispatch(parse_args(argv)))
