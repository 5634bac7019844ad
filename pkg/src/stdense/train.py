"""Training loops, fixed-policy evaluation, and the three-condition
experiment.

Conditions:

* plain_no_stn        — clean train/eval batches, classifier only
* transformed_no_stn  — random-affine train batches (fresh draws each epoch)
                        and fixed seeded eval transforms, classifier only
* transformed_stn     — same transformed batches, STN front-end on

All randomness is derived from one experiment seed through tagged seed
sequences, so a rerun with the same seed reproduces every shuffle, every
augmentation draw, and therefore every loss value bit for bit.
"""

import os

import numpy as np

from .augment import AugmentSpec, NormStats
from .data import batch_iter
from .model import ModelConfig, init_model
from .optim import Optimizer
from .tensor import GradTape, NumericError, softmax_cross_entropy, zero_grads

__all__ = [
    "CONDITIONS",
    "TrainConfig",
    "EpochStats",
    "ConditionResult",
    "ExperimentReport",
    "train_epoch",
    "evaluate",
    "run_experiment",
    "export_report",
    "final_quarter_slope",
]

CONDITIONS = ("plain_no_stn", "transformed_no_stn", "transformed_stn")

# tags for deriving independent seed streams from one experiment seed
_TAG_SHUFFLE = 11
_TAG_TRAIN_AUG = 12
_TAG_EVAL_SHUFFLE = 13
_TAG_EVAL_AUG = 14


def derived_seed(seed, tag):
    return int(np.random.SeedSequence([int(seed), int(tag)])
               .generate_state(1, np.uint64)[0])


class TrainConfig:
    """One condition's training knobs."""

    __slots__ = ("condition", "epochs", "batch_size", "optimizer", "lr",
                 "momentum", "loss_stride", "seed")

    def __init__(self, condition="plain_no_stn", epochs=20, batch_size=64,
                 optimizer="adam", lr=1e-3, momentum=0.9, loss_stride=100,
                 seed=0):
        if condition not in CONDITIONS:
            raise ValueError(
                f"condition must be one of {', '.join(CONDITIONS)}, "
                f"got {condition!r}")
        if epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {epochs}")
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        if loss_stride < 1:
            raise ValueError(f"loss stride must be >= 1, got {loss_stride}")
        if optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {optimizer!r}")
        self.condition = condition
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.optimizer = optimizer
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.loss_stride = int(loss_stride)
        self.seed = int(seed)

    def replaced(self, **kw):
        cur = {name: getattr(self, name) for name in self.__slots__}
        cur.update(kw)
        return TrainConfig(**cur)

    @property
    def transformed(self):
        return self.condition != "plain_no_stn"

    @property
    def with_stn(self):
        return self.condition == "transformed_stn"


class EpochStats:
    """What one pass over the data produced."""

    __slots__ = ("samples", "mean_loss", "accuracy", "steps")

    def __init__(self, samples, mean_loss, accuracy, steps):
        self.samples = samples            # [(global batch index, loss)]
        self.mean_loss = mean_loss        # per-image mean over the epoch
        self.accuracy = accuracy
        self.steps = steps


def train_epoch(model, batches, optimizer, cfg, start_step=0):
    """Forward/backward/step over an iterator of (images, labels); samples
    the loss every cfg.loss_stride batches (by global batch index)."""
    params = model.parameters()
    samples = []
    loss_sum = 0.0
    correct = 0
    total = 0
    step = start_step
    for images, labels in batches:
        logits = model.forward(images)
        loss = softmax_cross_entropy(logits, labels)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(
                f"non-finite loss {value} at batch {step}; aborting")
        if step % cfg.loss_stride == 0:
            samples.append((step, value))
        n = len(labels)
        loss_sum += value * n
        correct += int((logits.data.argmax(axis=1) == labels).sum())
        total += n
        GradTape.from_output(loss).run(free_graph=True)
        optimizer.step(params)
        zero_grads(params)
        step += 1
    if total == 0:
        raise ValueError("empty batch iterator")
    return EpochStats(samples, loss_sum / total, correct / total,
                      step - start_step)


def evaluate(model, ds, condition, seed=0, batch_size=64, stats=None):
    """Accuracy and mean loss under the condition's input policy: clean
    batches for plain, fixed seeded transforms otherwise. Never touches
    parameters or their gradients."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    stats = stats if stats is not None else NormStats()
    augment = None
    if condition != "plain_no_stn":
        augment = AugmentSpec(seed=derived_seed(seed, _TAG_EVAL_AUG))
    batches = batch_iter(ds, batch_size,
                         shuffle_seed=derived_seed(seed, _TAG_EVAL_SHUFFLE),
                         augment=augment, stats=stats, epoch=0)
    loss_sum = 0.0
    correct = 0
    total = 0
    for images, labels in batches:
        logits = model.forward(images)
        loss = softmax_cross_entropy(logits, labels)
        n = len(labels)
        loss_sum += float(loss.data) * n
        correct += int((logits.data.argmax(axis=1) == labels).sum())
        total += n
    return correct / total, loss_sum / total


def final_quarter_slope(samples):
    """Least-squares slope of loss against batch index over the last 25% of
    samples (at least two)."""
    if len(samples) < 2:
        return 0.0
    k = max(2, -(-len(samples) // 4))
    tail = samples[-k:]
    x = np.array([b for b, _ in tail], np.float64)
    y = np.array([v for _, v in tail], np.float64)
    return float(np.polyfit(x, y, 1)[0])


class ConditionResult:
    """Everything one condition's run produced."""

    __slots__ = ("condition", "samples", "epoch_mean_loss", "train_accuracy",
                 "test_accuracy", "aborted")

    def __init__(self, condition):
        self.condition = condition
        self.samples = []
        self.epoch_mean_loss = []
        self.train_accuracy = []
        self.test_accuracy = []
        self.aborted = None   # or a diagnostic string

    @property
    def final_mean_loss(self):
        return self.epoch_mean_loss[-1] if self.epoch_mean_loss else float("nan")

    @property
    def final_slope(self):
        return final_quarter_slope(self.samples)

    @property
    def final_test_accuracy(self):
        return self.test_accuracy[-1] if self.test_accuracy else float("nan")


class ExperimentReport:
    """Per-condition series plus the two-part ordering verdict."""

    __slots__ = ("conditions", "ordering_loss", "ordering_slope", "passed",
                 "failed", "seed", "epochs")

    def __init__(self, conditions, seed, epochs):
        self.conditions = conditions
        self.seed = seed
        self.epochs = epochs
        self.failed = any(c.aborted for c in conditions.values())
        plain = conditions["plain_no_stn"]
        moved = conditions["transformed_no_stn"]
        stn = conditions["transformed_stn"]
        self.ordering_loss = (not self.failed
                              and plain.final_mean_loss < moved.final_mean_loss)
        self.ordering_slope = (not self.failed
                               and stn.final_slope <= moved.final_slope)
        self.passed = self.ordering_loss and self.ordering_slope


def run_experiment(train_ds, test_ds, base_cfg, net_cfg=None, stats=None,
                   progress=None, eval_every=1):
    """Train all three conditions from a shared seed and classifier init,
    then judge the loss ordering and the final-quarter trend. Test accuracy
    is measured every `eval_every` epochs and always after the last one."""
    if eval_every < 1:
        raise ValueError(f"eval_every must be >= 1, got {eval_every}")
    stats = stats if stats is not None else NormStats()
    say = progress if progress is not None else (lambda msg: None)
    results = {}
    for condition in CONDITIONS:
        cfg = base_cfg.replaced(condition=condition)
        image_size = train_ds.images.shape[2]
        model_cfg = ModelConfig(net=net_cfg, use_stn=cfg.with_stn,
                                image_size=image_size,
                                in_channels=train_ds.images.shape[1])
        model = init_model(model_cfg, seed=cfg.seed)
        optimizer = Optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
        augment = None
        if cfg.transformed:
            augment = AugmentSpec(seed=derived_seed(cfg.seed, _TAG_TRAIN_AUG))
        result = ConditionResult(condition)
        results[condition] = result
        step = 0
        try:
            for epoch in range(cfg.epochs):
                batches = batch_iter(
                    train_ds, cfg.batch_size,
                    shuffle_seed=derived_seed(cfg.seed, _TAG_SHUFFLE),
                    augment=augment, stats=stats, epoch=epoch)
                ep = train_epoch(model, batches, optimizer, cfg, step)
                step += ep.steps
                result.samples.extend(ep.samples)
                result.epoch_mean_loss.append(ep.mean_loss)
                result.train_accuracy.append(ep.accuracy)
                line = (f"{condition} epoch {epoch + 1}/{cfg.epochs}: "
                        f"train loss {ep.mean_loss:.4f} acc {ep.accuracy:.3f}")
                if epoch == cfg.epochs - 1 or (epoch + 1) % eval_every == 0:
                    acc, _ = evaluate(model, test_ds, condition, seed=cfg.seed,
                                      batch_size=cfg.batch_size, stats=stats)
                    result.test_accuracy.append(acc)
                    line += f" test acc {acc:.3f}"
                say(line)
        except NumericError as exc:
            result.aborted = str(exc)
            say(f"{condition} aborted: {exc}")
    return ExperimentReport(results, base_cfg.seed, base_cfg.epochs)


def export_report(report, out_dir):
    """One `batch,loss` CSV per condition plus `summary.csv`; LF endings and
    fixed precision keep re-exports byte-identical."""
    os.makedirs(out_dir, exist_ok=True)
    for condition, result in report.conditions.items():
        lines = ["batch,loss"]
        lines += [f"{batch},{value:.6f}" for batch, value in result.samples]
        _write_lines(os.path.join(out_dir, f"{condition}.csv"), lines)
    lines = ["condition,final_mean_loss,final_slope,test_accuracy"]
    for condition in CONDITIONS:
        r = report.conditions[condition]
        lines.append(f"{condition},{r.final_mean_loss:.6f},"
                     f"{r.final_slope:.6f},{r.final_test_accuracy:.6f}")
    _write_lines(os.path.join(out_dir, "summary.csv"), lines)


def _write_lines(path, lines):
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
