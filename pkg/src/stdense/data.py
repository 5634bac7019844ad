"""Synthetic two-class dataset and the batch pipeline feeding the trainer.

Every image shares the same background recipe: a per-image base level with a
color tint, low-frequency waves, a few broad dim bumps, small bright square
specks, per-pixel noise, and one or two faux clusters — tight groups of
bright Gaussian blobs placed anywhere *outside* the central third. Class 1
images additionally carry a real cluster (more blobs, wider spread) whose
centroid sits inside the central third. Because bright clusters appear in
both classes, neither "any bright patch" nor "brightest pixel" separates
them; the only reliable signal is bright mass at the frame's center, so the
central third's mean intensity classifies clean data near-perfectly while
random affine warps destroy that shortcut.

Batches are normalized first, then optionally warped, so zero-filled borders
always hold the post-normalization value of black. Augmentation draws are
seeded per (spec seed, epoch, batch index): any batch can be replayed without
re-running the stream that produced it.
"""

import queue
import threading

import numpy as np

from .augment import NormStats, apply_affine, normalize, random_affine_params
from .container import read_container, write_container
from .tensor import ShapeError, Tensor

__all__ = [
    "Dataset",
    "synthesize_dataset",
    "save_dataset",
    "load_dataset",
    "batch_iter",
    "prefetch",
    "CENTER_FRACTION",
]

# side of the central decision region, as a fraction of the image side
CENTER_FRACTION = 1.0 / 3.0


class Dataset:
    """Immutable split of [M,3,H,W] images in [0,1] with binary labels."""

    __slots__ = ("images", "labels", "split")

    def __init__(self, images, labels, split="train"):
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, np.float32), _check=False)
        labels = np.asarray(labels, np.int64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"images must be [M,3,H,W], got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ShapeError(
                f"{images.shape[0]} images but {labels.shape} labels")
        if images.shape[0] and not ((labels == 0) | (labels == 1)).all():
            raise ValueError("labels must be 0 or 1")
        lo, hi = float(images.data.min(initial=0.0)), float(images.data.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"image values must lie in [0,1], got [{lo}, {hi}]")
        self.images = images
        self.labels = labels
        self.split = str(split)

    def __len__(self):
        return self.images.shape[0]


def _gaussian_blob(yy, xx, cy, cx, sigma, amp):
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return amp * np.exp(-d2 / (2.0 * sigma * sigma))


def _blob_cluster(yy, xx, rng, centers, sigma_lo, sigma_hi):
    """Sum of unit Gaussians at `centers`; caller scales the peak."""
    size = yy.shape[0]
    field = np.zeros((size, size))
    for cy, cx in centers:
        sigma = rng.uniform(sigma_lo, sigma_hi) * size
        field += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2)
                        / (2.0 * sigma * sigma))
    return field


def synthesize_dataset(n, image_size=32, seed=0, split="train"):
    """Deterministic synthetic split: n images, alternating labels (balance
    within one). Both classes get the shared background — waves, bumps,
    specks, off-center faux clusters — and class 1 adds the real cluster
    whose centroid lies in the central third."""
    if n < 2:
        raise ValueError(f"need at least 2 images, got {n}")
    if image_size < 16:
        raise ValueError(f"image size must be >= 16, got {image_size}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, image_size]))
    size = int(image_size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    center = (size - 1) / 2.0
    half_box = size * CENTER_FRACTION / 2.0
    images = np.empty((n, 3, size, size), np.float32)
    labels = np.arange(n, dtype=np.int64) % 2
    for i in range(n):
        base = rng.uniform(0.16, 0.24)
        tint = rng.uniform(-0.03, 0.03, 3)
        lum = np.full((size, size), base)
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 1.5, 2) / size
            phase = rng.uniform(0.0, 2.0 * np.pi)
            lum += rng.uniform(0.015, 0.045) * np.sin(
                2.0 * np.pi * (fy * yy + fx * xx) + phase)
        for _ in range(int(rng.integers(2, 5))):
            cy, cx = rng.uniform(0.0, size - 1.0, 2)
            sigma = rng.uniform(0.12, 0.22) * size
            amp = rng.uniform(0.06, 0.12)
            lum += _gaussian_blob(yy, xx, cy, cx, sigma, amp)
        for _ in range(int(rng.integers(2, 5))):
            py, px = rng.integers(0, size - 2, 2)
            lum[py:py + 3, px:px + 3] = rng.uniform(0.35, 0.65)
        for _ in range(int(rng.integers(1, 3))):
            # faux cluster: same bright-blob texture as the label signal,
            # but its centroid must clear the central box by 2 px
            while True:
                fy0, fx0 = rng.uniform(2.0, size - 3.0, 2)
                if max(abs(fy0 - center), abs(fx0 - center)) > half_box + 2.0:
                    break
            n_blobs = int(rng.integers(1, 3))
            offsets = rng.uniform(-2.0, 2.0, (n_blobs, 2))
            offsets -= offsets.mean(axis=0)  # centroid exactly at (fy0, fx0)
            field = _blob_cluster(yy, xx, rng,
                                  np.array([fy0, fx0]) + offsets, 0.04, 0.07)
            lum += field * (rng.uniform(0.30, 0.55) / field.max())
        if labels[i] == 1:
            n_blobs = int(rng.integers(3, 6))
            c0 = center + rng.uniform(-half_box * 0.6, half_box * 0.6, 2)
            offsets = rng.uniform(-3.0, 3.0, (n_blobs, 2))
            offsets -= offsets.mean(axis=0)
            field = _blob_cluster(yy, xx, rng, c0 + offsets, 0.07, 0.11)
            lum += field * (rng.uniform(0.40, 0.65) / field.max())
        img = lum[None, :, :] + tint[:, None, None]
        img += rng.normal(0.0, 0.04, (3, size, size))
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(Tensor(images, _check=False), labels, split)


def save_dataset(path, ds):
    """Persist a split as container entries `images` (f32) and `labels` (f32)."""
    write_container(path, {
        "images": ds.images.data,
        "labels": ds.labels.astype(np.float32),
    })


def load_dataset(path, split="train"):
    entries = read_container(path)
    for key in ("images", "labels"):
        if key not in entries:
            raise KeyError(f"dataset container missing entry {key!r}")
    labels = entries["labels"].data
    if not np.equal(labels, np.round(labels)).all():
        raise ValueError("label entries must be whole numbers")
    return Dataset(entries["images"], labels.astype(np.int64), split)


def batch_iter(ds, batch_size, shuffle_seed=0, augment=None, stats=None,
               epoch=0):
    """Seeded-shuffle batches of (images, labels); the last short batch is
    kept. Images are normalized (when stats given) and then warped per image
    (when augment given)."""
    if len(ds) == 0:
        raise ValueError("cannot iterate an empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    perm = np.random.default_rng(
        np.random.SeedSequence([int(shuffle_seed), int(epoch)])
    ).permutation(len(ds))

    def gen():
        for bi, start in enumerate(range(0, len(ds), batch_size)):
            idx = perm[start:start + batch_size]
            images = Tensor(ds.images.data[idx], _check=False)
            if stats is not None:
                images = normalize(images, stats)
            if augment is not None:
                draw = np.random.default_rng(
                    np.random.SeedSequence([augment.seed, int(epoch), bi]))
                thetas = [random_affine_params(augment, draw)
                          for _ in range(len(idx))]
                images = apply_affine(images, thetas)
            yield images, ds.labels[idx].copy()

    return gen()


_DONE = object()


def prefetch(iterator, depth=2):
    """Run an iterator on a producer thread, handing items over a bounded
    queue — lets batch preparation overlap with the training step."""
    q = queue.Queue(maxsize=depth)

    def produce():
        try:
            for item in iterator:
                q.put(item)
        except BaseException as exc:  # re-raised on the consumer side
            q.put((_DONE, exc))
            return
        q.put((_DONE, None))

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    while True:
        item = q.get()
        if isinstance(item, tuple) and len(item) == 2 and item[0] is _DONE:
            worker.join()
            if item[1] is not None:
                raise item[1]
            return
        yield item
