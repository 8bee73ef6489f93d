"""Per-sample SGD training with random affine deformations."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .arch import ArchSpec
from .data_io import Dataset
from .imageprep import normalize_for_net, round_half_up
from .nn import Column, backward_column, forward_column, init_column, save_column

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeformParams:
    max_translate: float = 4.0
    max_rotate: float = 10.0  # degrees
    scale_range: tuple = (0.9, 1.1)
    enabled: bool = True

    @property
    def is_identity(self) -> bool:
        return (not self.enabled or (self.max_translate == 0 and self.max_rotate == 0
                                     and tuple(self.scale_range) == (1.0, 1.0)))


NO_DEFORM = DeformParams(enabled=False)


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 10
    lr0: float = 0.001
    lr_decay: float = 0.993
    deform: DeformParams = field(default_factory=DeformParams)
    eval_every: int = 1
    momentum: float = 0.0
    weight_decay: float = 0.0
    fill: int = 255

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def learning_rate(self, epoch: int) -> float:
        """Rate used during zero-based ``epoch``."""
        return self.lr0 * self.lr_decay ** epoch


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_top1: Optional[float]
    lr: float

    def line(self) -> str:
        val = "nan" if self.val_top1 is None else f"{self.val_top1:.6g}"
        return f"epoch={self.epoch} loss={self.loss:.6g} val_top1={val} lr={self.lr:.6g}"


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = 0

    def text(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)


def affine_warp(img, tx: float = 0.0, ty: float = 0.0, angle: float = 0.0,
                scale: float = 1.0, fill: int = 255) -> np.ndarray:
    """Rotate by ``angle`` degrees and scale about the image centre, then shift.

    Bilinear sampling; pixels mapped from outside the source take ``fill``.
    """
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: destination -> source
    rad = np.deg2rad(angle)
    c, s = np.cos(rad), np.sin(rad)
    dx, dy = xx - cx - tx, yy - cy - ty
    sx = (c * dx + s * dy) / scale + cx
    sy = (-s * dx + c * dy) / scale + cy

    padded = np.full((h + 2, w + 2), fill, dtype=np.float64)
    padded[1:-1, 1:-1] = img
    # shift into padded coordinates and clamp to the fill border
    px = np.clip(sx + 1.0, 0.0, w + 1.0)
    py = np.clip(sy + 1.0, 0.0, h + 1.0)
    x0 = np.minimum(np.floor(px).astype(np.intp), w)
    y0 = np.minimum(np.floor(py).astype(np.intp), h)
    fx, fy = px - x0, py - y0
    top = (1 - fx) * padded[y0, x0] + fx * padded[y0, x0 + 1]
    bot = (1 - fx) * padded[y0 + 1, x0] + fx * padded[y0 + 1, x0 + 1]
    out = (1 - fy) * top + fy * bot
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def deform(img, params: DeformParams, rng, fill: int = 255) -> np.ndarray:
    """Apply one random affine drawn from ``rng``."""
    img = np.asarray(img, dtype=np.uint8)
    if params.is_identity:
        return img.copy()
    tx, ty = rng.uniform(-params.max_translate, params.max_translate, 2)
    angle = rng.uniform(-params.max_rotate, params.max_rotate)
    scale = rng.uniform(*params.scale_range)
    return affine_warp(img, tx, ty, angle, scale, fill)


def top1_error(col: Column, tensors, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    wrong = sum(int(np.argmax(forward_column(col, x)) != y) for x, y in zip(tensors, labels))
    return wrong / len(labels)


def _tensors(ds: Dataset, dtype):
    return [normalize_for_net(s.image, dtype) for s in ds.samples]


def train_column(spec: ArchSpec, train: Dataset, val: Optional[Dataset], hp: Hyperparams,
                 seed: int, log_path=None, checkpoint_dir=None, name: str = "column"):
    """Train one column; return ``(best Column, TrainLog)``.

    ``train`` and ``val`` hold preprocessed canvas-sized images. The returned
    parameters are those with the lowest validation top-1 error (earliest
    epoch on ties), or the final ones when there is no validation data.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    for ds in (train, val):
        if ds is not None and ds.class_count != spec.class_count:
            raise ValueError(f"dataset has {ds.class_count} classes, "
                             f"architecture has {spec.class_count}")
    col = init_column(spec, seed)
    dtype = col.dtype
    rng = np.random.default_rng([seed, 7])
    labels = train.labels
    static = _tensors(train, dtype) if hp.deform.is_identity else None
    val_x = _tensors(val, dtype) if val is not None and len(val) else []
    val_y = val.labels if val_x else []
    velocity = [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1]))
                for p in col.params]

    trainlog = TrainLog()
    best = None
    best_err = np.inf
    for epoch in range(hp.epochs):
        lr = hp.learning_rate(epoch)
        order = rng.permutation(len(train))
        total = 0.0
        for idx in order:
            if static is not None:
                x = static[idx]
            else:
                img = deform(train.samples[idx].image, hp.deform, rng, hp.fill)
                x = normalize_for_net(img, dtype)
            loss, grads = backward_column(col, x, int(labels[idx]))
            total += loss
            _update(col, grads, velocity, lr, hp)
        record = EpochRecord(epoch + 1, total / len(train), None, lr)
        if (epoch + 1) % hp.eval_every == 0 or epoch + 1 == hp.epochs:
            if val_x:
                record.val_top1 = top1_error(col, val_x, val_y)
                if record.val_top1 < best_err:
                    best_err = record.val_top1
                    best = col.copy()
                    trainlog.best_epoch = epoch + 1
            if checkpoint_dir is not None:
                save_column(col, Path(checkpoint_dir) / f"{name}.e{epoch + 1:03d}.col")
        trainlog.records.append(record)
        log.info("%s %s", name, record.line())
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(record.line() + "\n")
    if best is None:
        best = col
        trainlog.best_epoch = hp.epochs
    return best, trainlog


def _update(col: Column, grads, velocity, lr: float, hp: Hyperparams) -> None:
    for p, g, v in zip(col.params, grads, velocity):
        if p is None:
            continue
        for arr, garr, varr in zip(p, g, v):
            step = garr
            if hp.weight_decay:
                step = step + hp.weight_decay * arr
            if hp.momentum:
                varr *= hp.momentum
                varr += step
                step = varr
            arr -= lr * step


def _train_one(args):
    spec, seed, train, val, hp = args
    return train_column(spec, train, val, hp, seed)


def train_columns(specs, seeds, train: Dataset, val: Optional[Dataset], hp: Hyperparams,
                  workers: int = 1):
    """Train independent columns; returns ``[(Column, TrainLog), ...]`` in input order."""
    specs, seeds = list(specs), list(seeds)
    if len(specs) != len(seeds):
        raise ValueError("specs and seeds must have equal length")
    jobs = [(spec, seed, train, val, hp) for spec, seed in zip(specs, seeds)]
    if workers <= 1:
        return [_train_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_one, jobs))
