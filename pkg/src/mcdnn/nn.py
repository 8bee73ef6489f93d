"""Forward and backward passes for a single DNN column.

A column is tanh after every convolution and every hidden fully connected
layer, purely selective max-pooling, and a softmax output. Gradients are
derived by hand per layer; ``grad_check`` compares them against central
differences.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .arch import ArchSpec, Conv, Full, MaxPool, infer_shapes, parse_arch, render_arch

COLUMN_MAGIC = b"MCDC"
COLUMN_VERSION = 1


class ColumnFormatError(ValueError):
    pass


@dataclass
class Column:
    spec: ArchSpec
    params: list  # per layer: (weights, bias), or None for pooling
    seed: int = 0

    @property
    def dtype(self):
        return next(p[0].dtype for p in self.params if p is not None)

    @property
    def class_count(self) -> int:
        return self.spec.class_count

    def astype(self, dtype) -> "Column":
        params = [None if p is None else (p[0].astype(dtype), p[1].astype(dtype))
                  for p in self.params]
        return Column(self.spec, params, self.seed)

    def copy(self) -> "Column":
        return self.astype(self.dtype)

    def parameter_arrays(self):
        """Flat list of every weight and bias array, in serialization order."""
        out = []
        for p in self.params:
            if p is not None:
                out.extend(p)
        return out

    def distance(self, other: "Column") -> float:
        return float(sum(np.abs(a.astype(np.float64) - b).sum()
                         for a, b in zip(self.parameter_arrays(), other.parameter_arrays())))


def param_shapes(spec: ArchSpec) -> list:
    """Per layer ``(weight_shape, fan_in, fan_out)``, or None for pooling."""
    plan = infer_shapes(spec)
    prev = plan.input
    out = []
    for layer, shape in zip(spec.layers, plan.layers):
        if isinstance(layer, Conv):
            k = layer.kernel
            out.append(((layer.maps, prev.maps, k, k), prev.maps * k * k, layer.maps * k * k))
        elif isinstance(layer, MaxPool):
            out.append(None)
        else:
            out.append(((layer.neurons, prev.size), prev.size, layer.neurons))
        prev = shape
    return out


def init_column(spec: ArchSpec, seed: int, dtype=np.float32) -> Column:
    """Glorot-uniform weights from a generator keyed by ``seed``; zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for entry in param_shapes(spec):
        if entry is None:
            params.append(None)
            continue
        wshape, fan_in, fan_out = entry
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=wshape).astype(dtype)
        params.append((w, np.zeros(wshape[0], dtype=dtype)))
    return Column(spec, params, int(seed))


def activation(x):
    return np.tanh(x)


def activation_grad(x):
    y = np.tanh(x)
    return 1.0 - y * y


def softmax_xent(logits, label: int):
    """Return ``(scores, loss, dlogits)`` for one sample.

    Scores are computed in double precision; ``dlogits`` keeps the dtype of
    ``logits``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[0]:
        raise ValueError(f"label {label} out of range for {z.shape[0]} classes")
    shifted = z - z.max()
    e = np.exp(shifted)
    total = e.sum()
    scores = e / total
    loss = float(np.log(total) - shifted[label])
    d = scores.copy()
    d[label] -= 1.0
    return scores, loss, d.astype(np.asarray(logits).dtype, copy=False)


def _check_input(col: Column, x):
    want = (1, col.spec.input_h, col.spec.input_w)
    if x.shape != want:
        raise ValueError(f"input shape {x.shape} does not match {want}")
    return np.ascontiguousarray(x, dtype=col.dtype)


def _forward(col: Column, x):
    """Run every layer; return logits and the per-layer cache for backward."""
    h = _check_input(col, x)
    cache = []
    last = len(col.spec.layers) - 1
    for i, (layer, p) in enumerate(zip(col.spec.layers, col.params)):
        if isinstance(layer, Conv):
            y = np.tanh(kernels.conv_forward(h, p[0], p[1]))
            cache.append((h, y))
            h = y
        elif isinstance(layer, MaxPool):
            out, arg = kernels.maxpool_forward(h, layer.pool)
            cache.append((h.shape, arg))
            h = out
        else:
            flat = h.reshape(-1)
            z = kernels.fc_forward(flat, p[0], p[1])
            y = z if i == last else np.tanh(z)
            cache.append((h.shape, flat, y))
            h = y
    return h, cache


def forward_column(col: Column, x) -> np.ndarray:
    """Class probabilities for one single-map input of the column's size."""
    logits, _ = _forward(col, x)
    z = logits.astype(np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def column_loss(col: Column, x, label: int) -> float:
    logits, _ = _forward(col, x)
    return softmax_xent(logits, label)[1]


def backward_column(col: Column, x, label: int):
    """Return ``(loss, grads)``; ``grads`` mirrors ``col.params``."""
    logits, cache = _forward(col, x)
    _, loss, d = softmax_xent(logits, label)
    layers = col.spec.layers
    last = len(layers) - 1
    grads = [None] * len(layers)
    for i in range(last, -1, -1):
        layer = layers[i]
        need_dx = i > 0
        if isinstance(layer, Full):
            in_shape, flat, y = cache[i]
            if i != last:
                d = d * (1 - y * y)
            w, _ = col.params[i]
            dx, dw, db = kernels.fc_backward(flat, w, d, need_dx)
            grads[i] = (dw, db)
            d = dx.reshape(in_shape)
        elif isinstance(layer, MaxPool):
            in_shape, arg = cache[i]
            d = kernels.maxpool_backward(np.ascontiguousarray(d), arg, in_shape[1], in_shape[2])
        else:
            h, y = cache[i]
            d = d * (1 - y * y)
            w, _ = col.params[i]
            dx, dw, db = kernels.conv_backward(h, w, d, need_dx)
            grads[i] = (dw, db)
            d = dx
    return loss, grads


def grad_check(col: Column, x, label: int, eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Runs in double precision on a copy of ``col``. The relative error of one
    parameter is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    col = col.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    _, grads = backward_column(col, x, label)
    worst = 0.0
    for p, g in zip(col.params, grads):
        if p is None:
            continue
        for arr, garr in zip(p, g):
            flat = arr.reshape(-1)
            gflat = garr.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                lp = column_loss(col, x, label)
                flat[j] = orig - eps
                lm = column_loss(col, x, label)
                flat[j] = orig
                num = (lp - lm) / (2 * eps)
                ana = gflat[j]
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
    return worst


def sgd_step(col: Column, grads, lr: float) -> None:
    for p, g in zip(col.params, grads):
        if p is None:
            continue
        w, b = p
        w -= lr * g[0]
        b -= lr * g[1]


# -- serialization -----------------------------------------------------------

def column_to_bytes(col: Column) -> bytes:
    arch = render_arch(col.spec).encode("utf-8")
    parts = [COLUMN_MAGIC, struct.pack("<HI", COLUMN_VERSION, len(arch)), arch,
             struct.pack("<Q", col.seed)]
    for arr in col.parameter_arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def column_from_bytes(data: bytes) -> Column:
    if data[:4] != COLUMN_MAGIC:
        raise ColumnFormatError("bad magic, not a column file")
    try:
        version, n = struct.unpack_from("<HI", data, 4)
        if version != COLUMN_VERSION:
            raise ColumnFormatError(f"unsupported column version {version}")
        pos = 10
        spec = parse_arch(data[pos:pos + n].decode("utf-8"))
        pos += n
        (seed,) = struct.unpack_from("<Q", data, pos)
        pos += 8
    except struct.error as exc:
        raise ColumnFormatError("truncated column header") from exc
    params = []
    for entry in param_shapes(spec):
        if entry is None:
            params.append(None)
            continue
        loaded = []
        for shape in (entry[0], entry[0][:1]):
            size = int(np.prod(shape))
            if pos + 4 * size > len(data):
                raise ColumnFormatError("truncated column parameters")
            loaded.append(np.frombuffer(data, "<f4", size, pos).reshape(shape).astype(np.float32))
            pos += 4 * size
        params.append(tuple(loaded))
    if pos != len(data):
        raise ColumnFormatError("trailing bytes after column parameters")
    return Column(spec, params, seed)


def save_column(col: Column, path) -> None:
    Path(path).write_bytes(column_to_bytes(col))


def load_column(path) -> Column:
    return column_from_bytes(Path(path).read_bytes())
