"""Bit-exact character preprocessing.

Images are 2-D ``uint8`` arrays indexed ``[row, col]``. Every rounding step
is half-up in double precision, so outputs are byte-identical across runs
and platforms.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Order(enum.Enum):
    CONTRAST_THEN_SCALE = "contrast-then-scale"
    SCALE_THEN_CONTRAST = "scale-then-contrast"


@dataclass(frozen=True)
class PreprocessConfig:
    box: int = 40
    canvas: int = 48
    order: Order = Order.CONTRAST_THEN_SCALE
    fill: int = 255

    def __post_init__(self):
        if not 1 <= self.box <= self.canvas:
            raise ValueError(f"need 1 <= box <= canvas, got box={self.box} canvas={self.canvas}")
        if not 0 <= self.fill <= 255:
            raise ValueError(f"fill must be an 8-bit intensity, got {self.fill}")
        if not isinstance(self.order, Order):
            object.__setattr__(self, "order", Order(self.order))


@dataclass
class SkewReport:
    per_image: list = field(default_factory=list)  # mean |a - b| per image
    mean: float = 0.0
    max: float = 0.0
    identical: int = 0

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    def to_text(self) -> str:
        return "\n".join([
            f"images={self.n_images}",
            f"identical={self.identical}",
            f"mean_abs_diff={self.mean:.6g}",
            f"max_abs_diff={self.max:.6g}",
        ]) + "\n"

    def to_dict(self) -> dict:
        return {"images": self.n_images, "identical": self.identical,
                "mean_abs_diff": self.mean, "max_abs_diff": self.max,
                "per_image": list(self.per_image)}


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def _as_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    return img.astype(np.uint8, copy=False)


def maximize_contrast(img) -> np.ndarray:
    """Stretch intensities linearly so the darkest pixel is 0 and the brightest 255.

    A constant image is returned unchanged.
    """
    img = _as_image(img)
    lo, hi = int(img.min()), int(img.max())
    if lo == hi:
        return img.copy()
    out = round_half_up((img.astype(np.float64) - lo) * 255.0 / (hi - lo))
    return out.astype(np.uint8)


def _sample_axis(n_in: int, n_out: int):
    # pixel-centre mapping, clamped to the valid sample range
    s = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


def bilinear_resize(img, out_w: int, out_h: int) -> np.ndarray:
    img = _as_image(img)
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    h, w = img.shape
    x0, x1, fx = _sample_axis(w, out_w)
    y0, y1, fy = _sample_axis(h, out_h)
    src = img.astype(np.float64)
    fx = fx[None, :]
    top = (1.0 - fx) * src[y0][:, x0] + fx * src[y0][:, x1]
    bottom = (1.0 - fx) * src[y1][:, x0] + fx * src[y1][:, x1]
    fy = fy[:, None]
    out = (1.0 - fy) * top + fy * bottom
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def scaled_size(width: int, height: int, box: int) -> tuple[int, int]:
    """Output ``(w, h)`` when the larger side is scaled to ``box``."""
    big = max(width, height)
    # exact rational half-up: floor(n * box / big + 1/2)
    w = max(1, (2 * width * box + big) // (2 * big))
    h = max(1, (2 * height * box + big) // (2 * big))
    return w, h


def scale_to_box(img, box: int) -> np.ndarray:
    img = _as_image(img)
    if box < 1:
        raise ValueError("box must be >= 1")
    h, w = img.shape
    ow, oh = scaled_size(w, h, box)
    return bilinear_resize(img, ow, oh)


def center_on_canvas(img, canvas: int, fill: int = 255) -> np.ndarray:
    img = _as_image(img)
    h, w = img.shape
    if w > canvas or h > canvas:
        raise ValueError(f"{w}x{h} image does not fit a {canvas}x{canvas} canvas")
    out = np.full((canvas, canvas), fill, dtype=np.uint8)
    ox, oy = (canvas - w) // 2, (canvas - h) // 2
    out[oy:oy + h, ox:ox + w] = img
    return out


def preprocess(img, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    if cfg.order is Order.CONTRAST_THEN_SCALE:
        img = scale_to_box(maximize_contrast(img), cfg.box)
    else:
        img = maximize_contrast(scale_to_box(img, cfg.box))
    return center_on_canvas(img, cfg.canvas, cfg.fill)


def compare_pipelines(corpus, a: PreprocessConfig, b: PreprocessConfig) -> SkewReport:
    """Pixel differences between two preprocessing configurations."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    per_image = []
    identical = 0
    worst = 0.0
    for img in corpus:
        pa = preprocess(img, a)
        pb = preprocess(img, b)
        if pa.shape != pb.shape:
            raise ValueError("configurations produce different canvas sizes")
        diff = np.abs(pa.astype(np.int16) - pb.astype(np.int16))
        per_image.append(float(diff.mean()))
        worst = max(worst, float(diff.max()))
        identical += int(not diff.any())
    return SkewReport(per_image, float(np.mean(per_image)), worst, identical)


def normalize_for_net(img, dtype=np.float32) -> np.ndarray:
    """Map 0..255 to [-1, 1] as a ``(1, h, w)`` tensor."""
    img = _as_image(img)
    return (img.astype(np.float64) / 127.5 - 1.0).astype(dtype)[None]


# -- PGM (binary P5) ---------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ValueError(f"{path}: malformed PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(f) for f in fields[1:])
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise ValueError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, img) -> None:
    img = _as_image(img)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())
