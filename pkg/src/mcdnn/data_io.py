"""Datasets: container files, writer-stream records, synthetic glyphs, splits.

Container layout (little-endian)::

    "MCDS" u16 version u32 class_count u32 sample_count
    per sample: u32 label u32 writer u16 w u16 h  w*h bytes

Writer-stream record (one file per writer, little-endian)::

    u32 record_size  2-byte character code  u16 width  u16 height  width*height bytes

with ``record_size == 10 + width * height``.
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .imageprep import PreprocessConfig, preprocess

log = logging.getLogger(__name__)

CONTAINER_MAGIC = b"MCDS"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sHII")
_SAMPLE = struct.Struct("<IIHH")
_RECORD = struct.Struct("<I2sHH")


class DataFormatError(ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedError(DataFormatError):
    pass


class LabelRangeError(DataFormatError):
    pass


class MalformedRecordError(DataFormatError):
    pass


class UnknownCodeError(DataFormatError):
    pass


@dataclass
class Sample:
    image: np.ndarray
    label: int
    writer: int = 0

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.label == other.label and self.writer == other.writer
                and np.array_equal(self.image, other.image))


@dataclass
class Dataset:
    samples: list
    class_count: int
    class_names: Optional[list] = None

    def __post_init__(self):
        for s in self.samples:
            if not 0 <= s.label < self.class_count:
                raise LabelRangeError(f"label {s.label} out of range for {self.class_count} classes")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def writers(self) -> np.ndarray:
        return np.array([s.writer for s in self.samples], dtype=np.int64)

    def digest(self) -> str:
        return hashlib.sha256(container_bytes(self)).hexdigest()


def container_bytes(ds: Dataset) -> bytes:
    parts = [_HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, ds.class_count, len(ds.samples))]
    for s in ds.samples:
        img = np.ascontiguousarray(s.image, dtype=np.uint8)
        h, w = img.shape
        parts.append(_SAMPLE.pack(s.label, s.writer, w, h))
        parts.append(img.tobytes())
    return b"".join(parts)


def parse_container(data: bytes) -> Dataset:
    if len(data) < 4 or data[:4] != CONTAINER_MAGIC:
        raise BadMagicError("not a dataset container (bad magic)")
    if len(data) < _HEADER.size:
        raise TruncatedError("container header truncated")
    _, version, class_count, n = _HEADER.unpack_from(data)
    if version != CONTAINER_VERSION:
        raise DataFormatError(f"unsupported container version {version}")
    pos = _HEADER.size
    samples = []
    for i in range(n):
        if pos + _SAMPLE.size > len(data):
            raise TruncatedError(f"sample {i} header truncated")
        label, writer, w, h = _SAMPLE.unpack_from(data, pos)
        pos += _SAMPLE.size
        if label >= class_count:
            raise LabelRangeError(f"sample {i}: label {label} >= class count {class_count}")
        if pos + w * h > len(data):
            raise TruncatedError(f"sample {i} raster truncated")
        img = np.frombuffer(data, np.uint8, w * h, pos).reshape(h, w).copy()
        pos += w * h
        samples.append(Sample(img, label, writer))
    if pos != len(data):
        raise DataFormatError("trailing bytes after last sample")
    return Dataset(samples, class_count)


def write_container(path, ds: Dataset) -> None:
    Path(path).write_bytes(container_bytes(ds))


def read_container(path) -> Dataset:
    return parse_container(Path(path).read_bytes())


def read_code_table(path) -> dict:
    """Parse ``hexcode index`` lines into ``{code bytes: class index}``."""
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            code, index = line.split()
            table[bytes.fromhex(code)] = int(index)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad code table line {line!r}") from exc
    return table


def read_writer_stream(data: bytes, code_table: dict, writer: int = 0,
                       unknown: str = "skip") -> list:
    """Decode every record in one writer's stream.

    ``unknown`` is ``"skip"`` or ``"error"`` for codes absent from ``code_table``.
    """
    if unknown not in ("skip", "error"):
        raise ValueError("unknown must be 'skip' or 'error'")
    samples = []
    pos = 0
    while pos < len(data):
        if pos + _RECORD.size > len(data):
            raise TruncatedError(f"record at byte {pos}: stream ends inside header")
        size, code, w, h = _RECORD.unpack_from(data, pos)
        if size != _RECORD.size + w * h:
            raise MalformedRecordError(
                f"record at byte {pos}: size {size} != {_RECORD.size} + {w}*{h}")
        if pos + size > len(data):
            raise TruncatedError(f"record at byte {pos}: stream ends inside raster")
        img = np.frombuffer(data, np.uint8, w * h, pos + _RECORD.size).reshape(h, w).copy()
        pos += size
        if code not in code_table:
            if unknown == "error":
                raise UnknownCodeError(f"unknown character code {code.hex()}")
            continue
        samples.append(Sample(img, code_table[code], writer))
    return samples


def writer_stream_bytes(records) -> bytes:
    """Encode ``(code, image)`` pairs in the writer-stream layout."""
    parts = []
    for code, img in records:
        img = np.ascontiguousarray(img, dtype=np.uint8)
        h, w = img.shape
        parts.append(_RECORD.pack(_RECORD.size + w * h, bytes(code), w, h) + img.tobytes())
    return b"".join(parts)


def split_by_writer(ds: Dataset, train_writers, val_writers):
    """Partition by writer id. Returns ``(train, val, n_dropped)``."""
    train_writers, val_writers = set(train_writers), set(val_writers)
    overlap = train_writers & val_writers
    if overlap:
        raise ValueError(f"writer sets overlap: {sorted(overlap)}")
    train, val = [], []
    dropped = 0
    for s in ds.samples:
        if s.writer in train_writers:
            train.append(s)
        elif s.writer in val_writers:
            val.append(s)
        else:
            dropped += 1
    if dropped:
        log.info("split_by_writer dropped %d samples from unlisted writers", dropped)
    return (Dataset(train, ds.class_count, ds.class_names),
            Dataset(val, ds.class_count, ds.class_names), dropped)


def preprocess_dataset(ds: Dataset, cfg: PreprocessConfig) -> Dataset:
    return Dataset([Sample(preprocess(s.image, cfg), s.label, s.writer) for s in ds.samples],
                   ds.class_count, ds.class_names)


# -- synthetic glyphs --------------------------------------------------------

GLYPH_SIDE = 64
_grid_y, _grid_x = np.mgrid[0:GLYPH_SIDE, 0:GLYPH_SIDE].astype(np.float64) + 0.5


def _stroke(rng) -> np.ndarray:
    """One stroke in unit coordinates: a straight segment or a circular arc."""
    if rng.random() < 0.6:
        return np.stack([rng.uniform(0.1, 0.9, 2), rng.uniform(0.1, 0.9, 2)])
    centre = rng.uniform(0.3, 0.7, 2)
    radius = rng.uniform(0.12, 0.35)
    start = rng.uniform(0, 2 * np.pi)
    sweep = rng.uniform(0.6, 1.6) * np.pi
    t = start + np.linspace(0.0, sweep, 9)
    return centre + radius * np.stack([np.cos(t), np.sin(t)], axis=1)


def _prototypes(class_count: int, seed: int) -> list:
    """3-6 strokes per class, drawn from a shared pool so classes overlap."""
    rng = np.random.default_rng([seed, 0])
    pool = [_stroke(rng) for _ in range(max(12, class_count // 2))]
    seen = set()
    protos = []
    while len(protos) < class_count:
        pick = tuple(sorted(rng.choice(len(pool), rng.integers(3, 7), replace=False)))
        if pick in seen:
            continue
        seen.add(pick)
        # small per-class offset so shared strokes are not pixel-identical
        protos.append([pool[i] + rng.normal(0.0, 0.03, pool[i].shape) for i in pick])
    return protos


def _segment_distance(points: np.ndarray) -> np.ndarray:
    """Distance from every grid pixel centre to a polyline."""
    best = np.full(_grid_x.shape, np.inf)
    for p, q in zip(points[:-1], points[1:]):
        d = q - p
        denom = max(float(d @ d), 1e-12)
        t = np.clip(((_grid_x - p[0]) * d[0] + (_grid_y - p[1]) * d[1]) / denom, 0.0, 1.0)
        dist = np.hypot(_grid_x - (p[0] + t * d[0]), _grid_y - (p[1] + t * d[1]))
        np.minimum(best, dist, out=best)
    return best


def _writer_style(seed: int, writer: int) -> dict:
    rng = np.random.default_rng([seed, 1, writer])
    return {
        "shear": rng.normal(0.0, 0.12),
        "aspect": np.exp(rng.normal(0.0, 0.15)),
        "thickness": rng.uniform(1.4, 3.2),
        "jitter": rng.uniform(0.02, 0.05),
        "ink": rng.uniform(0, 120),
        "pressure": rng.uniform(0.05, 0.25),
    }


def _render(strokes, style, rng) -> np.ndarray:
    angle = rng.normal(0.0, 0.08)
    scale = rng.uniform(0.75, 1.0)
    c, s = np.cos(angle), np.sin(angle)
    aspect = style["aspect"]
    affine = np.array([[c, -s], [s, c]]) @ np.array([[aspect, style["shear"]], [0.0, 1.0 / aspect]])
    shift = rng.normal(0.0, 0.03, 2)
    thickness = max(0.8, style["thickness"] + rng.normal(0.0, 0.3))
    coverage = np.zeros(_grid_x.shape)
    for stroke in strokes:
        pts = stroke + rng.normal(0.0, style["jitter"], stroke.shape)
        pts = ((pts - 0.5) @ affine.T) * scale + 0.5 + shift
        dist = _segment_distance(pts * GLYPH_SIDE)
        np.maximum(coverage, np.clip(thickness / 2 + 0.5 - dist, 0.0, 1.0), out=coverage)
    # segmented scans: clean white paper, ink darkness varying with pen pressure
    depth = (255.0 - style["ink"]) * (1.0 + rng.normal(0.0, style["pressure"], coverage.shape))
    img = 255.0 - np.clip(depth, 0.0, 255.0) * coverage
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def synth_glyphs(class_count: int, per_class: int, writers: int, seed: int = 0) -> Dataset:
    """Deterministic stroke glyphs, one random prototype per class.

    Sample ``j`` of every class is written by writer ``j % writers``; each
    writer has its own slant, aspect, stroke width, ink darkness and
    pressure noise; paper is pure white.
    """
    if min(class_count, per_class, writers) < 1:
        raise ValueError("class_count, per_class and writers must all be >= 1")
    styles = [_writer_style(seed, w) for w in range(writers)]
    samples = []
    for label, proto in enumerate(_prototypes(class_count, seed)):
        for j in range(per_class):
            writer = j % writers
            rng = np.random.default_rng([seed, 2, label, j])
            samples.append(Sample(_render(proto, styles[writer], rng), label, writer))
    return Dataset(samples, class_count)
