"""Architecture strings such as ``48x48-100C3-MP2-200C2-MP2-500N-3755N``.

Grammar (case-sensitive, no whitespace)::

    arch  = size *("-" layer) ["-" tag]
    size  = int "x" int                ; height x width
    layer = int "C" int                ; maps, square kernel side
          / "MP" int                   ; square pooling side
          / int ("N" / "FC")           ; fully connected neurons
    tag   = 1*DIGIT

Convolutions are valid-mode with stride 1; pooling is non-overlapping and
must divide its input exactly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union


class ArchError(ValueError):
    """Grammar, ordering, or shape error. ``index`` is the offending token."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        where = f" (token {index})" if index is not None else ""
        super().__init__(message + where)


@dataclass(frozen=True)
class Conv:
    maps: int
    kernel: int

    def __post_init__(self):
        if self.maps < 1 or self.kernel < 1:
            raise ArchError(f"invalid conv layer {self.maps}C{self.kernel}")


@dataclass(frozen=True)
class MaxPool:
    pool: int

    def __post_init__(self):
        if self.pool < 2:
            raise ArchError(f"pool size must be >= 2, got {self.pool}")


@dataclass(frozen=True)
class Full:
    neurons: int

    def __post_init__(self):
        if self.neurons < 1:
            raise ArchError(f"invalid fully connected layer {self.neurons}N")


LayerSpec = Union[Conv, MaxPool, Full]


@dataclass(frozen=True)
class ArchSpec:
    input_h: int
    input_w: int
    layers: tuple
    tag: Optional[str] = None

    @property
    def class_count(self) -> int:
        return self.layers[-1].neurons

    def without_tag(self) -> "ArchSpec":
        return ArchSpec(self.input_h, self.input_w, self.layers, None)

    def __str__(self) -> str:
        return render_arch(self)


@dataclass(frozen=True)
class LayerShape:
    """Output geometry and cost of one layer. Pooling layers have no params."""

    layer: Optional[LayerSpec]
    maps: int
    h: int
    w: int
    params: int = 0
    madds: int = 0

    @property
    def size(self) -> int:
        return self.maps * self.h * self.w


@dataclass(frozen=True)
class ShapePlan:
    input: LayerShape
    layers: tuple = field(default_factory=tuple)

    @property
    def total_params(self) -> int:
        return sum(s.params for s in self.layers)

    @property
    def total_madds(self) -> int:
        return sum(s.madds for s in self.layers)


_SIZE = re.compile(r"([0-9]+)x([0-9]+)")
_CONV = re.compile(r"([0-9]+)C([0-9]+)")
_POOL = re.compile(r"MP([0-9]+)")
_FULL = re.compile(r"([0-9]+)(?:N|FC)")
_TAG = re.compile(r"[0-9]+")


def _parse_layer(tok: str, index: int) -> LayerSpec:
    try:
        if m := _CONV.fullmatch(tok):
            return Conv(int(m[1]), int(m[2]))
        if m := _POOL.fullmatch(tok):
            return MaxPool(int(m[1]))
        if m := _FULL.fullmatch(tok):
            return Full(int(m[1]))
    except ArchError as exc:
        raise ArchError(str(exc), index) from None
    raise ArchError(f"malformed token {tok!r}", index)


def parse_arch(text: str) -> ArchSpec:
    """Parse and fully validate an architecture string, including shapes."""
    if not text:
        raise ArchError("empty architecture string", 0)
    tokens = text.split("-")
    m = _SIZE.fullmatch(tokens[0])
    if m is None:
        raise ArchError(f"missing input size token, got {tokens[0]!r}", 0)
    h, w = int(m[1]), int(m[2])
    if h < 1 or w < 1:
        raise ArchError("input size must be positive", 0)

    body = tokens[1:]
    tag = None
    if len(body) > 0 and _TAG.fullmatch(body[-1]):
        tag = body[-1]
        body = body[:-1]
    if not body:
        raise ArchError("no layers after input size", 1)

    layers = []
    seen_full = False
    for i, tok in enumerate(body, start=1):
        layer = _parse_layer(tok, i)
        if i == 1 and not isinstance(layer, Conv):
            raise ArchError("first layer must be convolutional", i)
        if isinstance(layer, Full):
            seen_full = True
        elif seen_full:
            raise ArchError("fully connected layer precedes conv/pool layer", i)
        layers.append(layer)
    if not isinstance(layers[-1], Full):
        raise ArchError("last layer must be fully connected", len(body))

    spec = ArchSpec(h, w, tuple(layers), tag)
    infer_shapes(spec)
    return spec


def render_layer(layer: LayerSpec) -> str:
    if isinstance(layer, Conv):
        return f"{layer.maps}C{layer.kernel}"
    if isinstance(layer, MaxPool):
        return f"MP{layer.pool}"
    return f"{layer.neurons}N"


def render_arch(spec: ArchSpec) -> str:
    parts = [f"{spec.input_h}x{spec.input_w}"]
    parts += [render_layer(layer) for layer in spec.layers]
    if spec.tag is not None:
        parts.append(spec.tag)
    return "-".join(parts)


def infer_shapes(spec: ArchSpec) -> ShapePlan:
    maps, h, w = 1, spec.input_h, spec.input_w
    shapes = []
    for i, layer in enumerate(spec.layers, start=1):
        if isinstance(layer, Conv):
            k = layer.kernel
            oh, ow = h - k + 1, w - k + 1
            if oh < 1 or ow < 1:
                raise ArchError(f"kernel {k} larger than {h}x{w} input", i)
            params = layer.maps * (maps * k * k + 1)
            madds = layer.maps * oh * ow * maps * k * k
            shape = LayerShape(layer, layer.maps, oh, ow, params, madds)
        elif isinstance(layer, MaxPool):
            p = layer.pool
            if h % p or w % p:
                raise ArchError(f"pool {p} does not divide {h}x{w}", i)
            shape = LayerShape(layer, maps, h // p, w // p)
        else:
            n_in = maps * h * w
            shape = LayerShape(layer, layer.neurons, 1, 1,
                               layer.neurons * (n_in + 1), layer.neurons * n_in)
        shapes.append(shape)
        maps, h, w = shape.maps, shape.h, shape.w
    return ShapePlan(LayerShape(None, 1, spec.input_h, spec.input_w), tuple(shapes))


def count_cost(plan: ShapePlan) -> tuple[int, int]:
    """Return ``(params, madds)`` for one forward pass."""
    return plan.total_params, plan.total_madds


def describe_shape(shape: LayerShape) -> str:
    if isinstance(shape.layer, Full):
        return str(shape.maps)
    return f"{shape.maps}×{shape.h}×{shape.w}"


# The eight published columns, keyed by their row number.
REFERENCE_NETS = {
    0: "48x48-150C3-MP2-250C2-MP2-350C2-MP2-450C2-MP2-1000N-3755N-1365334845",
    1: "48x48-150C3-MP2-250C2-MP2-350C2-MP2-450C2-MP2-1000N-3755N-1365775809",
    2: "48x48-300C3-MP2-300C2-MP2-300C2-MP2-300C2-MP2-1000N-3755N-1365166074",
    3: "48x48-100C3-MP2-200C2-MP2-300C2-MP2-400C2-MP2-500N-3755N-1365166209",
    4: "48x48-100C3-MP2-200C2-MP2-300C2-MP2-400C2-MP2-1000N-3755N-1325085896",
    5: "48x48-100C3-MP2-200C2-MP2-300C2-MP2-400C2-MP2-1000N-3755N-1325085943",
    6: "48x48-100C3-MP2-200C2-MP2-300C2-MP2-400C2-MP2-1000N-3755N-1325086048",
    7: "48x48-100C3-MP2-200C2-MP2-300C2-MP2-400C2-MP2-500N-3755N-1341137514",
}
