"""Scale-invariant encoding of knob values and adjustments.

Encoded space per knob scale:

* memory-fraction: bytes / total memory
* log: natural log of the value
* linear: (value - min) / (max - min)
* categorical: index of the category

A change between two configurations is described twice: a relative change
(direction plus encoded magnitude) and an absolute one (encoded target).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from ruletune.model import Hardware, KnobAdjustment, KnobSpec, Scalar


def encode_value(spec: KnobSpec, value: Scalar, hardware: Hardware) -> float:
    if spec.kind == "categorical":
        return float(spec.categories.index(value))
    if spec.scale == "memory-fraction":
        return float(value) / hardware.total_memory_bytes
    if spec.scale == "log":
        return math.log(float(value))
    return (float(value) - spec.min) / (spec.max - spec.min)


def decode_value(spec: KnobSpec, x: float, hardware: Hardware) -> float | str:
    """Inverse of :func:`encode_value`; not clamped or rounded."""
    if spec.kind == "categorical":
        idx = min(max(int(round(x)), 0), len(spec.categories) - 1)
        return spec.categories[idx]
    if spec.scale == "memory-fraction":
        return x * hardware.total_memory_bytes
    if spec.scale == "log":
        return math.exp(x)
    return spec.min + x * (spec.max - spec.min)


def encoded_bounds(spec: KnobSpec, hardware: Hardware) -> tuple[float, float]:
    if spec.kind == "categorical":
        return 0.0, float(len(spec.categories) - 1)
    return encode_value(spec, spec.min, hardware), encode_value(spec, spec.max, hardware)


def to_domain(spec: KnobSpec, x: float, hardware: Hardware) -> Scalar:
    """Decode an encoded value, then clamp and round it into the knob's domain."""
    raw = decode_value(spec, x, hardware)
    return raw if spec.kind == "categorical" else spec.clamp(raw)


@dataclass(frozen=True)
class EncodedChange:
    """One encoded description of a knob change before discretization.

    ``value`` is the encoded magnitude (relative form) or encoded target
    (absolute form).
    """

    knob: str
    form: str
    direction: str
    value: float
    label: str | None = None

    def matches(self, adj: KnobAdjustment) -> bool:
        if adj.knob != self.knob or adj.form != self.form or adj.direction != self.direction:
            return False
        if adj.label is not None or self.label is not None:
            return adj.label == self.label
        return self.value in adj.interval


class EncodingError(ValueError):
    pass


def encode_adjustment(
    spec: KnobSpec, frm: Scalar, to: Scalar, hardware: Hardware
) -> tuple[EncodedChange | None, EncodedChange]:
    """Relative and absolute encodings of ``frm -> to``.

    Categorical knobs only have an absolute form; their relative slot is None.
    """
    if frm == to:
        raise EncodingError(f"no-op adjustment on {spec.name}: from == to")
    if spec.kind == "categorical":
        return None, EncodedChange(spec.name, "absolute", "set", encode_value(spec, to, hardware), label=str(to))
    b = encode_value(spec, to, hardware)
    direction = "increase" if float(to) > float(frm) else "decrease"
    return (
        EncodedChange(spec.name, "relative", direction, _magnitude(spec, frm, to, hardware)),
        EncodedChange(spec.name, "absolute", "set", b),
    )


def _magnitude(spec: KnobSpec, frm: Scalar, to: Scalar, hardware: Hardware) -> float:
    # scale the raw difference once; subtracting two encoded values rounds
    # exact deltas such as 10/100 off an interval boundary
    diff = abs(float(to) - float(frm))
    if spec.scale == "memory-fraction":
        return diff / hardware.total_memory_bytes
    if spec.scale == "log":
        return abs(math.log(float(to)) - math.log(float(frm)))
    return diff / (spec.max - spec.min)


def encode_relative(spec: KnobSpec, frm: Scalar, to: Scalar, hardware: Hardware) -> EncodedChange:
    if spec.kind == "categorical":
        raise EncodingError(f"categorical knob {spec.name} has no relative form")
    rel, _ = encode_adjustment(spec, frm, to, hardware)
    return rel


def changes_between(
    specs: Mapping[str, KnobSpec],
    before: Mapping[str, Scalar],
    after: Mapping[str, Scalar],
    hardware: Hardware,
) -> dict[str, tuple[EncodedChange, ...]]:
    """Encoded changes for every knob whose value differs; missing values are defaults."""
    out = {}
    for name in sorted(specs):
        spec = specs[name]
        a = before.get(name, spec.default)
        b = after.get(name, spec.default)
        if a == b:
            continue
        rel, absolute = encode_adjustment(spec, a, b, hardware)
        out[name] = tuple(c for c in (rel, absolute) if c is not None)
    return out


def adjustment_applied(adj: KnobAdjustment, changes: Mapping[str, tuple[EncodedChange, ...]]) -> bool:
    return any(c.matches(adj) for c in changes.get(adj.knob, ()))


def apply_adjustment(
    spec: KnobSpec, adj: KnobAdjustment, current: Scalar, hardware: Hardware, step: float | None = None
) -> Scalar:
    """Move ``current`` by ``adj``, using the interval midpoint unless ``step`` is given.

    Unbounded interval sides are clipped to the knob's encoded range first.
    """
    if adj.label is not None:
        return adj.label
    lo, hi = encoded_bounds(spec, hardware)
    if adj.form == "absolute":
        a, b = adj.interval.clipped(lo, hi)
        target = (a + b) / 2 if step is None else step
        return to_domain(spec, target, hardware)
    a, b = adj.interval.clipped(0.0, hi - lo)
    magnitude = (a + b) / 2 if step is None else step
    x = encode_value(spec, current, hardware)
    x = x + magnitude if adj.direction == "increase" else x - magnitude
    return to_domain(spec, x, hardware)


def describe_adjustment(spec: KnobSpec | None, adj: KnobAdjustment) -> str:
    """Human form, e.g. ``increase buffer_pool by (0.16Mem, 0.5Mem]``."""
    if adj.label is not None:
        return f"set {adj.knob} to {adj.label}"

    def fmt(x: float | None, default: str) -> str:
        if x is None:
            return default
        if spec is None:
            return f"{x:.4g}"
        if spec.scale == "memory-fraction":
            return f"{x:.2f}Mem"
        if spec.scale == "log":
            return f"x{math.exp(x):.3g}" if adj.form == "relative" else f"{math.exp(x):.4g}"
        if adj.form == "relative":
            return f"{x * (spec.max - spec.min):.4g}"
        return f"{spec.min + x * (spec.max - spec.min):.4g}"

    lo = fmt(adj.interval.lo, "-inf")
    hi = fmt(adj.interval.hi, "inf")
    if adj.form == "absolute":
        return f"set {adj.knob} within ({lo}, {hi}]"
    if spec is not None and spec.scale == "log":
        return f"{adj.direction} {adj.knob} by factor ({lo}, {hi}]"
    return f"{adj.direction} {adj.knob} by ({lo}, {hi}]"
