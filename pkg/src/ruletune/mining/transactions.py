"""Pairwise augmentation of observations into mining transactions."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from ruletune.mining.discretize import discretize_impact, interval_count, interval_index
from ruletune.mining.encoding import EncodedChange, changes_between
from ruletune.model import (
    ContextSnapshot,
    Interval,
    KnobAdjustment,
    KnobSpec,
    ObservationRecord,
    RateInterval,
    ValidationError,
    WorkloadPredicate,
)

log = logging.getLogger(__name__)

ITEM_TAGS = ("context-predicate", "function-rate-interval", "adjustment")


@dataclass(frozen=True)
class EncodedItem:
    """A transaction item; equal iff tag and payload are equal."""

    tag: str
    payload: WorkloadPredicate | RateInterval | KnobAdjustment
    index: int | None = field(default=None, compare=False)

    @property
    def key(self) -> str:
        return self.payload.key

    @property
    def is_adjustment(self) -> bool:
        return self.tag == "adjustment"

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class Transaction:
    """Context of the worse observation plus the changes toward the better one.

    ``items`` stays empty until :class:`ItemEncoder` discretizes the raw
    context and changes.
    """

    source: tuple[str, str]
    improvement: float
    context: ContextSnapshot
    changes: tuple[EncodedChange, ...]
    items: frozenset = frozenset()


def check_history(history: Sequence[ObservationRecord]) -> None:
    if len(history) < 2:
        raise ValidationError([("history", "need at least 2 observations")])
    metrics = {(h.performance.metric_name, h.performance.direction) for h in history}
    if len(metrics) > 1:
        raise ValidationError([("history", f"mixed performance metrics {sorted(metrics)}")])


def augment_pairs(
    history: Sequence[ObservationRecord],
    specs: Mapping[str, KnobSpec],
    min_improvement: float = 0.05,
) -> list[Transaction]:
    """One transaction per unordered pair whose better member improves on the
    worse one by more than ``min_improvement`` (relative, direction-aware).
    Pairs with identical configurations are skipped."""
    if min_improvement <= 0:
        raise ValueError("min_improvement must be > 0")
    check_history(history)
    out = []
    for i in range(len(history)):
        for j in range(i + 1, len(history)):
            a, b = history[i], history[j]
            if b.performance.better_than(a.performance):
                worse, better = a, b
            elif a.performance.better_than(b.performance):
                worse, better = b, a
            else:
                continue
            gain = better.performance.improvement_over(worse.performance)
            if not gain > min_improvement:
                continue
            changes = changes_between(specs, worse.configuration, better.configuration, worse.context.hardware)
            if not changes:
                continue
            flat = tuple(c for knob in sorted(changes) for c in changes[knob])
            out.append(Transaction((worse.id, better.id), gain, worse.context, flat))
    return out


def _materialize(kind: str, edges: list[float], idx: int) -> Interval:
    m = interval_count(edges)
    if len(edges) == 1:
        lo_edge, hi_edge = None, edges[0]
    else:
        lo_edge = None if idx == 0 else edges[idx]
        hi_edge = edges[idx + 1]
    last = idx == m - 1
    if kind == "rate":
        return Interval(lo_edge, None if last else hi_edge)
    if kind == "relative":
        return Interval(0.0 if lo_edge is None else lo_edge, hi_edge)
    return Interval(lo_edge, hi_edge)


class ItemEncoder:
    """Discretizes rates and adjustment values against transaction improvement.

    Features: one per function rate, one per (knob, direction) relative
    magnitude and one per knob absolute target. Each gets its own interval
    edges from :func:`discretize_impact`. The effective interval cap is
    ``min(max_intervals, samples // min_support)`` so small histories still
    split when they can.
    """

    def __init__(self, max_intervals: int = 5, min_support: int = 3):
        self.max_intervals = max_intervals
        self.min_support = min_support
        self.edges: dict[tuple, list[float]] = {}

    def _fit_feature(self, samples: list[tuple[float, float]]) -> list[float]:
        k = max(1, min(self.max_intervals, len(samples) // max(1, self.min_support)))
        return discretize_impact(samples, k, self.min_support)

    def fit(self, transactions: Sequence[Transaction], functions: Sequence[str]) -> ItemEncoder:
        samples: dict[tuple, list] = defaultdict(list)
        for t in transactions:
            for fn in functions:
                samples[("rate", fn)].append((t.context.rate(fn), t.improvement))
            for c in t.changes:
                if c.label is not None:
                    continue
                if c.form == "relative":
                    samples[("relative", c.knob, c.direction)].append((c.value, t.improvement))
                else:
                    samples[("absolute", c.knob)].append((c.value, t.improvement))
        self.edges = {feat: self._fit_feature(s) for feat, s in sorted(samples.items())}
        return self

    def item_for_rate(self, function: str, rate: float) -> EncodedItem | None:
        edges = self.edges.get(("rate", function))
        if edges is None or interval_count(edges) < 2:
            return None  # a single unbounded interval carries no information
        idx = interval_index(edges, rate)
        return EncodedItem("function-rate-interval", RateInterval(function, _materialize("rate", edges, idx)), idx)

    def item_for_change(self, c: EncodedChange) -> EncodedItem:
        if c.label is not None:
            return EncodedItem("adjustment", KnobAdjustment(c.knob, "absolute", "set", Interval(None, None), label=c.label))
        feat = ("relative", c.knob, c.direction) if c.form == "relative" else ("absolute", c.knob)
        edges = self.edges[feat]
        idx = interval_index(edges, c.value)
        interval = _materialize(feat[0], edges, idx)
        return EncodedItem("adjustment", KnobAdjustment(c.knob, c.form, c.direction, interval), idx)

    def encode(self, t: Transaction, functions: Sequence[str]) -> Transaction:
        items = {EncodedItem("context-predicate", WorkloadPredicate(k, v)) for k, v in t.context.workload_predicates.items()}
        for fn in functions:
            item = self.item_for_rate(fn, t.context.rate(fn))
            if item is not None:
                items.add(item)
        items.update(self.item_for_change(c) for c in t.changes)
        return replace(t, items=frozenset(items))


def history_functions(history: Sequence[ObservationRecord]) -> list[str]:
    return sorted({fn for h in history for fn in h.context.function_rates})
