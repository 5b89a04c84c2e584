"""Collapsed-stack ingestion.

Each line is ``frame;frame;...;leaf count`` as written by the usual
stack-collapsing scripts. Samples are attributed to the leaf frame, and
rates are leaf counts over the total.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Mapping

from ruletune.model import DEFAULT_HARDWARE, ContextSnapshot, Hardware, Scalar


class ProfileFormatError(ValueError):
    pass


def parse_collapsed(lines: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        stack, _, count = line.rpartition(" ")
        if not stack:
            raise ProfileFormatError(f"line {lineno}: expected 'stack count'")
        try:
            n = int(count)
        except ValueError:
            try:
                n = float(count)
            except ValueError:
                raise ProfileFormatError(f"line {lineno}: bad sample count {count!r}") from None
        if n < 0:
            raise ProfileFormatError(f"line {lineno}: negative sample count")
        leaf = stack.rsplit(";", 1)[-1].strip()
        counts[leaf] += n
    return counts


def leaf_rates(lines: Iterable[str]) -> dict[str, float]:
    counts = parse_collapsed(lines)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {fn: counts[fn] / total for fn in sorted(counts)}


def snapshot_from_collapsed(
    lines: Iterable[str],
    hardware: Hardware = DEFAULT_HARDWARE,
    workload: Mapping[str, Scalar] | None = None,
) -> ContextSnapshot:
    return ContextSnapshot(dict(workload or {}), leaf_rates(lines), hardware)
