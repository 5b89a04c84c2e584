"""Turning frequent itemsets into tuning rules, plus the rule quality measures."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from ruletune.mining.encoding import EncodedChange, adjustment_applied, changes_between
from ruletune.model import KnobSpec, ObservationRecord, TuningRule


def compute_coverage(rule: TuningRule, history: Sequence[ObservationRecord]) -> float:
    """Fraction of observations whose context satisfies the antecedent."""
    return float(coverage_fraction(rule, history))


def coverage_fraction(rule: TuningRule, history: Sequence[ObservationRecord]) -> Fraction:
    if not history:
        raise ValueError("coverage needs a non-empty history")
    hits = sum(1 for h in history if rule.holds(h.context))
    return Fraction(hits, len(history))


@dataclass(frozen=True)
class PairEvidence:
    """Ordered pair ``before -> after`` with the encoded changes between them."""

    before: ObservationRecord
    after: ObservationRecord
    changes: Mapping[str, tuple[EncodedChange, ...]]
    improvement: float


def ordered_pairs(history: Sequence[ObservationRecord], specs: Mapping[str, KnobSpec]) -> list[PairEvidence]:
    out = []
    for i, before in enumerate(history):
        for j, after in enumerate(history):
            if i == j:
                continue
            changes = changes_between(specs, before.configuration, after.configuration, before.context.hardware)
            if changes:
                gain = after.performance.improvement_over(before.performance)
                out.append(PairEvidence(before, after, changes, gain))
    return out


@dataclass(frozen=True)
class RuleEvidence:
    successes: int
    trials: int
    improvement_sum: float

    @property
    def confidence(self) -> Fraction | None:
        return Fraction(self.successes, self.trials) if self.trials else None


def rule_evidence(rule: TuningRule, pairs: Sequence[PairEvidence], index: PairIndex | None = None) -> RuleEvidence:
    """Count pairs where the antecedent held before the change and every
    consequent adjustment was part of it; successes are the improving ones."""
    index = index or PairIndex(pairs)
    mask = index.full
    for p in rule.antecedent:
        mask &= index.holds(p)
    for a in rule.consequent:
        mask &= index.applied(a)
    successes = trials = 0
    gain = 0.0
    for i, p in enumerate(pairs):
        if not mask >> i & 1:
            continue
        trials += 1
        if p.improvement > 0:
            successes += 1
            gain += p.improvement
    return RuleEvidence(successes, trials, gain)


class PairIndex:
    """Memoised per-item bitmasks over a fixed list of pairs."""

    def __init__(self, pairs: Sequence[PairEvidence]):
        self.pairs = pairs
        self.full = (1 << len(pairs)) - 1
        self._holds: dict[str, int] = {}
        self._applied: dict[str, int] = {}

    @staticmethod
    def _mask(flags: Iterable[bool]) -> int:
        return sum(1 << i for i, f in enumerate(flags) if f)

    def holds(self, predicate) -> int:
        m = self._holds.get(predicate.key)
        if m is None:
            m = self._holds[predicate.key] = self._mask(predicate.holds(p.before.context) for p in self.pairs)
        return m

    def applied(self, adj) -> int:
        m = self._applied.get(adj.key)
        if m is None:
            m = self._applied[adj.key] = self._mask(adjustment_applied(adj, p.changes) for p in self.pairs)
        return m


def _coverage(antecedent, history, memo: dict[str, int], full: int) -> float:
    mask = full
    for p in antecedent:
        m = memo.get(p.key)
        if m is None:
            m = memo[p.key] = PairIndex._mask(p.holds(h.context) for h in history)
        mask &= m
    return float(Fraction(bin(mask).count("1"), len(history)))


def split_itemset(itemset: Iterable) -> tuple[frozenset, frozenset]:
    antecedent, consequent = set(), set()
    for item in itemset:
        (consequent if item.is_adjustment else antecedent).add(item.payload)
    return frozenset(antecedent), frozenset(consequent)


def derive_rules(
    itemsets: Mapping[frozenset, Fraction],
    history: Sequence[ObservationRecord],
    specs: Mapping[str, KnobSpec],
    min_confidence: float = 0.7,
    pairs: Sequence[PairEvidence] | None = None,
) -> list[TuningRule]:
    """Split each itemset into antecedent and consequent and score it.

    Itemsets naming the same knob twice in the consequent are skipped (they
    duplicate a smaller rule). Coverage is over ``history``; the initial
    confidence counts are over all ordered pairs of ``history``. Rules below
    ``min_confidence`` or with no supporting pair are dropped.
    """
    if pairs is None:
        pairs = ordered_pairs(history, specs)
    index = PairIndex(pairs)
    covered: dict[str, int] = {}
    full = (1 << len(history)) - 1
    rules = {}
    for itemset in sorted(itemsets, key=lambda s: sorted(i.key for i in s)):
        antecedent, consequent = split_itemset(itemset)
        if not consequent:
            continue
        knobs = [a.knob for a in consequent]
        if len(knobs) != len(set(knobs)):
            continue
        draft = TuningRule(antecedent, consequent)
        ev = rule_evidence(draft, pairs, index)
        if not ev.trials or ev.confidence < Fraction(min_confidence):
            continue
        rule = TuningRule(
            antecedent,
            consequent,
            coverage=_coverage(antecedent, history, covered, full),
            success_count=ev.successes,
            trial_count=ev.trials,
            improvement_sum=ev.improvement_sum,
            prior_confidence=float(ev.confidence),
        )
        rules[rule.identity] = rule
    return [rules[k] for k in sorted(rules)]
