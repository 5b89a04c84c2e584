"""Rule storage, retrieval by context, EI ranking and feedback maintenance.

Rulebook document::

    {"schema_version": 1, "rules": [<TuningRule.to_dict()>, ...]}
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from ruletune.io import atomic_write_json
from ruletune.mining.encoding import EncodedChange, adjustment_applied
from ruletune.model import SCHEMA_VERSION, ContextSnapshot, TuningRule, check_schema_version, read_json

DEFAULT_TOP_K = 5


def expected_improvement(rule: TuningRule) -> float:
    """Mean gain over successful trials times confidence; 0 when unverified."""
    if rule.trial_count == 0 or rule.success_count == 0:
        return 0.0
    mean_gain = rule.improvement_sum / rule.success_count
    return mean_gain * (rule.success_count / rule.trial_count)


def _rank_key(rule: TuningRule):
    conf = rule.confidence
    if conf is None:
        conf = rule.prior_confidence if rule.prior_confidence is not None else -1.0
    return (-expected_improvement(rule), -conf, rule.id)


def rank_and_take(rules: Iterable[TuningRule], k: int = DEFAULT_TOP_K) -> list[TuningRule]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sorted(rules, key=_rank_key)[:k]


def is_hit(rule: TuningRule, applied: Mapping[str, Sequence[EncodedChange]]) -> bool:
    """True when every consequent adjustment is part of the applied change."""
    return all(adjustment_applied(a, applied) for a in rule.consequent)


@dataclass(frozen=True)
class Rulebook:
    rules: tuple[TuningRule, ...] = ()

    def __post_init__(self) -> None:
        by_id = {}
        for r in self.rules:
            by_id.setdefault(r.identity, r)
        object.__setattr__(self, "rules", tuple(by_id[k] for k in sorted(by_id)))

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def get(self, rule_id: str) -> TuningRule | None:
        return next((r for r in self.rules if r.id == rule_id), None)

    def match_rules(self, context: ContextSnapshot) -> list[TuningRule]:
        return [r for r in self.rules if r.holds(context)]

    def retrieve(self, context: ContextSnapshot, k: int = DEFAULT_TOP_K) -> list[TuningRule]:
        return rank_and_take(self.match_rules(context), k)

    def update_rule_stats(
        self,
        relevant: Iterable[TuningRule],
        applied: Mapping[str, Sequence[EncodedChange]],
        improved: bool,
        improvement: float = 0.0,
    ) -> tuple[Rulebook, list[str]]:
        """Credit hit relevant rules with one trial (and a success when improved).

        Returns the new rulebook and the ids of the hit rules; every other
        rule is left untouched.
        """
        if improved and improvement < 0:
            raise ValueError("improvement must be >= 0 when improved")
        hits = {r.identity for r in relevant if is_hit(r, applied)}
        updated = []
        for r in self.rules:
            if r.identity in hits:
                r = replace(
                    r,
                    trial_count=r.trial_count + 1,
                    success_count=r.success_count + (1 if improved else 0),
                    improvement_sum=r.improvement_sum + (improvement if improved else 0.0),
                )
            updated.append(r)
        return Rulebook(tuple(updated)), sorted(r.id for r in self.rules if r.identity in hits)

    def merge(self, new_rules: Iterable[TuningRule]) -> tuple[Rulebook, int]:
        """Add unseen rules as unverified (statistics zeroed, mining confidence
        kept as prior); existing rules keep their statistics."""
        known = {r.identity for r in self.rules}
        added = []
        for r in new_rules:
            if r.identity in known:
                continue
            known.add(r.identity)
            prior = r.prior_confidence if r.prior_confidence is not None else r.confidence
            added.append(replace(r, success_count=0, trial_count=0, improvement_sum=0.0, prior_confidence=prior))
        return Rulebook(self.rules + tuple(added)), len(added)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "rules": [r.to_dict() for r in self.rules]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> Rulebook:
        check_schema_version(doc, "rulebook")
        return cls(tuple(TuningRule.from_dict(d) for d in doc.get("rules", ())))

    def save(self, path) -> None:
        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> Rulebook:
        return cls.from_dict(read_json(path))


def match_rules(rulebook: Rulebook, context: ContextSnapshot) -> list[TuningRule]:
    return rulebook.match_rules(context)
