"""Rule mining pipeline: augment, encode, discretize, mine, derive."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from ruletune.mining.discretize import discretize_impact, interval_index
from ruletune.mining.encoding import (
    EncodedChange,
    EncodingError,
    changes_between,
    decode_value,
    encode_adjustment,
    encode_value,
    encoded_bounds,
)
from ruletune.mining.fpgrowth import MiningStats, fp_growth_targeted
from ruletune.mining.rules import compute_coverage, derive_rules, ordered_pairs, rule_evidence
from ruletune.mining.transactions import (
    EncodedItem,
    ItemEncoder,
    Transaction,
    augment_pairs,
    check_history,
    history_functions,
)
from ruletune.model import KnobSpec, ObservationRecord, TuningRule

log = logging.getLogger(__name__)

__all__ = [
    "EncodedChange",
    "EncodedItem",
    "EncodingError",
    "MiningConfig",
    "MiningReport",
    "MiningStats",
    "Transaction",
    "augment_pairs",
    "changes_between",
    "compute_coverage",
    "decode_value",
    "derive_rules",
    "discretize_impact",
    "encode_adjustment",
    "encode_value",
    "encoded_bounds",
    "fp_growth_targeted",
    "interval_index",
    "mine",
    "rule_evidence",
]


@dataclass(frozen=True)
class MiningConfig:
    min_improvement: float = 0.05
    min_coverage: float = 0.05
    min_confidence: float = 0.7
    max_intervals: int = 5
    min_support: int = 3
    max_itemset_size: int | None = 6


@dataclass(frozen=True)
class MiningReport:
    observations: int
    transactions: int
    itemsets: int
    rules: int
    conditional_trees: int
    pruned_paths: int

    def to_dict(self) -> dict:
        return asdict(self)


def mine(
    history: Sequence[ObservationRecord],
    specs: Mapping[str, KnobSpec],
    config: MiningConfig = MiningConfig(),
) -> tuple[list[TuningRule], MiningReport]:
    check_history(history)
    transactions = augment_pairs(history, specs, config.min_improvement)
    functions = history_functions(history)
    stats = MiningStats()
    itemsets: dict = {}
    if transactions:
        encoder = ItemEncoder(config.max_intervals, config.min_support).fit(transactions, functions)
        encoded = [encoder.encode(t, functions) for t in transactions]
        target = {i for t in encoded for i in t.items if i.is_adjustment}
        itemsets = fp_growth_targeted(
            [t.items for t in encoded], target, config.min_coverage, stats=stats, max_len=config.max_itemset_size
        )
    rules = derive_rules(itemsets, history, specs, config.min_confidence) if itemsets else []
    report = MiningReport(
        observations=len(history),
        transactions=len(transactions),
        itemsets=len(itemsets),
        rules=len(rules),
        conditional_trees=stats.conditional_trees,
        pruned_paths=stats.pruned_paths,
    )
    log.info("event=mined %s", " ".join(f"{k}={v}" for k, v in report.to_dict().items()))
    return rules, report
