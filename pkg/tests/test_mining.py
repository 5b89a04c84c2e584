import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ruletune.mining import MiningConfig, mine
from ruletune.mining.encoding import changes_between
from ruletune.mining.fpgrowth import fp_growth_targeted
from ruletune.mining.rules import (
    PairEvidence,
    compute_coverage,
    coverage_fraction,
    derive_rules,
    ordered_pairs,
    rule_evidence,
)
from ruletune.mining.transactions import EncodedItem, ItemEncoder, augment_pairs, history_functions
from ruletune.model import (
    Interval,
    KnobAdjustment,
    RateInterval,
    TuningRule,
    ValidationError,
    WorkloadPredicate,
    load_specs,
    read_observations,
)

from conftest import HW16, obs
from oracles import coverage_by_definition, relative_gain

SPIN = "innodb_spin_wait_delay"


@pytest.fixture
def specs(spin_spec):
    return {spin_spec.name: spin_spec}


# -- augment_pairs ---------------------------------------------------------------


def test_identical_performance_gives_no_transactions(specs):
    h = [obs("a", 100.0, {SPIN: 1}), obs("b", 100.0, {SPIN: 2})]
    assert augment_pairs(h, specs) == []


def test_three_records_give_three_transactions(specs):
    h = [obs("a", 100.0, {SPIN: 1}), obs("b", 110.0, {SPIN: 2}), obs("c", 130.0, {SPIN: 3})]
    tx = augment_pairs(h, specs, 0.05)
    assert sorted(t.source for t in tx) == [("a", "b"), ("a", "c"), ("b", "c")]
    gains = {t.source: t.improvement for t in tx}
    assert gains[("a", "c")] == pytest.approx(0.30)
    assert gains[("b", "c")] == pytest.approx(20 / 110)


def test_lower_better_moves_toward_smaller_value(specs):
    h = [obs("slow", 50.0, {SPIN: 1}, direction="lower-better"), obs("fast", 40.0, {SPIN: 9}, direction="lower-better")]
    (t,) = augment_pairs(h, specs)
    assert t.source == ("slow", "fast")
    rel = [c for c in t.changes if c.form == "relative"][0]
    assert rel.direction == "increase"


def test_identical_configs_and_bad_histories(specs):
    h = [obs("a", 100.0, {SPIN: 1}), obs("b", 200.0, {SPIN: 1})]
    assert augment_pairs(h, specs) == []
    with pytest.raises(ValidationError):
        augment_pairs(h[:1], specs)
    mixed = [obs("a", 1.0), obs("b", 2.0, direction="lower-better")]
    with pytest.raises(ValidationError):
        augment_pairs(mixed, specs)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 1000), st.integers(0, 100)), min_size=2, max_size=12), st.floats(0.01, 0.5))
def test_pair_count_matches_brute_force(rows, threshold, ):
    from ruletune.model import KnobSpec

    specs = {SPIN: KnobSpec(SPIN, "integer", 0, 100, 6)}
    h = [obs(f"o{i}", v, {SPIN: c}) for i, (v, c) in enumerate(rows)]
    expected = 0
    for i in range(len(h)):
        for j in range(len(h)):
            a, b = rows[i], rows[j]
            if b[0] > a[0] and relative_gain(b[0], a[0], "higher-better") > threshold and a[1] != b[1]:
                expected += 1
    assert len(augment_pairs(h, specs, threshold)) == expected


# -- coverage and confidence ------------------------------------------------------------


def _adj(lo=0.0, hi=1.0, direction="increase"):
    return KnobAdjustment(SPIN, "relative", direction, Interval(lo, hi))


def test_empty_antecedent_covers_everything():
    h = [obs("a", 1.0), obs("b", 2.0)]
    assert compute_coverage(TuningRule(frozenset(), {_adj()}), h) == 1.0


def test_half_open_coverage():
    h = [obs(f"o{i}", 1.0, rates={"f": r}) for i, r in enumerate((0.15, 0.25, 0.05, 0.2))]
    rule = TuningRule({RateInterval("f", Interval(0.1, 0.2))}, {_adj()})
    assert coverage_fraction(rule, h) == Fraction(1, 2)


def test_unseen_predicate_covers_nothing():
    h = [obs("a", 1.0, workload={"workload_type": "oltp"})]
    rule = TuningRule({WorkloadPredicate("tenant", "x")}, {_adj()})
    assert compute_coverage(rule, h) == 0.0


def test_four_matching_pairs_three_improved(specs):
    rule = TuningRule({RateInterval("f", Interval(0.5, None))}, {_adj()})
    hot = lambda i, v, c: obs(f"h{i}", v, {SPIN: c}, {"f": 0.6})
    cold = lambda i, v, c: obs(f"c{i}", v, {SPIN: c}, {"f": 0.1})

    def pair(before, after):
        return PairEvidence(before, after, changes_between(specs, before.configuration, after.configuration, HW16), after.performance.improvement_over(before.performance))

    pairs = [
        pair(hot(1, 10, 5), hot(2, 12, 20)),
        pair(hot(3, 10, 5), hot(4, 11, 30)),
        pair(hot(5, 10, 5), hot(6, 13, 40)),
        pair(hot(7, 10, 5), hot(8, 9, 15)),  # matched, regressed
        pair(cold(1, 10, 5), cold(2, 20, 30)),  # antecedent fails
        pair(hot(9, 10, 30), hot(10, 20, 5)),  # opposite direction
    ]
    ev = rule_evidence(rule, pairs)
    assert (ev.successes, ev.trials) == (3, 4)
    assert ev.confidence == Fraction(3, 4)
    assert ev.improvement_sum == pytest.approx(0.2 + 0.1 + 0.3)


def test_adjustment_only_itemset_gives_empty_antecedent_rule(specs):
    h = [obs("a", 10.0, {SPIN: 5}), obs("b", 12.0, {SPIN: 20})]
    item = EncodedItem("adjustment", _adj(0.0, 0.5))
    (rule,) = derive_rules({frozenset({item}): Fraction(1)}, h, specs, 0.7)
    assert rule.antecedent == frozenset() and rule.coverage == 1.0
    assert (rule.success_count, rule.trial_count) == (1, 2) or rule.prior_confidence >= 0.7


def test_derive_rules_drops_low_confidence_and_double_knob(specs):
    h = [obs("a", 10.0, {SPIN: 5}), obs("b", 12.0, {SPIN: 20}), obs("c", 9.0, {SPIN: 35})]
    up = EncodedItem("adjustment", _adj(0.0, 0.5))
    down = EncodedItem("adjustment", _adj(0.0, 0.5, "decrease"))
    rules = derive_rules({frozenset({up}): Fraction(1), frozenset({up, down}): Fraction(1)}, h, specs, 0.7)
    assert rules == []  # up: a->b improves, a->c and b->c regress => 1/3


def test_coverage_and_confidence_match_definitions_on_random_fixtures(specs):
    rnd = random.Random(17)
    for _ in range(30):
        h = [
            obs(f"o{i}", rnd.uniform(5, 15), {SPIN: rnd.randint(0, 100)}, {"f": rnd.random() * 0.5, "g": rnd.random() * 0.5}, {"workload_type": rnd.choice(["oltp", "olap"])})
            for i in range(rnd.randint(2, 10))
        ]
        lo = rnd.random() * 0.4
        ante = {RateInterval("f", Interval(lo, lo + 0.2)), WorkloadPredicate("workload_type", "oltp")}
        adj = _adj(0.0, 0.5, rnd.choice(["increase", "decrease"]))
        rule = TuningRule(ante, {adj})
        assert coverage_fraction(rule, h) == coverage_by_definition(ante, h)
        pairs = ordered_pairs(h, specs)
        ev = rule_evidence(rule, pairs)
        trials = succ = 0
        for i, a in enumerate(h):
            for j, b in enumerate(h):
                if i == j or a.configuration == b.configuration or not all(p.holds(a.context) for p in ante):
                    continue
                delta = (b.configuration[SPIN] - a.configuration[SPIN]) / 100
                if (delta > 0) == (adj.direction == "increase") and abs(delta) in adj.interval:
                    trials += 1
                    succ += b.performance.value > a.performance.value
        assert (ev.successes, ev.trials) == (succ, trials)


# -- encoder and pipeline ---------------------------------------------------------------


def test_encoder_items_are_set_semantics(specs):
    h = [obs(f"o{i}", 10.0 + i, {SPIN: 10 * i}, {"f": 0.1 * i}) for i in range(6)]
    tx = augment_pairs(h, specs)
    enc = ItemEncoder(max_intervals=3, min_support=2).fit(tx, history_functions(h))
    encoded = [enc.encode(t, history_functions(h)) for t in tx]
    for t in encoded:
        assert any(i.is_adjustment for i in t.items)
        assert len({i.key for i in t.items}) == len(t.items)


@pytest.fixture(scope="module")
def fixture_history():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "fixtures"
    return read_observations(root / "obs.jsonl"), load_specs(root / "knobs.json")


def test_pipeline_on_fixture_is_deterministic(fixture_history):
    history, specs = fixture_history
    cfg = MiningConfig(max_itemset_size=3)
    rules, report = mine(history, specs, cfg)
    again, _ = mine(history, specs, cfg)
    assert [r.to_dict() for r in rules] == [r.to_dict() for r in again]
    assert report.rules == len(rules) > 0
    assert report.transactions > 0 and report.itemsets >= report.rules
    for r in rules:
        assert r.consequent
        assert 0 < r.trial_count and r.success_count <= r.trial_count
        assert r.prior_confidence >= cfg.min_confidence
        knobs = [a.knob for a in r.consequent]
        assert len(knobs) == len(set(knobs))


def test_pipeline_itemsets_all_contain_an_adjustment(fixture_history):
    history, specs = fixture_history
    tx = augment_pairs(history[:12], specs)
    functions = history_functions(history[:12])
    enc = ItemEncoder().fit(tx, functions)
    encoded = [enc.encode(t, functions) for t in tx]
    target = {i for t in encoded for i in t.items if i.is_adjustment}
    out = fp_growth_targeted([t.items for t in encoded], target, 0.1, max_len=3)
    assert out and all(any(i.is_adjustment for i in s) for s in out)
