import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ruletune.model import ValidationError
from ruletune.simulator import (
    Expression,
    ExpressionError,
    Scenario,
    SimulatorAdapter,
    evaluate,
    grid_axis,
    ground_truth_optimum,
    load_scenario,
    true_performance,
)

SPIN = "innodb_spin_wait_delay"
LOG = "innodb_log_buffer_size"
HW = {"total_memory_bytes": 16 * 2**30, "cores": 8}


def inline(functions, knobs, params=None):
    return Scenario.from_dict(
        {
            "schema_version": 1,
            "name": "t",
            "hardware": HW,
            "knobs": knobs,
            "params": params or {},
            "functions": functions,
            "noise": {"seed": 1, "scale": 0.0},
        }
    )


def knob(name, lo=0, hi=100, default=6):
    return {"name": name, "kind": "integer", "min": lo, "max": hi, "default": default}


@pytest.fixture(scope="module")
def spin():
    return load_scenario("spin").with_noise(scale=0.0)


@pytest.fixture(scope="module")
def buffer():
    return load_scenario("buffer").with_noise(scale=0.0)


# -- evaluate ---------------------------------------------------------------------------


def test_spin_at_zero_delay_waits_more_than_it_spins(spin):
    rates = evaluate(spin, {SPIN: 0}).context.function_rates
    assert rates["sync_array_wait_event"] > rates["ut_delay"]


def test_noise_free_evaluation_is_deterministic(composite):
    quiet = composite.with_noise(scale=0.0)
    a = evaluate(quiet, quiet.defaults())
    b = evaluate(quiet, quiet.defaults())
    assert a == b and a.performance.value == a.true_value


def test_noisy_evaluation_is_reproducible_per_seed(composite):
    a = SimulatorAdapter(composite, 3)
    b = SimulatorAdapter(composite, 3)
    cfg = composite.defaults()
    assert [a.apply(cfg)[0].value for _ in range(3)] == [b.apply(cfg)[0].value for _ in range(3)]
    assert evaluate(composite, cfg).performance.value == evaluate(composite, cfg).performance.value


def test_flush_cost_vanishes_when_buffer_holds_the_burst(buffer):
    burst = int(buffer.params["log_burst"])
    for size in (burst, 2 * burst, buffer.specs[LOG].max):
        assert evaluate(buffer, {LOG: size}).context.rate("log_buffer_flush_to_disk") == 0
    assert evaluate(buffer, {LOG: burst - 1}).context.rate("log_buffer_flush_to_disk") > 0


def test_out_of_domain_configuration_rejected(spin):
    with pytest.raises(ValidationError):
        evaluate(spin, {SPIN: 101})
    with pytest.raises(ValidationError):
        evaluate(spin, {"unknown": 1})


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_rates_sum_to_one(composite, data):
    cfg = {}
    for name, spec in composite.specs.items():
        cfg[name] = data.draw(st.integers(int(spec.min), int(spec.max)))
    rates = evaluate(composite.with_noise(scale=0.0), cfg).context.function_rates
    assert abs(sum(rates.values()) - 1) <= 1e-9
    assert all(0 <= r <= 1 for r in rates.values())


def test_spin_trade_off_is_strictly_monotone(spin):
    prev = None
    for d in range(0, 101):
        r = evaluate(spin, {SPIN: d}).context.function_rates
        if prev is not None:
            assert r["sync_array_wait_event"] < prev["sync_array_wait_event"]
            assert r["ut_delay"] > prev["ut_delay"]
        prev = r


# -- ground truth optimum ---------------------------------------------------------------------------


def test_monotone_one_knob_optimum_at_boundary():
    sc = inline({"work": "1 + 50 / (1 + x)"}, [knob("x")])
    best, value = ground_truth_optimum(sc, 101)
    assert best == {"x": 100}
    assert value == pytest.approx(1000 / (1 + 50 / 101))


def test_spin_interior_optimum_balances_the_two_terms(spin):
    best, value = ground_truth_optimum(spin, 1000)
    # closed form of the cost minimum: (1 + 0.2 d)^2 = 32, then the better integer neighbour
    d_star = (math.sqrt(32) - 1) / 0.2
    cost = lambda d: 5 + 0.05 * d + 8 / (1 + 0.2 * d)
    expected = min((math.floor(d_star), math.ceil(d_star)), key=cost)
    assert 0 < best[SPIN] < 100
    assert best[SPIN] == expected
    assert value == pytest.approx(1000 / cost(expected))


def test_separable_optima_compose():
    sc = inline(
        {"a": "(x - 30) ** 2 / 100 + 1", "b": "(y - 70) ** 2 / 50 + 2"},
        [knob("x"), knob("y")],
    )
    joint, _ = ground_truth_optimum(sc, 101)
    bx, _ = ground_truth_optimum(sc, 101, ["x"])
    by, _ = ground_truth_optimum(sc, 101, ["y"])
    assert joint == {"x": bx["x"], "y": by["y"]} == {"x": 30, "y": 70}


def test_grid_agrees_with_scalar_path(composite):
    best, value = ground_truth_optimum(composite, 11)
    assert value == true_performance(composite, best)
    for name in composite.specs:
        for v in grid_axis(composite.specs[name], 11, composite.hardware):
            cfg = dict(best, **{name: v})
            assert true_performance(composite, cfg) <= value + 1e-9


def test_ties_go_to_smallest_configuration():
    sc = inline({"flat": "1"}, [knob("x"), knob("y")])
    best, _ = ground_truth_optimum(sc, 11)
    assert best == {"x": 0, "y": 0}


def test_grid_too_large(composite):
    with pytest.raises(ValueError, match="exceeds"):
        ground_truth_optimum(composite, 100)


# -- expressions ---------------------------------------------------------------------------------


def test_expression_vectorizes_conditionals():
    e = Expression("6 if burst > x else 0")
    assert e({"burst": 10, "x": 5}) == 6
    out = e({"burst": 10, "x": np.array([5.0, 15.0])})
    assert list(out) == [6, 0]
    assert Expression("max(a, b, 3) + step(a - 1)")({"a": 2, "b": 1}) == 4


@pytest.mark.parametrize(
    "text",
    ["__import__('os')", "x.attr", "x[0]", "lambda: 1", "open('f')", "x == 1 if 1 else 0", "1 +", "'str'"],
)
def test_expression_rejects_unsafe_or_invalid_input(text):
    with pytest.raises(ExpressionError):
        Expression(text)


def test_scenario_with_unknown_name_is_rejected():
    with pytest.raises(ValidationError):
        inline({"f": "nope * 2"}, [knob("x")])


def test_negative_cost_is_rejected():
    sc = inline({"f": "x - 50"}, [knob("x")])
    with pytest.raises(ValidationError):
        evaluate(sc, {"x": 10})


def test_scenario_round_trip(composite):
    assert Scenario.from_dict(composite.to_dict()).to_dict() == composite.to_dict()
