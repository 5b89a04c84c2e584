import pytest

from ruletune import data
from ruletune.hypothesis import HypothesisStore
from ruletune.mapping import DependencyGraph, build_function_knob_map
from ruletune.model import ContextSnapshot, Hardware, KnobSpec, ObservationRecord, Performance
from ruletune.rulebook import Rulebook
from ruletune.simulator import load_scenario

GIB = 2**30
HW16 = Hardware(16 * GIB, 8)


def obs(id, value, config=None, rates=None, workload=None, direction="higher-better", hardware=HW16):
    return ObservationRecord(
        id,
        ContextSnapshot(workload or {}, rates or {}, hardware),
        config or {},
        Performance("throughput" if direction == "higher-better" else "latency", value, direction),
    )


@pytest.fixture
def buffer_spec():
    return KnobSpec("innodb_buffer_pool_size", "memory-bytes", 128 * 2**20, 15 * GIB, 128 * 2**20, "memory-fraction")


@pytest.fixture
def log_spec():
    return KnobSpec("innodb_log_buffer_size", "memory-bytes", 2**20, 4 * GIB, 16 * 2**20, "log")


@pytest.fixture
def spin_spec():
    return KnobSpec("innodb_spin_wait_delay", "integer", 0, 100, 6)


@pytest.fixture(scope="session")
def composite():
    return load_scenario("composite")


@pytest.fixture(scope="session")
def composite_parts():
    """Function-knob map, seeded rulebook and hypotheses shipped for the composite scenario."""
    fk = build_function_knob_map(DependencyGraph.from_dict(data.load("graph_composite.json")))
    rules = Rulebook.from_dict(data.load("rules_composite.json"))
    hyps = HypothesisStore.from_dict(data.load("hypotheses.json"))
    return fk, rules, hyps
