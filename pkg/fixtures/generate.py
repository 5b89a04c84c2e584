"""Regenerate the example fixtures from the composite simulator scenario.

    python fixtures/generate.py
"""

import json
from pathlib import Path

import numpy as np

from ruletune.model import ObservationRecord, specs_to_document, write_observations
from ruletune.simulator import SimulatorAdapter, load_scenario
from ruletune.tuner import random_configuration

HERE = Path(__file__).resolve().parent
N_OBSERVATIONS = 30


def folded(costs, total_samples=10000):
    """Collapsed stacks whose leaf counts follow the given cost shares."""
    total = sum(costs.values())
    lines = []
    for fn, c in sorted(costs.items()):
        n = round(total_samples * c / total)
        if n:
            lines.append(f"mysqld;do_command;dispatch_command;{fn} {n}")
    return "\n".join(lines) + "\n"


def main():
    scenario = load_scenario("composite")
    (HERE / "knobs.json").write_text(json.dumps(specs_to_document(scenario.specs.values()), indent=2, sort_keys=True) + "\n")
    adapter = SimulatorAdapter(scenario, seed=11)
    rng = np.random.default_rng(11)
    records = []
    for i in range(N_OBSERVATIONS):
        config = scenario.defaults() if i == 0 else random_configuration(scenario.specs, scenario.hardware, rng)
        perf, ctx = adapter.apply(config)
        records.append(ObservationRecord(f"obs-{i:04d}", ctx, config, perf))
    write_observations(HERE / "obs.jsonl", records)

    from ruletune.simulator import evaluate

    good = dict(scenario.defaults(), innodb_buffer_pool_size=11 * 2**30)
    bad = dict(good, innodb_spin_wait_delay=0)
    for name, config in (("baseline", good), ("degraded", bad)):
        ev = evaluate(scenario.with_noise(scale=0.0), config)
        (HERE / f"profile_{name}.folded").write_text(folded(ev.costs))
        (HERE / f"snapshot_{name}.json").write_text(json.dumps(ev.context.to_dict(), indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
