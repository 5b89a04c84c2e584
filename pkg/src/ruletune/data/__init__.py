"""Shipped scenarios, dependency graphs, hypotheses and seeded rulebooks."""

import json
from importlib import resources

# dependency graph shipped for each simulator scenario
SCENARIO_GRAPHS = {"buffer": "graph_buffer.json", "spin": "graph_spin.json", "composite": "graph_composite.json"}
SCENARIO_RULES = {"composite": "rules_composite.json"}


def load(name: str):
    """Parse a shipped JSON file by file name."""
    return json.loads(resources.files(__name__).joinpath(name).read_text(encoding="utf-8"))
