"""Knob-controlled synthetic system.

Each function has a cost expression over knob values, workload intensity,
hardware and scenario parameters. Sampling rates are costs normalised by
their total, and performance is ``intensity / total cost`` (higher-better)
with optional multiplicative log-normal noise.

Scenario file::

    {"schema_version": 1, "name": "...",
     "hardware": {"total_memory_bytes": ..., "cores": ...},
     "workload": {"type": "oltp", "intensity": 1000.0},
     "params": {"name": number, ...},
     "knobs": [<KnobSpec>, ...],
     "functions": {"function": "<expression>", ...},
     "performance": {"metric_name": "throughput"},
     "noise": {"seed": 0, "scale": 0.02}}

Expressions may use knob names, ``intensity``, ``mem`` (total memory
bytes), ``cores`` and every entry of ``params``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ruletune.mining.encoding import encoded_bounds, to_domain
from ruletune.model import (
    SCHEMA_VERSION,
    ContextSnapshot,
    Hardware,
    KnobSpec,
    Performance,
    Scalar,
    ValidationError,
    check_schema_version,
    read_json,
)
from ruletune.simulator.expr import Expression

SHIPPED_SCENARIOS = ("buffer", "spin", "composite")
MAX_GRID_POINTS = 10**6
DEFAULT_NOISE_SCALE = 0.02


@dataclass(frozen=True)
class Scenario:
    name: str
    specs: Mapping[str, KnobSpec]
    functions: Mapping[str, Expression]
    hardware: Hardware
    workload_type: str = "oltp"
    intensity: float = 1000.0
    params: Mapping[str, float] = field(default_factory=dict)
    metric_name: str = "throughput"
    noise_seed: int = 0
    noise_scale: float = DEFAULT_NOISE_SCALE

    @property
    def workload_predicates(self) -> dict[str, Scalar]:
        return {"workload_type": self.workload_type}

    def defaults(self) -> dict[str, Scalar]:
        return {name: spec.default for name, spec in sorted(self.specs.items())}

    def with_noise(self, seed: int | None = None, scale: float | None = None) -> Scenario:
        return replace(
            self,
            noise_seed=self.noise_seed if seed is None else seed,
            noise_scale=self.noise_scale if scale is None else scale,
        )

    def env(self, configuration: Mapping[str, object]) -> dict[str, object]:
        env: dict[str, object] = dict(self.params)
        env.update(intensity=self.intensity, mem=float(self.hardware.total_memory_bytes), cores=float(self.hardware.cores))
        env.update(configuration)
        return env

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "hardware": self.hardware.to_dict(),
            "workload": {"type": self.workload_type, "intensity": self.intensity},
            "params": dict(self.params),
            "knobs": [s.to_dict() for _, s in sorted(self.specs.items())],
            "functions": {f: e.text for f, e in sorted(self.functions.items())},
            "performance": {"metric_name": self.metric_name},
            "noise": {"seed": self.noise_seed, "scale": self.noise_scale},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> Scenario:
        check_schema_version(doc, "scenario")
        specs = {d["name"]: KnobSpec.from_dict(d) for d in doc["knobs"]}
        workload = doc.get("workload", {})
        noise = doc.get("noise", {})
        scenario = cls(
            name=doc.get("name", "scenario"),
            specs=specs,
            functions={f: Expression(text) for f, text in doc["functions"].items()},
            hardware=Hardware.from_dict(doc["hardware"]),
            workload_type=workload.get("type", "oltp"),
            intensity=float(workload.get("intensity", 1000.0)),
            params={k: float(v) for k, v in doc.get("params", {}).items()},
            metric_name=doc.get("performance", {}).get("metric_name", "throughput"),
            noise_seed=int(noise.get("seed", 0)),
            noise_scale=float(noise.get("scale", DEFAULT_NOISE_SCALE)),
        )
        known = set(scenario.env(specs))
        for fn, expr in scenario.functions.items():
            unknown = expr.names - known
            if unknown:
                raise ValidationError([(f"functions.{fn}", f"unknown names {sorted(unknown)}")])
        return scenario


def load_scenario(name_or_path) -> Scenario:
    """Load a shipped scenario by name or a scenario file by path."""
    if str(name_or_path) in SHIPPED_SCENARIOS:
        from ruletune import data

        return Scenario.from_dict(data.load(f"scenario_{name_or_path}.json"))
    return Scenario.from_dict(read_json(name_or_path))


@dataclass(frozen=True)
class Evaluation:
    performance: Performance
    context: ContextSnapshot
    true_value: float
    costs: Mapping[str, float]


def _complete(scenario: Scenario, configuration: Mapping[str, Scalar]) -> dict[str, Scalar]:
    config = scenario.defaults()
    errors = []
    for name, value in configuration.items():
        spec = scenario.specs.get(name)
        if spec is None:
            errors.append((f"configuration.{name}", "unknown knob"))
            continue
        errors.extend(spec.check(value))
        config[name] = value
    if errors:
        raise ValidationError(errors)
    return config


def evaluate(
    scenario: Scenario, configuration: Mapping[str, Scalar], rng: np.random.Generator | None = None
) -> Evaluation:
    """Performance and profile of ``configuration``.

    Noise is drawn from ``rng`` when given; otherwise from a generator seeded
    with the scenario's ``noise_seed``, which makes the call a pure function.
    """
    config = _complete(scenario, configuration)
    env = scenario.env(config)
    costs = {}
    for fn, expr in sorted(scenario.functions.items()):
        c = float(expr(env))
        if not math.isfinite(c) or c < 0:
            raise ValidationError([(f"functions.{fn}", f"cost {c} is negative or not finite")])
        costs[fn] = c
    total = sum(costs.values())
    if total <= 0:
        raise ValidationError([("functions", "total cost must be positive")])
    rates = {fn: c / total for fn, c in costs.items()}
    true_value = scenario.intensity / total
    value = true_value
    if scenario.noise_scale > 0:
        gen = rng if rng is not None else np.random.default_rng(scenario.noise_seed)
        value = true_value * math.exp(scenario.noise_scale * gen.standard_normal())
    context = ContextSnapshot(scenario.workload_predicates, rates, scenario.hardware)
    return Evaluation(Performance(scenario.metric_name, value, "higher-better"), context, true_value, costs)


def true_performance(scenario: Scenario, configuration: Mapping[str, Scalar]) -> float:
    return evaluate(scenario.with_noise(scale=0.0), configuration).true_value


def grid_axis(spec: KnobSpec, resolution: int, hardware: Hardware) -> list[Scalar]:
    """``resolution`` points evenly spaced in encoded space, decoded into the domain."""
    if spec.kind == "categorical":
        return list(spec.categories)
    lo, hi = encoded_bounds(spec, hardware)
    if resolution == 1:
        return [spec.default]
    points = []
    for i in range(resolution):
        v = to_domain(spec, lo + (hi - lo) * i / (resolution - 1), hardware)
        if not points or v != points[-1]:
            points.append(v)
    return sorted(set(points))


def ground_truth_optimum(
    scenario: Scenario, grid_resolution: int, knobs: Sequence[str] | None = None
) -> tuple[dict[str, Scalar], float]:
    """Exhaustive noise-free grid search over ``knobs`` (default: all), others
    held at their defaults. Ties go to the lexicographically smallest
    configuration in knob-name order."""
    names = sorted(scenario.specs) if knobs is None else sorted(knobs)
    axes = [grid_axis(scenario.specs[n], grid_resolution, scenario.hardware) for n in names]
    size = math.prod(len(a) for a in axes)
    if size > MAX_GRID_POINTS:
        raise ValueError(f"grid of {size} points exceeds {MAX_GRID_POINTS}")
    categorical = any(scenario.specs[n].kind == "categorical" for n in names)
    if categorical:
        best = None
        for combo in itertools.product(*axes):
            config = dict(zip(names, combo))
            v = true_performance(scenario, config)
            if best is None or v > best[1]:
                best = (config, v)
        full = scenario.defaults()
        full.update(best[0])
        return full, best[1]
    mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
    config = {n: float(v) for n, v in scenario.defaults().items()}
    config.update({n: m.ravel() for n, m in zip(names, mesh)})
    env = scenario.env(config)
    total = np.zeros(size)
    for _, expr in sorted(scenario.functions.items()):
        total = total + np.broadcast_to(np.asarray(expr(env), dtype=float), (size,))
    perf = scenario.intensity / total
    idx = int(np.argmax(perf))
    best = scenario.defaults()
    for n, axis_idx in zip(names, np.unravel_index(idx, [len(a) for a in axes])):
        best[n] = axes[names.index(n)][axis_idx]
    # re-evaluate through the scalar path so the reported value matches evaluate()
    return best, true_performance(scenario, best)


class SimulatorAdapter:
    """System adapter backed by a scenario; noise comes from one seeded stream."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        self.rng = np.random.default_rng(scenario.noise_seed if seed is None else seed)

    @property
    def specs(self) -> Mapping[str, KnobSpec]:
        return self.scenario.specs

    @property
    def hardware(self) -> Hardware:
        return self.scenario.hardware

    def apply(self, configuration: Mapping[str, Scalar]) -> tuple[Performance, ContextSnapshot]:
        ev = evaluate(self.scenario, configuration, rng=self.rng)
        return ev.performance, ev.context

    def true_value(self, configuration: Mapping[str, Scalar]) -> float:
        return true_performance(self.scenario, configuration)
