"""Tuning hypotheses, rule-augmented prompts and configuration advisors.

Hypothesis file::

    {"schema_version": 1, "hypotheses": [<Hypothesis.to_dict()>, ...]}

Advisors turn the retrieved rules and hypotheses into a configuration
delta. :class:`StubAdvisor` is deterministic: it exploits the top rule if
one is supplied and otherwise follows triggered hypotheses. :class:`RemoteAdvisor`
posts the prompt to a JSON endpoint and falls back to the stub on any
failure.

Remote wire format (one POST per suggestion)::

    request  {"prompt": str,
              "knobs": [{"name", "kind", "min", "max", "categories", "current"}],
              "reply_schema": {"configuration": {"<knob>": "number | category label"}}}
    response {"configuration": {"<knob>": value, ...}}
"""

from __future__ import annotations

import json
import logging
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ruletune.diagnosis import Bottleneck
from ruletune.mining.encoding import apply_adjustment, describe_adjustment, encode_value, encoded_bounds, to_domain
from ruletune.model import (
    SCHEMA_VERSION,
    ContextSnapshot,
    Hardware,
    Hypothesis,
    KnobSpec,
    Scalar,
    TuningRule,
    check_schema_version,
    read_json,
)
from ruletune.rulebook import expected_improvement

log = logging.getLogger(__name__)

ADVISOR_URL_ENV = "RULETUNE_ADVISOR_URL"
EXPLORATION_STEP = 0.25
CAUSAL_LINK_LIMIT = 500
REMOTE_TIMEOUT = 30.0


@dataclass(frozen=True)
class HypothesisStore:
    hypotheses: tuple[Hypothesis, ...] = ()

    def retrieve(self, knobs: Iterable[str], functions: Iterable[str]) -> list[Hypothesis]:
        return retrieve_hypotheses(self.hypotheses, knobs, functions)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "hypotheses": [h.to_dict() for h in self.hypotheses]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> HypothesisStore:
        check_schema_version(doc, "hypothesis")
        return cls(tuple(Hypothesis.from_dict(d) for d in doc.get("hypotheses", ())))

    @classmethod
    def load(cls, path) -> HypothesisStore:
        return cls.from_dict(read_json(path))


def retrieve_hypotheses(
    hypotheses: Sequence[Hypothesis], knobs: Iterable[str], functions: Iterable[str]
) -> list[Hypothesis]:
    """Hypotheses for the given knobs that mention a flagged function,
    largest overlap first (stable otherwise)."""
    knobs = set(knobs)
    functions = set(functions)
    scored = []
    for pos, h in enumerate(hypotheses):
        overlap = len(h.functions & functions)
        if h.knob in knobs and overlap:
            scored.append((-overlap, pos, h))
    return [h for _, _, h in sorted(scored, key=lambda s: s[:2])]


# -- prompt ---------------------------------------------------------------

INSTRUCTION = (
    "You are tuning the configuration knobs of a database system. Propose new values "
    "for the selected knobs that improve {metric}. Prefer adjustments backed by verified "
    "rules; use hypotheses to explore when no rule applies. Keep every value inside its "
    "domain and reply with a JSON object mapping knob names to values."
)


@dataclass(frozen=True)
class TaskInfo:
    hardware: Hardware
    workload: Mapping[str, Scalar] = field(default_factory=dict)
    bottlenecks: Sequence[Bottleneck] = ()
    selected_knobs: Sequence[str] = ()
    configuration: Mapping[str, Scalar] = field(default_factory=dict)
    metric: str = "performance"


def render_rule(rule: TuningRule, specs: Mapping[str, KnobSpec]) -> str:
    conds = []
    for p in sorted(rule.antecedent, key=lambda p: p.key):
        if hasattr(p, "function"):
            lo, hi = p.interval.lo, p.interval.hi
            if hi is None:
                conds.append(f"r({p.function}) > {lo:.2%}")
            elif lo is None:
                conds.append(f"r({p.function}) <= {hi:.2%}")
            else:
                conds.append(f"r({p.function}) in ({lo:.2%}, {hi:.2%}]")
        else:
            conds.append(f"{p.name} = {json.dumps(p.value)}")
    acts = [describe_adjustment(specs.get(a.knob), a) for a in sorted(rule.consequent, key=lambda a: a.key)]
    conf = rule.confidence
    conf_txt = f"{conf:.2f}" if conf is not None else (
        f"unverified (mined {rule.prior_confidence:.2f})" if rule.prior_confidence is not None else "unverified"
    )
    lhs = " AND ".join(conds) if conds else "always"
    return f"[{rule.id}] {lhs} => {' AND '.join(acts)} (confidence {conf_txt}, EI {expected_improvement(rule):.4f})"


def build_prompt(
    task: TaskInfo,
    hypotheses: Sequence[Hypothesis],
    rules: Sequence[TuningRule],
    specs: Mapping[str, KnobSpec] | None = None,
    max_rules: int = 5,
) -> str:
    """Three sections: instruction, task information, hypotheses and rules."""
    specs = specs or {}
    lines = ["# 1. Task Instruction", INSTRUCTION.format(metric=task.metric), ""]
    lines.append("# 2. Task Information")
    hw = task.hardware
    lines.append(f"Hardware: {hw.total_memory_bytes / 2**30:.2f} GiB memory, {hw.cores} cores")
    workload = ", ".join(f"{k}={json.dumps(v)}" for k, v in sorted(task.workload.items())) or "unspecified"
    lines.append(f"Workload: {workload}")
    if task.bottlenecks:
        lines.append("Bottleneck functions:")
        for b in task.bottlenecks:
            lines.append(f"- {b.function} ({b.signal}, severity {b.severity:.4f})")
    else:
        lines.append("Bottleneck functions: none detected")
    if task.selected_knobs:
        lines.append("Selected knobs:")
        for name in task.selected_knobs:
            spec = specs.get(name)
            current = task.configuration.get(name, spec.default if spec else None)
            if spec is None:
                lines.append(f"- {name} (current {json.dumps(current)})")
            elif spec.kind == "categorical":
                lines.append(f"- {name}: one of {list(spec.categories)} (current {json.dumps(current)})")
            else:
                lines.append(f"- {name}: {spec.kind} in [{spec.min}, {spec.max}], {spec.scale} scale (current {json.dumps(current)})")
    else:
        lines.append("Selected knobs: none")
    lines.append("")
    lines.append("# 3. Tuning Hypotheses and Rules")
    lines.append("Hypotheses:")
    if hypotheses:
        for h in hypotheses:
            link = h.causal_link if len(h.causal_link) <= CAUSAL_LINK_LIMIT else h.causal_link[:CAUSAL_LINK_LIMIT] + "..."
            triggers = "; ".join(f"if {t.function} is {t.signal} then {t.direction} {h.knob}" for t in h.triggers)
            lines.append(f"- {h.knob}: {link}" + (f" Strategy: {triggers}." if triggers else ""))
    else:
        lines.append("- none")
    lines.append("Rules:")
    if rules:
        for r in list(rules)[:max_rules]:
            lines.append(f"- {render_rule(r, specs)}")
    else:
        lines.append("- no verified rules match the current context")
    return "\n".join(lines) + "\n"


# -- advisors ---------------------------------------------------------------


@dataclass
class AdviceRequest:
    prompt: str
    context: ContextSnapshot
    configuration: Mapping[str, Scalar]
    specs: Mapping[str, KnobSpec]
    rules: Sequence[TuningRule] = ()
    hypotheses: Sequence[Hypothesis] = ()
    bottlenecks: Sequence[Bottleneck] = ()
    selected_knobs: Sequence[str] = ()
    step_scale: Mapping[tuple[str, str], float] = field(default_factory=dict)


@dataclass
class Advice:
    delta: dict[str, Scalar]
    policy: str  # rule-exploit | hypothesis-explore | none | remote
    rule_id: str | None = None
    moves: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


class StubAdvisor:
    name = "stub"

    def advise(self, req: AdviceRequest) -> Advice:
        hw = req.context.hardware
        if req.rules:
            rule = req.rules[0]
            delta = {}
            for adj in sorted(rule.consequent, key=lambda a: a.key):
                spec = req.specs.get(adj.knob)
                if spec is None:
                    continue
                current = req.configuration.get(adj.knob, spec.default)
                new = apply_adjustment(spec, adj, current, hw)
                if new != current:
                    delta[adj.knob] = new
            if delta:
                return Advice(delta, "rule-exploit", rule.id)
        signals = {b.function: b for b in req.bottlenecks}
        delta = {}
        moves = []
        for knob in req.selected_knobs:
            spec = req.specs.get(knob)
            if spec is None or not spec.numeric:
                continue
            best = None
            for h in req.hypotheses:
                if h.knob != knob:
                    continue
                for t in h.triggers:
                    b = signals.get(t.function)
                    if b is None or b.signal != t.signal:
                        continue
                    if best is None or (b.severity, t.function) > (best[0].severity, best[1].function):
                        best = (b, t)
            if best is None:
                continue
            direction = best[1].direction
            lo, hi = encoded_bounds(spec, hw)
            step = EXPLORATION_STEP * (hi - lo) * req.step_scale.get((knob, direction), 1.0)
            current = req.configuration.get(knob, spec.default)
            x = encode_value(spec, current, hw)
            new = to_domain(spec, x + step if direction == "increase" else x - step, hw)
            if new != current:
                delta[knob] = new
                moves.append({"knob": knob, "direction": direction, "trigger": best[1].function, "step": step})
        if delta:
            return Advice(delta, "hypothesis-explore", moves=moves)
        return Advice({}, "none")


def validate_delta(delta: Mapping, specs: Mapping[str, KnobSpec]) -> tuple[dict[str, Scalar], list[str]]:
    """Keep known knobs, clamp numeric values into domain. Raises ValueError
    on unknown knobs or values of the wrong type."""
    out = {}
    warnings = []
    for name, value in delta.items():
        spec = specs.get(name)
        if spec is None:
            raise ValueError(f"unknown knob {name!r}")
        if spec.kind == "categorical":
            if value not in spec.categories:
                raise ValueError(f"{name}: {value!r} is not a category")
            out[name] = value
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{name}: non-numeric value {value!r}")
        clamped = spec.clamp(value)
        if clamped != value:
            warnings.append(f"{name}: {value!r} clamped to {clamped!r}")
        out[name] = clamped
    return out, warnings


def remote_request_body(req: AdviceRequest) -> dict:
    knobs = []
    for name in req.selected_knobs:
        spec = req.specs.get(name)
        if spec is None:
            continue
        entry = spec.to_dict()
        entry["current"] = req.configuration.get(name, spec.default)
        knobs.append(entry)
    return {
        "prompt": req.prompt,
        "knobs": knobs,
        "reply_schema": {"configuration": {k["name"]: "number | category label" for k in knobs}},
    }


class RemoteAdvisor:
    """JSON-over-HTTP advisor. Any transport or validation failure falls back
    to the stub."""

    name = "remote"

    def __init__(self, url: str | None = None, timeout: float = REMOTE_TIMEOUT, fallback: StubAdvisor | None = None):
        self.url = url or os.environ.get(ADVISOR_URL_ENV)
        self.timeout = timeout
        self.fallback = fallback or StubAdvisor()

    def _post(self, body: dict) -> dict:
        data = json.dumps(body, sort_keys=True).encode()
        request = urllib.request.Request(self.url, data=data, headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(request, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode())

    def advise(self, req: AdviceRequest) -> Advice:
        if not self.url:
            log.warning("event=remote_advisor_unconfigured env=%s action=stub_fallback", ADVISOR_URL_ENV)
            return self.fallback.advise(req)
        try:
            reply = self._post(remote_request_body(req))
            proposed = reply["configuration"]
            if not isinstance(proposed, dict):
                raise ValueError("configuration must be an object")
            delta, warnings = validate_delta(proposed, req.specs)
        except (OSError, urllib.error.URLError, ValueError, KeyError, TypeError) as exc:
            log.warning("event=remote_advisor_failed error=%r action=stub_fallback", str(exc))
            return self.fallback.advise(req)
        for w in warnings:
            log.warning("event=remote_value_clamped detail=%r", w)
        delta = {k: v for k, v in delta.items() if v != req.configuration.get(k, req.specs[k].default)}
        return Advice(delta, "remote" if delta else "none", warnings=warnings)


def advise(req: AdviceRequest, advisor: StubAdvisor | RemoteAdvisor | None = None) -> Advice:
    if not req.rules and not req.hypotheses:
        return Advice({}, "none")
    return (advisor or StubAdvisor()).advise(req)
