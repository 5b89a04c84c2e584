"""Online rule-augmented tuning loop.

Each step works from the best configuration seen so far (the incumbent):

1. diagnose bottlenecks on the incumbent's profile,
2. select knobs through the function-knob map and matching rules,
3. retrieve hypotheses and top-k rules, build the prompt,
4. exploit the best rule whose EI clears the exploration floor, else explore
   along triggered hypotheses,
5. apply the suggestion, observe, and update the statistics of hit rules.

Suggestions that reproduce an already evaluated configuration are skipped in
favour of the next candidate. Every ``remine_period`` new observations the
history is mined again and new rules are merged in unverified.
"""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Protocol, Sequence

import numpy as np

from ruletune.diagnosis import DEFAULT_DIFF_THRESHOLD, Diagnosis, diagnose, select_knobs
from ruletune.hypothesis import (
    Advice,
    AdviceRequest,
    HypothesisStore,
    StubAdvisor,
    TaskInfo,
    build_prompt,
)
from ruletune.mapping import FunctionKnobMap
from ruletune.mining import MiningConfig, mine
from ruletune.mining.encoding import changes_between, encoded_bounds, to_domain
from ruletune.model import ContextSnapshot, KnobSpec, ObservationRecord, Performance, Scalar
from ruletune.rulebook import DEFAULT_TOP_K, Rulebook, expected_improvement, rank_and_take

log = logging.getLogger(__name__)

EXPLORATION_FLOOR = 0.02
DEFAULT_REMINE_PERIOD = 5
# online re-mining keeps itemsets small so a remine stays well under a second
ONLINE_MINING = MiningConfig(max_itemset_size=3)


class SystemAdapter(Protocol):
    specs: Mapping[str, KnobSpec]

    def apply(self, configuration: Mapping[str, Scalar]) -> tuple[Performance, ContextSnapshot]: ...


class AdapterError(RuntimeError):
    pass


class ExternalProcessAdapter:
    """Runs a user command per evaluation.

    The command reads ``{"configuration": {...}}`` on stdin and prints
    ``{"performance": <Performance>, "context": <ContextSnapshot>}``.
    """

    def __init__(self, command: Sequence[str] | str, specs: Mapping[str, KnobSpec], timeout: float = 600.0):
        self.command = command
        self.specs = specs
        self.timeout = timeout

    def apply(self, configuration):
        payload = json.dumps({"configuration": dict(configuration)}, sort_keys=True)
        try:
            proc = subprocess.run(
                self.command,
                input=payload,
                capture_output=True,
                text=True,
                timeout=self.timeout,
                shell=isinstance(self.command, str),
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"adapter command failed: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(f"adapter exited with {proc.returncode}: {proc.stderr.strip()[:200]}")
        try:
            reply = json.loads(proc.stdout)
            return Performance.from_dict(reply["performance"]), ContextSnapshot.from_dict(reply["context"])
        except (ValueError, KeyError, TypeError) as exc:
            raise AdapterError(f"malformed adapter reply: {exc}") from exc


@dataclass(frozen=True)
class TunerConfig:
    top_k: int = DEFAULT_TOP_K
    exploration_floor: float = EXPLORATION_FLOOR
    remine_period: int = DEFAULT_REMINE_PERIOD
    diff_threshold: float = DEFAULT_DIFF_THRESHOLD
    diagnosis: str = "auto"  # auto | differential | shap
    mining: MiningConfig = ONLINE_MINING


@dataclass
class StepTrace:
    iteration: int
    status: str  # ok | no-op | failed
    diagnosis_method: str = "none"
    flagged: list[dict] = field(default_factory=list)
    selected_knobs: list[str] = field(default_factory=list)
    matched_rules: list[dict] = field(default_factory=list)
    policy: str = "none"
    rule_id: str | None = None
    delta: dict = field(default_factory=dict)
    base_id: str | None = None
    observation_id: str | None = None
    performance: float | None = None
    improved: bool | None = None
    improvement: float | None = None
    hit_rules: list[str] = field(default_factory=list)
    remined: bool = False
    moves: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)




@dataclass(frozen=True)
class SessionReport:
    best_configuration: dict
    best_performance: float
    start_performance: float
    metric_name: str
    direction: str
    iterations: int
    failed: int
    bad_configurations: int
    cumulative_improvement: float
    remine_invocations: int
    rules_added: int
    policy_counts: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _reliability(start: ObservationRecord, later: Sequence[ObservationRecord]) -> tuple[int, float]:
    """Configurations worse than the start, and the summed relative
    improvement of every later observation over the start."""
    bad = sum(1 for r in later if start.performance.better_than(r.performance))
    cumulative = sum(r.performance.improvement_over(start.performance) for r in later)
    return bad, cumulative


class Session:
    """State of one tuning session; :meth:`step` runs one pipeline pass."""

    def __init__(
        self,
        adapter: SystemAdapter,
        fk_map: FunctionKnobMap,
        rulebook: Rulebook | None = None,
        hypotheses: HypothesisStore | None = None,
        advisor=None,
        config: TunerConfig = TunerConfig(),
        baseline: ContextSnapshot | None = None,
        specs: Mapping[str, KnobSpec] | None = None,
    ):
        if config.diagnosis not in ("auto", "differential", "shap"):
            raise ValueError(f"unknown diagnosis mode {config.diagnosis!r}")
        self.adapter = adapter
        self.specs = dict(specs if specs is not None else adapter.specs)
        self.fk_map = fk_map
        self.rulebook = rulebook if rulebook is not None else Rulebook(())
        self.hypotheses = hypotheses if hypotheses is not None else HypothesisStore()
        self.advisor = advisor if advisor is not None else StubAdvisor()
        self.config = config
        self.baseline = baseline
        self.history: list[ObservationRecord] = []
        self.traces: list[StepTrace] = []
        self.best_index = 0
        self.step_scale: dict[tuple[str, str], float] = {}
        self.new_observations = 0
        self.remine_invocations = 0
        self.rules_added = 0
        self._seen: set[tuple] = set()

    # -- state ------------------------------------------------------------

    @property
    def start(self) -> ObservationRecord:
        return self.history[0]

    @property
    def incumbent(self) -> ObservationRecord:
        return self.history[self.best_index]

    def _complete(self, configuration: Mapping[str, Scalar]) -> dict[str, Scalar]:
        config = {n: s.default for n, s in sorted(self.specs.items())}
        config.update(configuration)
        return config

    def _key(self, configuration: Mapping[str, Scalar]) -> tuple:
        return tuple(sorted(self._complete(configuration).items()))

    def initialize(self, configuration: Mapping[str, Scalar] | None = None) -> ObservationRecord:
        """Evaluate the starting configuration (knob defaults unless given)."""
        config = self._complete(configuration or {})
        perf, ctx = self.adapter.apply(config)
        record = ObservationRecord("obs-0000", ctx, config, perf)
        self.history = [record]
        self.best_index = 0
        self._seen = {self._key(config)}
        return record

    # -- pipeline -----------------------------------------------------------

    def _diagnose(self, current: ContextSnapshot) -> Diagnosis:
        if self.config.diagnosis == "shap":
            return diagnose(current, history=self.history, threshold=self.config.diff_threshold)
        # without an explicit baseline the starting profile is the reference
        reference = self.baseline if self.baseline is not None else self.start.context
        return diagnose(current, baseline=reference, threshold=self.config.diff_threshold)

    def _candidates(self, req: AdviceRequest, exploitable: Sequence) -> Iterator[Advice]:
        yield self.advisor.advise(req) if (req.rules or req.hypotheses) else Advice({}, "none")
        stub = StubAdvisor()
        for rule in exploitable[1:]:
            yield stub.advise(replace(req, rules=[rule]))
        if req.hypotheses:
            # shrink the exploration step until it lands somewhere new
            for attempt in range(4):
                factor = 0.5**attempt
                scale = {
                    (k, d): req.step_scale.get((k, d), 1.0) * factor
                    for k in req.selected_knobs
                    for d in ("increase", "decrease")
                }
                yield stub.advise(replace(req, rules=[], step_scale=scale))

    def suggest(self) -> tuple[dict[str, Scalar] | None, StepTrace, list]:
        """Run diagnosis through advice on the incumbent. Returns the new
        configuration (None for a no-op), its trace and the rules matched."""
        if not self.history:
            self.initialize()
        base = self.incumbent
        trace = StepTrace(iteration=len(self.traces) + 1, status="no-op", base_id=base.id)
        diag = self._diagnose(base.context)
        trace.diagnosis_method = diag.method
        trace.flagged = [{"function": b.function, "signal": b.signal, "severity": b.severity} for b in diag.bottlenecks]
        matched = self.rulebook.match_rules(base.context)
        ranked = rank_and_take(matched, self.config.top_k)
        trace.matched_rules = [
            {"id": r.id, "ei": expected_improvement(r), "confidence": r.confidence} for r in ranked
        ]
        selected = select_knobs(diag.bottlenecks, self.fk_map, self.rulebook, base.context)
        trace.selected_knobs = list(selected)
        functions = [b.function for b in diag.bottlenecks]
        hyps = self.hypotheses.retrieve(selected, functions)
        exploitable = [r for r in ranked if expected_improvement(r) > self.config.exploration_floor]
        task = TaskInfo(
            hardware=base.context.hardware,
            workload=base.context.workload_predicates,
            bottlenecks=diag.bottlenecks,
            selected_knobs=selected,
            configuration=base.configuration,
            metric=base.performance.metric_name,
        )
        req = AdviceRequest(
            prompt=build_prompt(task, hyps, ranked, self.specs),
            context=base.context,
            configuration=base.configuration,
            specs=self.specs,
            rules=exploitable,
            hypotheses=hyps,
            bottlenecks=diag.bottlenecks,
            selected_knobs=selected,
            step_scale=dict(self.step_scale),
        )
        for advice in self._candidates(req, exploitable):
            if not advice.delta:
                continue
            config = self._complete({**base.configuration, **advice.delta})
            if self._key(config) in self._seen:
                continue
            trace.status = "ok"
            trace.policy = advice.policy
            trace.rule_id = advice.rule_id
            trace.delta = dict(sorted(advice.delta.items()))
            trace.moves = advice.moves
            return config, trace, matched
        return None, trace, matched

    def step(self) -> StepTrace:
        """One full pass: suggest, apply, observe, update rule statistics."""
        config, trace, matched = self.suggest()
        self.traces.append(trace)
        if config is None:
            log.info("event=step iteration=%d status=no-op", trace.iteration)
            return trace
        base = self.incumbent
        try:
            perf, ctx = self.adapter.apply(config)
            record = ObservationRecord(f"obs-{len(self.history):04d}", ctx, config, perf)
        except Exception as exc:  # any adapter failure leaves the state unchanged
            trace.status = "failed"
            trace.error = str(exc)
            log.warning("event=step iteration=%d status=failed error=%r", trace.iteration, str(exc))
            return trace
        self._seen.add(self._key(config))
        self.history.append(record)
        self.new_observations += 1
        improvement = perf.improvement_over(base.performance)
        improved = improvement > 0
        applied = changes_between(self.specs, base.configuration, config, base.context.hardware)
        self.rulebook, hits = self.rulebook.update_rule_stats(matched, applied, improved, max(improvement, 0.0))
        for move in getattr(trace, "moves", None) or []:
            key = (move["knob"], move["direction"])
            self.step_scale[key] = 1.0 if improved else self.step_scale.get(key, 1.0) * 0.5
        if perf.better_than(self.incumbent.performance):
            self.best_index = len(self.history) - 1
        trace.observation_id = record.id
        trace.performance = perf.value
        trace.improved = improved
        trace.improvement = improvement
        trace.hit_rules = hits
        log.info(
            "event=step iteration=%d status=ok policy=%s performance=%.6g improved=%s hits=%d",
            trace.iteration, trace.policy, perf.value, improved, len(hits),
        )
        if self.config.remine_period > 0 and self.new_observations % self.config.remine_period == 0:
            self.remine()
            trace.remined = True
        return trace

    def remine(self) -> int:
        self.remine_invocations += 1
        try:
            rules, _ = mine(self.history, self.specs, self.config.mining)
        except ValueError as exc:
            log.warning("event=remine_skipped error=%r", str(exc))
            return 0
        self.rulebook, added = self.rulebook.merge(rules)
        self.rules_added += added
        log.info("event=remined observations=%d added=%d rules=%d", len(self.history), added, len(self.rulebook))
        return added

    # -- reporting ----------------------------------------------------------

    def report(self) -> SessionReport:
        later = self.history[1:]
        bad, cumulative = _reliability(self.start, later)
        policies: dict[str, int] = {}
        for t in self.traces:
            policies[t.policy] = policies.get(t.policy, 0) + 1
        best = self.incumbent
        return SessionReport(
            best_configuration=dict(best.configuration),
            best_performance=best.performance.value,
            start_performance=self.start.performance.value,
            metric_name=best.performance.metric_name,
            direction=best.performance.direction,
            iterations=len(self.traces),
            failed=sum(1 for t in self.traces if t.status == "failed"),
            bad_configurations=bad,
            cumulative_improvement=cumulative,
            remine_invocations=self.remine_invocations,
            rules_added=self.rules_added,
            policy_counts=dict(sorted(policies.items())),
        )

    def history_lines(self) -> list[dict]:
        """Observations interleaved with the traces that produced them."""
        by_obs = {t.observation_id: t for t in self.traces if t.observation_id}
        lines = [{"type": "observation", "iteration": 0, "observation": self.start.to_dict()}]
        obs = {r.id: r for r in self.history}
        for t in self.traces:
            lines.append({"type": "trace", "trace": t.to_dict()})
            if t.observation_id in obs and by_obs.get(t.observation_id) is t:
                lines.append({"type": "observation", "iteration": t.iteration, "observation": obs[t.observation_id].to_dict()})
        return lines


def tune_step(session: Session) -> tuple[dict[str, Scalar] | None, StepTrace]:
    """Run one step; returns the configuration evaluated (None on a no-op or
    failure) and its decision trace."""
    trace = session.step()
    config = session.history[-1].configuration if trace.status == "ok" else None
    return (dict(config) if config is not None else None), trace


def run_session(session: Session, budget: int) -> Session:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not session.history:
        session.initialize()
    for _ in range(budget):
        session.step()
    return session


# -- random-search baseline ---------------------------------------------------


def random_configuration(specs: Mapping[str, KnobSpec], hardware, rng: np.random.Generator) -> dict[str, Scalar]:
    """Uniform sample in each knob's encoded range."""
    config: dict[str, Scalar] = {}
    for name, spec in sorted(specs.items()):
        if spec.kind == "categorical":
            config[name] = spec.categories[int(rng.integers(len(spec.categories)))]
        else:
            lo, hi = encoded_bounds(spec, hardware)
            config[name] = to_domain(spec, float(rng.uniform(lo, hi)), hardware)
    return config


def random_search(adapter: SystemAdapter, budget: int, seed: int, hardware) -> tuple[list[ObservationRecord], SessionReport]:
    """Default configuration first, then ``budget`` uniform random samples."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    specs = adapter.specs
    default = {n: s.default for n, s in sorted(specs.items())}
    perf, ctx = adapter.apply(default)
    history = [ObservationRecord("obs-0000", ctx, default, perf)]
    best = 0
    for i in range(1, budget + 1):
        config = random_configuration(specs, hardware, rng)
        perf, ctx = adapter.apply(config)
        history.append(ObservationRecord(f"obs-{i:04d}", ctx, config, perf))
        if perf.better_than(history[best].performance):
            best = i
    bad, cumulative = _reliability(history[0], history[1:])
    report = SessionReport(
        best_configuration=dict(history[best].configuration),
        best_performance=history[best].performance.value,
        start_performance=history[0].performance.value,
        metric_name=perf.metric_name,
        direction=perf.direction,
        iterations=budget,
        failed=0,
        bad_configurations=bad,
        cumulative_improvement=cumulative,
        remine_invocations=0,
        rules_added=0,
        policy_counts={"random": budget},
    )
    return history, report
