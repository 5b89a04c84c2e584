"""Bottleneck diagnosis and knob selection.

Two detectors produce bottleneck functions: differential profiling against
a known-good snapshot, and Shapley attribution over a linear model of
performance on sampling rates when no baseline exists. Selected knobs are
the controlling knobs of flagged functions plus the consequent knobs of
rules whose antecedent matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ruletune.mapping import FunctionKnobMap
from ruletune.model import ContextSnapshot, ObservationRecord
from ruletune.rulebook import Rulebook, rank_and_take

DEFAULT_DIFF_THRESHOLD = 0.03
RIDGE_LAMBDA = 1e-3
# SHAP flags a function when its harm exceeds this share of the background prediction
DEFAULT_MIN_HARM = 0.01


@dataclass(frozen=True)
class ProfileDelta:
    function: str
    baseline_rate: float
    observed_rate: float

    @property
    def delta(self) -> float:
        return self.observed_rate - self.baseline_rate


@dataclass(frozen=True)
class Attribution:
    function: str
    shap_value: float
    rank: int | None = None


@dataclass(frozen=True)
class Bottleneck:
    """A flagged function; ``signal`` is high-rate or low-rate."""

    function: str
    severity: float
    signal: str


def differential_profile(
    baseline: ContextSnapshot, degraded: ContextSnapshot, threshold: float = DEFAULT_DIFF_THRESHOLD
) -> list[ProfileDelta]:
    """Functions whose rate moved by at least ``threshold``, largest shift first."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    functions = set(baseline.function_rates) | set(degraded.function_rates)
    out = []
    for fn in functions:
        d = ProfileDelta(fn, baseline.rate(fn), degraded.rate(fn))
        if abs(d.delta) >= threshold:
            out.append(d)
    out.sort(key=lambda d: (-abs(d.delta), d.function))
    return out


@dataclass(frozen=True)
class LinearModel:
    functions: tuple[str, ...]
    intercept: float
    weights: tuple[float, ...]
    direction: str = "higher-better"

    def vector(self, context: ContextSnapshot | Mapping[str, float]) -> np.ndarray:
        rates = context.function_rates if isinstance(context, ContextSnapshot) else context
        return np.array([rates.get(f, 0.0) for f in self.functions], dtype=float)

    def predict(self, context: ContextSnapshot | Mapping[str, float]) -> float:
        return float(self.intercept + np.dot(self.weights, self.vector(context)))

    def weight(self, function: str) -> float:
        return self.weights[self.functions.index(function)] if function in self.functions else 0.0


def fit_performance_model(history: Sequence[ObservationRecord], ridge: float = RIDGE_LAMBDA) -> LinearModel:
    """Least-squares fit of performance on function rates.

    With at least ``p + 1`` records and full-rank centred rates the fit is
    ordinary least squares; otherwise an intercept-free ridge penalty
    ``ridge`` keeps it well posed.
    """
    if not history:
        raise ValueError("cannot fit a model on an empty history")
    functions = tuple(sorted({f for h in history for f in h.context.function_rates}))
    X = np.array([[h.context.rate(f) for f in functions] for h in history], dtype=float).reshape(len(history), -1)
    y = np.array([h.performance.value for h in history], dtype=float)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    p = len(functions)
    if p == 0:
        w = np.zeros(0)
    elif len(history) >= p + 1 and np.linalg.matrix_rank(Xc) == p:
        w = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    else:
        w = np.linalg.solve(Xc.T @ Xc + ridge * np.eye(p), Xc.T @ yc)
    intercept = float(y_mean - x_mean @ w)
    return LinearModel(functions, intercept, tuple(float(v) for v in w), history[0].performance.direction)


def background_rates(history: Sequence[ObservationRecord], functions: Iterable[str]) -> dict[str, float]:
    functions = list(functions)
    if not history:
        return {f: 0.0 for f in functions}
    return {f: sum(h.context.rate(f) for h in history) / len(history) for f in functions}


def _harm(value: float, direction: str) -> float:
    return -value if direction == "higher-better" else value


def shap_profile(
    model: LinearModel, current: ContextSnapshot | Mapping[str, float], background: Mapping[str, float]
) -> list[Attribution]:
    """Exact Shapley values of the linear model, most harmful first.

    For a linear model the value of feature i is ``w_i * (x_i - b_i)``.
    Harm is a negative value for higher-better metrics and a positive one
    for lower-better; ``rank`` numbers the harmful functions from 1.
    """
    x = model.vector(current)
    b = np.array([background.get(f, 0.0) for f in model.functions], dtype=float)
    phi = np.asarray(model.weights, dtype=float) * (x - b)
    order = sorted(range(len(phi)), key=lambda i: (-_harm(phi[i], model.direction), model.functions[i]))
    out = []
    rank = 0
    for i in order:
        r = None
        if _harm(phi[i], model.direction) > 0:
            rank += 1
            r = rank
        out.append(Attribution(model.functions[i], float(phi[i]), r))
    return out


@dataclass
class Diagnosis:
    method: str
    bottlenecks: list[Bottleneck] = field(default_factory=list)
    deltas: list[ProfileDelta] = field(default_factory=list)
    attributions: list[Attribution] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "bottlenecks": [
                {"function": b.function, "severity": b.severity, "signal": b.signal} for b in self.bottlenecks
            ],
            "deltas": [
                {"function": d.function, "baseline_rate": d.baseline_rate, "observed_rate": d.observed_rate, "delta": d.delta}
                for d in self.deltas
            ],
            "attributions": [{"function": a.function, "shap_value": a.shap_value, "rank": a.rank} for a in self.attributions],
        }


def diagnose(
    current: ContextSnapshot,
    baseline: ContextSnapshot | None = None,
    history: Sequence[ObservationRecord] | None = None,
    threshold: float = DEFAULT_DIFF_THRESHOLD,
    min_harm: float = DEFAULT_MIN_HARM,
) -> Diagnosis:
    """Differential profiling when a baseline exists, else SHAP over history."""
    if baseline is not None:
        deltas = differential_profile(baseline, current, threshold)
        flags = [Bottleneck(d.function, abs(d.delta), "high-rate" if d.delta > 0 else "low-rate") for d in deltas]
        return Diagnosis("differential", flags, deltas=deltas)
    if history:
        model = fit_performance_model(history)
        bg = background_rates(history, model.functions)
        attributions = shap_profile(model, current, bg)
        floor = min_harm * abs(model.predict(bg))
        flags = []
        for a in attributions:
            if a.rank is None or _harm(a.shap_value, model.direction) <= floor:
                continue
            signal = "high-rate" if current.rate(a.function) > bg.get(a.function, 0.0) else "low-rate"
            flags.append(Bottleneck(a.function, abs(a.shap_value), signal))
        return Diagnosis("shap", flags, attributions=attributions)
    return Diagnosis("none")


def select_knobs(
    flagged: Iterable[Bottleneck],
    fk_map: FunctionKnobMap,
    rulebook: Rulebook | None = None,
    context: ContextSnapshot | None = None,
) -> list[str]:
    """Controlling knobs of flagged functions (most severe first), then the
    consequent knobs of matching rules in EI order; duplicates dropped."""
    selected: list[str] = []
    for b in sorted(flagged, key=lambda b: (-b.severity, b.function)):
        for knob in fk_map.knobs_for(b.function):
            if knob not in selected:
                selected.append(knob)
    if rulebook is not None and context is not None:
        matching = rulebook.match_rules(context)
        for rule in rank_and_take(matching, max(1, len(matching))):
            for knob in rule.knobs:
                if knob not in selected:
                    selected.append(knob)
    return selected
