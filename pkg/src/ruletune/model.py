"""Shared domain types, validation and the canonical JSON schema.

Every type here is an immutable value. ``to_dict``/``from_dict`` round-trip
exactly; the dict layout is the on-disk schema used by observation files,
knob-spec documents, rulebooks and hypothesis files.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
from typing import Any, Iterable, Mapping, Union

SCHEMA_VERSION = 1

KNOB_KINDS = ("continuous", "integer", "categorical", "memory-bytes")
SCALES = ("linear", "log", "memory-fraction")
DIRECTIONS = ("higher-better", "lower-better")
ADJUST_FORMS = ("relative", "absolute")
ADJUST_DIRECTIONS = ("increase", "decrease", "set")
SIGNALS = ("high-rate", "low-rate")
PROVENANCES = ("stub", "advisor")

# tolerance for sum of sampling fractions
RATE_SUM_SLACK = 1e-6

Scalar = Union[bool, str, int, float]


class ValidationError(ValueError):
    """Raised when a value breaks a schema invariant.

    ``errors`` holds ``(field_path, message)`` pairs, one per violation.
    """

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.errors))


def _fail(path: str, msg: str) -> None:
    raise ValidationError([(path, msg)])


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _opt_float(x: Any) -> float | None:
    return None if x is None else float(x)


@dataclass(frozen=True)
class KnobSpec:
    name: str
    kind: str
    min: float | None = None
    max: float | None = None
    default: Scalar | None = None
    scale: str = "linear"
    categories: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        p = f"knobs.{self.name}"
        if not self.name:
            _fail("knobs", "empty knob name")
        if self.kind not in KNOB_KINDS:
            _fail(f"{p}.kind", f"unknown kind {self.kind!r}")
        if self.scale not in SCALES:
            _fail(f"{p}.scale", f"unknown scale {self.scale!r}")
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind == "categorical":
            if not self.categories:
                _fail(f"{p}.categories", "categorical knob needs categories")
            if self.default not in self.categories:
                _fail(f"{p}.default", "default not among categories")
            if self.scale != "linear":
                _fail(f"{p}.scale", "categorical knobs use linear scale")
            return
        if not (_is_number(self.min) and _is_number(self.max) and _is_number(self.default)):
            _fail(p, "numeric knob needs numeric min, max and default")
        if not self.min <= self.default <= self.max:
            _fail(f"{p}.default", "default outside [min, max]")
        if self.min >= self.max:
            _fail(f"{p}.max", "max must exceed min")
        if self.scale == "log" and self.min <= 0:
            _fail(f"{p}.scale", "log scale requires min > 0")
        if self.scale == "memory-fraction" and self.kind != "memory-bytes":
            _fail(f"{p}.scale", "memory-fraction scale requires kind memory-bytes")

    @property
    def numeric(self) -> bool:
        return self.kind != "categorical"

    @property
    def integral(self) -> bool:
        return self.kind in ("integer", "memory-bytes")

    def check(self, value: Any, path: str = "") -> list[tuple[str, str]]:
        """Return domain violations for ``value`` (empty when it is valid)."""
        path = path or f"configuration.{self.name}"
        if self.kind == "categorical":
            if value not in self.categories:
                return [(path, f"value {value!r} not among categories")]
            return []
        if not _is_number(value) or not math.isfinite(value):
            return [(path, f"non-numeric value {value!r}")]
        if self.integral and float(value) != int(value):
            return [(path, f"value {value!r} is not integral")]
        if value < self.min:
            return [(path, "value below domain min")]
        if value > self.max:
            return [(path, "value above domain max")]
        return []

    def clamp(self, value: float) -> Scalar:
        if self.kind == "categorical":
            return value
        v = min(max(float(value), float(self.min)), float(self.max))
        if self.integral:
            v = int(round(v))
            v = min(max(v, int(math.ceil(self.min))), int(math.floor(self.max)))
        return v

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["categories"] = list(self.categories)
        else:
            d["min"] = self.min
            d["max"] = self.max
        d["default"] = self.default
        d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> KnobSpec:
        return cls(
            name=d["name"],
            kind=d["kind"],
            min=d.get("min"),
            max=d.get("max"),
            default=d.get("default"),
            scale=d.get("scale", "linear"),
            categories=tuple(d.get("categories", ())),
        )


@dataclass(frozen=True)
class Hardware:
    total_memory_bytes: int
    cores: int

    def __post_init__(self) -> None:
        if not (isinstance(self.total_memory_bytes, int) and self.total_memory_bytes > 0):
            _fail("context.hardware.total_memory_bytes", "must be a positive integer")
        if not (isinstance(self.cores, int) and self.cores > 0):
            _fail("context.hardware.cores", "must be a positive integer")

    def to_dict(self) -> dict:
        return {"total_memory_bytes": self.total_memory_bytes, "cores": self.cores}

    @classmethod
    def from_dict(cls, d: Mapping) -> Hardware:
        return cls(int(d["total_memory_bytes"]), int(d["cores"]))


DEFAULT_HARDWARE = Hardware(total_memory_bytes=16 * 2**30, cores=8)


@dataclass(frozen=True)
class ContextSnapshot:
    """Runtime context: declared workload predicates, per-function sampling
    fractions and hardware. Functions missing from ``function_rates`` have
    rate 0."""

    workload_predicates: Mapping[str, Scalar] = field(default_factory=dict)
    function_rates: Mapping[str, float] = field(default_factory=dict)
    hardware: Hardware = DEFAULT_HARDWARE

    def __post_init__(self) -> None:
        object.__setattr__(self, "workload_predicates", dict(self.workload_predicates))
        object.__setattr__(self, "function_rates", {k: float(v) for k, v in self.function_rates.items()})

    def rate(self, function: str) -> float:
        return self.function_rates.get(function, 0.0)

    def problems(self, path: str = "context") -> list[tuple[str, str]]:
        errs = []
        for fn, r in self.function_rates.items():
            if not math.isfinite(r) or r < 0 or r > 1:
                errs.append((f"{path}.function_rates.{fn}", "sampling rate out of [0,1]"))
        if not errs and sum(self.function_rates.values()) > 1 + RATE_SUM_SLACK:
            errs.append((f"{path}.function_rates", "sampling rates sum above 1"))
        for name, v in self.workload_predicates.items():
            if not isinstance(v, (bool, str, int, float)):
                errs.append((f"{path}.workload_predicates.{name}", "predicate value must be bool, label or number"))
        return errs

    def to_dict(self) -> dict:
        return {
            "workload_predicates": dict(self.workload_predicates),
            "function_rates": dict(self.function_rates),
            "hardware": self.hardware.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ContextSnapshot:
        hw = d.get("hardware")
        return cls(
            workload_predicates=dict(d.get("workload_predicates", {})),
            function_rates=dict(d.get("function_rates", {})),
            hardware=Hardware.from_dict(hw) if hw else DEFAULT_HARDWARE,
        )


@dataclass(frozen=True)
class Performance:
    metric_name: str
    value: float
    direction: str = "higher-better"

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            _fail("performance.direction", f"unknown direction {self.direction!r}")

    def improvement_over(self, other: Performance) -> float:
        """Relative improvement of self over ``other``, positive when better.

        (self - other) / |other| for higher-better, sign-flipped for
        lower-better.
        """
        if other.value == 0:
            diff = self.value - other.value
            if diff == 0:
                return 0.0
            signed = math.copysign(math.inf, diff)
        else:
            signed = (self.value - other.value) / abs(other.value)
        return signed if self.direction == "higher-better" else -signed

    def better_than(self, other: Performance) -> bool:
        return self.improvement_over(other) > 0

    def to_dict(self) -> dict:
        return {"metric_name": self.metric_name, "value": self.value, "direction": self.direction}

    @classmethod
    def from_dict(cls, d: Mapping) -> Performance:
        return cls(d["metric_name"], float(d["value"]), d.get("direction", "higher-better"))


@dataclass(frozen=True)
class ObservationRecord:
    id: str
    context: ContextSnapshot
    configuration: Mapping[str, Scalar]
    performance: Performance

    def __post_init__(self) -> None:
        object.__setattr__(self, "configuration", dict(self.configuration))

    def value_of(self, spec: KnobSpec) -> Scalar:
        return self.configuration.get(spec.name, spec.default)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "context": self.context.to_dict(),
            "configuration": dict(self.configuration),
            "performance": self.performance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ObservationRecord:
        return cls(
            id=str(d["id"]),
            context=ContextSnapshot.from_dict(d["context"]),
            configuration=dict(d["configuration"]),
            performance=Performance.from_dict(d["performance"]),
        )


def validate_observation(record: ObservationRecord, specs: Mapping[str, KnobSpec]) -> ObservationRecord:
    """Check ``record`` against every invariant; return it unchanged.

    Raises ValidationError listing every violation with its field path.
    """
    errors = list(record.context.problems())
    for name, value in sorted(record.configuration.items()):
        spec = specs.get(name)
        if spec is None:
            errors.append((f"configuration.{name}", "unknown knob"))
            continue
        errors.extend(spec.check(value))
    v = record.performance.value
    if not _is_number(v) or not math.isfinite(v):
        errors.append(("performance.value", "performance value is not finite"))
    if errors:
        raise ValidationError(errors)
    return record


@dataclass(frozen=True)
class Interval:
    """Half-open interval (lo, hi]; ``None`` marks an unbounded side."""

    lo: float | None
    hi: float | None

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", _opt_float(self.lo))
        object.__setattr__(self, "hi", _opt_float(self.hi))
        if self.lo is not None and self.hi is not None and not self.lo < self.hi:
            _fail("interval", f"empty interval ({self.lo}, {self.hi}]")

    def __contains__(self, x: float) -> bool:
        return (self.lo is None or x > self.lo) and (self.hi is None or x <= self.hi)

    def clipped(self, lo: float, hi: float) -> tuple[float, float]:
        a = lo if self.lo is None else max(self.lo, lo)
        b = hi if self.hi is None else min(self.hi, hi)
        return a, b

    @property
    def token(self) -> str:
        """Exact textual form used in item and rule keys."""
        return f"({'-inf' if self.lo is None else repr(self.lo)}, {'inf' if self.hi is None else repr(self.hi)}]"

    def __str__(self) -> str:
        lo = "-inf" if self.lo is None else f"{self.lo:.6g}"
        hi = "inf" if self.hi is None else f"{self.hi:.6g}"
        return f"({lo}, {hi}]"


@dataclass(frozen=True)
class WorkloadPredicate:
    name: str
    value: Scalar

    def holds(self, context: ContextSnapshot) -> bool:
        if self.name not in context.workload_predicates:
            return False
        return context.workload_predicates[self.name] == self.value

    @cached_property
    def key(self) -> str:
        return f"w:{self.name}={json.dumps(self.value)}"

    def to_dict(self) -> dict:
        return {"type": "workload", "name": self.name, "value": self.value}


@dataclass(frozen=True)
class RateInterval:
    function: str
    interval: Interval

    def holds(self, context: ContextSnapshot) -> bool:
        return context.rate(self.function) in self.interval

    @cached_property
    def key(self) -> str:
        return f"r:{self.function}:{self.interval.token}"

    def to_dict(self) -> dict:
        return {"type": "rate", "function": self.function, "lo": self.interval.lo, "hi": self.interval.hi}


Predicate = Union[WorkloadPredicate, RateInterval]


def predicate_from_dict(d: Mapping) -> Predicate:
    if d["type"] == "workload":
        return WorkloadPredicate(d["name"], d["value"])
    if d["type"] == "rate":
        return RateInterval(d["function"], Interval(d.get("lo"), d.get("hi")))
    raise ValidationError([("antecedent.type", f"unknown predicate type {d['type']!r}")])


@dataclass(frozen=True)
class KnobAdjustment:
    """A knob change in encoded space.

    Relative form: ``direction`` increase/decrease with the magnitude of the
    encoded change inside ``interval``. Absolute form: direction ``set`` with
    the encoded target inside ``interval``. Categorical targets carry
    ``label`` and use the category index as their encoded value.
    """

    knob: str
    form: str
    direction: str
    interval: Interval
    label: str | None = None

    def __post_init__(self) -> None:
        if self.form not in ADJUST_FORMS:
            _fail("adjustment.form", f"unknown form {self.form!r}")
        if self.direction not in ADJUST_DIRECTIONS:
            _fail("adjustment.direction", f"unknown direction {self.direction!r}")
        if self.form == "absolute" and self.direction != "set":
            _fail("adjustment.direction", "absolute adjustments must use direction 'set'")
        if self.form == "relative" and self.direction == "set":
            _fail("adjustment.direction", "relative adjustments increase or decrease")

    @cached_property
    def key(self) -> str:
        tail = f"={self.label}" if self.label is not None else self.interval.token
        return f"a:{self.knob}:{self.form}:{self.direction}:{tail}"

    def to_dict(self) -> dict:
        d = {
            "knob": self.knob,
            "form": self.form,
            "direction": self.direction,
            "lo": self.interval.lo,
            "hi": self.interval.hi,
        }
        if self.label is not None:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> KnobAdjustment:
        return cls(d["knob"], d["form"], d["direction"], Interval(d.get("lo"), d.get("hi")), d.get("label"))


@dataclass(frozen=True)
class TuningRule:
    """X => Y with usage statistics.

    ``success_count``/``trial_count`` are the numerator and denominator of
    confidence; ``improvement_sum`` accumulates the gains of successful
    trials. ``prior_confidence`` keeps the mining-time estimate for rules
    that have not been tried yet.
    """

    antecedent: frozenset
    consequent: frozenset
    coverage: float = 1.0
    success_count: int = 0
    trial_count: int = 0
    improvement_sum: float = 0.0
    prior_confidence: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "antecedent", frozenset(self.antecedent))
        object.__setattr__(self, "consequent", frozenset(self.consequent))
        errs = []
        if not self.consequent:
            errs.append(("consequent", "rule needs at least one adjustment"))
        if not 0 <= self.coverage <= 1:
            errs.append(("coverage", "coverage outside [0,1]"))
        if self.success_count < 0 or self.trial_count < self.success_count:
            errs.append(("trial_count", "need 0 <= success_count <= trial_count"))
        if self.improvement_sum < 0:
            errs.append(("improvement_sum", "improvement_sum must be >= 0"))
        if errs:
            raise ValidationError(errs)

    @cached_property
    def identity(self) -> str:
        parts = sorted(p.key for p in self.antecedent) + ["=>"] + sorted(a.key for a in self.consequent)
        return "|".join(parts)

    @property
    def id(self) -> str:
        return hashlib.sha1(self.identity.encode()).hexdigest()[:12]

    @property
    def verified(self) -> bool:
        return self.trial_count > 0

    @property
    def confidence(self) -> float | None:
        if self.trial_count == 0:
            return None
        return self.success_count / self.trial_count

    def confidence_fraction(self) -> Fraction | None:
        if self.trial_count == 0:
            return None
        return Fraction(self.success_count, self.trial_count)

    @property
    def knobs(self) -> list[str]:
        return sorted({a.knob for a in self.consequent})

    def holds(self, context: ContextSnapshot) -> bool:
        return all(p.holds(context) for p in self.antecedent)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "antecedent": [p.to_dict() for p in sorted(self.antecedent, key=lambda p: p.key)],
            "consequent": [a.to_dict() for a in sorted(self.consequent, key=lambda a: a.key)],
            "coverage": self.coverage,
            "success_count": self.success_count,
            "trial_count": self.trial_count,
            "improvement_sum": self.improvement_sum,
            "prior_confidence": self.prior_confidence,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TuningRule:
        return cls(
            antecedent=frozenset(predicate_from_dict(p) for p in d.get("antecedent", ())),
            consequent=frozenset(KnobAdjustment.from_dict(a) for a in d["consequent"]),
            coverage=float(d.get("coverage", 1.0)),
            success_count=int(d.get("success_count", 0)),
            trial_count=int(d.get("trial_count", 0)),
            improvement_sum=float(d.get("improvement_sum", 0.0)),
            prior_confidence=_opt_float(d.get("prior_confidence")),
        )


@dataclass(frozen=True)
class Trigger:
    function: str
    signal: str
    direction: str

    def __post_init__(self) -> None:
        if self.signal not in SIGNALS:
            _fail("triggers.signal", f"unknown signal {self.signal!r}")
        if self.direction not in ("increase", "decrease"):
            _fail("triggers.direction", f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class Hypothesis:
    knob: str
    functions: frozenset
    causal_link: str = ""
    triggers: tuple[Trigger, ...] = ()
    provenance: str = "stub"

    def __post_init__(self) -> None:
        object.__setattr__(self, "functions", frozenset(self.functions))
        object.__setattr__(self, "triggers", tuple(self.triggers))
        if self.provenance not in PROVENANCES:
            _fail("provenance", f"unknown provenance {self.provenance!r}")
        for t in self.triggers:
            if t.function not in self.functions:
                _fail("triggers.function", f"trigger function {t.function!r} not in functions")

    def to_dict(self) -> dict:
        return {
            "knob": self.knob,
            "functions": sorted(self.functions),
            "causal_link": self.causal_link,
            "triggers": [
                {"function": t.function, "signal": t.signal, "direction": t.direction} for t in self.triggers
            ],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Hypothesis:
        return cls(
            knob=d["knob"],
            functions=frozenset(d.get("functions", ())),
            causal_link=d.get("causal_link", ""),
            triggers=tuple(Trigger(t["function"], t["signal"], t["direction"]) for t in d.get("triggers", ())),
            provenance=d.get("provenance", "stub"),
        )


# -- documents -------------------------------------------------------------


def check_schema_version(doc: Mapping, kind: str) -> None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError([("schema_version", f"unsupported {kind} schema version {version!r}")])


def specs_to_document(specs: Iterable[KnobSpec]) -> dict:
    return {"schema_version": SCHEMA_VERSION, "knobs": [s.to_dict() for s in specs]}


def specs_from_document(doc: Mapping) -> dict[str, KnobSpec]:
    check_schema_version(doc, "knob spec")
    specs = [KnobSpec.from_dict(d) for d in doc["knobs"]]
    return {s.name: s for s in specs}


def read_json(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_specs(path) -> dict[str, KnobSpec]:
    return specs_from_document(read_json(path))


def read_observations(path) -> list[ObservationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ObservationRecord.from_dict(json.loads(line)))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValidationError([(f"line {lineno}", f"malformed observation: {exc}")]) from exc
    return records


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_observations(path, records: Iterable[ObservationRecord]) -> None:
    from ruletune.io import atomic_write_text

    atomic_write_text(path, "".join(dumps_canonical(r.to_dict()) + "\n" for r in records))
