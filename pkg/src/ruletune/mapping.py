"""Function-knob maps from a declarative dependency graph.

A knob is anchored at one program variable. Taint spreads along data edges
(assignments, parameters, returns, and conditional implicit flows, all
treated alike), and every function with a control edge from a tainted
variable is controlled by the knob.

Graph file layout::

    {"schema_version": 1,
     "variables": [...], "functions": [...],
     "knob_anchors": {"knob": "variable"},
     "data_edges": [{"src": v, "dst": w, "kind": "assignment"}],
     "control_edges": [{"var": v, "function": f, "kind": "explicit"}]}

Only the declared targets of control edges are reported; the function that
contains the controlling statement is not added implicitly.
"""

from __future__ import annotations

import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ruletune.model import SCHEMA_VERSION, ValidationError, check_schema_version

log = logging.getLogger(__name__)

DATA_KINDS = ("assignment", "parameter", "return", "conditional")
CONTROL_KINDS = ("explicit", "implicit")
_KIND_STRENGTH = {"implicit": 0, "explicit": 1}


@dataclass(frozen=True)
class DataEdge:
    src: str
    dst: str
    kind: str = "assignment"


@dataclass(frozen=True)
class ControlEdge:
    var: str
    function: str
    kind: str = "explicit"


@dataclass(frozen=True)
class DependencyGraph:
    variables: frozenset
    functions: frozenset
    knob_anchors: Mapping[str, str]
    data_edges: frozenset = frozenset()
    control_edges: frozenset = frozenset()

    def __post_init__(self) -> None:
        for name in ("variables", "functions", "data_edges", "control_edges"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        object.__setattr__(self, "knob_anchors", dict(self.knob_anchors))
        errors = []
        for knob, var in self.knob_anchors.items():
            if var not in self.variables:
                errors.append((f"knob_anchors.{knob}", f"anchor variable {var!r} not declared"))
        for e in self.data_edges:
            if e.kind not in DATA_KINDS:
                errors.append(("data_edges", f"unknown data edge kind {e.kind!r}"))
            for end in (e.src, e.dst):
                if end not in self.variables:
                    errors.append(("data_edges", f"undeclared variable {end!r}"))
        for e in self.control_edges:
            if e.kind not in CONTROL_KINDS:
                errors.append(("control_edges", f"unknown control edge kind {e.kind!r}"))
            if e.var not in self.variables:
                errors.append(("control_edges", f"undeclared variable {e.var!r}"))
            if e.function not in self.functions:
                errors.append(("control_edges", f"undeclared function {e.function!r}"))
        if errors:
            raise ValidationError(errors)

    def successors(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = defaultdict(list)
        for e in sorted(self.data_edges, key=lambda e: (e.src, e.dst, e.kind)):
            adj[e.src].append(e.dst)
        return adj

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "variables": sorted(self.variables),
            "functions": sorted(self.functions),
            "knob_anchors": dict(sorted(self.knob_anchors.items())),
            "data_edges": [
                {"src": e.src, "dst": e.dst, "kind": e.kind}
                for e in sorted(self.data_edges, key=lambda e: (e.src, e.dst, e.kind))
            ],
            "control_edges": [
                {"var": e.var, "function": e.function, "kind": e.kind}
                for e in sorted(self.control_edges, key=lambda e: (e.var, e.function, e.kind))
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> DependencyGraph:
        check_schema_version(d, "graph")
        return cls(
            variables=frozenset(d.get("variables", ())),
            functions=frozenset(d.get("functions", ())),
            knob_anchors=dict(d.get("knob_anchors", {})),
            data_edges=frozenset(DataEdge(e["src"], e["dst"], e.get("kind", "assignment")) for e in d.get("data_edges", ())),
            control_edges=frozenset(
                ControlEdge(e["var"], e["function"], e.get("kind", "explicit")) for e in d.get("control_edges", ())
            ),
        )


@dataclass(frozen=True)
class FunctionKnobMap:
    """Bidirectional function <-> knob association.

    ``by_function[f]`` is a set of ``(knob, kind)`` pairs; ``by_knob[k]`` is
    the set of functions k controls. Build through :meth:`from_pairs` so the
    two views stay exact transposes.
    """

    by_function: Mapping[str, frozenset] = field(default_factory=dict)
    by_knob: Mapping[str, frozenset] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, triples: Iterable[tuple[str, str, str]]) -> FunctionKnobMap:
        """``triples`` are ``(function, knob, kind)``; duplicates keep the stronger kind."""
        kinds: dict[tuple[str, str], str] = {}
        for fn, knob, kind in triples:
            prev = kinds.get((fn, knob))
            if prev is None or _KIND_STRENGTH[kind] > _KIND_STRENGTH[prev]:
                kinds[(fn, knob)] = kind
        by_function: dict[str, set] = defaultdict(set)
        by_knob: dict[str, set] = defaultdict(set)
        for (fn, knob), kind in kinds.items():
            by_function[fn].add((knob, kind))
            by_knob[knob].add(fn)
        return cls(
            {f: frozenset(v) for f, v in sorted(by_function.items())},
            {k: frozenset(v) for k, v in sorted(by_knob.items())},
        )

    def knobs_for(self, function: str) -> list[str]:
        return sorted(k for k, _ in self.by_function.get(function, ()))

    def is_transpose(self) -> bool:
        forward = {(f, k) for f, pairs in self.by_function.items() for k, _ in pairs}
        backward = {(f, k) for k, fns in self.by_knob.items() for f in fns}
        return forward == backward

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "by_function": {
                f: [{"knob": k, "kind": kind} for k, kind in sorted(pairs)] for f, pairs in sorted(self.by_function.items())
            },
            "by_knob": {k: sorted(fns) for k, fns in sorted(self.by_knob.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> FunctionKnobMap:
        check_schema_version(d, "function-knob map")
        return cls.from_pairs(
            (f, e["knob"], e["kind"]) for f, entries in d.get("by_function", {}).items() for e in entries
        )


def propagate_taint(graph: DependencyGraph, knob: str) -> frozenset:
    """Variables reachable from the knob's anchor over data edges (anchor included)."""
    if knob not in graph.knob_anchors:
        raise KeyError(f"knob {knob!r} has no anchor in the graph")
    adj = graph.successors()
    start = graph.knob_anchors[knob]
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return frozenset(seen)


def controlled_functions(graph: DependencyGraph, tainted: Iterable[str]) -> frozenset:
    """``(function, kind)`` for functions control-dependent on any tainted variable.

    A function reached by both explicit and implicit edges is reported once,
    as explicit.
    """
    tainted = set(tainted)
    kinds: dict[str, str] = {}
    for e in graph.control_edges:
        if e.var not in tainted:
            continue
        prev = kinds.get(e.function)
        if prev is None or _KIND_STRENGTH[e.kind] > _KIND_STRENGTH[prev]:
            kinds[e.function] = e.kind
    return frozenset(kinds.items())


def build_function_knob_map(graph: DependencyGraph, knobs: Iterable[str] | None = None) -> FunctionKnobMap:
    knobs = sorted(graph.knob_anchors) if knobs is None else list(knobs)
    triples = []
    for knob in knobs:
        if knob not in graph.knob_anchors:
            log.warning("event=unanchored_knob knob=%s action=skipped", knob)
            continue
        for fn, kind in controlled_functions(graph, propagate_taint(graph, knob)):
            triples.append((fn, knob, kind))
    return FunctionKnobMap.from_pairs(triples)
