"""Command-line entry point: ``ruletune <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (bad input documents,
failed evaluations) and 2 on a usage error. Logs go to standard error as
``key=value`` lines; reports go to standard output or ``--out``.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import sys
from typing import Sequence

import numpy as np

from ruletune import data
from ruletune.diagnosis import DEFAULT_DIFF_THRESHOLD, diagnose, select_knobs
from ruletune.hypothesis import HypothesisStore, RemoteAdvisor, StubAdvisor, render_rule
from ruletune.io import atomic_write_text
from ruletune.mapping import DependencyGraph, FunctionKnobMap, build_function_knob_map
from ruletune.mining import MiningConfig, mine
from ruletune.model import (
    DEFAULT_HARDWARE,
    ContextSnapshot,
    Hardware,
    ValidationError,
    dumps_canonical,
    load_specs,
    read_json,
    read_observations,
)
from ruletune.profiles import ProfileFormatError, snapshot_from_collapsed
from ruletune.rulebook import DEFAULT_TOP_K, Rulebook, expected_improvement, rank_and_take
from ruletune.simulator import (
    SHIPPED_SCENARIOS,
    SimulatorAdapter,
    evaluate,
    ground_truth_optimum,
    load_scenario,
)
from ruletune.simulator.expr import ExpressionError
from ruletune.tuner import (
    DEFAULT_REMINE_PERIOD,
    EXPLORATION_FLOOR,
    AdapterError,
    ExternalProcessAdapter,
    Session,
    TunerConfig,
    random_search,
    run_session,
)

log = logging.getLogger("ruletune.cli")

DOMAIN_ERRORS = (ValidationError, ValueError, KeyError, OSError, AdapterError, ProfileFormatError, ExpressionError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message:
            bad = message.split("'")[1] if "'" in message else ""
            choices = []
            for action in self._actions:
                if isinstance(action, argparse._SubParsersAction):
                    choices = list(action.choices)
            close = difflib.get_close_matches(bad, choices, n=1)
            if close:
                message += f"; did you mean {close[0]!r}?"
        super().error(message)


# -- output helpers -------------------------------------------------------------


def _flatten(obj, prefix: str = "") -> list[str]:
    if isinstance(obj, dict) and obj:
        lines = []
        for k in sorted(obj):
            lines.extend(_flatten(obj[k], f"{prefix}.{k}" if prefix else str(k)))
        return lines
    return [f"{prefix}: {json.dumps(obj, sort_keys=True)}"]


def emit(report: dict, args) -> None:
    """Write ``report`` to --out (atomically) or stdout, as JSON or key lines.

    Both modes serialise the same values through ``json.dumps``.
    """
    if getattr(args, "format", "text") == "json":
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    else:
        text = "\n".join(_flatten(report)) + "\n"
    out = getattr(args, "out", None)
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _load_snapshot(path, hardware: Hardware, workload: dict) -> ContextSnapshot:
    """JSON files are snapshot documents; anything else is collapsed stacks."""
    if str(path).endswith(".json"):
        return ContextSnapshot.from_dict(read_json(path))
    with open(path, encoding="utf-8") as fh:
        return snapshot_from_collapsed(fh, hardware, workload)


def _parse_workload(items: Sequence[str] | None) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--workload expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _load_map(args) -> FunctionKnobMap:
    if getattr(args, "map", None):
        return FunctionKnobMap.from_dict(read_json(args.map))
    if getattr(args, "graph", None):
        return build_function_knob_map(DependencyGraph.from_dict(read_json(args.graph)))
    return FunctionKnobMap.from_pairs(())


# -- subcommands ----------------------------------------------------------------


def cmd_map(args) -> int:
    if args.graph:
        graph = DependencyGraph.from_dict(read_json(args.graph))
    elif args.scenario in data.SCENARIO_GRAPHS:
        graph = DependencyGraph.from_dict(data.load(data.SCENARIO_GRAPHS[args.scenario]))
    else:
        raise UsageError("one of --graph or --scenario {buffer,spin,composite} is required")
    fk = build_function_knob_map(graph, args.knob or None)
    emit(fk.to_dict(), args)
    return 0


def cmd_mine(args) -> int:
    specs = load_specs(args.specs)
    history = read_observations(args.observations)
    config = MiningConfig(
        min_improvement=args.min_improvement,
        min_coverage=args.min_coverage,
        min_confidence=args.min_confidence,
        max_intervals=args.max_intervals,
        min_support=args.min_support,
        max_itemset_size=args.max_itemset_size,
    )
    rules, report = mine(history, specs, config)
    book = Rulebook(tuple(rules))
    added = len(book)
    if args.merge_into:
        book, added = Rulebook.load(args.merge_into).merge(rules)
    doc = {"mining": report.to_dict(), "rules_added": added, "rulebook_size": len(book)}
    if args.rulebook_out:
        book.save(args.rulebook_out)
        doc["rulebook"] = str(args.rulebook_out)
    emit(doc, args)
    return 0


def cmd_diagnose(args) -> int:
    hardware = Hardware(args.memory_bytes, args.cores) if args.memory_bytes else DEFAULT_HARDWARE
    workload = _parse_workload(args.workload)
    current = _load_snapshot(args.profile, hardware, workload)
    baseline = _load_snapshot(args.baseline, hardware, workload) if args.baseline else None
    history = read_observations(args.history) if args.history else None
    if baseline is None and not history:
        raise UsageError("diagnose needs --baseline or --history")
    result = diagnose(current, baseline=baseline, history=history, threshold=args.threshold)
    doc = result.to_dict()
    fk = _load_map(args)
    rulebook = Rulebook.load(args.rulebook) if args.rulebook else None
    doc["selected_knobs"] = select_knobs(result.bottlenecks, fk, rulebook, current)
    emit(doc, args)
    return 0


def _rule_summary(rule) -> dict:
    return {
        "id": rule.id,
        "confidence": rule.confidence,
        "prior_confidence": rule.prior_confidence,
        "ei": expected_improvement(rule),
        "coverage": rule.coverage,
        "trials": rule.trial_count,
    }


def cmd_rules(args) -> int:
    book = Rulebook.load(args.rulebook)
    specs = load_specs(args.specs) if getattr(args, "specs", None) else {}
    if args.rules_cmd == "list":
        rules = list(book)
        if args.context:
            rules = book.match_rules(ContextSnapshot.from_dict(read_json(args.context)))
        rules = rank_and_take(rules, args.top_k if args.top_k else max(1, len(rules)))
        doc = {"count": len(rules), "rules": [dict(_rule_summary(r), text=render_rule(r, specs)) for r in rules]}
        emit(doc, args)
        return 0
    if args.rules_cmd == "show":
        rule = book.get(args.rule_id)
        if rule is None:
            raise KeyError(f"no rule with id {args.rule_id!r}")
        doc = rule.to_dict()
        doc.update(_rule_summary(rule))
        doc["text"] = render_rule(rule, specs)
        emit(doc, args)
        return 0
    # export: filtered copy of the rulebook
    rules = [r for r in book if not args.verified_only or r.trial_count > 0]
    if args.min_confidence is not None:
        rules = [r for r in rules if (r.confidence if r.confidence is not None else r.prior_confidence or 0.0) >= args.min_confidence]
    Rulebook(tuple(rules)).save(args.dest)
    emit({"exported": len(rules), "rulebook": str(args.dest)}, args)
    return 0


def _scenario(args):
    scenario = load_scenario(args.scenario)
    if args.noise_scale is not None:
        scenario = scenario.with_noise(scale=args.noise_scale)
    return scenario


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    if args.optimum:
        best, value = ground_truth_optimum(scenario, args.grid)
        emit({"scenario": scenario.name, "grid": args.grid, "configuration": best, "performance": value}, args)
        return 0
    config = read_json(args.config) if args.config else {}
    if isinstance(config, dict) and "configuration" in config:
        config = config["configuration"]
    seed = scenario.noise_seed if args.seed is None else args.seed
    ev = evaluate(scenario, config, rng=np.random.default_rng(seed))
    emit(
        {
            "performance": ev.performance.to_dict(),
            "context": ev.context.to_dict(),
            "true_value": ev.true_value,
            "costs": dict(ev.costs),
        },
        args,
    )
    return 0


def cmd_tune(args) -> int:
    if bool(args.scenario) == bool(args.adapter_cmd):
        raise UsageError("exactly one of --scenario or --adapter-cmd is required")
    if args.budget < 1:
        raise UsageError("--budget must be >= 1")
    name = None
    if args.scenario:
        scenario = _scenario(args)
        name = args.scenario if args.scenario in SHIPPED_SCENARIOS else None
        seed = scenario.noise_seed if args.seed is None else args.seed
        adapter = SimulatorAdapter(scenario, seed)
        hardware = scenario.hardware
    else:
        if not args.specs:
            raise UsageError("--adapter-cmd requires --specs")
        adapter = ExternalProcessAdapter(args.adapter_cmd, load_specs(args.specs))
        hardware = None
        seed = 0 if args.seed is None else args.seed

    if args.strategy == "random":
        if hardware is None:
            raise UsageError("--strategy random needs --scenario")
        history, report = random_search(adapter, args.budget, seed, hardware)
        if args.history:
            lines = [{"type": "observation", "iteration": i, "observation": r.to_dict()} for i, r in enumerate(history)]
            atomic_write_text(args.history, "".join(dumps_canonical(x) + "\n" for x in lines))
        emit(report.to_dict(), args)
        return 0

    if args.map or args.graph:
        fk = _load_map(args)
    elif name in data.SCENARIO_GRAPHS:
        fk = build_function_knob_map(DependencyGraph.from_dict(data.load(data.SCENARIO_GRAPHS[name])))
    else:
        fk = FunctionKnobMap.from_pairs(())
    if args.rules:
        rulebook = Rulebook.load(args.rules)
    elif name in data.SCENARIO_RULES and not args.no_seed_rules:
        rulebook = Rulebook.from_dict(data.load(data.SCENARIO_RULES[name]))
    else:
        rulebook = Rulebook(())
    hypotheses = HypothesisStore.load(args.hypotheses) if args.hypotheses else HypothesisStore.from_dict(data.load("hypotheses.json"))
    advisor = RemoteAdvisor() if args.advisor == "remote" else StubAdvisor()
    baseline = None
    if args.baseline:
        baseline = _load_snapshot(args.baseline, hardware or DEFAULT_HARDWARE, {})
    config = TunerConfig(
        top_k=args.top_k,
        exploration_floor=args.exploration_floor,
        remine_period=args.remine_period,
        diff_threshold=args.threshold,
        diagnosis=args.diagnosis,
    )
    session = Session(adapter, fk, rulebook, hypotheses, advisor, config, baseline)
    run_session(session, args.budget)
    if args.history:
        atomic_write_text(args.history, "".join(dumps_canonical(x) + "\n" for x in session.history_lines()))
    if args.rulebook_out:
        session.rulebook.save(args.rulebook_out)
    emit(session.report().to_dict(), args)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("text", "json"), default="text", help="report format (default text)")
    fmt.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    common = argparse.ArgumentParser(add_help=False, parents=[fmt])
    common.add_argument("--out", help="write the report here instead of standard output")

    parser = _Parser(prog="ruletune", description="Rule-guided configuration tuning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("map", parents=[common], help="build a function-knob map from a dependency graph")
    p.add_argument("--graph", help="dependency graph JSON")
    p.add_argument("--scenario", help="use the graph shipped with a simulator scenario")
    p.add_argument("--knob", action="append", help="restrict to this knob (repeatable)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("mine", parents=[fmt], help="mine tuning rules from observation history")
    p.add_argument("--observations", required=True, help="observation records, one JSON object per line")
    p.add_argument("--specs", required=True, help="knob-spec document")
    p.add_argument("--out", dest="rulebook_out", help="write the mined rulebook here; the report goes to standard output")
    p.add_argument("--merge-into", help="merge mined rules into this existing rulebook")
    p.add_argument("--min-improvement", type=float, default=MiningConfig.min_improvement)
    p.add_argument("--min-coverage", type=float, default=MiningConfig.min_coverage)
    p.add_argument("--min-confidence", type=float, default=MiningConfig.min_confidence)
    p.add_argument("--max-intervals", type=int, default=MiningConfig.max_intervals)
    p.add_argument("--min-support", type=int, default=MiningConfig.min_support)
    p.add_argument("--max-itemset-size", type=int, default=MiningConfig.max_itemset_size)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("diagnose", parents=[common], help="flag bottleneck functions and select knobs")
    p.add_argument("--profile", required=True, help="current profile: collapsed stacks, or a snapshot .json")
    p.add_argument("--baseline", help="known-good profile (enables differential diagnosis)")
    p.add_argument("--history", help="observation history for Shapley diagnosis")
    p.add_argument("--threshold", type=float, default=DEFAULT_DIFF_THRESHOLD)
    p.add_argument("--graph", help="dependency graph used for knob selection")
    p.add_argument("--map", help="precomputed function-knob map")
    p.add_argument("--rulebook", help="rulebook whose matching rules add knobs")
    p.add_argument("--workload", action="append", help="workload predicate name=value (repeatable)")
    p.add_argument("--memory-bytes", type=int, help="hardware memory for collapsed profiles")
    p.add_argument("--cores", type=int, default=DEFAULT_HARDWARE.cores)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("rules", help="inspect or export a rulebook")
    rsub = p.add_subparsers(dest="rules_cmd", required=True, parser_class=_Parser)
    r = rsub.add_parser("list", parents=[common], help="rules in EI order")
    r.add_argument("--rulebook", required=True)
    r.add_argument("--specs", help="knob specs for readable adjustments")
    r.add_argument("--context", help="only rules matching this snapshot JSON")
    r.add_argument("--top-k", type=int, default=0, help="limit (default all)")
    r = rsub.add_parser("show", parents=[common], help="one rule by id")
    r.add_argument("--rulebook", required=True)
    r.add_argument("--specs")
    r.add_argument("rule_id")
    r = rsub.add_parser("export", parents=[common], help="write a filtered copy of a rulebook")
    r.add_argument("--rulebook", required=True)
    r.add_argument("--dest", required=True, help="destination rulebook file")
    r.add_argument("--verified-only", action="store_true")
    r.add_argument("--min-confidence", type=float)
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("simulate", parents=[common], help="evaluate a configuration on a simulator scenario")
    p.add_argument("--scenario", required=True, help=f"scenario file or one of {', '.join(SHIPPED_SCENARIOS)}")
    p.add_argument("--config", help="configuration JSON (default: knob defaults)")
    p.add_argument("--seed", type=int, help="noise seed (default: scenario seed)")
    p.add_argument("--noise-scale", type=float, help="override the scenario noise scale")
    p.add_argument("--optimum", action="store_true", help="report the noise-free grid optimum instead")
    p.add_argument("--grid", type=int, default=31, help="grid points per knob for --optimum")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", parents=[common], help="run an online tuning session")
    p.add_argument("--scenario", help=f"scenario file or one of {', '.join(SHIPPED_SCENARIOS)}")
    p.add_argument("--adapter-cmd", help="command evaluating one configuration (JSON on stdin/stdout)")
    p.add_argument("--specs", help="knob specs (required with --adapter-cmd)")
    p.add_argument("--budget", type=int, default=10, help="tuning iterations (default 10)")
    p.add_argument("--remine-period", type=int, default=DEFAULT_REMINE_PERIOD)
    p.add_argument("--advisor", choices=("stub", "remote"), default="stub")
    p.add_argument("--strategy", choices=("engine", "random"), default="engine")
    p.add_argument("--seed", type=int, help="seed for every random stream (default: scenario seed)")
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--graph", help="dependency graph (default: shipped with the scenario)")
    p.add_argument("--map", help="precomputed function-knob map")
    p.add_argument("--rules", help="starting rulebook (default: shipped seeded rules)")
    p.add_argument("--no-seed-rules", action="store_true", help="start from an empty rulebook")
    p.add_argument("--hypotheses", help="hypothesis file (default: shipped hypotheses)")
    p.add_argument("--baseline", help="known-good profile used by differential diagnosis")
    p.add_argument("--diagnosis", choices=("auto", "differential", "shap"), default="auto")
    p.add_argument("--threshold", type=float, default=DEFAULT_DIFF_THRESHOLD)
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.add_argument("--exploration-floor", type=float, default=EXPLORATION_FLOOR)
    p.add_argument("--history", help="write observations and decision traces here (JSON lines)")
    p.add_argument("--rulebook-out", help="write the final rulebook here")
    p.set_defaults(func=cmd_tune)
    return parser


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("level=%(levelname)s logger=%(name)s %(message)s"))
    root = logging.getLogger("ruletune")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(getattr(args, "log_level", "INFO"))
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"ruletune {args.command}: error: {exc}\n")
        return 2
    except ValidationError as exc:
        for path, msg in exc.errors:
            log.error("event=invalid_input path=%s error=%r", path, msg)
        return 1
    except DOMAIN_ERRORS as exc:
        log.error("event=failed command=%s error=%r", args.command, str(exc))
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
