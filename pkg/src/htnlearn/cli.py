"""Command-line entry point.

Exit status: 0 success, 2 input could not be parsed, 3 planning failed,
4 an internal invariant was violated.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from htnlearn import bench
from htnlearn.curricula import (
    CurricugenConfig,
    CurriculumError,
    TaskRegistry,
    curricugen,
    curriculum_from_json,
    parse_task,
    task_str,
)
from htnlearn.generators import generate
from htnlearn.ground import Grounding, PlanValidationError, format_plan, parse_plan, validate_plan
from htnlearn.htn import (
    HierarchicalProblem,
    HtnConfig,
    HtnError,
    equivalent_hierarchical_problem,
    htn_solve,
    validate_htn_result,
)
from htnlearn.landmark import (
    LANDMARK_METHODS,
    REASONABLE_MODES,
    TIE_BREAKS,
    LandmarkError,
    LandmarkGraph,
    RelaxedUnreachableGoalError,
    add_reasonable_orders,
    extract_landmarks,
)
from htnlearn.learn import LearnError, MethodLibrary
from htnlearn.pddl import PDDLError, atom_str, names_for, parse_domain, parse_problem, problem_to_pddl, typed_objects
from htnlearn.pipeline import learn_problem
from htnlearn.search import HEURISTICS, STRATEGIES, PlanningError, SearchConfig, SearchStats, classical_plan

log = logging.getLogger("htnlearn")

EXIT_OK, EXIT_PARSE, EXIT_PLAN, EXIT_INTERNAL = 0, 2, 3, 4


class InputError(Exception):
    """A file is missing or malformed."""


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _load_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc


def _domain(args):
    return parse_domain(_read(args.domain))


def _problem(args, dom, path=None):
    return parse_problem(_read(path or args.problem), dom)


def _emit(args, data: dict, text: str) -> None:
    if args.format == "json":
        print(json.dumps(data, indent=2))
    elif text:
        print(text, end="" if text.endswith("\n") else "\n")


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)


def _search_cfg(args) -> SearchConfig:
    return SearchConfig(strategy=args.strategy, heuristic=args.heuristic, max_expansions=args.max_expansions)


def _curricugen_cfg(args) -> CurricugenConfig:
    return CurricugenConfig(search=_search_cfg(args), landmark_method=args.landmark_method,
                            reasonable=args.reasonable, tie_break=args.tie_break)


# --------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    dom = _domain(args)
    data = {
        "domain": dom.name,
        "requirements": list(dom.requirements),
        "types": [t for t, _ in dom.types],
        "predicates": [p.name for p in dom.predicates],
        "actions": [a.name for a in dom.action_schemas],
    }
    lines = [f"domain {dom.name}: {len(dom.predicates)} predicates, {len(dom.action_schemas)} actions"]
    if args.problem:
        prob = _problem(args, dom)
        names = names_for(dom, prob)
        data.update(problem=prob.name, objects=len(prob.objects),
                    init=sorted(atom_str(a, names) for a in prob.init),
                    goal=sorted(atom_str(a, names) for a in prob.goal))
        lines.append(f"problem {prob.name}: {len(prob.objects)} objects, "
                     f"{len(prob.init)} init atoms, {len(prob.goal)} goal atoms")
    _emit(args, data, "\n".join(lines))
    return EXIT_OK


def cmd_plan_classical(args) -> int:
    dom = _domain(args)
    prob = _problem(args, dom)
    g = Grounding(dom, prob)
    stats = SearchStats()
    plan = classical_plan(g, prob.init, prob.goal, _search_cfg(args), stats)
    names = names_for(dom, prob)
    text = format_plan(plan, names)
    _write(args.out, text)
    _emit(args, {"plan": text.splitlines(), "length": len(plan), "expansions": stats.expansions}, text)
    return EXIT_OK


def _landmark_graph(args, dom, prob, g) -> LandmarkGraph:
    graph = extract_landmarks(g, args.landmark_method)
    return add_reasonable_orders(graph, g, args.reasonable)


def cmd_landmarks(args) -> int:
    dom = _domain(args)
    prob = _problem(args, dom)
    g = Grounding(dom, prob)
    graph = _landmark_graph(args, dom, prob, g)
    _write(args.dot, graph.to_dot())
    _write(args.out, graph.dumps() + "\n")
    lines = [graph.label(n) + (" [init]" if n in graph.initial else "") + (" [goal]" if n in graph.goal else "")
             for n in graph.nodes]
    lines += [f"{graph.label(s)} -{k.value}-> {graph.label(d)}" for (s, d), k in
              sorted(graph.edges.items(), key=lambda e: (graph.label(e[0][0]), graph.label(e[0][1])))]
    _emit(args, graph.to_json(), "\n".join(lines))
    return EXIT_OK


def cmd_curriculum(args) -> int:
    dom = _domain(args)
    prob = _problem(args, dom)
    g = Grounding(dom, prob)
    graph = LandmarkGraph.from_json(_load_json(args.landmarks)) if args.landmarks else None
    res = curricugen(dom, prob, _curricugen_cfg(args), grounding=g, graph=graph)
    names = names_for(dom, prob)
    _write(args.out, res.curriculum.dumps(names) + "\n")
    lines = [f"trace ({len(res.trace)} actions):"] + ["  " + l for l in format_plan(res.trace.actions, names).splitlines()]
    lines.append(f"steps ({len(res.curriculum.steps)}):")
    lines += [f"  ({s.begin},{s.end}) {task_str(s.task, names)}" for s in res.curriculum.steps]
    _emit(args, res.curriculum.to_json(names), "\n".join(lines))
    return EXIT_OK


def cmd_learn(args) -> int:
    dom = _domain(args)
    library = MethodLibrary.loads(_read(args.methods)) if args.methods else MethodLibrary()
    curricula = args.curriculum or []
    if curricula and len(curricula) != len(args.problem):
        raise InputError("give one --curriculum per problem")
    cfg = _curricugen_cfg(args)
    rows, status = [], EXIT_OK
    for k, path in enumerate(args.problem):
        try:
            prob = _problem(args, dom, path)
            cur = None
            if curricula:
                g = Grounding(dom, prob)
                cur = curriculum_from_json(_load_json(curricula[k]), g, TaskRegistry(dom, library.tasks.values()))
            res = learn_problem(dom, prob, library, cfg, source=prob.name, ordinal=k, curriculum=cur)
        except Exception as exc:  # noqa: BLE001 - reported per problem
            code = _exit_code(exc)
            if not args.keep_going:
                raise
            log.error("%s: %s", path, exc)
            rows.append({"problem": path, "error": str(exc)})
            status = max(status, code)
            continue
        rows.append({
            "problem": prob.name,
            "landmarks": len(res.gen.graph.nodes) if res.gen else None,
            "trace_length": len(res.curriculum.trace),
            "steps": len(res.curriculum.steps),
            "new_methods": res.new_methods,
        })
    _write(args.out, library.dumps() + "\n")
    lines = []
    for r in rows:
        if "error" in r:
            lines.append(f"{r['problem']}: skipped ({r['error']})")
        else:
            lm = "-" if r["landmarks"] is None else r["landmarks"]
            lines.append(f"{r['problem']}: landmarks={lm} trace={r['trace_length']} "
                         f"steps={r['steps']} new_methods={r['new_methods']}")
    lines.append(f"library: {len(library)} methods")
    _emit(args, {"problems": rows, "methods": len(library)}, "\n".join(lines))
    return status


def cmd_plan_htn(args) -> int:
    dom = _domain(args)
    prob = _problem(args, dom)
    library = MethodLibrary.loads(_read(args.methods))
    cfg = HtnConfig(max_decompositions=args.max_decompositions, depth_limit=args.depth_limit)
    if args.task:
        registry = TaskRegistry(dom, library.tasks.values())
        tasks = []
        for text in args.task:
            try:
                t = parse_task(text)
            except CurriculumError as exc:
                raise InputError(str(exc)) from exc
            if t.name not in library.tasks:
                if t.name not in registry and t.name.startswith("achieve-"):
                    registry.make_annotated_task((t.name[len("achieve-"):],) + t.args)
                if t.name not in registry:
                    raise InputError(f"unknown task {text}")
                library.add_task(registry[t.name])
            tasks.append(t)
        hp = HierarchicalProblem(dom, library, frozenset(prob.init), tasks, typed_objects(dom, prob))
    else:
        hp = equivalent_hierarchical_problem(dom, prob, library)
    res = htn_solve(hp, cfg)
    validate_htn_result(hp, res)
    names = names_for(dom, prob)
    text = format_plan(res.plan, names)
    _write(args.out, text)
    if args.emit_trace:
        _write(args.emit_trace, json.dumps(res.trace.to_json(names), indent=2) + "\n")
    _emit(args, {"plan": text.splitlines(), "length": len(res.plan),
                 "decompositions": res.stats.decompositions}, text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = {
        "domain_name": args.domain_name, "n_train": args.n_train, "n_test": args.n_test,
        "n_trials": args.trials, "output_dir": args.output_dir, "seed": args.seed,
    }
    if args.config:
        try:
            cfg = bench.load_config(args.config, overrides)
        except (ValueError, OSError) as exc:
            raise InputError(str(exc)) from exc
    else:
        cfg = bench.ExperimentConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})
    result = bench.run_experiment(cfg)
    _emit(args, {"rows": [r.__dict__ for r in result.rows], "summary": result.summary}, result.csv_text())
    return EXIT_OK


def cmd_gen(args) -> int:
    params = {k: v for k, v in {
        "n_blocks": args.blocks, "min_blocks": args.min_blocks, "max_blocks": args.max_blocks,
        "scramble_steps": args.scramble_steps, "goal_mode": args.goal_mode,
        "cities": args.cities, "locs_per_city": args.locs_per_city, "packages": args.packages,
        "trucks": args.trucks, "airplanes": args.airplanes,
    }.items() if v is not None}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(args.count):
        prob = generate(args.domain_name, f"{args.seed}:gen:{i}", **params)
        path = out / f"{args.domain_name}-{i:03d}.pddl"
        path.write_text(problem_to_pddl(prob))
        files.append(str(path))
    _emit(args, {"files": files}, "\n".join(files))
    return EXIT_OK


def cmd_validate(args) -> int:
    dom = _domain(args)
    prob = _problem(args, dom)
    g = Grounding(dom, prob)
    try:
        plan = parse_plan(_read(args.plan), g)
    except (ValueError, KeyError) as exc:
        raise InputError(f"{args.plan}: {exc}") from exc
    validate_plan(prob, plan)
    _emit(args, {"valid": True, "length": len(plan)}, f"valid plan of length {len(plan)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _add_io(p, problem=True):
    p.add_argument("-d", "--domain", required=True, help="domain PDDL file")
    if problem:
        p.add_argument("-p", "--problem", required=True, help="problem PDDL file")


def _add_search(p):
    p.add_argument("--strategy", choices=STRATEGIES, default="gbfs")
    p.add_argument("--heuristic", choices=HEURISTICS, default="hadd")
    p.add_argument("--max-expansions", type=int, default=1_000_000)


def _add_landmarks(p):
    p.add_argument("--landmark-method", choices=LANDMARK_METHODS, default="hm1")
    p.add_argument("--reasonable", choices=REASONABLE_MODES, default="interference")


def _add_curriculum(p):
    _add_search(p)
    _add_landmarks(p)
    p.add_argument("--tie-break", choices=TIE_BREAKS, default="lexicographic",
                   help="order among unordered landmarks")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="htnlearn", description="Learn HTN methods from landmark curricula.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="parse and summarize PDDL files")
    p.add_argument("-d", "--domain", required=True)
    p.add_argument("-p", "--problem")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("plan-classical", parents=[common], help="forward search for a plan")
    _add_io(p)
    _add_search(p)
    p.add_argument("--out", help="write the plan here")
    p.set_defaults(func=cmd_plan_classical)

    p = sub.add_parser("landmarks", parents=[common], help="landmark graph of a problem")
    _add_io(p)
    _add_landmarks(p)
    p.add_argument("--dot", help="write a DOT rendering here")
    p.add_argument("--out", help="write the graph as JSON here")
    p.set_defaults(func=cmd_landmarks)

    p = sub.add_parser("curriculum", parents=[common], help="trace and curriculum of a problem")
    _add_io(p)
    _add_curriculum(p)
    p.add_argument("--landmarks", help="landmark graph JSON to sequence instead of extracting one")
    p.add_argument("--out", help="write the curriculum JSON here")
    p.set_defaults(func=cmd_curriculum)

    p = sub.add_parser("learn", parents=[common], help="learn methods from problems")
    p.add_argument("-d", "--domain", required=True)
    p.add_argument("-p", "--problem", action="append", default=[], help="problem file (repeatable)")
    p.add_argument("-m", "--methods", help="library to extend")
    p.add_argument("-o", "--out", help="write the library here")
    p.add_argument("--curriculum", action="append", help="curriculum JSON for the matching --problem")
    p.add_argument("--keep-going", action="store_true", help="skip problems that fail")
    _add_curriculum(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("plan-htn", parents=[common], help="solve with a method library")
    _add_io(p)
    p.add_argument("--methods", required=True, help="library JSON")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--task", action="append", help='root task such as "achieve-on(a, b)" (repeatable)')
    group.add_argument("--from-goal", action="store_true", help="one root task per goal atom (default)")
    p.add_argument("--max-decompositions", type=int, default=100_000)
    p.add_argument("--depth-limit", type=int, default=500)
    p.add_argument("--emit-trace", help="write the decomposition tree JSON here")
    p.add_argument("--out", help="write the plan here")
    p.set_defaults(func=cmd_plan_htn)

    p = sub.add_parser("experiment", parents=[common], help="train/test convergence experiment")
    p.add_argument("--config", help="TOML or JSON experiment config")
    p.add_argument("--domain", dest="domain_name", choices=("blocks", "logistics"))
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_experiment, seed=None)

    p = sub.add_parser("gen", parents=[common], help="write random problems")
    p.add_argument("--domain", dest="domain_name", choices=("blocks", "logistics"), required=True)
    p.add_argument("-n", "--count", type=int, default=1)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--blocks", type=int, help="exact block count")
    p.add_argument("--min-blocks", type=int)
    p.add_argument("--max-blocks", type=int)
    p.add_argument("--scramble-steps", type=int)
    p.add_argument("--goal-mode", choices=("scramble", "uniform"))
    p.add_argument("--cities", type=int)
    p.add_argument("--locs-per-city", type=int)
    p.add_argument("--packages", type=int)
    p.add_argument("--trucks", type=int)
    p.add_argument("--airplanes", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", parents=[common], help="check a plan file")
    _add_io(p)
    p.add_argument("--plan", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (PDDLError, InputError, CurriculumError)):
        return EXIT_PARSE
    if isinstance(exc, (PlanningError, HtnError, PlanValidationError, RelaxedUnreachableGoalError)):
        return EXIT_PLAN
    return EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LearnError, LandmarkError) as exc:
        if isinstance(exc, RelaxedUnreachableGoalError):
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_PLAN
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - mapped to an exit status
        code = _exit_code(exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if code == EXIT_INTERNAL and args.verbose:
            raise
        return code


if __name__ == "__main__":
    sys.exit(main())
