"""Curriculum generation from a landmark sequence.

Each landmark in turn is planned for from the current state.  The subplans
concatenate into one trace, and every landmark achieved at cumulative index
``i`` contributes the steps ``(i, i), (i-1, i), ..., (1, i)``.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from htnlearn.ground import GroundAction, Grounding, State, action_str, gamma_apply, parse_action_text
from htnlearn.landmark import (
    LandmarkGraph,
    add_reasonable_orders,
    extract_landmarks,
    goal_order,
    topo_sequence,
)
from htnlearn.pddl import Atom, DomainModel, ProblemModel, atom_str
from htnlearn.search import BudgetExceededError, PlanningError, SearchConfig, classical_plan

log = logging.getLogger(__name__)

TASK_PREFIX = "achieve-"


class CurriculumError(Exception):
    pass


class LandmarkUnreachableError(PlanningError):
    def __init__(self, landmark: str, cause: Exception):
        super().__init__(f"cannot reach landmark {landmark}: {cause}")
        self.landmark = landmark
        self.cause = cause


# --------------------------------------------------------------------------
# annotated tasks


def var_name(i: int) -> str:
    """The i-th variable name in the fixed sequence ?a, ?b, ..., ?z, ?a1, ..."""
    if i < 26:
        return "?" + chr(ord("a") + i)
    return f"?{chr(ord('a') + i % 26)}{i // 26}"


@dataclass(frozen=True)
class AnnotatedTask:
    name: str
    params: tuple[tuple[str, str], ...]
    goals: tuple[Atom, ...]
    preconditions: tuple[Atom, ...] = ()

    def __post_init__(self):
        declared = {v for v, _ in self.params}
        for atom in self.goals + self.preconditions:
            for term in atom[1:]:
                if term.startswith("?") and term not in declared:
                    raise CurriculumError(f"task {self.name}: variable {term} is not a parameter")

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.params)

    def ground_goals(self, args: Sequence[str]) -> frozenset:
        binding = dict(zip(self.variables, args))
        return frozenset(tuple(binding.get(t, t) for t in atom) for atom in self.goals)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "params": [{"var": v, "type": t} for v, t in self.params],
            "goals": [atom_str(a) for a in self.goals],
            "preconditions": [atom_str(a) for a in self.preconditions],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "AnnotatedTask":
        from htnlearn.pddl import parse_atom

        return cls(
            name=data["name"].lower(),
            params=tuple((p["var"].lower(), p["type"].lower()) for p in data["params"]),
            goals=tuple(parse_atom(a) for a in data["goals"]),
            preconditions=tuple(parse_atom(a) for a in data.get("preconditions", ())),
        )


@dataclass(frozen=True, order=True)
class TaskInstance:
    name: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return task_str(self)


def task_str(inst: TaskInstance, names: Mapping[str, str] | None = None) -> str:
    names = names or {}
    return f"{names.get(inst.name, inst.name)}({', '.join(names.get(a, a) for a in inst.args)})"


_TASK_TEXT_RE = re.compile(r"^\s*([^\s(),]+)\s*\(\s*([^()]*)\)\s*$")


def parse_task(text: str) -> TaskInstance:
    """Parse ``"Achieve-clear(A)"`` or ``"(Achieve-clear A)"``."""
    m = _TASK_TEXT_RE.match(text)
    if m:
        args = [a for a in re.split(r"[\s,]+", m.group(2)) if a]
        return TaskInstance(m.group(1).lower(), tuple(a.lower() for a in args))
    inner = text.strip()
    if inner.startswith("(") and inner.endswith(")"):
        parts = inner[1:-1].split()
        if parts:
            return TaskInstance(parts[0].lower(), tuple(p.lower() for p in parts[1:]))
    raise CurriculumError(f"malformed task {text!r}")


class TaskRegistry:
    """Interns one lifted annotated task per predicate."""

    def __init__(self, dom: DomainModel, tasks: Iterable[AnnotatedTask] = ()):
        self.dom = dom
        self.tasks: dict[str, AnnotatedTask] = {}
        self.display: dict[str, str] = {}
        for t in tasks:
            self.register(t)

    def register(self, task: AnnotatedTask) -> AnnotatedTask:
        old = self.tasks.get(task.name)
        if old is not None:
            if len(old.params) != len(task.params) or len(old.goals) != len(task.goals):
                raise CurriculumError(f"conflicting definitions of task {task.name}")
            return old
        self.tasks[task.name] = task
        if task.name.startswith(TASK_PREFIX):
            pred = task.name[len(TASK_PREFIX):]
            self.display[task.name] = "Achieve-" + self.dom.display_names.get(pred, pred)
        return task

    def make_annotated_task(self, atom: Atom) -> tuple[AnnotatedTask, TaskInstance]:
        pred, args = atom[0], tuple(atom[1:])
        schema = self.dom.predicate_table.get(pred)
        if schema is None:
            raise CurriculumError(f"unknown predicate {pred}")
        params = tuple((var_name(i), t) for i, (_, t) in enumerate(schema.params))
        task = AnnotatedTask(TASK_PREFIX + pred, params, ((pred,) + tuple(v for v, _ in params),))
        task = self.register(task)
        return task, TaskInstance(task.name, args)

    def goals_of(self, inst: TaskInstance) -> frozenset:
        return self.tasks[inst.name].ground_goals(inst.args)

    def __contains__(self, name: str) -> bool:
        return name in self.tasks

    def __getitem__(self, name: str) -> AnnotatedTask:
        return self.tasks[name]


def make_annotated_task(dom: DomainModel, atom: Atom,
                        registry: TaskRegistry | None = None) -> tuple[AnnotatedTask, TaskInstance]:
    return (registry or TaskRegistry(dom)).make_annotated_task(atom)


# --------------------------------------------------------------------------
# traces and curricula


@dataclass
class PlanTrace:
    actions: list[GroundAction]
    trajectory: list[State]

    @classmethod
    def from_plan(cls, s0: Iterable[Atom], actions: Sequence[GroundAction]) -> "PlanTrace":
        state = frozenset(s0)
        traj = [state]
        for a in actions:
            state = gamma_apply(state, a)
            traj.append(state)
        return cls(list(actions), traj)

    def __len__(self) -> int:
        return len(self.actions)

    def action(self, k: int) -> GroundAction:
        """The k-th action, 1-based."""
        return self.actions[k - 1]

    def check(self) -> None:
        if len(self.trajectory) != len(self.actions) + 1:
            raise CurriculumError("trajectory length does not match the trace")
        for k, a in enumerate(self.actions, start=1):
            if gamma_apply(self.trajectory[k - 1], a) != self.trajectory[k]:
                raise CurriculumError(f"trajectory disagrees with the trace at step {k}")


@dataclass(frozen=True)
class CurriculumStep:
    begin: int
    end: int
    task: TaskInstance


@dataclass
class Curriculum:
    steps: list[CurriculumStep]
    trace: PlanTrace
    tasks: dict[str, AnnotatedTask] = field(default_factory=dict)
    agenda: list[TaskInstance] = field(default_factory=list)

    def check(self) -> None:
        n = len(self.trace)
        for s in self.steps:
            if not 1 <= s.begin <= s.end <= n:
                raise CurriculumError(f"step ({s.begin}, {s.end}) does not index a trace of length {n}")
            if s.task.name not in self.tasks:
                raise CurriculumError(f"step ({s.begin}, {s.end}) uses undefined task {s.task.name}")

    def pairs(self) -> list[tuple[int, int]]:
        return [(s.begin, s.end) for s in self.steps]

    def to_json(self, names: Mapping[str, str] | None = None) -> dict:
        names = names or {}
        return {
            "trace": [action_str(a, names) for a in self.trace.actions],
            "steps": [{"begin": s.begin, "end": s.end,
                       "task": {"name": names.get(s.task.name, s.task.name),
                                "args": [names.get(a, a) for a in s.task.args]}} for s in self.steps],
            "agenda": [{"name": names.get(t.name, t.name), "args": [names.get(a, a) for a in t.args]}
                       for t in self.agenda],
            "tasks": [self.tasks[k].to_json() for k in sorted(self.tasks)],
        }

    def dumps(self, names: Mapping[str, str] | None = None) -> str:
        return json.dumps(self.to_json(names), indent=2)


def curriculum_from_json(data: Mapping, grounding: Grounding, registry: TaskRegistry | None = None) -> Curriculum:
    """Rebuild a curriculum over ``grounding``'s problem from its JSON form.

    Tasks named ``Achieve-<pred>`` need no definition; others must be listed
    under ``tasks``.
    """
    registry = registry or TaskRegistry(grounding.dom)
    for t in data.get("tasks", ()):
        registry.register(AnnotatedTask.from_json(t))

    def resolve(entry: Mapping) -> TaskInstance:
        inst = TaskInstance(entry["name"].lower(), tuple(a.lower() for a in entry["args"]))
        if inst.name not in registry and inst.name.startswith(TASK_PREFIX):
            registry.make_annotated_task((inst.name[len(TASK_PREFIX):],) + inst.args)
        if inst.name not in registry:
            raise CurriculumError(f"undefined task {entry['name']}")
        return inst

    actions = [parse_action_text(s, grounding) for s in data["trace"]]
    trace = PlanTrace.from_plan(grounding.prob.init, actions)
    steps = [CurriculumStep(int(s["begin"]), int(s["end"]), resolve(s["task"])) for s in data["steps"]]
    agenda = [resolve(t) for t in data.get("agenda", ())]
    cur = Curriculum(steps, trace, dict(registry.tasks), agenda)
    cur.check()
    return cur


# --------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class CurricugenConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    landmark_method: str = "hm1"
    reasonable: str = "interference"
    max_span: int | None = None
    goal_closure: bool = True
    tie_break: str = "lexicographic"


@dataclass
class CurricugenResult:
    trace: PlanTrace
    curriculum: Curriculum
    tasks: dict[str, AnnotatedTask]
    graph: LandmarkGraph
    sequence: list[Atom]
    timings: dict[str, float]

    def __iter__(self):
        return iter((self.trace, self.curriculum, set(self.tasks.values())))


def last_achievement(trajectory: Sequence[State], atom: Atom) -> int:
    """Smallest k with ``atom`` true in every state from ``trajectory[k]`` on; -1 if false at the end."""
    n = len(trajectory) - 1
    if atom not in trajectory[n]:
        return -1
    k = n
    while k > 0 and atom in trajectory[k - 1]:
        k -= 1
    return k


def curricugen(dom: DomainModel, prob: ProblemModel, cfg: CurricugenConfig | None = None,
               grounding: Grounding | None = None, registry: TaskRegistry | None = None,
               graph: LandmarkGraph | None = None) -> CurricugenResult:
    cfg = cfg or CurricugenConfig()
    registry = registry or TaskRegistry(dom)
    clock = time.perf_counter
    t0 = clock()
    g = grounding or Grounding(dom, prob)
    if graph is None:
        graph = extract_landmarks(g, cfg.landmark_method)
        graph = add_reasonable_orders(graph, g, cfg.reasonable)
    goals = goal_order(g, graph) if cfg.tie_break == "goal-directed" else None
    sequence = topo_sequence(graph, tie_break=cfg.tie_break, goals=goals)
    t1 = clock()

    state = frozenset(prob.init)
    actions: list[GroundAction] = []
    traj: list[State] = [state]
    steps: list[CurriculumStep] = []
    blocks: set[tuple[int, TaskInstance]] = set()

    def extend(subplan):
        nonlocal state
        for a in subplan:
            state = gamma_apply(state, a)
            actions.append(a)
            traj.append(state)

    def emit_block(i: int, inst: TaskInstance):
        blocks.add((i, inst))
        low = 1 if cfg.max_span is None else max(1, i - cfg.max_span + 1)
        for k in range(i, low - 1, -1):
            steps.append(CurriculumStep(k, i, inst))

    for v in sequence:
        try:
            sub = classical_plan(g, state, {v}, cfg.search)
        except BudgetExceededError:
            raise
        except PlanningError as exc:
            raise LandmarkUnreachableError(g.atom_text(v), exc) from exc
        if not sub:
            continue
        extend(sub)
        _, inst = registry.make_annotated_task(v)
        emit_block(len(actions), inst)

    goal = frozenset(prob.goal)
    agenda: list[TaskInstance] = []
    if cfg.goal_closure:
        if not goal <= state:
            try:
                sub = classical_plan(g, state, goal, cfg.search)
            except BudgetExceededError:
                raise
            except PlanningError as exc:
                missing = " ".join(g.atom_text(a) for a in sorted(goal - state))
                raise LandmarkUnreachableError(f"goal {missing}", exc) from exc
            extend(sub)
        rank = {v: i for i, v in enumerate(sequence)}
        achieved = {a: last_achievement(traj, a) for a in goal}
        ordered = sorted(goal, key=lambda a: (achieved[a], rank.get(a, len(rank)), g.atom_text(a)))
        for atom in ordered:
            _, inst = registry.make_annotated_task(atom)
            agenda.append(inst)
            i = achieved[atom]
            if i > 0 and (i, inst) not in blocks:
                emit_block(i, inst)
    t2 = clock()

    trace = PlanTrace(actions, traj)
    cur = Curriculum(steps, trace, dict(registry.tasks), agenda)
    return CurricugenResult(trace, cur, dict(registry.tasks), graph, sequence,
                            {"landmarks_s": t1 - t0, "plan_s": t2 - t1})
