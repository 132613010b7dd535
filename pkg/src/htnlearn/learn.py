"""Learning HTN methods from curriculum steps by hierarchical goal regression."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from htnlearn.curricula import (
    AnnotatedTask,
    Curriculum,
    PlanTrace,
    TaskInstance,
    var_name,
)
from htnlearn.pddl import Atom, atom_str, parse_atom

log = logging.getLogger(__name__)

PRIMITIVE = "primitive"
TASK = "task"


class LearnError(Exception):
    pass


class TraceCurriculumMismatchError(LearnError):
    pass


class RegressionInconsistencyError(LearnError):
    pass


@dataclass(frozen=True)
class Subtask:
    kind: str  # PRIMITIVE or TASK
    name: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        if self.kind == PRIMITIVE:
            return "(!" + " ".join((self.name,) + self.args) + ")"
        return "(" + " ".join((self.name,) + self.args) + ")"


@dataclass(frozen=True)
class HtnMethod:
    id: str
    task: str
    params: tuple[tuple[str, str], ...]
    preconditions: tuple[Atom, ...]
    subtasks: tuple[Subtask, ...]
    variables: tuple[tuple[str, str], ...] = ()  # existential method variables

    def __post_init__(self):
        declared = [v for v, _ in self.params] + [v for v, _ in self.variables]
        if len(set(declared)) != len(declared):
            raise LearnError(f"method {self.id}: repeated variable")
        known = set(declared)
        terms = [t for a in self.preconditions for t in a[1:]] + [t for s in self.subtasks for t in s.args]
        for t in terms:
            if not t.startswith("?"):
                raise LearnError(f"method {self.id}: constant {t} left after lifting")
            if t not in known:
                raise LearnError(f"method {self.id}: undeclared variable {t}")

    @property
    def head_vars(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.params)

    @property
    def all_vars(self) -> tuple[tuple[str, str], ...]:
        return self.params + self.variables

    def with_id(self, new_id: str) -> "HtnMethod":
        return HtnMethod(new_id, self.task, self.params, self.preconditions, self.subtasks, self.variables)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "head": {"name": self.task, "params": [{"var": v, "type": t} for v, t in self.params]},
            "vars": [{"var": v, "type": t} for v, t in self.variables],
            "preconditions": [atom_str(a) for a in self.preconditions],
            "subtasks": [{"kind": s.kind, "name": s.name, "args": list(s.args)} for s in self.subtasks],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "HtnMethod":
        return cls(
            id=data["id"],
            task=data["head"]["name"].lower(),
            params=tuple((p["var"].lower(), p["type"].lower()) for p in data["head"]["params"]),
            preconditions=tuple(parse_atom(a) for a in data["preconditions"]),
            subtasks=tuple(Subtask(s["kind"], s["name"].lower(), tuple(a.lower() for a in s["args"]))
                           for s in data["subtasks"]),
            variables=tuple((p["var"].lower(), p["type"].lower()) for p in data.get("vars", ())),
        )


@dataclass(frozen=True)
class Provenance:
    source: str
    ordinal: int
    step: int
    begin: int
    end: int

    def to_json(self) -> dict:
        return {"source": self.source, "ordinal": self.ordinal, "step": self.step,
                "begin": self.begin, "end": self.end}


@dataclass(frozen=True)
class IndexedMethodInstance:
    """A learned (or re-derived) method bound to the subtrace [begin, end]."""

    method: str
    binding: tuple[tuple[str, str], ...]
    begin: int
    end: int
    task: TaskInstance
    preconditions: frozenset  # ground
    children: tuple[int, ...]  # index into X per subtask, -1 for primitives

    @property
    def grounding(self) -> dict[str, str]:
        return dict(self.binding)


# --------------------------------------------------------------------------
# renaming


def _signature(m: HtnMethod) -> tuple:
    var_types = dict(m.all_vars)
    head = {v: i for i, v in enumerate(m.head_vars)}

    def shape(term: str):
        return ("h", head[term]) if term in head else ("v", var_types[term])

    return (
        m.task,
        tuple(t for _, t in m.params),
        tuple(sorted(t for _, t in m.variables)),
        tuple((s.kind, s.name, tuple(shape(a) for a in s.args)) for s in m.subtasks),
        tuple(sorted((a[0], tuple(shape(t) for t in a[1:])) for a in m.preconditions)),
    )


def rename_mapping(a: HtnMethod, b: HtnMethod) -> dict[str, str] | None:
    """A bijective variable renaming taking ``a`` onto ``b``, or None."""
    if _signature(a) != _signature(b):
        return None
    mapping: dict[str, str] = dict(zip(a.head_vars, b.head_vars))
    used = set(mapping.values())
    types_a, types_b = dict(a.all_vars), dict(b.all_vars)

    def bind(x: str, y: str) -> bool:
        if x in mapping:
            return mapping[x] == y
        if y in used or types_a[x] != types_b[y]:
            return False
        mapping[x] = y
        used.add(y)
        return True

    for sa, sb in zip(a.subtasks, b.subtasks):
        for x, y in zip(sa.args, sb.args):
            if not bind(x, y):
                return None
    target = set(b.preconditions)
    pending = list(a.preconditions)

    def search(i: int) -> bool:
        if i == len(pending):
            return True
        atom = pending[i]
        for cand in target:
            if cand[0] != atom[0] or len(cand) != len(atom):
                continue
            added = []
            ok = True
            for x, y in zip(atom[1:], cand[1:]):
                if x in mapping:
                    if mapping[x] != y:
                        ok = False
                        break
                elif y in used or types_a[x] != types_b[y]:
                    ok = False
                    break
                else:
                    mapping[x] = y
                    used.add(y)
                    added.append(x)
            if ok and search(i + 1):
                return True
            for x in added:
                used.discard(mapping.pop(x))
        return False

    if not search(0):
        return None
    if {tuple(mapping.get(t, t) for t in atom) for atom in a.preconditions} != target:
        return None
    return mapping


def rename_equivalent(a: HtnMethod, b: HtnMethod) -> bool:
    return rename_mapping(a, b) is not None


# --------------------------------------------------------------------------
# library


class MethodLibrary:
    """Ordered, duplicate-free collection of methods plus the tasks they refine."""

    def __init__(self, tasks: Iterable[AnnotatedTask] = ()):
        self.methods: list[HtnMethod] = []
        self.provenance: dict[str, Provenance] = {}
        self.tasks: dict[str, AnnotatedTask] = {}
        self._by_id: dict[str, HtnMethod] = {}
        self._by_task: dict[str, list[HtnMethod]] = {}
        self._buckets: dict[tuple, list[HtnMethod]] = {}
        for t in tasks:
            self.add_task(t)

    def __len__(self) -> int:
        return len(self.methods)

    def __iter__(self):
        return iter(self.methods)

    def __getitem__(self, method_id: str) -> HtnMethod:
        return self._by_id[method_id]

    def add_task(self, task: AnnotatedTask) -> None:
        old = self.tasks.get(task.name)
        if old is None:
            self.tasks[task.name] = task
        elif len(old.params) != len(task.params):
            raise LearnError(f"conflicting definitions of task {task.name}")

    def by_task(self, name: str) -> list[HtnMethod]:
        return self._by_task.get(name, [])

    def find_equivalent(self, m: HtnMethod) -> tuple[HtnMethod, dict[str, str]] | None:
        """An existing method ``m`` renames onto, with the renaming."""
        for other in self._buckets.get(_signature(m), ()):
            mapping = rename_mapping(m, other)
            if mapping is not None:
                return other, mapping
        return None

    def next_id(self) -> str:
        return f"m{len(self.methods) + 1}"

    def add(self, m: HtnMethod, provenance: Provenance | None = None) -> tuple[HtnMethod, bool]:
        """Insert ``m`` under a fresh id unless a variant exists; returns (stored, is_new)."""
        found = self.find_equivalent(m)
        if found is not None:
            return found[0], False
        stored = m.with_id(self.next_id())
        self.methods.append(stored)
        self._by_id[stored.id] = stored
        self._by_task.setdefault(stored.task, []).append(stored)
        self._buckets.setdefault(_signature(stored), []).append(stored)
        if provenance is not None:
            self.provenance[stored.id] = provenance
        return stored, True

    def copy(self) -> "MethodLibrary":
        out = MethodLibrary(self.tasks.values())
        for m in self.methods:
            out.add(m, self.provenance.get(m.id))
        return out

    def merge(self, other: "MethodLibrary") -> list[HtnMethod]:
        """Append ``other``'s methods in order, skipping variants; returns the new ones."""
        for t in other.tasks.values():
            self.add_task(t)
        added = []
        for m in other.methods:
            stored, new = self.add(m, other.provenance.get(m.id))
            if new:
                added.append(stored)
        return added

    # ---- persistence

    def to_json(self) -> dict:
        methods = []
        for m in self.methods:
            entry = m.to_json()
            prov = self.provenance.get(m.id)
            entry["provenance"] = prov.to_json() if prov else None
            methods.append(entry)
        return {"tasks": [self.tasks[k].to_json() for k in sorted(self.tasks)], "methods": methods}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "MethodLibrary":
        lib = cls(AnnotatedTask.from_json(t) for t in data.get("tasks", ()))
        for entry in data.get("methods", ()):
            m = HtnMethod.from_json(entry)
            prov = entry.get("provenance")
            stored = m.with_id(m.id)
            if lib.find_equivalent(stored) is not None:
                raise LearnError(f"library lists method {m.id} twice up to renaming")
            lib.methods.append(stored)
            lib._by_id[stored.id] = stored
            lib._by_task.setdefault(stored.task, []).append(stored)
            lib._buckets.setdefault(_signature(stored), []).append(stored)
            if prov:
                lib.provenance[stored.id] = Provenance(**prov)
        return lib

    @classmethod
    def loads(cls, text: str) -> "MethodLibrary":
        return cls.from_json(json.loads(text))

    def to_shop(self) -> str:
        """A SHOP-like rendering for reading, one ``(:method ...)`` per method."""
        lines = []
        for m in self.methods:
            head = " ".join((m.task,) + m.head_vars)
            pre = " ".join(atom_str(a) for a in m.preconditions)
            subs = " ".join(str(s) for s in m.subtasks)
            lines.append(f"; {m.id}")
            lines.append(f"(:method ({head})")
            lines.append(f"  ({pre})")
            lines.append(f"  ({subs}))")
        return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# learn-method


@dataclass
class LearnOutcome:
    status: str  # "new", "duplicate", "goals-unmet", "inconsistent"
    method: HtnMethod | None = None
    instance: IndexedMethodInstance | None = None


def _cover(b: int, e: int, task: TaskInstance, X: Sequence[IndexedMethodInstance]):
    """Left-to-right cover of [b, e] by maximal indexed instances, else primitives."""
    starts: dict[int, list[int]] = {}
    for idx, inst in enumerate(X):
        starts.setdefault(inst.begin, []).append(idx)
    items = []
    p = b
    while p <= e:
        best = None
        for idx in starts.get(p, ()):
            inst = X[idx]
            if inst.end > e or (inst.begin, inst.end) == (b, e):
                continue
            if inst.begin == b and inst.task == task:
                continue  # same task from the same state: a guaranteed loop when planning
            if best is None or inst.end > X[best].end:
                best = idx
        if best is None:
            items.append((PRIMITIVE, p))
            p += 1
        else:
            items.append((TASK, best))
            p = X[best].end + 1
    return items


def learn_method(trace: PlanTrace, task_def: AnnotatedTask, task: TaskInstance,
                 X: list[IndexedMethodInstance], b: int, e: int, library: MethodLibrary,
                 object_types: Mapping[str, str], provenance: Provenance | None = None) -> LearnOutcome:
    """Learn one method for ``task`` from the subtrace [b, e] and index it in ``X``.

    Task subtasks regress as macros whose effects are the net change over
    their span.  Passing ``b = e + 1`` learns the trivial method.
    """
    S = trace.trajectory
    if not (1 <= b <= e + 1 and e <= len(trace)):
        raise TraceCurriculumMismatchError(f"step ({b}, {e}) does not index a trace of length {len(trace)}")
    goals = task_def.ground_goals(task.args)
    if not goals <= S[e]:
        return LearnOutcome("goals-unmet")

    items = _cover(b, e, task, X)
    R = set(goals)
    for kind, ref in reversed(items):
        if kind == PRIMITIVE:
            a = trace.action(ref)
            clash = R & a.delete
            if clash:
                return _inconsistent(task, b, e, clash)
            R -= a.add
            R |= a.pre
        else:
            inst = X[ref]
            before, after = S[inst.begin - 1], S[inst.end]
            clash = R & (before - after)
            if clash:
                return _inconsistent(task, b, e, clash)
            R -= after - before
            R |= inst.preconditions
    ground_pre = frozenset(R)

    # lift: head parameters first, then objects by first appearance
    binding: dict[str, str] = {}  # object -> variable
    var_types: list[tuple[str, str]] = []
    params = []
    for (v, t), obj in zip(task_def.params, task.args):
        if obj in binding:
            # a repeated argument; keep the head parameters distinct
            params.append((v, t))
            continue
        binding[obj] = v
        params.append((v, t))
    counter = [len(task_def.params)]

    def var_for(obj: str) -> str:
        v = binding.get(obj)
        if v is None:
            v = var_name(counter[0])
            counter[0] += 1
            binding[obj] = v
            var_types.append((v, object_types.get(obj, "object")))
        return v

    subtasks = []
    ground_subtasks = []
    for kind, ref in items:
        if kind == PRIMITIVE:
            a = trace.action(ref)
            subtasks.append(Subtask(PRIMITIVE, a.schema, tuple(var_for(o) for o in a.args)))
            ground_subtasks.append((PRIMITIVE, a.schema, a.args))
        else:
            inst = X[ref]
            subtasks.append(Subtask(TASK, inst.task.name, tuple(var_for(o) for o in inst.task.args)))
            ground_subtasks.append((TASK, inst.task.name, inst.task.args))
    sorted_pre = sorted(ground_pre)
    for atom in sorted_pre:
        for o in atom[1:]:
            var_for(o)
    lifted_pre = tuple(sorted(tuple([atom[0]] + [binding[o] for o in atom[1:]]) for atom in sorted_pre))
    candidate = HtnMethod("?", task.name, tuple(params), lifted_pre, tuple(subtasks), tuple(var_types))

    stored, is_new = library.add(candidate, provenance)
    if is_new:
        mapping = {v: v for v, _ in candidate.all_vars}
    else:
        mapping = rename_mapping(candidate, stored)
    inverse = {v: o for o, v in binding.items()}
    ground_binding = tuple(sorted((mapping[v], inverse[v]) for v, _ in candidate.all_vars))
    children = tuple(ref if kind == TASK else -1 for kind, ref in items)
    inst = IndexedMethodInstance(stored.id, ground_binding, b, e, task, ground_pre, children)
    X.append(inst)
    return LearnOutcome("new" if is_new else "duplicate", stored, inst)


def _inconsistent(task: TaskInstance, b: int, e: int, clash) -> LearnOutcome:
    log.info("regression inconsistent for %s over (%d, %d): %s", task, b, e,
             ", ".join(atom_str(a) for a in sorted(clash)))
    return LearnOutcome("inconsistent")


# --------------------------------------------------------------------------
# curriculearn


@dataclass
class LearnReport:
    new_methods: list[HtnMethod] = field(default_factory=list)
    index: list[IndexedMethodInstance] = field(default_factory=list)
    step_instances: list[int | None] = field(default_factory=list)  # per step, index into X
    agenda_instances: list[int | None] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)


def curriculearn(trace: PlanTrace, curriculum: Curriculum, library: MethodLibrary,
                 object_types: Mapping[str, str], source: str = "", ordinal: int = 0,
                 learn_agenda: bool = True) -> LearnReport:
    """Learn from every curriculum step in order, growing ``library`` in place.

    With ``learn_agenda`` the goal agenda's consecutive spans are learned last,
    trivial methods included, so the problem can be re-solved hierarchically.
    """
    if curriculum.trace is not trace and len(curriculum.trace) != len(trace):
        raise TraceCurriculumMismatchError("curriculum indexes a different trace")
    for t in curriculum.tasks.values():
        library.add_task(t)
    report = LearnReport()
    X = report.index
    n = len(trace)
    for i, step in enumerate(curriculum.steps):
        if not 1 <= step.begin <= step.end <= n:
            raise TraceCurriculumMismatchError(f"step ({step.begin}, {step.end}) outside a trace of length {n}")
        task_def = curriculum.tasks[step.task.name]
        prov = Provenance(source, ordinal, i, step.begin, step.end)
        out = learn_method(trace, task_def, step.task, X, step.begin, step.end, library, object_types, prov)
        _record(report, out, i)
        report.step_instances.append(len(X) - 1 if out.instance is not None else None)
    if learn_agenda and curriculum.agenda:
        spans = agenda_spans(trace, curriculum, curriculum.agenda)
        for j, (task, b, e) in enumerate(spans):
            task_def = curriculum.tasks[task.name]
            # reuse the curriculum's own instance for this span when there is one
            existing = next((k for k, inst in enumerate(X)
                             if inst.begin == b and inst.end == e and inst.task == task), None)
            if existing is not None:
                report.agenda_instances.append(existing)
                continue
            prov = Provenance(source, ordinal, len(curriculum.steps) + j, b, e)
            out = learn_method(trace, task_def, task, X, b, e, library, object_types, prov)
            _record(report, out, len(curriculum.steps) + j)
            report.agenda_instances.append(len(X) - 1 if out.instance is not None else None)
    return report


def _record(report: LearnReport, out: LearnOutcome, i: int) -> None:
    if out.status == "new":
        report.new_methods.append(out.method)
    elif out.status in ("goals-unmet", "inconsistent"):
        report.skipped.append((i, out.status))


def agenda_spans(trace: PlanTrace, curriculum: Curriculum,
                 agenda: Sequence[TaskInstance]) -> list[tuple[TaskInstance, int, int]]:
    """Consecutive spans ending at each agenda task's last achievement.

    A task whose goals already hold gets the empty span ``(e + 1, e)``.
    """
    from htnlearn.curricula import last_achievement

    S = trace.trajectory
    out = []
    prev = 0
    for task in agenda:
        goals = curriculum.tasks[task.name].ground_goals(task.args)
        end = max((last_achievement(S, g) for g in goals), default=0)
        if end < 0:
            raise TraceCurriculumMismatchError(f"goals of {task} do not hold at the end of the trace")
        end = max(end, prev)
        out.append((task, prev + 1, end))
        prev = end
    return out
