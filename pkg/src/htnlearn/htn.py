"""Total-order HTN planning over a learned method library."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from htnlearn.curricula import AnnotatedTask, TaskInstance, TaskRegistry, task_str
from htnlearn.ground import GroundAction, TypeIndex, instantiate, validate_plan
from htnlearn.learn import PRIMITIVE, HtnMethod, IndexedMethodInstance, MethodLibrary
from htnlearn.pddl import Atom, DomainModel, ProblemModel, typed_objects


class HtnError(Exception):
    pass


class NoSolutionError(HtnError):
    pass


class DepthLimitExceededError(HtnError):
    pass


class DecompositionBudgetExceededError(HtnError):
    pass


@dataclass(frozen=True)
class HtnConfig:
    max_decompositions: int = 100_000
    depth_limit: int = 500
    iterative_deepening: bool = True
    initial_depth: int = 4
    deepening: str = "global"

    def __post_init__(self):
        if self.deepening not in ("global", "per-task"):
            raise ValueError("deepening must be 'global' or 'per-task'")
        if self.max_decompositions < 1 or self.depth_limit < 1:
            raise ValueError("max_decompositions and depth_limit must be positive")


@dataclass
class HierarchicalProblem:
    domain: DomainModel
    library: MethodLibrary
    init: frozenset
    tasks: list[TaskInstance]
    objects: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for t in self.tasks:
            if t.name not in self.library.tasks:
                raise HtnError(f"unknown task {t.name}")

    def root_goals(self) -> frozenset:
        out = set()
        for t in self.tasks:
            out |= self.library.tasks[t.name].ground_goals(t.args)
        return frozenset(out)


@dataclass
class DecompositionNode:
    task: TaskInstance | None = None
    action: GroundAction | None = None
    method: str | None = None
    binding: dict[str, str] = field(default_factory=dict)
    children: list["DecompositionNode"] = field(default_factory=list)

    def leaves(self) -> list[GroundAction]:
        if self.action is not None:
            return [self.action]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def to_json(self, names: Mapping[str, str] | None = None) -> dict:
        names = names or {}
        if self.action is not None:
            return {"action": "(!" + " ".join(names.get(t, t) for t in (self.action.schema,) + self.action.args) + ")"}
        return {
            "task": task_str(self.task, names),
            "method": self.method,
            "binding": {k: names.get(v, v) for k, v in sorted(self.binding.items())},
            "children": [c.to_json(names) for c in self.children],
        }


@dataclass
class DecompositionTrace:
    roots: list[DecompositionNode]

    def leaves(self) -> list[GroundAction]:
        out = []
        for r in self.roots:
            out.extend(r.leaves())
        return out

    def to_json(self, names: Mapping[str, str] | None = None) -> dict:
        return {"roots": [r.to_json(names) for r in self.roots]}


@dataclass
class HtnStats:
    decompositions: int = 0
    max_depth: int = 0


@dataclass
class HtnResult:
    plan: list[GroundAction]
    trace: DecompositionTrace
    stats: HtnStats


# --------------------------------------------------------------------------
# binding


def applicable_instances(m: HtnMethod, task: TaskInstance, state: Iterable[Atom],
                         types: TypeIndex) -> list[dict[str, str]]:
    """All groundings of ``m`` for ``task`` whose preconditions hold in ``state``, sorted."""
    if m.task != task.name or len(m.params) != len(task.args):
        return []
    binding: dict[str, str] = {}
    for (v, t), obj in zip(m.params, task.args):
        if not types.has_type(obj, t):
            return []
        if binding.get(v, obj) != obj:
            return []
        binding[v] = obj
    var_type = dict(m.all_vars)
    by_pred: dict[str, list[Atom]] = {}
    for atom in state:
        by_pred.setdefault(atom[0], []).append(atom)
    pending = list(m.preconditions)
    results: list[dict[str, str]] = []

    def unbound(atom: Atom, b: Mapping[str, str]) -> int:
        return sum(1 for t in atom[1:] if t not in b)

    def match(rest: list[Atom], b: dict[str, str]):
        if not rest:
            free = [v for v, _ in m.all_vars if v not in b]
            _enumerate(free, b)
            return
        # most constrained atom first
        k = min(range(len(rest)), key=lambda i: unbound(rest[i], b))
        atom = rest[k]
        others = rest[:k] + rest[k + 1:]
        for fact in by_pred.get(atom[0], ()):
            if len(fact) != len(atom):
                continue
            nb = b
            ok = True
            for term, value in zip(atom[1:], fact[1:]):
                bound = nb.get(term)
                if bound is None:
                    if not types.has_type(value, var_type[term]):
                        ok = False
                        break
                    if nb is b:
                        nb = dict(b)
                    nb[term] = value
                elif bound != value:
                    ok = False
                    break
            if ok:
                match(others, nb)

    def _enumerate(free: list[str], b: dict[str, str]):
        if not free:
            results.append(dict(b))
            return
        v = free[0]
        for obj in types.of_type(var_type[v]):
            b2 = dict(b)
            b2[v] = obj
            _enumerate(free[1:], b2)

    match(pending, binding)
    order = [v for v, _ in m.all_vars]
    unique = {tuple(r[v] for v in order): r for r in results}
    return [unique[k] for k in sorted(unique)]


# --------------------------------------------------------------------------
# planner


class _Stream:
    """Lazily extended, memoized list of a task's distinct end states."""

    __slots__ = ("results", "source", "truncated")

    def __init__(self, source):
        self.results: list[tuple[frozenset, tuple[GroundAction, ...], DecompositionNode]] = []
        self.source = source
        self.truncated = False

    def get(self, i: int):
        while len(self.results) <= i:
            if self.source is None:
                return None
            try:
                self.results.append(next(self.source))
            except StopIteration:
                self.source = None
                return None
        return self.results[i]

    def __iter__(self):
        i = 0
        while True:
            item = self.get(i)
            if item is None:
                return
            yield item
            i += 1


def htn_solve(hp: HierarchicalProblem, cfg: HtnConfig | None = None) -> HtnResult:
    """Depth-first, left-to-right decomposition with backtracking.

    Methods are tried in library order and bindings in sorted order.  A
    compound task succeeds only if its annotated goals hold once its subtasks
    are done, and the root goals must hold at the end.

    Each (task, state, remaining depth) gets one lazily extended stream of the
    distinct states the task can finish in, shared by every place the search
    meets it.  Two decompositions that reach the same state at the same point
    leave the rest of the search unchanged, so the later one is dropped.

    The nesting cap grows one level at a time up to ``depth_limit`` and stops
    once a round is not cut short by it.  With ``deepening="global"`` a round
    searches the whole task list under one cap, so a root task finishing in an
    awkward state is revisited before later tasks dig deep; ``"per-task"``
    deepens each root task separately.
    """
    cfg = cfg or HtnConfig()
    dom, lib = hp.domain, hp.library
    types = TypeIndex(dom, hp.objects)
    stats = HtnStats()
    action_cache: dict[tuple[str, tuple[str, ...]], GroundAction] = {}
    streams: dict[tuple[TaskInstance, frozenset, int], _Stream] = {}
    root_goals = hp.root_goals()

    def ground_action(name: str, args: tuple[str, ...]) -> GroundAction:
        key = (name, args)
        a = action_cache.get(key)
        if a is None:
            a = action_cache[key] = instantiate(dom.action_table[name], args)
        return a

    def stream(task: TaskInstance, state: frozenset, budget: int, depth: int) -> _Stream | None:
        """``budget`` counts the nesting levels still allowed, this task included."""
        if budget <= 0:
            return None
        key = (task, state, budget)
        st = streams.get(key)
        if st is None:
            st = streams[key] = _Stream(None)
            st.source = produce(st, task, state, budget, depth)
        return st

    def produce(st: _Stream, task: TaskInstance, state: frozenset, budget: int, depth: int):
        stats.max_depth = max(stats.max_depth, depth)
        goals = lib.tasks[task.name].ground_goals(task.args)
        finished: set[frozenset] = set()
        for m in lib.by_task(task.name):
            for b in applicable_instances(m, task, state, types):
                stats.decompositions += 1
                if stats.decompositions > cfg.max_decompositions:
                    raise DecompositionBudgetExceededError(
                        f"decomposition budget {cfg.max_decompositions} exhausted")
                subs = [(sub.kind, sub.name, tuple(b[v] for v in sub.args)) for sub in m.subtasks]
                seen: list[set] = [set() for _ in subs]
                for t, pl, ch in expand(st, subs, 0, state, seen, budget, depth):
                    if t not in finished and goals <= t:
                        finished.add(t)
                        yield t, pl, DecompositionNode(task=task, method=m.id, binding=dict(b), children=ch)

    def expand(owner: _Stream, subs, j: int, state: frozenset, seen: list[set], budget: int, depth: int):
        if j == len(subs):
            yield state, (), []
            return
        if state in seen[j]:
            return  # this position was already continued from this state
        seen[j].add(state)
        kind, name, args = subs[j]
        if kind == PRIMITIVE:
            a = ground_action(name, args)
            if a.pre <= state:
                leaf = DecompositionNode(action=a)
                for t, pl, ch in expand(owner, subs, j + 1, (state - a.delete) | a.add, seen, budget, depth):
                    yield t, (a,) + pl, [leaf] + ch
            return
        st = stream(TaskInstance(name, args), state, budget - 1, depth + 1)
        if st is None:
            owner.truncated = True
            return
        for mid, pl1, node in st:
            for t, pl2, ch in expand(owner, subs, j + 1, mid, seen, budget, depth):
                yield t, pl1 + pl2, [node] + ch
        if st.truncated:
            owner.truncated = True

    if cfg.iterative_deepening:
        caps = range(max(1, min(cfg.initial_depth, cfg.depth_limit)), cfg.depth_limit + 1)
    else:
        caps = range(cfg.depth_limit, cfg.depth_limit + 1)
    failed: set = set()
    cut = [False]

    def search(i: int, state: frozenset, round_cap: int | None):
        if i == len(hp.tasks):
            return [] if root_goals <= state else None
        if (i, state) in failed:
            return None
        tried: set[frozenset] = set()
        for cap in (caps if round_cap is None else (round_cap,)):
            st = stream(hp.tasks[i], state, cap, 1)
            for t, pl, node in st:
                if t in tried:
                    continue
                tried.add(t)
                rest = search(i + 1, t, round_cap)
                if rest is not None:
                    return [(pl, node)] + rest
            if not st.truncated:
                break  # nothing was cut by the depth cap: deeper rounds cannot help
        else:
            cut[0] = True
        failed.add((i, state))
        return None

    def run():
        if cfg.deepening == "per-task":
            return search(0, frozenset(hp.init), None)
        for cap in caps:
            failed.clear()
            cut[0] = False
            got = search(0, frozenset(hp.init), cap)
            if got is not None or not cut[0]:
                return got
        return None

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 50_000))
    try:
        got = run()
    finally:
        sys.setrecursionlimit(limit)
    if got is not None:
        plan = [a for pl, _ in got for a in pl]
        return HtnResult(plan, DecompositionTrace([node for _, node in got]), stats)
    if cut[0]:
        raise DepthLimitExceededError(f"no plan found within depth {cfg.depth_limit}")
    raise NoSolutionError("decomposition space exhausted")


def decompose_instance(dom: DomainModel, library: MethodLibrary, X: Sequence[IndexedMethodInstance],
                       idx: int, state: frozenset) -> HtnResult:
    """Replay X[idx] from ``state``, refining every task by the instance it was learned from.

    Raises :class:`NoSolutionError` if a step is inapplicable or a task's
    goals fail to hold.
    """
    stats = HtnStats()

    def replay(i: int, s: frozenset, depth: int):
        inst = X[i]
        m = library[inst.method]
        b = inst.grounding
        if not {tuple(b.get(t, t) for t in a) for a in m.preconditions} <= s:
            raise NoSolutionError(f"method {m.id} is not applicable for {inst.task}")
        stats.decompositions += 1
        stats.max_depth = max(stats.max_depth, depth)
        node = DecompositionNode(task=inst.task, method=m.id, binding=dict(b))
        plan: list[GroundAction] = []
        for sub, child in zip(m.subtasks, inst.children):
            args = tuple(b[v] for v in sub.args)
            if sub.kind == PRIMITIVE:
                a = instantiate(dom.action_table[sub.name], args)
                if not a.pre <= s:
                    raise NoSolutionError(f"{a} is inapplicable while replaying {inst.task}")
                s = (s - a.delete) | a.add
                plan.append(a)
                node.children.append(DecompositionNode(action=a))
            else:
                if X[child].task != TaskInstance(sub.name, args):
                    raise NoSolutionError(f"index entry {child} does not refine {sub}")
                s, sub_plan, sub_node = replay(child, s, depth + 1)
                plan.extend(sub_plan)
                node.children.append(sub_node)
        if not library.tasks[inst.task.name].ground_goals(inst.task.args) <= s:
            raise NoSolutionError(f"goals of {inst.task} do not hold after replay")
        return s, plan, node

    _, plan, node = replay(idx, frozenset(state), 1)
    return HtnResult(plan, DecompositionTrace([node]), stats)


# --------------------------------------------------------------------------
# problems


def equivalent_hierarchical_problem(dom: DomainModel, prob: ProblemModel, library: MethodLibrary,
                                    agenda: Sequence[TaskInstance] | None = None,
                                    registry: TaskRegistry | None = None) -> HierarchicalProblem:
    """Wrap the problem's goal as root annotated tasks, one per goal atom."""
    registry = registry or TaskRegistry(dom, library.tasks.values())
    if agenda is None:
        agenda = root_tasks_from_goal(dom, prob, registry)
    for t in agenda:
        if t.name not in library.tasks:
            library.add_task(registry[t.name])
    return HierarchicalProblem(dom, library, frozenset(prob.init), list(agenda), typed_objects(dom, prob))


def root_tasks_from_goal(dom: DomainModel, prob: ProblemModel, registry: TaskRegistry,
                         order: Sequence[Atom] | None = None) -> list[TaskInstance]:
    """One task per goal atom, in ``order`` or the problem's goal ordering."""
    if order is None:
        from htnlearn.ground import Grounding
        from htnlearn.landmark import goal_order

        order = goal_order(Grounding(dom, prob))
    return [registry.make_annotated_task(a)[1] for a in order]


def validate_htn_result(hp: HierarchicalProblem, result: HtnResult) -> None:
    validate_plan(hp.init, result.plan, hp.root_goals())
    if result.trace.leaves() != result.plan:
        raise HtnError("decomposition leaves disagree with the plan")
