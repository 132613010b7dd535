"""Grounding, the state-transition function and plan validation."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from htnlearn.pddl import (
    ActionSchema,
    Atom,
    DomainModel,
    PDDLSemanticError,
    ProblemModel,
    atom_str,
    names_for,
    typed_objects,
)
from htnlearn.relax import RelaxedTask

State = frozenset  # of Atom


class InapplicableActionError(Exception):
    def __init__(self, action: "GroundAction", missing: Iterable[Atom] = ()):
        self.action = action
        self.missing = tuple(sorted(missing))
        super().__init__(f"{action} is not applicable; missing {list(map(atom_str, self.missing))}")


class PlanValidationError(Exception):
    """A plan failed validation; ``step`` is 1-based, 0 means the goal check."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class StepInapplicableError(PlanValidationError):
    pass


class GoalNotAchievedError(PlanValidationError):
    def __init__(self, missing: Iterable[Atom]):
        self.missing = tuple(sorted(missing))
        super().__init__(f"goal not achieved; missing {list(map(atom_str, self.missing))}", 0)


@dataclass(frozen=True)
class GroundAction:
    schema: str
    args: tuple[str, ...]
    pre: frozenset = field(compare=False)
    add: frozenset = field(compare=False)
    delete: frozenset = field(compare=False)
    index: int = field(default=-1, compare=False)

    def __str__(self) -> str:
        return action_str(self)

    def applicable(self, state: State) -> bool:
        return self.pre <= state


def action_str(action: GroundAction, names: Mapping[str, str] | None = None) -> str:
    names = names or {}
    parts = [names.get(action.schema, action.schema)] + [names.get(a, a) for a in action.args]
    return "(!" + " ".join(parts) + ")"


def _substitute(atoms: Sequence[Atom], binding: Mapping[str, str]) -> frozenset:
    return frozenset(tuple(binding.get(t, t) for t in atom) for atom in atoms)


def instantiate(schema: ActionSchema, args: Sequence[str], index: int = -1) -> GroundAction:
    """Ground ``schema`` with ``args``.  Atoms both added and deleted stay added."""
    if len(args) != len(schema.params):
        raise PDDLSemanticError(f"{schema.name} takes {len(schema.params)} arguments, got {len(args)}")
    binding = dict(zip(schema.variables, args))
    add = _substitute(schema.add_effects, binding)
    return GroundAction(
        schema=schema.name,
        args=tuple(args),
        pre=_substitute(schema.preconditions, binding),
        add=add,
        delete=_substitute(schema.del_effects, binding) - add,
        index=index,
    )


def gamma_apply(state: State, action: GroundAction) -> State:
    """The state-transition function: ``(s - del) | add``."""
    if not action.pre <= state:
        raise InapplicableActionError(action, action.pre - state)
    return (state - action.delete) | action.add


def validate_plan(prob_or_init, plan: Sequence[GroundAction], goal: Iterable[Atom] | None = None) -> list[State]:
    """Replay ``plan`` and return the trajectory ``[s0, s1, ..., sn]``.

    ``prob_or_init`` is either a :class:`ProblemModel` (whose goal is used when
    ``goal`` is None) or an initial state.
    """
    if isinstance(prob_or_init, ProblemModel):
        state = frozenset(prob_or_init.init)
        if goal is None:
            goal = prob_or_init.goal
    else:
        state = frozenset(prob_or_init)
    trajectory = [state]
    for k, action in enumerate(plan, start=1):
        if not action.pre <= state:
            raise StepInapplicableError(
                f"step {k} {action} is inapplicable; missing "
                f"{[atom_str(a) for a in sorted(action.pre - state)]}", k)
        state = (state - action.delete) | action.add
        trajectory.append(state)
    if goal is not None:
        missing = frozenset(goal) - state
        if missing:
            raise GoalNotAchievedError(missing)
    return trajectory


# --------------------------------------------------------------------------
# grounding


class TypeIndex:
    """Objects grouped by every type they belong to."""

    def __init__(self, dom: DomainModel, objects: Mapping[str, str]):
        self.dom = dom
        self.objects = dict(objects)
        self._by_type: dict[str, tuple[str, ...]] = {}

    def of_type(self, type_name: str) -> tuple[str, ...]:
        found = self._by_type.get(type_name)
        if found is None:
            found = tuple(sorted(o for o, t in self.objects.items() if self.dom.is_subtype(t, type_name)))
            self._by_type[type_name] = found
        return found

    def has_type(self, obj: str, type_name: str) -> bool:
        t = self.objects.get(obj)
        return t is not None and self.dom.is_subtype(t, type_name)


def _bindings(schema: ActionSchema, facts: Mapping[str, Sequence[Atom]], types: TypeIndex):
    """Every typed binding of the schema's parameters whose preconditions are in ``facts``."""
    var_type = dict(schema.params)
    pre = list(schema.preconditions)

    def extend(i: int, binding: dict):
        if i == len(pre):
            free = [v for v in schema.variables if v not in binding]
            pools = [types.of_type(var_type[v]) for v in free]
            for combo in itertools.product(*pools):
                full = dict(binding)
                full.update(zip(free, combo))
                yield tuple(full[v] for v in schema.variables)
            return
        pattern = pre[i]
        for fact in facts.get(pattern[0], ()):
            if len(fact) != len(pattern):
                continue
            new = binding
            ok = True
            for term, value in zip(pattern[1:], fact[1:]):
                if term.startswith("?"):
                    bound = new.get(term)
                    if bound is None:
                        if not types.has_type(value, var_type[term]):
                            ok = False
                            break
                        if new is binding:
                            new = dict(binding)
                        new[term] = value
                    elif bound != value:
                        ok = False
                        break
                elif term != value:
                    ok = False
                    break
            if ok:
                yield from extend(i + 1, new)

    yield from extend(0, {})


class Grounding:
    """Ground atoms and actions of one problem, with dense integer ids.

    Only actions reachable under delete relaxation from the initial state are
    kept.  Atoms are numbered in sorted order, actions sorted by (schema, args).
    """

    def __init__(self, dom: DomainModel, prob: ProblemModel):
        self.dom = dom
        self.prob = prob
        self.types = TypeIndex(dom, typed_objects(dom, prob))
        self.names = names_for(prob, dom)
        reachable, keys = _relaxed_fixpoint(dom, prob, self.types)
        self.atoms: tuple[Atom, ...] = tuple(sorted(reachable | prob.goal))
        self.atom_id: dict[Atom, int] = {a: i for i, a in enumerate(self.atoms)}
        actions = []
        for idx, (schema_name, args) in enumerate(sorted(keys)):
            actions.append(instantiate(dom.action_table[schema_name], args, idx))
        self.actions: tuple[GroundAction, ...] = tuple(actions)
        self.action_index = {(a.schema, a.args): a for a in self.actions}
        aid = self.atom_id
        self.pre_bits = [self._bits(a.pre) for a in actions]
        self.add_bits = [self._bits(a.add) for a in actions]
        self.del_bits = [self._bits(a.delete) for a in actions]
        self.keep_bits = [~d for d in self.del_bits]
        self.relaxed = RelaxedTask(
            n_atoms=len(self.atoms),
            pre=[tuple(sorted(aid[p] for p in a.pre)) for a in actions],
            add=[tuple(sorted(aid[p] for p in a.add)) for a in actions],
        )

    def _bits(self, atoms: Iterable[Atom]) -> int:
        bits = 0
        for atom in atoms:
            bits |= 1 << self.atom_id[atom]
        return bits

    def encode(self, atoms: Iterable[Atom]) -> int:
        """Bitset of ``atoms``; atoms unknown to the grounding are ignored."""
        aid = self.atom_id
        bits = 0
        for atom in atoms:
            i = aid.get(atom)
            if i is not None:
                bits |= 1 << i
        return bits

    def decode(self, bits: int) -> State:
        atoms = self.atoms
        out = []
        while bits:
            low = bits & -bits
            out.append(atoms[low.bit_length() - 1])
            bits ^= low
        return frozenset(out)

    def ids(self, atoms: Iterable[Atom]) -> list[int]:
        return [self.atom_id[a] for a in atoms if a in self.atom_id]

    @cached_property
    def init_bits(self) -> int:
        return self.encode(self.prob.init)

    @cached_property
    def achievers(self) -> dict[Atom, tuple[GroundAction, ...]]:
        table: dict[Atom, list[GroundAction]] = {}
        for a in self.actions:
            for p in a.add:
                table.setdefault(p, []).append(a)
        return {p: tuple(v) for p, v in table.items()}

    def applicable(self, bits: int) -> list[GroundAction]:
        pre = self.pre_bits
        return [a for a in self.actions if pre[a.index] & bits == pre[a.index]]

    def successor(self, bits: int, action: GroundAction) -> int:
        return (bits & self.keep_bits[action.index]) | self.add_bits[action.index]

    def action(self, schema: str, args: Sequence[str]) -> GroundAction:
        """Look up (or instantiate, for pruned actions) a ground action."""
        key = (schema.lower(), tuple(a.lower() for a in args))
        found = self.action_index.get(key)
        if found is not None:
            return found
        if key[0] not in self.dom.action_table:
            raise PDDLSemanticError(f"unknown action {schema}")
        return instantiate(self.dom.action_table[key[0]], key[1])

    def atom_text(self, atom: Atom) -> str:
        return atom_str(atom, self.names)

    def action_text(self, action: GroundAction) -> str:
        return action_str(action, self.names)


def _relaxed_fixpoint(dom: DomainModel, prob: ProblemModel, types: TypeIndex):
    reachable = set(prob.init)
    keys: set[tuple[str, tuple[str, ...]]] = set()
    changed = True
    while changed:
        changed = False
        facts: dict[str, list[Atom]] = {}
        for atom in reachable:
            facts.setdefault(atom[0], []).append(atom)
        for schema in dom.action_schemas:
            for args in _bindings(schema, facts, types):
                if (schema.name, args) in keys:
                    continue
                keys.add((schema.name, args))
                binding = dict(zip(schema.variables, args))
                for atom in schema.add_effects:
                    ground = tuple(binding.get(t, t) for t in atom)
                    if ground not in reachable:
                        reachable.add(ground)
                        changed = True
    return frozenset(reachable), keys


def ground_actions(dom: DomainModel, prob: ProblemModel) -> tuple[GroundAction, ...]:
    """Relaxed-reachable ground actions, sorted by (schema name, args)."""
    return Grounding(dom, prob).actions


# --------------------------------------------------------------------------
# plan files

_PLAN_LINE_RE = re.compile(r"^\(\s*!?\s*([^\s()]+)((?:\s+[^\s()]+)*)\s*\)$")


def parse_plan(text: str, grounding: Grounding) -> list[GroundAction]:
    """Read one ``(!name arg ...)`` action per line; ``;`` starts a comment."""
    plan = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        m = _PLAN_LINE_RE.match(line)
        if not m:
            raise ValueError(f"line {lineno}: malformed plan step {raw!r}")
        plan.append(parse_action_text(line, grounding))
    return plan


def parse_action_text(text: str, grounding: Grounding) -> GroundAction:
    m = _PLAN_LINE_RE.match(text.strip())
    if not m:
        raise ValueError(f"malformed action {text!r}")
    return grounding.action(m.group(1), m.group(2).split())


def format_plan(plan: Sequence[GroundAction], names: Mapping[str, str] | None = None) -> str:
    return "".join(action_str(a, names) + "\n" for a in plan)
