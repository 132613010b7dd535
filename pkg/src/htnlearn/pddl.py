"""Reader and printer for the STRIPS + typing fragment of PDDL.

Symbols are case-insensitive: everything is stored lower-cased and a
``display`` table remembers the first spelling seen, which the printers use.
Atoms are plain tuples ``(predicate, arg1, ..., argN)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence, Union

Atom = tuple  # (predicate, *args), all lower case

ROOT_TYPE = "object"
SUPPORTED_REQUIREMENTS = frozenset({":strips", ":typing"})


class PDDLError(Exception):
    """Base class for every error raised while reading PDDL."""


class PDDLSyntaxError(PDDLError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnsupportedRequirementError(PDDLError):
    def __init__(self, keyword: str):
        super().__init__(f"unsupported requirement {keyword}")
        self.keyword = keyword


class PDDLSemanticError(PDDLError):
    """Undeclared symbols, ill-typed atoms and similar model errors."""


# --------------------------------------------------------------------------
# s-expression reader


class Sym(str):
    """A string token that remembers where it came from."""

    line: int
    column: int

    def __new__(cls, text: str, line: int = 0, column: int = 0):
        obj = super().__new__(cls, text)
        obj.line = line
        obj.column = column
        return obj


class SList(list):
    line: int = 0
    column: int = 0


SExpr = Union[Sym, SList]

_TOKEN_RE = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")


def read_sexprs(text: str) -> list[SExpr]:
    """Tokenize ``text`` into nested lists of :class:`Sym`."""
    stack: list[SList] = [SList()]
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        tok = m.group(0)
        col = pos - line_start + 1
        if tok == "(":
            lst = SList()
            lst.line, lst.column = line, col
            stack[-1].append(lst)
            stack.append(lst)
        elif tok == ")":
            if len(stack) == 1:
                raise PDDLSyntaxError("unbalanced ')'", line, col)
            stack.pop()
        elif not tok[0].isspace() and tok[0] != ";":
            stack[-1].append(Sym(tok, line, col))
        newlines = tok.count("\n")
        if newlines:
            line += newlines
            line_start = pos + tok.rfind("\n") + 1
        pos = m.end()
    if len(stack) != 1:
        open_list = stack[-1]
        raise PDDLSyntaxError("unclosed '('", open_list.line, open_list.column)
    return stack[0]


def _where(node) -> tuple[int, int]:
    return getattr(node, "line", 0), getattr(node, "column", 0)


def _syntax(message: str, node) -> PDDLSyntaxError:
    return PDDLSyntaxError(message, *_where(node))


def _expect_list(node, what: str) -> SList:
    if not isinstance(node, list):
        raise _syntax(f"expected {what}, got {node!r}", node)
    return node


def _expect_sym(node, what: str) -> Sym:
    if isinstance(node, list):
        raise _syntax(f"expected {what}, got a list", node)
    return node


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class PredicateSchema:
    name: str
    params: tuple[tuple[str, str], ...]

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[tuple[str, str], ...]
    preconditions: tuple[Atom, ...]
    add_effects: tuple[Atom, ...]
    del_effects: tuple[Atom, ...]

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.params)


@dataclass(frozen=True)
class DomainModel:
    name: str
    requirements: tuple[str, ...]
    types: tuple[tuple[str, str], ...]  # (type, parent); the root is implicit
    constants: tuple[tuple[str, str], ...]
    predicates: tuple[PredicateSchema, ...]
    action_schemas: tuple[ActionSchema, ...]
    display: frozenset = frozenset()

    @cached_property
    def type_parent(self) -> dict[str, str]:
        return dict(self.types)

    @cached_property
    def predicate_table(self) -> dict[str, PredicateSchema]:
        return {p.name: p for p in self.predicates}

    @cached_property
    def action_table(self) -> dict[str, ActionSchema]:
        return {a.name: a for a in self.action_schemas}

    @cached_property
    def display_names(self) -> dict[str, str]:
        return dict(self.display)

    def is_subtype(self, sub: str, sup: str) -> bool:
        parents = self.type_parent
        t = sub
        while True:
            if t == sup:
                return True
            if t == ROOT_TYPE:
                return False
            t = parents.get(t, ROOT_TYPE)

    def all_types(self) -> list[str]:
        return [ROOT_TYPE] + [t for t, _ in self.types]


@dataclass(frozen=True)
class ProblemModel:
    name: str
    domain_name: str
    objects: tuple[tuple[str, str], ...]
    init: frozenset
    goal: frozenset
    display: frozenset = frozenset()

    @cached_property
    def object_types(self) -> dict[str, str]:
        return dict(self.objects)

    @cached_property
    def display_names(self) -> dict[str, str]:
        return dict(self.display)


def typed_objects(dom: DomainModel, prob: ProblemModel) -> dict[str, str]:
    """Objects of the problem plus the domain constants, mapped to their type."""
    table = dict(dom.constants)
    table.update(prob.objects)
    return table


def names_for(*models) -> dict[str, str]:
    """Merged display table for printing atoms of the given models."""
    table: dict[str, str] = {}
    for model in models:
        if model is None:
            continue
        for k, v in model.display:
            table.setdefault(k, v)
    return table


def atom_str(atom: Sequence[str], names: Mapping[str, str] | None = None) -> str:
    names = names or {}
    return "(" + " ".join(names.get(t, t) for t in atom) + ")"


_ATOM_TEXT_RE = re.compile(r"^\s*\(\s*(.*?)\s*\)\s*$")


def parse_atom(text: str) -> Atom:
    """Parse ``"(on A B)"`` into ``("on", "a", "b")``."""
    m = _ATOM_TEXT_RE.match(text)
    if not m or not m.group(1):
        raise PDDLSyntaxError(f"malformed atom {text!r}", 1, 1)
    return tuple(t.lower() for t in m.group(1).split())


# --------------------------------------------------------------------------
# parsing


class _Display:
    def __init__(self):
        self.table: dict[str, str] = {}

    def note(self, sym: str) -> str:
        low = sym.lower()
        self.table.setdefault(low, str(sym))
        return low


def _parse_typed_list(items: Sequence, display: _Display, what: str) -> list[tuple[str, str, Sym]]:
    """Parse ``a b - t c`` into [(a, t), (b, t), (c, object)]."""
    out: list[tuple[str, str, Sym]] = []
    pending: list[Sym] = []
    i = 0
    while i < len(items):
        tok = _expect_sym(items[i], what)
        if tok == "-":
            if i + 1 >= len(items):
                raise _syntax("type expected after '-'", tok)
            type_tok = items[i + 1]
            if isinstance(type_tok, list):
                head = type_tok[0].lower() if type_tok and not isinstance(type_tok[0], list) else ""
                if head == "either":
                    raise UnsupportedRequirementError("either")
                raise _syntax("type name expected", type_tok)
            if not pending:
                raise _syntax("'-' without preceding names", tok)
            t = type_tok.lower() if type_tok.lower() == ROOT_TYPE else display.note(type_tok)
            out.extend((name, t, sym) for name, sym in ((display.note(p), p) for p in pending))
            pending = []
            i += 2
        else:
            pending.append(tok)
            i += 1
    out.extend((display.note(p), ROOT_TYPE, p) for p in pending)
    return out


def _atom_list(node, display: _Display, what: str, allow_negation: bool) -> tuple[list[Atom], list[Atom]]:
    """Flatten a conjunction into positive and negated atoms."""
    node = _expect_list(node, what)
    if not node:
        return [], []
    head = node[0]
    if isinstance(head, list):
        raise _syntax(f"malformed {what}", node)
    low = head.lower()
    if low == "and":
        pos: list[Atom] = []
        neg: list[Atom] = []
        for child in node[1:]:
            p, n = _atom_list(child, display, what, allow_negation)
            pos.extend(p)
            neg.extend(n)
        return pos, neg
    if low == "not":
        if not allow_negation:
            raise UnsupportedRequirementError(":negative-preconditions")
        if len(node) != 2:
            raise _syntax("'not' takes one argument", node)
        p, n = _atom_list(node[1], display, what, False)
        if n or len(p) != 1:
            raise _syntax("'not' must wrap a single atom", node)
        return [], p
    if low in ("or", "imply", "exists", "forall"):
        raise UnsupportedRequirementError(":adl" if low != "exists" else ":existential-preconditions")
    if low == "when":
        raise UnsupportedRequirementError(":conditional-effects")
    if low == "=":
        raise UnsupportedRequirementError(":equality")
    if low in ("increase", "decrease", "assign", "scale-up", "scale-down", "<", ">", "<=", ">="):
        raise UnsupportedRequirementError(":fluents")
    terms = []
    for t in node:
        if isinstance(t, list):
            raise _syntax("nested term in atom", t)
        terms.append(display.note(t))
    return [tuple(terms)], []


def _dedupe(seq: Iterable[Atom]) -> tuple[Atom, ...]:
    return tuple(dict.fromkeys(seq))


def _check_requirements(node: SList) -> tuple[str, ...]:
    reqs = []
    for tok in node[1:]:
        tok = _expect_sym(tok, "requirement")
        low = tok.lower()
        if low not in SUPPORTED_REQUIREMENTS:
            raise UnsupportedRequirementError(low)
        reqs.append(low)
    return tuple(reqs)


def _check_define(tree: list[SExpr], kind: str) -> SList:
    if len(tree) != 1:
        node = tree[1] if len(tree) > 1 else None
        line, col = _where(node) if node is not None else (1, 1)
        raise PDDLSyntaxError(f"expected exactly one (define ...) form", line, col)
    root = _expect_list(tree[0], "(define ...)")
    if not root or isinstance(root[0], list) or root[0].lower() != "define":
        raise _syntax("expected (define ...)", root)
    if len(root) < 2:
        raise _syntax(f"missing ({kind} <name>)", root)
    header = _expect_list(root[1], f"({kind} <name>)")
    if len(header) != 2 or isinstance(header[0], list) or header[0].lower() != kind:
        raise _syntax(f"expected ({kind} <name>)", header)
    return root


def parse_domain(text: str) -> DomainModel:
    """Parse a PDDL domain restricted to :strips and :typing."""
    display = _Display()
    root = _check_define(read_sexprs(text), "domain")
    name = display.note(_expect_sym(root[1][1], "domain name"))
    requirements: tuple[str, ...] = ()
    type_parent: dict[str, str] = {}
    constants: list[tuple[str, str]] = []
    predicates: dict[str, PredicateSchema] = {}
    actions: dict[str, ActionSchema] = {}
    declared_types = {ROOT_TYPE}
    used_types: list[tuple[str, Sym]] = []

    for section in root[2:]:
        section = _expect_list(section, "domain section")
        if not section or isinstance(section[0], list):
            raise _syntax("malformed domain section", section)
        key = section[0].lower()
        if key == ":requirements":
            requirements = _check_requirements(section)
        elif key == ":types":
            for tname, parent, sym in _parse_typed_list(section[1:], display, "type"):
                if tname == ROOT_TYPE:
                    continue
                if tname in type_parent and type_parent[tname] != parent:
                    raise PDDLSemanticError(f"type {sym} declared with two parents")
                type_parent[tname] = parent
                declared_types.add(tname)
            for parent in list(type_parent.values()):
                if parent not in declared_types:
                    # parents named only after '-' are implicitly declared
                    type_parent[parent] = ROOT_TYPE
                    declared_types.add(parent)
        elif key == ":constants":
            for cname, ctype, sym in _parse_typed_list(section[1:], display, "constant"):
                used_types.append((ctype, sym))
                constants.append((cname, ctype))
        elif key == ":predicates":
            for decl in section[1:]:
                decl = _expect_list(decl, "predicate declaration")
                if not decl or isinstance(decl[0], list):
                    raise _syntax("malformed predicate declaration", decl)
                pname = display.note(decl[0])
                if pname in predicates:
                    raise PDDLSemanticError(f"predicate {decl[0]} declared twice")
                params = _parse_typed_list(decl[1:], display, "parameter")
                _check_vars(params, decl)
                used_types.extend((t, s) for _, t, s in params)
                predicates[pname] = PredicateSchema(pname, tuple((v, t) for v, t, _ in params))
        elif key == ":action":
            action = _parse_action(section, display, used_types)
            if action.name in actions:
                raise PDDLSemanticError(f"action {section[1]} declared twice")
            actions[action.name] = action
        elif key in (":functions", ":durative-action", ":derived"):
            raise UnsupportedRequirementError(
                {":functions": ":fluents", ":durative-action": ":durative-actions",
                 ":derived": ":derived-predicates"}[key])
        else:
            raise _syntax(f"unknown domain section {section[0]}", section)

    for tname, sym in used_types:
        if tname not in declared_types:
            raise PDDLSemanticError(f"undeclared type {sym} (line {sym.line})")
    _check_type_cycles(type_parent)
    if len({c for c, _ in constants}) != len(constants):
        raise PDDLSemanticError("duplicate constant")

    dom = DomainModel(
        name=name,
        requirements=requirements,
        types=tuple(type_parent.items()),
        constants=tuple(constants),
        predicates=tuple(predicates.values()),
        action_schemas=tuple(actions.values()),
        display=frozenset(display.table.items()),
    )
    for action in dom.action_schemas:
        _check_action(dom, action)
    return dom


def _check_vars(params, node) -> None:
    names = [v for v, _, _ in params]
    for v, _, sym in params:
        if not v.startswith("?"):
            raise _syntax(f"parameter {sym} must start with '?'", sym)
    if len(set(names)) != len(names):
        raise _syntax("duplicate parameter variable", node)


def _parse_action(section: SList, display: _Display, used_types: list) -> ActionSchema:
    if len(section) < 2:
        raise _syntax("action name expected", section)
    name = display.note(_expect_sym(section[1], "action name"))
    params: list = []
    pre: list[Atom] = []
    add: list[Atom] = []
    dele: list[Atom] = []
    i = 2
    while i < len(section):
        key = _expect_sym(section[i], "action keyword").lower()
        if i + 1 >= len(section):
            raise _syntax(f"value expected after {key}", section[i])
        value = section[i + 1]
        if key == ":parameters":
            params = _parse_typed_list(_expect_list(value, "parameter list"), display, "parameter")
            _check_vars(params, value)
            used_types.extend((t, s) for _, t, s in params)
        elif key == ":precondition":
            pos, _ = _atom_list(value, display, "precondition", allow_negation=False)
            pre = pos
        elif key == ":effect":
            add, dele = _atom_list(value, display, "effect", allow_negation=True)
        else:
            raise _syntax(f"unknown action keyword {section[i]}", section[i])
        i += 2
    return ActionSchema(
        name=name,
        params=tuple((v, t) for v, t, _ in params),
        preconditions=_dedupe(pre),
        add_effects=_dedupe(add),
        del_effects=_dedupe(dele),
    )


def _check_type_cycles(type_parent: Mapping[str, str]) -> None:
    for t in type_parent:
        seen = {t}
        cur = type_parent.get(t, ROOT_TYPE)
        while cur != ROOT_TYPE:
            if cur in seen:
                raise PDDLSemanticError(f"cyclic type hierarchy through {t}")
            seen.add(cur)
            cur = type_parent.get(cur, ROOT_TYPE)


def _check_action(dom: DomainModel, action: ActionSchema) -> None:
    var_types = dict(action.params)
    consts = dict(dom.constants)
    for atom in action.preconditions + action.add_effects + action.del_effects:
        schema = dom.predicate_table.get(atom[0])
        if schema is None:
            raise PDDLSemanticError(f"undeclared predicate {atom[0]} in action {action.name}")
        if len(atom) - 1 != schema.arity:
            raise PDDLSemanticError(f"wrong arity for {atom[0]} in action {action.name}")
        for term, (_, ptype) in zip(atom[1:], schema.params):
            if term.startswith("?"):
                if term not in var_types:
                    raise PDDLSemanticError(f"free variable {term} in action {action.name}")
                ttype = var_types[term]
            elif term in consts:
                ttype = consts[term]
            else:
                raise PDDLSemanticError(f"unknown constant {term} in action {action.name}")
            if not (dom.is_subtype(ttype, ptype) or dom.is_subtype(ptype, ttype)):
                raise PDDLSemanticError(
                    f"ill-typed argument {term} of {atom[0]} in action {action.name}")


def parse_problem(text: str, dom: DomainModel) -> ProblemModel:
    """Parse a problem file and validate it against ``dom``."""
    display = _Display()
    root = _check_define(read_sexprs(text), "problem")
    name = display.note(_expect_sym(root[1][1], "problem name"))
    domain_name = None
    objects: list[tuple[str, str]] = []
    init: list[Atom] = []
    goal: list[Atom] = []
    for section in root[2:]:
        section = _expect_list(section, "problem section")
        if not section or isinstance(section[0], list):
            raise _syntax("malformed problem section", section)
        key = section[0].lower()
        if key == ":domain":
            domain_name = _expect_sym(section[1], "domain name").lower()
        elif key == ":requirements":
            _check_requirements(section)
        elif key == ":objects":
            for oname, otype, sym in _parse_typed_list(section[1:], display, "object"):
                if otype not in dom.type_parent and otype != ROOT_TYPE:
                    raise PDDLSemanticError(f"object {sym} has undeclared type {otype}")
                objects.append((oname, otype))
        elif key == ":init":
            for fact in section[1:]:
                pos, _ = _atom_list(fact, display, "initial fact", allow_negation=False)
                init.extend(pos)
        elif key == ":goal":
            if len(section) != 2:
                raise _syntax(":goal takes one formula", section)
            goal, _ = _atom_list(section[1], display, "goal", allow_negation=False)
        elif key == ":metric":
            raise UnsupportedRequirementError(":fluents")
        else:
            raise _syntax(f"unknown problem section {section[0]}", section)
    if domain_name is None:
        raise _syntax("missing (:domain ...)", root)
    if domain_name != dom.name:
        raise PDDLSemanticError(f"problem references domain {domain_name}, expected {dom.name}")
    if len({o for o, _ in objects}) != len(objects):
        raise PDDLSemanticError("duplicate object")
    prob = ProblemModel(
        name=name,
        domain_name=domain_name,
        objects=tuple(objects),
        init=frozenset(init),
        goal=frozenset(goal),
        display=frozenset(display.table.items()),
    )
    check_problem(dom, prob)
    return prob


def check_problem(dom: DomainModel, prob: ProblemModel) -> None:
    """Raise :class:`PDDLSemanticError` unless every atom is well typed."""
    table = typed_objects(dom, prob)
    for where, atoms in (("init", prob.init), ("goal", prob.goal)):
        for atom in atoms:
            check_ground_atom(dom, table, atom, where)


def check_ground_atom(dom: DomainModel, table: Mapping[str, str], atom: Atom, where: str = "atom") -> None:
    schema = dom.predicate_table.get(atom[0])
    if schema is None:
        raise PDDLSemanticError(f"undeclared predicate {atom[0]} in {where}")
    if len(atom) - 1 != schema.arity:
        raise PDDLSemanticError(f"wrong arity in {where} atom {atom_str(atom)}")
    for arg, (_, ptype) in zip(atom[1:], schema.params):
        if arg not in table:
            raise PDDLSemanticError(f"unknown object {arg} in {where} atom {atom_str(atom)}")
        if not dom.is_subtype(table[arg], ptype):
            raise PDDLSemanticError(f"ill-typed atom {atom_str(atom)} in {where}")


# --------------------------------------------------------------------------
# printing


def _typed_list_str(pairs: Iterable[tuple[str, str]], names: Mapping[str, str]) -> str:
    groups: list[tuple[str, list[str]]] = []
    for v, t in pairs:
        if groups and groups[-1][0] == t:
            groups[-1][1].append(v)
        else:
            groups.append((t, [v]))
    parts = []
    for t, vs in groups:
        parts.append(" ".join(names.get(v, v) for v in vs) + f" - {names.get(t, t)}")
    return " ".join(parts)


def _conj(atoms: Sequence[Atom], names: Mapping[str, str], negated: Sequence[Atom] = ()) -> str:
    parts = [atom_str(a, names) for a in atoms] + [f"(not {atom_str(a, names)})" for a in negated]
    return "(and " + " ".join(parts) + ")" if parts else "(and)"


def domain_to_pddl(dom: DomainModel) -> str:
    names = dom.display_names
    lines = [f"(define (domain {names.get(dom.name, dom.name)})"]
    if dom.requirements:
        lines.append(f"  (:requirements {' '.join(dom.requirements)})")
    if dom.types:
        lines.append(f"  (:types {_typed_list_str(dom.types, names)})")
    if dom.constants:
        lines.append(f"  (:constants {_typed_list_str(dom.constants, names)})")
    lines.append("  (:predicates")
    for p in dom.predicates:
        params = _typed_list_str(p.params, names)
        lines.append(f"    ({names.get(p.name, p.name)}{' ' + params if params else ''})")
    lines.append("  )")
    for a in dom.action_schemas:
        lines.append(f"  (:action {names.get(a.name, a.name)}")
        lines.append(f"    :parameters ({_typed_list_str(a.params, names)})")
        lines.append(f"    :precondition {_conj(a.preconditions, names)}")
        lines.append(f"    :effect {_conj(a.add_effects, names, a.del_effects)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def problem_to_pddl(prob: ProblemModel) -> str:
    names = prob.display_names
    lines = [f"(define (problem {names.get(prob.name, prob.name)})",
             f"  (:domain {names.get(prob.domain_name, prob.domain_name)})"]
    if prob.objects:
        lines.append(f"  (:objects {_typed_list_str(prob.objects, names)})")
    lines.append("  (:init")
    for atom in sorted(prob.init):
        lines.append(f"    {atom_str(atom, names)}")
    lines.append("  )")
    lines.append(f"  (:goal {_conj(sorted(prob.goal), names)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def iter_lines(text: str) -> Iterator[str]:
    for raw in text.splitlines():
        line = raw.split(";", 1)[0].strip()
        if line:
            yield line
