"""Single-atom landmarks, their orderings, and a brute-force landmark oracle."""

from __future__ import annotations

import enum
import heapq
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from htnlearn import relax
from htnlearn.ground import Grounding
from htnlearn.pddl import Atom, atom_str, parse_atom

log = logging.getLogger(__name__)

INF = float("inf")


class OrderingKind(enum.Enum):
    NATURAL = "n"
    NECESSARY = "nec"
    GREEDY_NECESSARY = "gn"
    REASONABLE = "r"


# greedy-necessary implies necessary implies natural; store the strongest
_STRENGTH = {
    OrderingKind.NATURAL: 1,
    OrderingKind.NECESSARY: 2,
    OrderingKind.GREEDY_NECESSARY: 3,
}

LANDMARK_METHODS = ("hm1", "exclusion")
TIE_BREAKS = ("lexicographic", "goal-directed")
REASONABLE_MODES = ("interference", "deletes", "none")


class LandmarkError(Exception):
    pass


class RelaxedUnreachableGoalError(LandmarkError):
    """The goal cannot be reached even ignoring delete effects."""


class CycleDetectedError(LandmarkError):
    pass


@dataclass
class LandmarkGraph:
    nodes: list[Atom]
    edges: dict[tuple[Atom, Atom], OrderingKind]
    initial: frozenset
    goal: frozenset
    names: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)

    def copy(self) -> "LandmarkGraph":
        return LandmarkGraph(list(self.nodes), dict(self.edges), self.initial, self.goal,
                             dict(self.names), list(self.dropped))

    def label(self, atom: Atom) -> str:
        return atom_str(atom, self.names)

    def add_node(self, atom: Atom) -> None:
        if atom not in self.nodes:
            self.nodes.append(atom)
            self.nodes.sort(key=self.label)

    def add_edge(self, src: Atom, dst: Atom, kind: OrderingKind) -> bool:
        """Add an ordering, keeping the strongest kind; returns True if the graph changed."""
        if src == dst:
            return False
        old = self.edges.get((src, dst))
        if kind is OrderingKind.REASONABLE:
            if old is not None or (dst, src) in self.edges:
                return False
        elif old is not None and old is not OrderingKind.REASONABLE and _STRENGTH[old] >= _STRENGTH[kind]:
            return False
        self.edges[(src, dst)] = kind
        return True

    def predecessors(self, node: Atom, kinds: Iterable[OrderingKind] | None = None) -> list[Atom]:
        kinds = set(kinds) if kinds is not None else None
        return sorted((s for (s, d), k in self.edges.items() if d == node and (kinds is None or k in kinds)),
                      key=self.label)

    def successors(self, node: Atom, kinds: Iterable[OrderingKind] | None = None) -> list[Atom]:
        kinds = set(kinds) if kinds is not None else None
        return sorted((d for (s, d), k in self.edges.items() if s == node and (kinds is None or k in kinds)),
                      key=self.label)

    def edges_of_kind(self, kind: OrderingKind) -> list[tuple[Atom, Atom]]:
        return sorted(((s, d) for (s, d), k in self.edges.items() if k is kind),
                      key=lambda e: (self.label(e[0]), self.label(e[1])))

    def reaches(self, src: Atom, dst: Atom, kinds: Iterable[OrderingKind] | None = None) -> bool:
        kinds = set(kinds) if kinds is not None else None
        succ: dict[Atom, list[Atom]] = {}
        for (s, d), k in self.edges.items():
            if kinds is None or k in kinds:
                succ.setdefault(s, []).append(d)
        stack, seen = [src], {src}
        while stack:
            n = stack.pop()
            if n == dst:
                return True
            for m in succ.get(n, ()):
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return False

    # ---- export

    def to_dot(self) -> str:
        lines = ["digraph landmarks {", "  node [shape=ellipse];"]
        index = {n: i for i, n in enumerate(self.nodes)}
        for n in self.nodes:
            styles = []
            if n in self.initial:
                styles.append("dashed")
            if n in self.goal:
                styles.append("filled")
            style = f', style="{",".join(styles)}"' if styles else ""
            lines.append(f'  n{index[n]} [label="{self.label(n)}"{style}];')
        for (s, d), k in sorted(self.edges.items(), key=lambda e: (index[e[0][0]], index[e[0][1]])):
            lines.append(f'  n{index[s]} -> n{index[d]} [label="{k.value}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "nodes": [{"atom": self.label(n), "initial": n in self.initial, "goal": n in self.goal}
                      for n in self.nodes],
            "edges": [{"from": self.label(s), "to": self.label(d), "kind": k.value}
                      for (s, d), k in sorted(self.edges.items(),
                                              key=lambda e: (self.label(e[0][0]), self.label(e[0][1])))],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "LandmarkGraph":
        names: dict[str, str] = {}
        nodes, initial, goal = [], set(), set()
        for entry in data["nodes"]:
            atom = parse_atom(entry["atom"])
            for low, raw in zip(atom, entry["atom"].strip("() ").split()):
                names.setdefault(low, raw)
            nodes.append(atom)
            if entry.get("initial"):
                initial.add(atom)
            if entry.get("goal"):
                goal.add(atom)
        edges = {(parse_atom(e["from"]), parse_atom(e["to"])): OrderingKind(e["kind"]) for e in data["edges"]}
        return cls(nodes, edges, frozenset(initial), frozenset(goal), names)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


# --------------------------------------------------------------------------
# extraction


def _first_achievers(g: Grounding, atom: Atom) -> list:
    """Achievers of ``atom`` applicable before ``atom`` has ever been true."""
    achievers = g.achievers.get(atom, ())
    mask = relax.disabled_mask(len(g.actions), (a.index for a in achievers))
    costs = relax.atom_costs(g.relaxed, g.init_bits, disabled=mask)
    aid = g.atom_id
    return [a for a in achievers if all(costs[aid[p]] != INF for p in a.pre)]


def _hm1_landmark_sets(g: Grounding) -> dict[Atom, frozenset]:
    """Fixpoint of LM(p) = intersection over achievers a of  U_{q in pre(a)} LM(q) + {q}."""
    init = g.prob.init
    lm: dict[Atom, frozenset] = {p: frozenset() for p in init}
    changed = True
    while changed:
        changed = False
        for a in g.actions:
            if not all(p in lm for p in a.pre):
                continue
            cand = set(a.pre)
            for p in a.pre:
                cand |= lm[p]
            cand = frozenset(cand)
            for q in a.add:
                if q in init:
                    continue
                old = lm.get(q)
                if old is None:
                    lm[q] = cand
                    changed = True
                else:
                    new = old & cand
                    if new != old:
                        lm[q] = new
                        changed = True
    return lm


def extract_landmarks(g: Grounding, method: str = "hm1") -> LandmarkGraph:
    """Landmark graph of the grounding's problem with n and gn orderings.

    Every initial atom is a node (flagged initial), as are the goal atoms.

    ``hm1`` propagates landmark sets through the relaxed planning graph;
    ``exclusion`` keeps every atom whose achievers, when removed, make the
    relaxed goal unreachable.
    """
    if method not in LANDMARK_METHODS:
        raise ValueError(f"unknown landmark method {method!r}")
    prob = g.prob
    init, goal = frozenset(prob.init), frozenset(prob.goal)
    costs = relax.atom_costs(g.relaxed, g.init_bits)
    unreachable = sorted(a for a in goal if costs[g.atom_id[a]] == INF)
    if unreachable:
        raise RelaxedUnreachableGoalError(
            "goal relaxed-unreachable: " + ", ".join(g.atom_text(a) for a in unreachable))

    graph = LandmarkGraph([], {}, init, goal, dict(g.names))
    natural: dict[Atom, set[Atom]] = {}
    if method == "hm1":
        lm = _hm1_landmark_sets(g)
        found = set(goal)
        for atom in goal:
            found |= lm[atom]
        for atom in found:
            natural[atom] = set(lm.get(atom, ()))
    else:
        goal_ids = g.ids(goal)
        found = set(goal)
        for atom in g.atoms:
            if atom in init or atom in goal or costs[g.atom_id[atom]] == INF:
                continue
            mask = relax.disabled_mask(len(g.actions), (a.index for a in g.achievers.get(atom, ())))
            if relax.h_value(g.relaxed, g.init_bits, goal_ids, disabled=mask) == INF:
                found.add(atom)
        found_list = sorted(found)
        for src in found_list:
            if src in init:
                continue
            mask = relax.disabled_mask(len(g.actions), (a.index for a in g.achievers.get(src, ())))
            without = relax.atom_costs(g.relaxed, g.init_bits, disabled=mask)
            for dst in found_list:
                if dst != src and dst not in init and without[g.atom_id[dst]] == INF:
                    natural.setdefault(dst, set()).add(src)
        # atoms that depend on each other are first added together: no order
        mutual = {(src, dst) for dst, preds in natural.items() for src in preds if dst in natural.get(src, ())}
        for src, dst in mutual:
            natural[dst].discard(src)
    nodes = set(found)

    gn_preds: dict[Atom, set[Atom]] = {}
    for atom in sorted(found):
        if atom in init:
            continue
        first = _first_achievers(g, atom)
        if not first:
            continue
        shared = set(first[0].pre)
        for a in first[1:]:
            shared &= a.pre
        gn_preds[atom] = shared
        nodes |= shared  # preconditions of every first achiever are landmarks too
    nodes |= init  # true at time 0 of every plan

    graph.nodes = sorted(nodes, key=graph.label)
    for dst, preds in gn_preds.items():
        for src in preds:
            graph.add_edge(src, dst, OrderingKind.GREEDY_NECESSARY)
    for dst, preds in natural.items():
        for src in preds:
            if src in nodes:
                graph.add_edge(src, dst, OrderingKind.NATURAL)
    strict = (OrderingKind.NATURAL, OrderingKind.NECESSARY, OrderingKind.GREEDY_NECESSARY)
    for (s, d) in list(graph.edges):
        if graph.reaches(d, s, strict):
            raise CycleDetectedError(f"cycle through {graph.label(s)} and {graph.label(d)}")
    return graph


# --------------------------------------------------------------------------
# reasonable orders


MUTEX_ATOM_LIMIT = 2000


def mutex_pairs(g: Grounding, atom_limit: int = MUTEX_ATOM_LIMIT) -> dict[Atom, set[Atom]]:
    """Pairs of atoms never true together, as a symmetric adjacency map.

    Greatest fixpoint of the two-atom invariant test: a candidate pair
    survives an action adding one member only if the action deletes the
    other or needs an atom already mutex with it.  Above ``atom_limit``
    atoms the quadratic table is skipped and no pair is reported.
    """
    init = g.prob.init
    atoms = g.atoms
    if len(atoms) > atom_limit:
        log.info("skipping mutex synthesis for %d atoms", len(atoms))
        return {}
    mutex: dict[Atom, set[Atom]] = {a: set() for a in atoms}
    for i, p in enumerate(atoms):
        for q in atoms[i + 1:]:
            if not (p in init and q in init):
                mutex[p].add(q)
                mutex[q].add(p)
    changed = True
    while changed:
        changed = False
        for a in g.actions:
            pre = list(a.pre)
            if any(q in mutex[p] for i, p in enumerate(pre) for q in pre[i + 1:]):
                continue  # never applicable
            for p in a.add:
                for q in list(mutex[p]):
                    if q in a.add:
                        broken = True
                    elif q in a.delete:
                        broken = False
                    elif q in a.pre:
                        broken = True
                    else:
                        broken = not any(q in mutex[r] for r in pre)
                    if broken:
                        mutex[p].discard(q)
                        mutex[q].discard(p)
                        changed = True
    return mutex


def _interferes(g: Grounding, graph: LandmarkGraph, li: Atom, lj: Atom, mutex, first_cache) -> bool:
    """Whether achieving ``li`` forces ``lj`` false."""
    first = first_cache.get(li)
    if first is None:
        first = first_cache[li] = _first_achievers(g, li)
    if first and all(lj in a.delete for a in first):
        return True
    if mutex is None:
        return False
    if lj in mutex.get(li, ()):
        return True
    if first:
        shared_add = set(first[0].add)
        for a in first[1:]:
            shared_add &= a.add
        if any(lj in mutex.get(x, ()) for x in shared_add if x != li):
            return True
    for x in graph.predecessors(li, (OrderingKind.GREEDY_NECESSARY,)):
        if lj in mutex.get(x, ()):
            return True
    return False


def add_reasonable_orders(graph: LandmarkGraph, g: Grounding, mode: str = "interference") -> LandmarkGraph:
    """Return a copy of ``graph`` with approximate reasonable orderings added.

    An edge li -r-> lj is added when achieving li interferes with lj and lj is
    still needed afterwards: lj is a goal, or li and lj are both greedy-necessary
    for a common landmark.  Edges that would close a cycle are dropped.
    """
    if mode not in REASONABLE_MODES:
        raise ValueError(f"unknown reasonable-order mode {mode!r}")
    out = graph.copy()
    if mode == "none" or len(out.nodes) < 2:
        return out
    mutex = mutex_pairs(g) if mode == "interference" else None
    first_cache: dict = {}
    gn = (OrderingKind.GREEDY_NECESSARY,)
    for lj in list(out.nodes):
        if lj in out.initial:
            continue
        if lj in out.goal:
            candidates = [n for n in out.nodes if n != lj]
        else:
            found: set[Atom] = set()
            for child in graph.successors(lj, gn):
                found.update(p for p in graph.predecessors(child, gn) if p != lj)
            candidates = sorted(found, key=out.label)
        for li in candidates:
            if li in out.initial:
                continue
            if not _interferes(g, graph, li, lj, mutex, first_cache):
                continue
            if (li, lj) in out.edges or (lj, li) in out.edges:
                continue
            if out.reaches(lj, li):
                out.dropped.append((li, lj))
                log.info("dropped reasonable order %s -> %s: would close a cycle", out.label(li), out.label(lj))
                continue
            out.add_edge(li, lj, OrderingKind.REASONABLE)
    return out


def goal_order(g: Grounding, graph: LandmarkGraph | None = None) -> list[Atom]:
    """Order the goal atoms so that each comes before the goals it would undo.

    Orderings between goals in the landmark graph are kept, except those
    leaving a goal that is true initially (it comes first only in the sense of
    holding at the start).  In addition g1 precedes g2 whenever achieving g1
    interferes with g2.  Goals true initially take part, unlike in
    :func:`topo_sequence`.
    """
    if graph is None:
        graph = add_reasonable_orders(extract_landmarks(g), g)
    goals = sorted(g.prob.goal, key=graph.label)
    order = LandmarkGraph(list(goals), {}, frozenset(), frozenset(goals), dict(graph.names))
    for a in goals:
        for b in goals:
            if a != b and a not in graph.initial and graph.reaches(a, b):
                order.add_edge(a, b, OrderingKind.NATURAL)
    mutex = mutex_pairs(g)
    cache: dict = {}
    for a in goals:
        for b in goals:
            if a == b or (a, b) in order.edges or (b, a) in order.edges:
                continue
            if _interferes(g, graph, a, b, mutex, cache) and not order.reaches(b, a):
                order.add_edge(a, b, OrderingKind.REASONABLE)
    return topo_sequence(order, prune_initial=False)


# --------------------------------------------------------------------------
# sequencing


def topo_sequence(graph: LandmarkGraph, prune_initial: bool = True,
                  tie_break: str = "lexicographic", goals: list[Atom] | None = None) -> list[Atom]:
    """Total order extending the graph's orderings.

    Landmarks true initially are dropped first.  Among nodes without remaining
    predecessors the lexicographically smallest printed atom goes next.  With
    ``tie_break="goal-directed"`` nodes that lead to an earlier goal of
    ``goals`` come first and the printed atom only breaks the remaining ties,
    so the work for one goal is finished before the next goal starts.
    """
    if tie_break not in TIE_BREAKS:
        raise ValueError(f"unknown tie-break {tie_break!r}; expected one of {TIE_BREAKS}")
    nodes = [n for n in graph.nodes if not (prune_initial and n in graph.initial)]
    keep = set(nodes)
    indegree = {n: 0 for n in nodes}
    succ: dict[Atom, list[Atom]] = {n: [] for n in nodes}
    for (s, d) in graph.edges:
        if s in keep and d in keep:
            indegree[d] += 1
            succ[s].append(d)
    rank = {n: 0 for n in nodes}
    if tie_break == "goal-directed":
        ordered = list(goals) if goals is not None else sorted(graph.goal, key=graph.label)
        rank = {n: len(ordered) for n in nodes}
        for i in reversed(range(len(ordered))):
            for n in nodes:
                if n == ordered[i] or graph.reaches(n, ordered[i]):
                    rank[n] = i
    heap = [(rank[n], graph.label(n), n) for n in nodes if indegree[n] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, _, n = heapq.heappop(heap)
        order.append(n)
        for m in succ[n]:
            indegree[m] -= 1
            if indegree[m] == 0:
                heapq.heappush(heap, (rank[m], graph.label(m), m))
    if len(order) != len(nodes):
        stuck = sorted(graph.label(n) for n in nodes if n not in set(order))
        raise CycleDetectedError("landmark orderings contain a cycle among " + ", ".join(stuck))
    return order


# --------------------------------------------------------------------------
# brute-force oracle


class OracleBudgetExceededError(LandmarkError):
    pass


def count_reachable_states(g: Grounding, limit: int = 1_000_000) -> int:
    seen = {g.init_bits}
    frontier = [g.init_bits]
    while frontier:
        nxt = []
        for s in frontier:
            for a in g.applicable(s):
                t = g.successor(s, a)
                if t not in seen:
                    seen.add(t)
                    if len(seen) > limit:
                        raise OracleBudgetExceededError(f"more than {limit} reachable states")
                    nxt.append(t)
        frontier = nxt
    return len(seen)


def _bounded_reach(g: Grounding, bound: int, goal_bits: int, avoid_bits: int, max_states: int) -> bool:
    """Is a goal state reachable within ``bound`` steps without visiting ``avoid_bits``?"""
    start = g.init_bits
    if start & avoid_bits:
        return False
    if start & goal_bits == goal_bits:
        return True
    seen = {start}
    frontier = [start]
    for _ in range(bound):
        nxt = []
        for s in frontier:
            for a in g.applicable(s):
                t = g.successor(s, a)
                if t in seen or t & avoid_bits:
                    continue
                if t & goal_bits == goal_bits:
                    return True
                seen.add(t)
                if len(seen) > max_states:
                    raise OracleBudgetExceededError(f"more than {max_states} states")
                nxt.append(t)
        if not nxt:
            break
        frontier = nxt
    return False


def brute_force_landmark_oracle(g: Grounding, candidate: Atom, plan_length_bound: int,
                                max_states: int = 200_000) -> str:
    """Decide by exhaustive search whether ``candidate`` is a landmark.

    Considers every plan of at most ``plan_length_bound`` steps: the answer is
    ``"landmark"`` when each of them passes through a state containing the
    candidate, ``"not-landmark"`` when one avoids it, and ``"inconclusive"``
    when no plan exists within the bound.  Searching the candidate-free part
    of the state space answers this without listing plans one by one.
    """
    goal_bits = g.encode(g.prob.goal)
    if any(a not in g.atom_id for a in g.prob.goal):
        return "inconclusive"
    if not _bounded_reach(g, plan_length_bound, goal_bits, 0, max_states):
        return "inconclusive"
    if candidate in g.prob.init:
        return "landmark"
    if candidate not in g.atom_id:
        return "not-landmark"
    avoid = 1 << g.atom_id[candidate]
    if _bounded_reach(g, plan_length_bound, goal_bits, avoid, max_states):
        return "not-landmark"
    return "landmark"
