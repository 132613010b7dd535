"""Forward state-space search over a grounding.

States inside the search are integer bitsets keyed by the grounding's atom
ids; the public functions take and return atom sets.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Iterable

from htnlearn import relax
from htnlearn.ground import GroundAction, Grounding, State

INF = float("inf")

STRATEGIES = ("gbfs", "astar")
HEURISTICS = ("hadd", "hmax")


class PlanningError(Exception):
    pass


class UnsolvableError(PlanningError):
    """The reachable state space was exhausted without reaching the goal."""


class BudgetExceededError(PlanningError):
    """The expansion budget ran out before a plan was found."""


@dataclass(frozen=True)
class SearchConfig:
    strategy: str = "gbfs"
    heuristic: str = "hadd"
    max_expansions: int = 1_000_000
    tie_break: str = "fifo"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"unknown heuristic {self.heuristic!r}; expected one of {HEURISTICS}")
        if self.tie_break not in ("fifo", "lifo"):
            raise ValueError("tie_break must be 'fifo' or 'lifo'")
        if self.max_expansions <= 0:
            raise ValueError("max_expansions must be positive")


@dataclass
class SearchStats:
    expansions: int = 0
    generated: int = 0
    evaluations: int = 0


def h_add(grounding: Grounding, state: Iterable, goal: Iterable) -> float:
    """Additive delete-relaxation estimate; ``inf`` if the goal is relaxed-unreachable."""
    return _heuristic(grounding, state, goal, use_max=False)


def h_max(grounding: Grounding, state: Iterable, goal: Iterable) -> float:
    return _heuristic(grounding, state, goal, use_max=True)


def _heuristic(grounding: Grounding, state, goal, use_max: bool) -> float:
    goal = frozenset(goal)
    if any(g not in grounding.atom_id for g in goal):
        # an atom outside the grounding is added by no reachable action
        return 0.0 if goal <= frozenset(state) else INF
    bits = state if isinstance(state, int) else grounding.encode(state)
    return relax.h_value(grounding.relaxed, bits, grounding.ids(goal), use_max)


def classical_plan(grounding: Grounding, state: Iterable, goal: Iterable,
                   cfg: SearchConfig | None = None, stats: SearchStats | None = None) -> list[GroundAction]:
    """Find a plan from ``state`` to a state containing ``goal``.

    Raises :class:`UnsolvableError` or :class:`BudgetExceededError`.
    """
    cfg = cfg or SearchConfig()
    stats = stats if stats is not None else SearchStats()
    state = frozenset(state)
    goal = frozenset(goal)
    if goal <= state:
        return []
    if any(g not in grounding.atom_id for g in goal):
        raise UnsolvableError("goal mentions atoms no reachable action adds")
    start = grounding.encode(state)
    # atoms of the state outside the grounding never change; they cannot matter
    goal_bits = grounding.encode(goal)
    goal_ids = grounding.ids(goal)
    use_max = cfg.heuristic == "hmax"
    task = grounding.relaxed

    def h(bits: int) -> float:
        stats.evaluations += 1
        return relax.h_value(task, bits, goal_ids, use_max)

    if cfg.strategy == "gbfs":
        bits_plan = _gbfs(grounding, start, goal_bits, h, cfg, stats)
    else:
        bits_plan = _astar(grounding, start, goal_bits, h, cfg, stats)
    return bits_plan


def _tie(counter, cfg: SearchConfig) -> int:
    n = next(counter)
    return n if cfg.tie_break == "fifo" else -n


def _gbfs(g: Grounding, start: int, goal_bits: int, h, cfg: SearchConfig, stats: SearchStats):
    h0 = h(start)
    if h0 == INF:
        raise UnsolvableError("goal is relaxed-unreachable")
    counter = itertools.count()
    parent: dict[int, tuple[int, GroundAction] | None] = {start: None}
    heap = [(h0, _tie(counter, cfg), start)]
    actions = g.actions
    pre_bits, keep_bits, add_bits = g.pre_bits, g.keep_bits, g.add_bits
    while heap:
        _, _, s = heapq.heappop(heap)
        stats.expansions += 1
        if stats.expansions > cfg.max_expansions:
            raise BudgetExceededError(f"expansion budget {cfg.max_expansions} exhausted")
        for a in actions:
            i = a.index
            if pre_bits[i] & s != pre_bits[i]:
                continue
            t = (s & keep_bits[i]) | add_bits[i]
            if t in parent:
                continue
            stats.generated += 1
            parent[t] = (s, a)
            if t & goal_bits == goal_bits:
                return _extract(parent, t)
            ht = h(t)
            if ht == INF:
                continue
            heapq.heappush(heap, (ht, _tie(counter, cfg), t))
    raise UnsolvableError("state space exhausted")


def _astar(g: Grounding, start: int, goal_bits: int, h, cfg: SearchConfig, stats: SearchStats):
    h0 = h(start)
    if h0 == INF:
        raise UnsolvableError("goal is relaxed-unreachable")
    counter = itertools.count()
    best_g = {start: 0}
    parent: dict[int, tuple[int, GroundAction] | None] = {start: None}
    hcache = {start: h0}
    heap = [(h0, h0, _tie(counter, cfg), 0, start)]
    pre_bits, keep_bits, add_bits = g.pre_bits, g.keep_bits, g.add_bits
    while heap:
        _, _, _, gs, s = heapq.heappop(heap)
        if gs > best_g[s]:
            continue
        if s & goal_bits == goal_bits:
            return _extract(parent, s)
        stats.expansions += 1
        if stats.expansions > cfg.max_expansions:
            raise BudgetExceededError(f"expansion budget {cfg.max_expansions} exhausted")
        for a in g.actions:
            i = a.index
            if pre_bits[i] & s != pre_bits[i]:
                continue
            t = (s & keep_bits[i]) | add_bits[i]
            gt = gs + 1
            if gt >= best_g.get(t, INF):
                continue
            ht = hcache.get(t)
            if ht is None:
                ht = hcache[t] = h(t)
            if ht == INF:
                continue
            stats.generated += 1
            best_g[t] = gt
            parent[t] = (s, a)
            heapq.heappush(heap, (gt + ht, ht, _tie(counter, cfg), gt, t))
    raise UnsolvableError("state space exhausted")


def _extract(parent, t: int) -> list[GroundAction]:
    plan = []
    link = parent[t]
    while link is not None:
        s, a = link
        plan.append(a)
        link = parent[s]
    plan.reverse()
    return plan


def breadth_first_plan(grounding: Grounding, state: Iterable, goal: Iterable,
                       max_states: int = 1_000_000) -> list[GroundAction]:
    """Shortest plan by breadth-first search (used as an optimality reference)."""
    goal_bits = grounding.encode(goal)
    if any(g not in grounding.atom_id for g in goal):
        raise UnsolvableError("goal mentions atoms no reachable action adds")
    start = grounding.encode(state)
    if start & goal_bits == goal_bits:
        return []
    parent: dict[int, tuple[int, GroundAction] | None] = {start: None}
    frontier = [start]
    while frontier:
        nxt = []
        for s in frontier:
            for a in grounding.applicable(s):
                t = grounding.successor(s, a)
                if t in parent:
                    continue
                parent[t] = (s, a)
                if t & goal_bits == goal_bits:
                    return _extract(parent, t)
                if len(parent) > max_states:
                    raise BudgetExceededError(f"more than {max_states} states")
                nxt.append(t)
        frontier = nxt
    raise UnsolvableError("state space exhausted")


def plan_to_state(grounding: Grounding, state: State, plan) -> State:
    bits = grounding.encode(state)
    for a in plan:
        bits = grounding.successor(bits, a)
    return grounding.decode(bits) | (frozenset(state) - frozenset(grounding.atoms))
