"""Pure-Python delete-relaxation kernels.

Generalized Dijkstra over unit-cost actions: an action fires once its last
precondition is settled, with cost ``1 + sum`` (h_add) or ``1 + max`` (h_max)
of its precondition costs.  Mirrors ``_relax.pyx`` exactly.
"""

from __future__ import annotations

from heapq import heappop, heappush

INF = float("inf")


def _explore(task, state_bits: int, use_max: bool, disabled, goal_ids):
    cost = [INF] * task.n_atoms
    heap = []
    bits = state_bits
    while bits:
        low = bits & -bits
        i = low.bit_length() - 1
        cost[i] = 0
        heap.append((0, i))
        bits ^= low
    pending = None
    if goal_ids is not None:
        pending = {g for g in goal_ids if cost[g] != 0}
        if not pending:
            return cost
    unsat = list(task.pre_count)
    acc = [0] * task.n_actions
    add = task.add
    watch = task.watch
    for a in task.free_actions:
        if disabled is not None and disabled[a]:
            continue
        for q in add[a]:
            if 1 < cost[q]:
                cost[q] = 1
                heappush(heap, (1, q))
    while heap:
        c, p = heappop(heap)
        if c > cost[p]:
            continue
        if pending is not None and p in pending:
            pending.discard(p)
            if not pending:
                break
        for a in watch[p]:
            if use_max:
                if c > acc[a]:
                    acc[a] = c
            else:
                acc[a] += c
            unsat[a] -= 1
            if unsat[a] == 0 and (disabled is None or not disabled[a]):
                ca = acc[a] + 1
                for q in add[a]:
                    if ca < cost[q]:
                        cost[q] = ca
                        heappush(heap, (ca, q))
    return cost


def h_value(task, state_bits: int, goal_ids, use_max: bool = False, disabled=None) -> float:
    cost = _explore(task, state_bits, use_max, disabled, goal_ids)
    total = 0
    for g in goal_ids:
        c = cost[g]
        if c == INF:
            return INF
        if use_max:
            if c > total:
                total = c
        else:
            total += c
    return float(total)


def atom_costs(task, state_bits: int, use_max: bool = False, disabled=None) -> list:
    return [float(c) for c in _explore(task, state_bits, use_max, disabled, None)]
