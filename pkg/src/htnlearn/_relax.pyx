# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled delete-relaxation kernels; same contract as ``_relax_py``."""

from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.vector cimport vector

from array import array

cdef long UNREACHED = 1 << 60


cdef void _explore(task, object state_bits, bint use_max, const unsigned char[:] disabled,
                   bint has_disabled, vector[long]& cost, const int[:] goals, bint has_goals):
    cdef const int[:] pre_count = task.pre_count_arr
    cdef const int[:] add_off = task.add_off
    cdef const int[:] add_flat = task.add_flat
    cdef const int[:] watch_off = task.watch_off
    cdef const int[:] watch_flat = task.watch_flat
    cdef const int[:] free_actions = task.free_arr
    cdef int n_atoms = task.n_atoms
    cdef int n_actions = task.n_actions
    cdef bytes raw = state_bits.to_bytes(task.nbytes, "little")
    cdef const unsigned char* buf = raw
    cdef priority_queue[pair[long, int]] heap
    cdef vector[int] unsat = vector[int](n_actions)
    cdef vector[long] acc = vector[long](n_actions, 0)
    cdef vector[char] is_goal
    cdef int pending = 0
    cdef int i, j, k, a, p, q
    cdef long c, ca
    cdef unsigned char byte

    cost.assign(n_atoms, UNREACHED)
    for i in range(task.nbytes):
        byte = buf[i]
        if byte == 0:
            continue
        for j in range(8):
            if byte & (1 << j):
                p = i * 8 + j
                if p < n_atoms:
                    cost[p] = 0
                    heap.push(pair[long, int](0, p))
    if has_goals:
        is_goal.assign(n_atoms, 0)
        for k in range(goals.shape[0]):
            p = goals[k]
            if cost[p] != 0 and not is_goal[p]:
                is_goal[p] = 1
                pending += 1
        if pending == 0:
            return
    for a in range(n_actions):
        unsat[a] = pre_count[a]
    for k in range(free_actions.shape[0]):
        a = free_actions[k]
        if has_disabled and disabled[a]:
            continue
        for j in range(add_off[a], add_off[a + 1]):
            q = add_flat[j]
            if 1 < cost[q]:
                cost[q] = 1
                heap.push(pair[long, int](-1, q))
    while not heap.empty():
        c = -heap.top().first
        p = heap.top().second
        heap.pop()
        if c > cost[p]:
            continue
        if has_goals and is_goal[p]:
            is_goal[p] = 0
            pending -= 1
            if pending == 0:
                break
        for k in range(watch_off[p], watch_off[p + 1]):
            a = watch_flat[k]
            if use_max:
                if c > acc[a]:
                    acc[a] = c
            else:
                acc[a] += c
            unsat[a] -= 1
            if unsat[a] == 0 and not (has_disabled and disabled[a]):
                ca = acc[a] + 1
                for j in range(add_off[a], add_off[a + 1]):
                    q = add_flat[j]
                    if ca < cost[q]:
                        cost[q] = ca
                        heap.push(pair[long, int](-ca, q))


def h_value(task, state_bits, goal_ids, bint use_max=False, disabled=None):
    cdef vector[long] cost
    cdef const unsigned char[:] dis = disabled if disabled is not None else b"\0"
    cdef int[:] goals = array("i", goal_ids)
    cdef long total = 0
    cdef long c
    cdef int k
    _explore(task, state_bits, use_max, dis, disabled is not None, cost, goals, True)
    for k in range(goals.shape[0]):
        c = cost[goals[k]]
        if c >= UNREACHED:
            return float("inf")
        if use_max:
            if c > total:
                total = c
        else:
            total += c
    return float(total)


def atom_costs(task, state_bits, bint use_max=False, disabled=None):
    cdef vector[long] cost
    cdef const unsigned char[:] dis = disabled if disabled is not None else b"\0"
    cdef int[:] goals = None
    _explore(task, state_bits, use_max, dis, disabled is not None, cost, goals, False)
    return [float("inf") if c >= UNREACHED else float(c) for c in cost]
