import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import atoms
from htnlearn.generators import (
    blocks_domain,
    blocks_problem_text,
    detour_problem,
    gen_blocks,
    gen_logistics,
    logistics_domain,
)
from htnlearn.ground import Grounding
from htnlearn.landmark import (
    CycleDetectedError,
    LandmarkGraph,
    OrderingKind,
    RelaxedUnreachableGoalError,
    add_reasonable_orders,
    brute_force_landmark_oracle,
    count_reachable_states,
    extract_landmarks,
    mutex_pairs,
    topo_sequence,
)
from htnlearn.pddl import atom_str, parse_atom, parse_problem

GN = OrderingKind.GREEDY_NECESSARY
STRICT = (OrderingKind.NATURAL, OrderingKind.NECESSARY, GN)


def labels(graph, seq):
    return [graph.label(a).lower() for a in seq]


def blocks_problem(init, goal_atoms):
    text = blocks_problem_text("p", init, init)
    head = text[: text.index("(:goal")]
    return parse_problem(head + f"(:goal (and {' '.join(goal_atoms)})))", blocks_domain())


def reachable_states(g):
    start = g.init_bits
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for s in frontier:
            for a in g.applicable(s):
                t = g.successor(s, a)
                if t not in seen:
                    seen.add(t)
                    nxt.append(t)
        frontier = nxt
    return [g.decode(s) for s in seen]


def optimal_plans(g, goal):
    """Every shortest plan, as lists of trajectories."""
    goal_bits = g.encode(goal)
    dist = {g.init_bits: 0}
    layers = [[g.init_bits]]
    while not any(s & goal_bits == goal_bits for s in layers[-1]):
        nxt = []
        for s in layers[-1]:
            for a in g.applicable(s):
                t = g.successor(s, a)
                if t not in dist:
                    dist[t] = len(layers)
                    nxt.append(t)
        layers.append(nxt)
    depth = len(layers) - 1
    out = []

    def walk(path):
        s = path[-1]
        if len(path) - 1 == depth:
            if s & goal_bits == goal_bits:
                out.append([g.decode(x) for x in path])
            return
        for a in g.applicable(s):
            t = g.successor(s, a)
            if dist.get(t) == len(path):
                walk(path + [t])

    walk([g.init_bits])
    return out


# ---- extraction


def test_tower4_landmark_graph(tower4_grounding):
    graph = extract_landmarks(tower4_grounding)
    a, b, c = (parse_atom(f"(clear {x})") for x in "abc")
    assert {a, b, c} <= set(graph.nodes)
    assert graph.edges[(c, b)] is GN and graph.edges[(b, a)] is GN
    assert graph.initial >= atoms("(clear D)", "(on D C)", "(on C B)", "(on B A)", "(hand-empty)")
    assert set(graph.nodes) >= graph.initial
    assert graph.goal == {a}


def test_tower4_landmark_dot_export(tower4_grounding):
    dot = extract_landmarks(tower4_grounding).to_dot()
    assert '[label="(clear A)", style="filled"]' in dot
    assert '[label="(clear D)", style="dashed"]' in dot
    assert 'label="gn"' in dot


def test_json_round_trip(tower4_grounding):
    graph = add_reasonable_orders(extract_landmarks(tower4_grounding), tower4_grounding)
    again = LandmarkGraph.from_json(json.loads(graph.dumps()))
    assert again.nodes == graph.nodes and again.edges == graph.edges
    assert again.initial == graph.initial and again.goal == graph.goal


def test_goal_already_true(blocks):
    prob = blocks_problem([["A", "B"]], ["(on B A)"])
    graph = extract_landmarks(Grounding(blocks, prob))
    goal = parse_atom("(on b a)")
    assert goal in graph.nodes and goal in graph.initial and goal in graph.goal
    assert topo_sequence(graph) == []


def test_relaxed_unreachable_goal(blocks):
    prob = parse_problem("""
    (define (problem p) (:domain blocks) (:objects a b - block)
      (:init (on-table a) (on-table b) (clear a) (clear b)) (:goal (on a b)))
    """, blocks)
    with pytest.raises(RelaxedUnreachableGoalError):
        extract_landmarks(Grounding(blocks, prob))


def test_three_block_tower_against_oracle(blocks):
    prob = blocks_problem([["A", "B", "C"]], ["(clear A)"])
    g = Grounding(blocks, prob)
    graph = extract_landmarks(g)
    oracle = {a for a in g.atoms if brute_force_landmark_oracle(g, a, 6) == "landmark"}
    assert set(graph.nodes) <= oracle
    # single-atom relaxed reasoning cannot see side effects of the only achiever
    # (holding b, holding c) nor that the hand must put C on the table
    assert {atom_str(a) for a in oracle - set(graph.nodes)} == {"(holding b)", "(holding c)", "(on-table c)"}


def test_exclusion_method_also_finds_effect_landmarks(tower4_grounding):
    hm1 = extract_landmarks(tower4_grounding)
    excl = extract_landmarks(tower4_grounding, "exclusion")
    assert set(hm1.nodes) <= set(excl.nodes)
    seq = labels(excl, topo_sequence(excl))
    assert [x for x in seq if x.startswith("(clear")] == ["(clear c)", "(clear b)", "(clear a)"]
    assert {x for x in seq if x.startswith("(holding")} == {"(holding b)", "(holding c)", "(holding d)"}
    for lm in excl.nodes:
        assert brute_force_landmark_oracle(tower4_grounding, lm, 8) == "landmark"


# ---- oracle


def test_oracle_clear_b(tower4_grounding):
    assert brute_force_landmark_oracle(tower4_grounding, parse_atom("(clear b)"), 8) == "landmark"


def test_oracle_initial_atom(tower4_grounding):
    assert brute_force_landmark_oracle(tower4_grounding, parse_atom("(on-table a)"), 8) == "landmark"


def test_oracle_on_table_d_fixture(tower4_grounding):
    # frozen from an exhaustive run with bound 8: D has nowhere else to go
    assert brute_force_landmark_oracle(tower4_grounding, parse_atom("(on-table d)"), 8) == "landmark"
    assert brute_force_landmark_oracle(tower4_grounding, parse_atom("(on d a)"), 8) == "not-landmark"


def test_oracle_inconclusive_below_plan_length(tower4_grounding):
    assert brute_force_landmark_oracle(tower4_grounding, parse_atom("(clear b)"), 4) == "inconclusive"


def test_reachable_state_count_blocks3(blocks):
    g = Grounding(blocks, blocks_problem([["A", "B", "C"]], ["(clear A)"]))
    assert count_reachable_states(g) == len(reachable_states(g)) == 22  # 13 arrangements + 9 holding


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 4), mode=st.sampled_from(["scramble", "uniform"]))
def test_extraction_is_sound_blocks(seed, n, mode):
    prob = gen_blocks(n, seed, goal_mode=mode)
    g = Grounding(blocks_domain(), prob)
    for lm in extract_landmarks(g).nodes:
        assert brute_force_landmark_oracle(g, lm, 40) == "landmark", atom_str(lm)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_extraction_is_sound_logistics(seed):
    prob = gen_logistics(2, 2, 1, 1, 1, seed)
    g = Grounding(logistics_domain(), prob)
    for lm in extract_landmarks(g, "exclusion").nodes:
        assert brute_force_landmark_oracle(g, lm, 40) == "landmark", atom_str(lm)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5))
def test_graph_invariants(seed, n):
    prob = gen_blocks(n, seed)
    g = Grounding(blocks_domain(), prob)
    graph = add_reasonable_orders(extract_landmarks(g), g)
    nodes = set(graph.nodes)
    assert prob.goal <= nodes
    assert all(s in nodes and d in nodes for s, d in graph.edges)
    for s, d in graph.edges:
        assert not graph.reaches(d, s, STRICT) or graph.edges[(s, d)] is OrderingKind.REASONABLE
    seq = topo_sequence(graph)
    assert not set(seq) & graph.initial and len(seq) <= len(nodes)
    position = {a: i for i, a in enumerate(seq)}
    for s, d in graph.edges:
        if s in position and d in position:
            assert position[s] < position[d]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 4))
def test_gn_edges_match_first_achiever_intersection(seed, n):
    """Recompute first achievers with a plain relaxed fixpoint."""
    prob = gen_blocks(n, seed)
    g = Grounding(blocks_domain(), prob)
    graph = extract_landmarks(g)
    for lm in graph.nodes:
        if lm in graph.initial:
            continue
        reached = set(prob.init)
        grew = True
        while grew:
            grew = False
            for a in g.actions:
                if lm not in a.add and a.pre <= reached and not a.add <= reached:
                    reached |= a.add
                    grew = True
        first = [a for a in g.actions if lm in a.add and a.pre <= reached]
        shared = frozenset.intersection(*(a.pre for a in first)) if first else frozenset()
        assert set(graph.predecessors(lm, [GN])) == shared


# ---- mutexes


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 4))
def test_mutexes_never_co_occur(seed, n):
    g = Grounding(blocks_domain(), gen_blocks(n, seed))
    states = reachable_states(g)
    mutex = mutex_pairs(g)
    for s in states:
        for p in s:
            assert not (mutex.get(p, set()) & s)


def test_mutex_symmetry_on_logistics():
    g = Grounding(logistics_domain(), detour_problem())
    mutex = mutex_pairs(g)
    for p, qs in mutex.items():
        for q in qs:
            assert p in mutex[q]
    assert parse_atom("(airplane-at a0 l1-0)") in mutex[parse_atom("(airplane-at a0 l0-0)")]


# ---- reasonable orders and sequencing


def test_single_node_graph_unchanged(tower4_grounding):
    a = parse_atom("(clear a)")
    graph = LandmarkGraph([a], {}, frozenset(), frozenset([a]))
    out = add_reasonable_orders(graph, tower4_grounding)
    assert out.nodes == [a] and out.edges == {}


def test_clear_b_reasonably_before_holding_a(blocks):
    # C sits on B; picking A up first would have to be undone to unstack C
    prob = blocks_problem([["A"], ["B", "C"]], ["(on A B)"])
    g = Grounding(blocks, prob)
    graph = add_reasonable_orders(extract_landmarks(g), g)
    clear_b, holding_a = parse_atom("(clear b)"), parse_atom("(holding a)")
    assert graph.edges.get((clear_b, holding_a)) is OrderingKind.REASONABLE
    plans = optimal_plans(g, prob.goal)
    assert plans
    for traj in plans:
        first_clear = next(i for i, s in enumerate(traj) if clear_b in s)
        assert all(holding_a not in s for s in traj[:first_clear])
    assert labels(graph, topo_sequence(graph)) == ["(clear b)", "(holding a)", "(on a b)"]


def test_goal_interference_orders_tower_bottom_up(blocks):
    prob = blocks_problem([["A"], ["B"], ["C"]], ["(on A B)", "(on B C)"])
    g = Grounding(blocks, prob)
    graph = add_reasonable_orders(extract_landmarks(g), g)
    assert graph.edges.get((parse_atom("(on b c)"), parse_atom("(on a b)"))) is OrderingKind.REASONABLE
    seq = labels(graph, topo_sequence(graph))
    assert seq.index("(on b c)") < seq.index("(on a b)")


def test_unordered_nodes_are_lexicographic():
    p, q = ("p",), ("q",)
    graph = LandmarkGraph([q, p], {}, frozenset(), frozenset())
    assert topo_sequence(graph) == [p, q]


def test_cycle_detected():
    p, q = ("p",), ("q",)
    graph = LandmarkGraph([p, q], {(p, q): OrderingKind.NATURAL, (q, p): OrderingKind.NATURAL},
                          frozenset(), frozenset())
    with pytest.raises(CycleDetectedError):
        topo_sequence(graph)


def test_tower4_landmark_sequence(tower4_grounding):
    graph = add_reasonable_orders(extract_landmarks(tower4_grounding), tower4_grounding)
    assert labels(graph, topo_sequence(graph)) == ["(clear c)", "(clear b)", "(clear a)"]


def test_detour_order_without_reasonable_edges():
    g = Grounding(logistics_domain(), detour_problem())
    graph = add_reasonable_orders(extract_landmarks(g), g, "none")
    seq = labels(graph, topo_sequence(graph))
    assert seq.index("(airplane-at a0 l0-0)") < seq.index("(in-airplane p0 a0)")


def test_detour_interference_finds_the_edge():
    g = Grounding(logistics_domain(), detour_problem())
    graph = add_reasonable_orders(extract_landmarks(g), g, "interference")
    edge = (parse_atom("(in-airplane p0 a0)"), parse_atom("(airplane-at a0 l0-0)"))
    assert graph.edges.get(edge) is OrderingKind.REASONABLE


def test_goal_directed_tie_break(blocks):
    prob = blocks_problem([["A"], ["B"], ["C", "D"]], ["(on A B)", "(on-table D)"])
    g = Grounding(blocks, prob)
    graph = add_reasonable_orders(extract_landmarks(g), g)
    lex = labels(graph, topo_sequence(graph))
    goal_first = labels(graph, topo_sequence(graph, tie_break="goal-directed",
                                            goals=[parse_atom("(on-table d)"), parse_atom("(on a b)")]))
    assert sorted(lex) == sorted(goal_first)
    assert goal_first.index("(on-table d)") < goal_first.index("(holding a)")
    with pytest.raises(ValueError):
        topo_sequence(graph, tie_break="random")
