import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import act, atoms
from htnlearn.generators import blocks_domain, blocks_problem_text, gen_blocks, gen_logistics, logistics_domain
from htnlearn.ground import (
    GoalNotAchievedError,
    Grounding,
    InapplicableActionError,
    PlanValidationError,
    StepInapplicableError,
    format_plan,
    gamma_apply,
    ground_actions,
    instantiate,
    parse_plan,
    validate_plan,
)
from htnlearn.pddl import ActionSchema, parse_problem, typed_objects

TOWER4_PLAN = ["unstack d c", "putdown d", "unstack c b", "putdown c", "unstack b a"]


def naive_ground_count(dom, prob):
    """Every typed argument tuple, then a delete-relaxed fixpoint over them."""
    objs = typed_objects(dom, prob)
    candidates = []
    for schema in dom.action_schemas:
        pools = [[o for o, t in objs.items() if dom.is_subtype(t, ty)] for _, ty in schema.params]
        for args in itertools.product(*pools):
            b = dict(zip(schema.variables, args))
            sub = lambda atom: tuple(b.get(x, x) for x in atom)  # noqa: E731
            candidates.append(({sub(p) for p in schema.preconditions}, {sub(p) for p in schema.add_effects}))
    reached = set(prob.init)
    fired = set()
    grew = True
    while grew:
        grew = False
        for i, (pre, add) in enumerate(candidates):
            if i not in fired and pre <= reached:
                fired.add(i)
                reached |= add
                grew = True
    return len(fired)


def test_unstack_d_c_is_grounded(blocks, tower4):
    names = {(a.schema, a.args) for a in ground_actions(blocks, tower4)}
    assert ("unstack", ("d", "c")) in names


def test_no_objects_means_no_actions(blocks):
    prob = parse_problem("(define (problem e) (:domain blocks) (:init (hand-empty)) (:goal (hand-empty)))", blocks)
    assert ground_actions(blocks, prob) == ()


def test_ground_count_three_blocks(blocks):
    prob = parse_problem(blocks_problem_text("three", [["A", "B", "C"]], [["A", "B", "C"]]), blocks)
    assert len(ground_actions(blocks, prob)) == naive_ground_count(blocks, prob)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ground_count_logistics(seed):
    dom = logistics_domain()
    prob = gen_logistics(2, 2, 1, 1, 1, seed)
    assert len(ground_actions(dom, prob)) == naive_ground_count(dom, prob)


def test_ground_actions_sorted_and_disjoint(blocks, tower4):
    acts = ground_actions(blocks, tower4)
    assert [(a.schema, a.args) for a in acts] == sorted((a.schema, a.args) for a in acts)
    assert [a.index for a in acts] == list(range(len(acts)))
    assert all(not (a.add & a.delete) for a in acts)


def test_gamma_unstack(tower4_grounding, tower4):
    s = gamma_apply(tower4.init, act(tower4_grounding, "unstack d c"))
    assert atoms("(holding D)", "(clear C)") <= s
    assert not atoms("(on D C)", "(hand-empty)") & s


def test_gamma_empty_effects_is_identity():
    noop = instantiate(ActionSchema("noop", (), (), (), ()), ())
    s = frozenset(atoms("(clear a)"))
    assert gamma_apply(s, noop) == s


def test_gamma_inapplicable(tower4_grounding, tower4):
    with pytest.raises(InapplicableActionError):
        gamma_apply(tower4.init, act(tower4_grounding, "putdown d"))


def test_validate_tower4_plan(tower4_grounding, tower4):
    plan = [act(tower4_grounding, t) for t in TOWER4_PLAN]
    traj = validate_plan(tower4, plan)
    assert len(traj) == 6
    assert atoms("(clear A)") <= traj[-1]


def test_validate_empty_plan():
    s0 = frozenset(atoms("(clear a)"))
    assert validate_plan(s0, [], atoms("(clear a)")) == [s0]


def test_swapped_plan_fails_at_step_one(tower4_grounding, tower4):
    plan = [act(tower4_grounding, t) for t in TOWER4_PLAN]
    plan[0], plan[1] = plan[1], plan[0]
    with pytest.raises(StepInapplicableError) as err:
        validate_plan(tower4, plan)
    assert err.value.step == 1


def test_goal_not_achieved(tower4_grounding, tower4):
    with pytest.raises(GoalNotAchievedError):
        validate_plan(tower4, [act(tower4_grounding, "unstack d c")])


def test_plan_file_round_trip(tower4_grounding):
    plan = [act(tower4_grounding, t) for t in TOWER4_PLAN]
    text = format_plan(plan, tower4_grounding.names)
    assert text.splitlines()[0] == "(!Unstack D C)"
    assert parse_plan("; comment\n" + text, tower4_grounding) == plan


def test_bitset_transitions_match_gamma(tower4_grounding, tower4):
    g = tower4_grounding
    bits, s = g.init_bits, frozenset(tower4.init)
    for t in TOWER4_PLAN:
        a = act(g, t)
        bits, s = g.successor(bits, a), gamma_apply(s, a)
        assert g.decode(bits) == s


def _walks(draw_seed, n_blocks, length):
    """A random applicable walk in a random blocks problem."""
    rng = random.Random(draw_seed)
    prob = gen_blocks(n_blocks, draw_seed)
    g = Grounding(blocks_domain(), prob)
    s = frozenset(prob.init)
    walk = []
    for _ in range(length):
        options = [a for a in g.actions if a.pre <= s]
        a = rng.choice(options)
        walk.append(a)
        s = gamma_apply(s, a)
    return g, prob, walk


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5), length=st.integers(0, 12))
def test_frame_property_and_determinism(seed, n, length):
    g, prob, walk = _walks(seed, n, length)
    s = frozenset(prob.init)
    universe = frozenset(g.atoms)
    for a in walk:
        t = gamma_apply(s, a)
        assert t == gamma_apply(s, a)
        untouched = universe - a.add - a.delete
        assert (t & untouched) == (s & untouched)
        s = t


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5), length=st.integers(0, 12),
       cut=st.integers(0, 12), goal_pick=st.integers(0, 1000))
def test_validate_agrees_with_folding_gamma(seed, n, length, cut, goal_pick):
    g, prob, walk = _walks(seed, n, length)
    plan = list(walk)
    if plan and cut < len(plan):
        plan.pop(cut)  # may break applicability
    goal = frozenset([g.atoms[goal_pick % len(g.atoms)]])

    def fold():
        s = frozenset(prob.init)
        for a in plan:
            if not a.pre <= s:
                return None
            s = gamma_apply(s, a)
        return s

    final = fold()
    expected_ok = final is not None and goal <= final
    try:
        traj = validate_plan(frozenset(prob.init), plan, goal)
        ok = True
        assert traj[-1] == final and len(traj) == len(plan) + 1
    except PlanValidationError:
        ok = False
    assert ok == expected_ok
