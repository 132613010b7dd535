import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import atoms
from htnlearn.generators import (
    blocks_domain,
    blocks_problem_text,
    count_arrangements,
    detour_problem,
    tower4_problem,
    gen_blocks,
    gen_logistics,
    generate,
    logistics_domain,
    random_arrangement,
)
from htnlearn.ground import Grounding, validate_plan
from htnlearn.pddl import parse_problem
from htnlearn.search import classical_plan

SEED7_INIT = atoms("(clear a)", "(clear b)", "(hand-empty)", "(on a e)", "(on b c)", "(on c d)",
                   "(on-table d)", "(on-table e)")
SEED7_GOAL = atoms("(on a b)", "(on b c)", "(on c d)", "(on e a)", "(on-table d)")


def solve(dom, prob):
    plan = classical_plan(Grounding(dom, prob), prob.init, prob.goal)
    validate_plan(prob, plan)
    return plan


def test_arrangement_counts():
    assert [count_arrangements(n) for n in range(6)] == [1, 1, 3, 13, 73, 501]


def test_tower4_as_generator_output(blocks):
    text = blocks_problem_text("blocks-4-clear-a", [["A", "B", "C", "D"]], [])
    prob = parse_problem(text.replace("(:goal (and ))", "(:goal (clear A))"), blocks)
    assert prob.init == tower4_problem().init


def test_single_block():
    prob = gen_blocks(1, 0)
    assert prob.init == atoms("(on-table a)", "(clear a)", "(hand-empty)")
    assert prob.goal == atoms("(on-table a)")
    assert solve(blocks_domain(), prob) == []


def test_five_blocks_seed_seven_fixture():
    prob = gen_blocks(5, 7)
    assert prob.init == SEED7_INIT
    assert prob.goal == SEED7_GOAL
    assert len(solve(blocks_domain(), prob)) == 4


def test_generation_is_deterministic():
    assert gen_blocks(5, "x").init == gen_blocks(5, "x").init
    assert gen_logistics(3, 2, 1, 1, 1, 4).goal == gen_logistics(3, 2, 1, 1, 1, 4).goal


def test_arrangements_are_uniform():
    rng = random.Random(0)
    draws = Counter(tuple(map(tuple, sorted(random_arrangement(list("abc"), rng)))) for _ in range(13_000))
    assert len(draws) == count_arrangements(3)
    assert all(800 < c < 1200 for c in draws.values())


def test_scrambled_goal_usually_differs():
    differs = sum(gen_blocks(5, s).goal != {a for a in gen_blocks(5, s).init if a[0] in ("on", "on-table")}
                  for s in range(20))
    assert differs >= 15


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 5), mode=st.sampled_from(["scramble", "uniform"]))
def test_blocks_problems_are_well_formed_and_solvable(seed, n, mode):
    prob = gen_blocks(n, seed, goal_mode=mode)
    blocks = {o for o, t in prob.objects.items() if t == "block"} if isinstance(prob.objects, dict) else None
    tops = [a for a in prob.init if a[0] in ("on", "on-table")]
    assert len(tops) == n  # every block sits on exactly one thing
    goal_tops = [a for a in prob.goal if a[0] in ("on", "on-table")]
    assert len(goal_tops) == n and len(prob.goal) == n
    if blocks is not None:
        assert len(blocks) == n
    solve(blocks_domain(), prob)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_logistics_problems_have_the_expected_shape(seed):
    prob = gen_logistics(3, 2, 1, 1, 1, seed)
    in_city = [a for a in prob.init if a[0] == "in-city"]
    assert len(in_city) == 6
    assert len([a for a in prob.init if a[0] == "truck-at"]) == 3
    assert len([a for a in prob.init if a[0] == "airplane-at"]) == 1
    (goal,) = prob.goal
    assert goal[:2] == ("obj-at", "p0")
    solve(logistics_domain(), prob)


def test_package_already_delivered():
    for seed in range(200):
        prob = gen_logistics(1, 1, 1, 1, 1, seed)
        assert prob.goal <= prob.init  # one location: nothing to do
    assert solve(logistics_domain(), prob) == []


def test_detour_fixture():
    prob = detour_problem()
    assert atoms("(obj-at p0 l2-0)", "(airplane-at a0 l1-0)") <= prob.init
    assert prob.goal == atoms("(obj-at p0 l0-0)")
    solve(logistics_domain(), prob)


def test_bad_sizes_rejected():
    with pytest.raises(ValueError):
        gen_blocks(0, 1)
    with pytest.raises(ValueError):
        gen_logistics(0, 2, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        gen_blocks(3, 1, goal_mode="mirror")


def test_generate_dispatch():
    assert len([a for a in generate("blocks", 3, n_blocks=4).init if a[0] == "clear"]) >= 1
    assert generate("logistics", 3).goal == gen_logistics(3, 2, 1, 1, 1, 3).goal
