import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import atoms
from htnlearn.generators import data_text, gen_blocks, gen_logistics, logistics_domain
from htnlearn.pddl import (
    PDDLSemanticError,
    PDDLSyntaxError,
    UnsupportedRequirementError,
    domain_to_pddl,
    parse_domain,
    parse_problem,
    problem_to_pddl,
)

EMPTY_DOMAIN = """
(define (domain nothing)
  (:requirements :strips)
  (:predicates (p)))
"""


def test_blocks_domain_has_four_actions(blocks):
    assert sorted(a.name for a in blocks.action_schemas) == ["pickup", "putdown", "stack", "unstack"]
    assert blocks.display_names["unstack"] == "Unstack"


def test_domain_with_no_actions():
    dom = parse_domain(EMPTY_DOMAIN)
    assert dom.action_schemas == ()
    assert [p.name for p in dom.predicates] == ["p"]


@pytest.mark.parametrize("req", [":fluents", ":negative-preconditions", ":adl"])
def test_unsupported_requirement_is_named(req):
    text = EMPTY_DOMAIN.replace(":strips", f":strips {req}")
    with pytest.raises(UnsupportedRequirementError) as err:
        parse_domain(text)
    assert err.value.keyword == req
    assert req in str(err.value)


def test_syntax_error_reports_position():
    with pytest.raises(PDDLSyntaxError) as err:
        parse_domain("(define (domain d)\n  (:predicates (p)")
    assert err.value.line >= 1 and err.value.column >= 1


def test_undeclared_type_in_action():
    text = """
    (define (domain d) (:requirements :strips :typing)
      (:types block)
      (:predicates (p ?x - block))
      (:action a :parameters (?x - ball) :precondition (p ?x) :effect (not (p ?x))))
    """
    with pytest.raises(PDDLSemanticError):
        parse_domain(text)


def test_undeclared_predicate_in_action():
    text = """
    (define (domain d) (:requirements :strips)
      (:predicates (p ?x))
      (:action a :parameters (?x) :precondition (q ?x) :effect (p ?x)))
    """
    with pytest.raises(PDDLSemanticError):
        parse_domain(text)


def test_untyped_parameters_default_to_object():
    dom = parse_domain("""
    (define (domain d) (:requirements :strips)
      (:predicates (p ?x))
      (:action a :parameters (?x) :precondition (p ?x) :effect (not (p ?x))))
    """)
    assert dom.action_table["a"].params == (("?x", "object"),)


def test_tower4_problem(tower4):
    assert tower4.init == atoms("(on-table A)", "(on B A)", "(on C B)", "(on D C)", "(clear D)", "(hand-empty)")
    assert tower4.goal == atoms("(clear A)")


def test_goal_subset_of_init_is_valid(blocks):
    prob = parse_problem("""
    (define (problem p) (:domain blocks) (:objects a - block)
      (:init (on-table a) (clear a) (hand-empty)) (:goal (clear a)))
    """, blocks)
    assert prob.goal <= prob.init


def test_object_of_undeclared_type(blocks):
    with pytest.raises(PDDLSemanticError):
        parse_problem("""
        (define (problem p) (:domain blocks) (:objects a - ball)
          (:init (hand-empty)) (:goal (hand-empty)))
        """, blocks)


def test_domain_name_mismatch(blocks):
    with pytest.raises(PDDLSemanticError):
        parse_problem("(define (problem p) (:domain other) (:objects a - block) (:init) (:goal (clear a)))",
                      blocks)


def test_unknown_object_in_goal(blocks):
    with pytest.raises(PDDLSemanticError):
        parse_problem("(define (problem p) (:domain blocks) (:objects a - block) (:init) (:goal (clear b)))",
                      blocks)


def test_ill_typed_atom(logistics):
    text = data_text("logistics-detour.pddl").replace("(obj-at p0 l2-0)", "(obj-at l2-0 p0)")
    with pytest.raises(PDDLSemanticError):
        parse_problem(text, logistics)


def test_symbols_are_case_insensitive(blocks):
    prob = parse_problem("""
    (define (problem P) (:DOMAIN Blocks) (:objects A - Block)
      (:init (ON-TABLE A) (Clear a) (hand-empty)) (:goal (CLEAR A)))
    """, blocks)
    assert prob.goal == atoms("(clear a)")
    assert prob.display_names["a"] == "A"


def test_comments_are_ignored():
    dom = parse_domain("; header\n" + EMPTY_DOMAIN.replace("(p)))", "(p))) ; trailing"))
    assert dom.name == "nothing"


def test_parse_is_deterministic():
    text = data_text("logistics.pddl")
    assert parse_domain(text) == parse_domain(text)


@pytest.mark.parametrize("name", ["blocks.pddl", "logistics.pddl"])
def test_domain_round_trip(name):
    dom = parse_domain(data_text(name))
    again = parse_domain(domain_to_pddl(dom))
    assert again.predicates == dom.predicates
    assert again.action_schemas == dom.action_schemas
    assert again.types == dom.types


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 7), seed=st.integers(0, 10_000))
def test_blocks_problem_round_trip(blocks, n, seed):
    prob = gen_blocks(n, seed)
    again = parse_problem(problem_to_pddl(prob), blocks)
    assert (again.objects, again.init, again.goal) == (prob.objects, prob.init, prob.goal)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), packages=st.integers(1, 3))
def test_logistics_problem_round_trip(seed, packages):
    prob = gen_logistics(2, 2, packages, 1, 1, seed)
    again = parse_problem(problem_to_pddl(prob), logistics_domain())
    assert (again.objects, again.init, again.goal) == (prob.objects, prob.init, prob.goal)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_atom_interning_cardinality(blocks, seed):
    text = problem_to_pddl(gen_blocks(4, seed))
    a, b = parse_problem(text, blocks), parse_problem(text, blocks)
    assert len(a.init | a.goal) == len(b.init | b.goal)
    assert a.init == b.init
