"""Landmarks to curriculum to methods for one problem, plus hierarchical re-solving."""

from __future__ import annotations

import time
from dataclasses import dataclass

from htnlearn.curricula import (
    CurricugenConfig,
    CurricugenResult,
    Curriculum,
    TaskRegistry,
    curricugen,
)
from htnlearn.ground import Grounding
from htnlearn.htn import (
    HierarchicalProblem,
    HtnConfig,
    HtnResult,
    equivalent_hierarchical_problem,
    htn_solve,
)
from htnlearn.learn import LearnReport, MethodLibrary, curriculearn
from htnlearn.pddl import DomainModel, ProblemModel, typed_objects


@dataclass
class ProblemLearnResult:
    gen: CurricugenResult | None
    curriculum: Curriculum
    report: LearnReport
    timings: dict[str, float]

    @property
    def new_methods(self) -> int:
        return len(self.report.new_methods)


def learn_problem(dom: DomainModel, prob: ProblemModel, library: MethodLibrary,
                  cfg: CurricugenConfig | None = None, source: str = "", ordinal: int = 0,
                  curriculum: Curriculum | None = None,
                  grounding: Grounding | None = None) -> ProblemLearnResult:
    """Grow ``library`` from one problem; a supplied ``curriculum`` skips generation."""
    registry = TaskRegistry(dom, library.tasks.values())
    gen = None
    if curriculum is None:
        gen = curricugen(dom, prob, cfg, grounding=grounding, registry=registry)
        curriculum = gen.curriculum
        timings = dict(gen.timings)
    else:
        timings = {"landmarks_s": 0.0, "plan_s": 0.0}
    t0 = time.perf_counter()
    report = curriculearn(curriculum.trace, curriculum, library, typed_objects(dom, prob),
                          source=source or prob.name, ordinal=ordinal)
    timings["methods_s"] = time.perf_counter() - t0
    return ProblemLearnResult(gen, curriculum, report, timings)


def hierarchical_problem_for(dom: DomainModel, prob: ProblemModel, library: MethodLibrary,
                             learned: ProblemLearnResult | None = None) -> HierarchicalProblem:
    """Root tasks follow the learned agenda when there is one, else the goal ordering."""
    agenda = learned.curriculum.agenda if learned is not None and learned.curriculum.agenda else None
    return equivalent_hierarchical_problem(dom, prob, library, agenda)


def solve_hierarchically(dom: DomainModel, prob: ProblemModel, library: MethodLibrary,
                         cfg: HtnConfig | None = None) -> HtnResult:
    return htn_solve(equivalent_hierarchical_problem(dom, prob, library), cfg)
