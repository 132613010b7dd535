"""Learn HTN methods from curricula built out of planning landmarks."""

from htnlearn.pddl import DomainModel, ProblemModel, parse_domain, parse_problem
from htnlearn.relax import BACKEND

__all__ = ["BACKEND", "DomainModel", "ProblemModel", "parse_domain", "parse_problem"]
__version__ = "0.1.0"
