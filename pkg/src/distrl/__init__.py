"""Distributional confidence-set learners on grid-valued costs.

Exact tabular environments, finite classes of conditional cost laws, the
DistUCB, O-DISCO and P-DISCO learners, an exhaustive eluder-dimension
calculator and a seeded experiment harness.
"""
from .dist import GridDist, hellinger_sq, mean, triangular_discrimination, variance
from .env import CBEnv, Policy, TabularMDP
from .func_class import CondDistTable, FiniteClass

__all__ = ["GridDist", "hellinger_sq", "mean", "triangular_discrimination", "variance",
           "CBEnv", "Policy", "TabularMDP", "CondDistTable", "FiniteClass"]
__version__ = "0.1.0"
