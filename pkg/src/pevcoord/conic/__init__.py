"""Symmetric-cone programming: modeling layer and interior-point solver."""

from .ipm import solve
from .problem import (Block, ConicProblem, ConicSolution, LinExpr, Model, Status,
                      Tolerances, lsum)

__all__ = ["Block", "ConicProblem", "ConicSolution", "LinExpr", "Model", "Status",
           "Tolerances", "lsum", "solve"]
