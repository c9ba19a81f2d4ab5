from .ipm import Cone, IPMResult, solve_coneqp
from .program import (ConicProgram, ConicSolution, SOCConstraint, VariableLayout,
                      solve)

__all__ = [
    "Cone",
    "IPMResult",
    "solve_coneqp",
    "ConicProgram",
    "ConicSolution",
    "SOCConstraint",
    "VariableLayout",
    "solve",
]
