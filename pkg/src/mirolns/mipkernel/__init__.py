"""Self-contained LP/MIP kernel for the vessel-neighborhood subproblems."""

from .lp import (EQ, GE, LE, LpError, LpInfeasibleError, LpProblem, LpResult,
                 SimplexSolver, solve_lp)
from .mip import (KernelError, MipResult, Subproblem, encode_assignment,
                  export_lp_text, extract_schedule, result_schedule,
                  root_bound, solve_full, solve_lp_bound, solve_mip)

__all__ = [
    "EQ", "GE", "LE", "LpError", "LpInfeasibleError", "LpProblem", "LpResult",
    "SimplexSolver", "solve_lp", "KernelError", "MipResult", "Subproblem",
    "encode_assignment", "export_lp_text", "extract_schedule",
    "result_schedule", "root_bound", "solve_full", "solve_lp_bound", "solve_mip",
]
