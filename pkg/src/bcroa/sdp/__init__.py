"""Semidefinite programming: problem container, interior-point solver, SDPA I/O."""

from .problem import SdpProblem, SdpSolution, problem_from_blocks
from .sdpa import export_sdpa, import_sdpa, read_sdpa, write_sdpa
from .solver import SdpOptions, solve

__all__ = ["SdpProblem", "SdpSolution", "SdpOptions", "problem_from_blocks", "solve",
           "export_sdpa", "import_sdpa", "read_sdpa", "write_sdpa"]
