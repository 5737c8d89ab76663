"""Semidefinite program container.

The problem data follow the SDPA convention. With symmetric block-diagonal
matrices ``F0`` (called ``C`` here) and ``F1..Fm`` (``A_i``) and a vector
``b`` (SDPA's ``c``) the pair of programs is::

    (P)  maximize  <C, X>        s.t.  <A_i, X> = b_i,  X psd
    (D)  minimize  b^T y         s.t.  Z = sum_i y_i A_i - C  psd

(P) is the equality form and (D) the linear-matrix-inequality (LMI) form.
Status names of a solution refer to (P): ``infeasible`` means no psd ``X``
satisfies the equalities, ``unbounded`` means (P) is unbounded, which happens
when the LMI (D) has no feasible point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import DimensionError, SdpFormatError


@dataclass
class SdpProblem:
    """Block-diagonal SDP in SDPA form.

    Parameters
    ----------
    block_sizes
        Dimension of each symmetric block.
    b
        Right-hand sides of the equality form (cost vector of the LMI form).
    mats
        ``mats[(k, blk)]`` is the dense symmetric block ``blk`` of matrix ``k``;
        ``k = 0`` is the objective ``C`` and ``k = i`` the constraint ``A_i``.
        Missing keys are zero blocks.
    """

    block_sizes: tuple[int, ...]
    b: np.ndarray
    mats: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    labels: list[str] = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.block_sizes = tuple(int(s) for s in self.block_sizes)
        if any(s < 1 for s in self.block_sizes):
            raise DimensionError("block sizes must be positive")
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        clean = {}
        for (k, blk), M in self.mats.items():
            if not 0 <= blk < len(self.block_sizes):
                raise DimensionError(f"block index {blk} out of range")
            if not 0 <= k <= self.m:
                raise DimensionError(f"matrix index {k} out of range for {self.m} constraints")
            M = np.asarray(M, dtype=float)
            n = self.block_sizes[blk]
            if M.shape != (n, n):
                raise DimensionError(f"matrix ({k}, {blk}) has shape {M.shape}, expected {(n, n)}")
            if not np.allclose(M, M.T, atol=0, rtol=0):
                M = 0.5 * (M + M.T)
            if np.any(M):
                clean[(int(k), int(blk))] = M
        self.mats = clean

    @property
    def m(self) -> int:
        return int(self.b.size)

    @property
    def num_blocks(self) -> int:
        return len(self.block_sizes)

    def block(self, k: int, blk: int) -> np.ndarray:
        M = self.mats.get((k, blk))
        if M is None:
            n = self.block_sizes[blk]
            return np.zeros((n, n))
        return M

    def C(self) -> list[np.ndarray]:
        return [self.block(0, j) for j in range(self.num_blocks)]

    def A(self, i: int) -> list[np.ndarray]:
        return [self.block(i, j) for j in range(self.num_blocks)]

    def vars_in_block(self, blk: int) -> list[int]:
        return sorted(k for (k, j) in self.mats if j == blk and k > 0)

    def validate(self) -> None:
        """Reject exact duplicate constraint rows."""
        seen: dict[tuple, int] = {}
        for i in range(1, self.m + 1):
            key = (float(self.b[i - 1]),) + tuple(
                (j, self.mats[(i, j)].tobytes()) for j in range(self.num_blocks) if (i, j) in self.mats)
            if key in seen:
                raise SdpFormatError(f"constraints {seen[key]} and {i} are exact duplicates")
            seen[key] = i

    # evaluation helpers

    def lmi_value(self, y) -> list[np.ndarray]:
        """``Z(y) = sum_i y_i A_i - C`` per block."""
        y = np.asarray(y, dtype=float)
        out = [-self.block(0, j).copy() for j in range(self.num_blocks)]
        for (k, j), M in self.mats.items():
            if k > 0:
                out[j] += y[k - 1] * M
        return out

    def constraint_values(self, X: list[np.ndarray]) -> np.ndarray:
        """``[<A_i, X>]_i``."""
        out = np.zeros(self.m)
        for (k, j), M in self.mats.items():
            if k > 0:
                out[k - 1] += float(np.sum(M * X[j]))
        return out

    def objective_value(self, X: list[np.ndarray]) -> float:
        return float(sum(np.sum(self.block(0, j) * X[j]) for j in range(self.num_blocks)))

    def permuted(self, perm) -> "SdpProblem":
        """Same problem with constraint ``i`` moved to position ``perm[i]``."""
        perm = list(perm)
        b = np.empty(self.m)
        mats = {}
        for i in range(self.m):
            b[perm[i]] = self.b[i]
        for (k, j), M in self.mats.items():
            nk = 0 if k == 0 else perm[k - 1] + 1
            mats[(nk, j)] = M.copy()
        return SdpProblem(self.block_sizes, b, mats)

    def structurally_equal(self, other: "SdpProblem") -> bool:
        if self.block_sizes != other.block_sizes or self.m != other.m:
            return False
        if not np.array_equal(self.b, other.b) or set(self.mats) != set(other.mats):
            return False
        return all(np.array_equal(M, other.mats[key]) for key, M in self.mats.items())


@dataclass
class SdpSolution:
    """Primal-dual solution of an :class:`SdpProblem`.

    ``X`` solves the equality form, ``y`` and ``Z`` the LMI form.
    ``primal_objective`` is ``<C, X>`` and ``dual_objective`` is ``b^T y``.
    """

    status: str
    X: list[np.ndarray]
    y: np.ndarray
    Z: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    gap: float
    max_residual: float
    iterations: int
    message: str = ""
    certificate_norm: float | None = None
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def lmi_infeasible(self) -> bool:
        return self.status == "unbounded"

    def min_eig(self) -> float:
        vals = [np.linalg.eigvalsh(M).min() for M in self.X if M.size]
        return float(min(vals)) if vals else 0.0

    def summary(self) -> dict:
        return {"status": self.status, "primal_objective": self.primal_objective,
                "dual_objective": self.dual_objective, "gap": self.gap,
                "max_residual": self.max_residual, "iterations": self.iterations,
                "message": self.message, "certificate_norm": self.certificate_norm}


def problem_from_blocks(block_sizes, b, C: Mapping[int, np.ndarray],
                        A: list[Mapping[int, np.ndarray]]) -> SdpProblem:
    """Assemble from per-matrix block dictionaries (``A[i][blk]`` is block ``blk`` of ``A_{i+1}``)."""
    mats = {(0, j): M for j, M in C.items()}
    for i, Ai in enumerate(A):
        for j, M in Ai.items():
            mats[(i + 1, j)] = M
    return SdpProblem(tuple(block_sizes), np.asarray(b, dtype=float), mats)
