"""Problem generators shared by the SDP tests and the acceptance suite."""

import numpy as np

from bcroa.sdp import SdpProblem


def x_equals_one() -> SdpProblem:
    """minimize x s.t. [[x, 1], [1, x]] psd, in LMI form."""
    C = -np.array([[0.0, 1.0], [1.0, 0.0]])
    return SdpProblem((2,), np.array([1.0]), {(0, 0): C, (1, 0): np.eye(2)})


def random_feasible(rng, max_n: int = 20, max_m: int = 40) -> SdpProblem:
    """Strictly feasible primal and dual by construction.

    ``b = A(X0)`` with ``X0`` positive definite and ``C = A^T(y0) - Z0`` with
    ``Z0`` positive definite.
    """
    nblocks = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, max(2, max_n // nblocks) + 1)) for _ in range(nblocks)]
    total = sum(s * (s + 1) // 2 for s in sizes)
    m = int(rng.integers(1, min(max_m, total) + 1))
    mats = {}
    for i in range(1, m + 1):
        for j, n in enumerate(sizes):
            if rng.random() < 0.7 or j == 0:
                G = rng.normal(size=(n, n))
                mats[(i, j)] = G + G.T
    X0, Z0 = [], []
    for n in sizes:
        G = rng.normal(size=(n, n))
        X0.append(G @ G.T + np.eye(n))
        H = rng.normal(size=(n, n))
        Z0.append(H @ H.T + np.eye(n))
    y0 = rng.normal(size=m)
    b = np.array([sum(np.sum(mats[(i, j)] * X0[j]) for j in range(nblocks) if (i, j) in mats)
                  for i in range(1, m + 1)])
    for j, n in enumerate(sizes):
        C = -Z0[j]
        for i in range(1, m + 1):
            if (i, j) in mats:
                C = C + y0[i - 1] * mats[(i, j)]
        mats[(0, j)] = C
    return SdpProblem(tuple(sizes), b, mats)


def kkt_residual(p: SdpProblem, sol) -> float:
    rp = p.b - p.constraint_values(sol.X)
    Z = p.lmi_value(sol.y)
    rd = max(float(np.abs(Zc - Zs).max()) for Zc, Zs in zip(Z, sol.Z))
    return max(float(np.abs(rp).max()), rd)
