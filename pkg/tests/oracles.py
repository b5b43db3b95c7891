"""Independent reference implementations used only by the test suite.

Everything here deliberately avoids the code paths under test: dense
Gaussian elimination with partial pivoting instead of LDL', a cyclic Jacobi
eigensolver instead of power iteration, and a working-set QP method (direct
KKT solves plus combinatorial pivoting) instead of operator splitting.
"""

from __future__ import annotations

import numpy as np


def gepp_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting, written out longhand."""
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = A.shape[0]
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[piv, k]) < 1e-300:
            raise np.linalg.LinAlgError("singular matrix in GEPP oracle")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


def jacobi_eigenvalues(S: np.ndarray, sweeps: int = 60, tol: float = 1e-14) -> np.ndarray:
    """Eigenvalues of a symmetric matrix via cyclic Jacobi rotations."""
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off < tol * max(1.0, np.linalg.norm(np.diag(A))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
    return np.sort(np.diag(A))


class ActiveSetFailure(RuntimeError):
    pass


def active_set_qp(prob, max_pivots: int = 500, tol: float = 1e-9):
    """Working-set oracle for strictly convex BoxQp instances.

    Solves equality-KKT systems over a working set of active rows, adding the
    most violated bound and dropping the most wrongly-signed multiplier until
    the KKT conditions hold.  Returns (x, y) with the dual signs matching
    Qx + p + A'y = 0 (y_i <= 0 at a lower bound, >= 0 at an upper bound).
    """
    Q, p, A, l, u = prob.Q, prob.p, prob.A, prob.l, prob.u
    n, m = prob.n, prob.m
    eq_rows = np.where(prob.equality_mask)[0]
    # working set: row index -> active bound value and side (+1 upper, -1 lower)
    work: dict[int, tuple[float, int]] = {int(i): (u[int(i)], 0) for i in eq_rows}

    def solve_kkt(active: dict[int, tuple[float, int]]):
        rows = sorted(active)
        k = len(rows)
        KKT = np.zeros((n + k, n + k))
        KKT[:n, :n] = Q
        rhs = np.concatenate([-p, [active[r][0] for r in rows]])
        for j, r in enumerate(rows):
            KKT[:n, n + j] = A[r]
            KKT[n + j, :n] = A[r]
        sol = np.linalg.solve(KKT, rhs)
        x = sol[:n]
        y = np.zeros(m)
        y[rows] = sol[n:]
        return x, y

    for _ in range(max_pivots):
        x, y = solve_kkt(work)
        ax = A @ x
        # most violated inactive bound
        worst, worst_row, worst_side = tol, -1, 0
        for i in range(m):
            if i in work:
                continue
            over = ax[i] - u[i]
            under = l[i] - ax[i]
            if over > worst:
                worst, worst_row, worst_side = over, i, +1
            if under > worst:
                worst, worst_row, worst_side = under, i, -1
        if worst_row >= 0:
            bound = u[worst_row] if worst_side > 0 else l[worst_row]
            work[worst_row] = (bound, worst_side)
            continue
        # multiplier signs on active inequality rows: y >= 0 at an upper
        # bound, y <= 0 at a lower bound; drop the most wrongly signed
        worst, drop = tol, -1
        for r, (_, side) in work.items():
            if side == 0:
                continue  # equality rows never leave
            wrongness = -y[r] if side > 0 else y[r]
            if wrongness > worst:
                worst, drop = wrongness, r
        if drop >= 0:
            del work[drop]
            continue
        return x, y
    raise ActiveSetFailure("working-set oracle did not settle")


def fd_gradient(f, x0: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function."""
    g = np.zeros_like(x0, dtype=np.float64)
    for i in range(x0.size):
        e = np.zeros_like(g)
        e.flat[i] = step
        g.flat[i] = (f(x0 + e) - f(x0 - e)) / (2.0 * step)
    return g
