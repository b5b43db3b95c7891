"""Dense linear-algebra kernels: quasi-definite LDL', CG, spectral estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import BoxQp, NonFiniteError

PIVOT_REG = 1e-9      # static diagonal regularization, +/- by block
PIVOT_FLOOR = 1e-14   # hard singularity threshold after regularization


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class ConvergenceFailureError(RuntimeError):
    """An iterative estimate failed to settle within its iteration budget."""


# instrumentation: incremented by every ldl_factorize call
_factorization_calls = 0


def factorization_call_count() -> int:
    return _factorization_calls


@dataclass(frozen=True)
class KktSystem:
    """Symmetric quasi-definite system [[Q + sigma I, A'], [A, -R^-1]] w = rhs.

    `dim` = n + m; `n_pos` = n, the size of the positive-definite leading
    block. R = diag(rho) with rho > 0 entrywise.
    """

    dim: int
    n_pos: int
    matrix: np.ndarray
    rhs: np.ndarray


def kkt_matrix(prob: BoxQp, rho: np.ndarray, sigma: float) -> np.ndarray:
    n, m = prob.n, prob.m
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (m,))
    K = np.zeros((n + m, n + m))
    K[:n, :n] = prob.Q + sigma * np.eye(n)
    K[:n, n:] = prob.A.T
    K[n:, :n] = prob.A
    K[n:, n:] = -np.diag(1.0 / rho)
    return K


def kkt_rhs(prob: BoxQp, rho: np.ndarray, x: np.ndarray, z: np.ndarray,
            y: np.ndarray, sigma: float) -> np.ndarray:
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (prob.m,))
    return np.concatenate([sigma * x - prob.p, z - y / rho])


def build_kkt(prob: BoxQp, rho: np.ndarray, sigma: float, x: np.ndarray,
              z: np.ndarray, y: np.ndarray) -> KktSystem:
    return KktSystem(dim=prob.n + prob.m, n_pos=prob.n,
                     matrix=kkt_matrix(prob, rho, sigma),
                     rhs=kkt_rhs(prob, rho, x, z, y, sigma))


class LdlFactorization:
    """LDL' factorization of a symmetric quasi-definite matrix.

    Quasi-definite matrices factor with plain diagonal pivoting in any
    order; pivots that underflow get a static +/-1e-9 regularization
    (positive on the leading block, negative on the trailing block).
    The handle is read-only after construction and supports repeated
    solves; solve() applies one pass of iterative refinement.
    """

    def __init__(self, matrix: np.ndarray, n_pos: int):
        global _factorization_calls
        _factorization_calls += 1
        K = np.array(matrix, dtype=np.float64)
        N = K.shape[0]
        if K.shape != (N, N):
            raise ValueError("matrix must be square")
        d = np.empty(N)
        for k in range(N):
            piv = K[k, k]
            if abs(piv) < PIVOT_REG:
                piv += PIVOT_REG if k < n_pos else -PIVOT_REG
            if abs(piv) < PIVOT_FLOOR:
                raise SingularMatrixError(f"pivot {k} is {piv:.3e} after regularization")
            d[k] = piv
            col = K[k + 1:, k] / piv
            K[k + 1:, k + 1:] -= np.outer(col, K[k + 1:, k])
            K[k + 1:, k] = col
        self._matrix = np.array(matrix, dtype=np.float64)
        self._unit_lower = np.tril(K, -1) + np.eye(N)
        self._d = d
        self._n = N

    def _solve_factored(self, b: np.ndarray) -> np.ndarray:
        L, d, N = self._unit_lower, self._d, self._n
        w = b.astype(np.float64).copy()
        for k in range(N):          # L v = b
            w[k + 1:] -= L[k + 1:, k] * w[k]
        w /= d
        for k in range(N - 1, -1, -1):  # L' w = v
            w[k] -= L[k + 1:, k] @ w[k + 1:]
        return w

    def solve(self, b: np.ndarray) -> np.ndarray:
        w = self._solve_factored(b)
        w += self._solve_factored(b - self._matrix @ w)  # one refinement pass
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("LDL solve produced non-finite values")
        return w


def ldl_factorize(sys: KktSystem) -> LdlFactorization:
    return LdlFactorization(sys.matrix, sys.n_pos)


def cg_solve(M, b: np.ndarray, tol: float, max_iter: int):
    """Conjugate gradient for SPD M (matrix or callable).

    Stops when ||Mw - b|| <= tol * ||b|| or at max_iter; hitting the cap is
    reported through the returned iteration count, not an error.

    Returns (w, iterations).
    """
    matvec = M if callable(M) else (lambda v: M @ v)
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, 0
    threshold = (tol * b_norm) ** 2
    iters = 0
    while rs > threshold and iters < max_iter:
        Mp = matvec(p)
        denom = float(p @ Mp)
        if not np.isfinite(denom) or denom <= 0.0:
            raise NonFiniteError("CG: non-SPD or non-finite curvature encountered")
        alpha = rs / denom
        x += alpha * p
        r -= alpha * Mp
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise NonFiniteError("CG: residual became non-finite")
        p = r + (rs_new / rs) * p
        rs = rs_new
        iters += 1
    return x, iters


@dataclass(frozen=True)
class SpectralEstimates:
    sigma_q_max: float
    sigma_ata_min: float
    sigma_ata_max: float
    kappa_ata: float


def _power_iteration(S: np.ndarray, iterations: int, tol: float) -> float:
    n = S.shape[0]
    if n == 0:
        return 0.0
    v = 1.0 + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    change = np.inf
    for _ in range(iterations):
        w = S @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_new = float(v @ (S @ v))
        change = abs(lam_new - lam)
        lam = lam_new
        if change <= tol * max(1.0, abs(lam)):
            return lam
    if change > 1e-4 * max(1.0, abs(lam)):
        raise ConvergenceFailureError("power iteration did not converge")
    return lam


def spectral_estimates(prob: BoxQp, iterations: int = 200, tol: float = 1e-8) -> SpectralEstimates:
    """Largest eigenvalue of Q and extreme positive eigenvalues of A'A.

    sigma_q_max and sigma_ata_max come from power iteration; the smallest
    positive eigenvalue of A'A comes from a full symmetric eigendecomposition
    (desk scale), discarding eigenvalues below 1e-10 * sigma_ata_max as zero.
    """
    sigma_q_max = _power_iteration(prob.Q, iterations, tol)
    ata = prob.A.T @ prob.A
    sigma_ata_max = _power_iteration(ata, iterations, tol)
    if sigma_ata_max <= 0.0:
        raise ConvergenceFailureError("A'A has no positive eigenvalue (A = 0?)")
    evals = np.linalg.eigvalsh(ata)
    positive = evals[evals > 1e-10 * sigma_ata_max]
    sigma_ata_min = float(positive.min())
    return SpectralEstimates(
        sigma_q_max=float(sigma_q_max),
        sigma_ata_min=sigma_ata_min,
        sigma_ata_max=float(sigma_ata_max),
        kappa_ata=float(sigma_ata_max / sigma_ata_min),
    )
