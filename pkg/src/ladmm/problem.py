"""Box-constrained convex QP data, iterates, residuals and optimality metrics.

Problem form:

    minimize    0.5 x'Qx + p'x
    subject to  l <= Ax <= u

with Q symmetric positive semidefinite and per-row bounds in R u {+-inf}.
Rows with finite l_i == u_i are equality rows; everything else is an
inequality row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYMMETRY_TOL = 1e-10
PSD_TOL = -1e-8
BOUND_TOL = 1e-9  # membership tolerance for "z at a bound" tests


class ValidationError(ValueError):
    """Problem data violates a structural invariant."""


class NonFiniteError(FloatingPointError):
    """A solver state picked up a NaN or infinity."""


def _as_matrix(a, rows, cols, name):
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if a.shape != (rows, cols):
        raise ValidationError(f"{name} must have shape {(rows, cols)}, got {a.shape}")
    return a


def _as_vector(a, size, name):
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64)).reshape(-1)
    if a.shape != (size,):
        raise ValidationError(f"{name} must have length {size}, got {a.shape}")
    return a


def min_eigenvalue_estimate(Q: np.ndarray, iterations: int = 100) -> float:
    """Estimate the smallest eigenvalue of symmetric Q by shifted power iteration."""
    n = Q.shape[0]
    if n == 0:
        return 0.0
    v = 1.0 + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    lam_max = 0.0
    for _ in range(iterations):
        w = Q @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_max = float(v @ (Q @ v))
    shift = abs(lam_max)
    # largest eigenvalue of (shift*I - Q) is shift - lambda_min(Q)
    S = shift * np.eye(n) - Q
    v = 1.0 + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iterations):
        w = S @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
        mu = float(v @ (S @ v))
    return shift - mu


@dataclass(frozen=True)
class BoxQp:
    """Immutable problem data (Q, p, A, l, u)."""

    Q: np.ndarray
    p: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def equality_mask(self) -> np.ndarray:
        """True on rows with finite l == u."""
        return np.isfinite(self.l) & np.isfinite(self.u) & (self.l == self.u)

    @staticmethod
    def create(Q, p, A, l, u, validate: bool = True) -> "BoxQp":
        Q = np.ascontiguousarray(np.asarray(Q, dtype=np.float64))
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValidationError(f"Q must be square, got shape {Q.shape}")
        n = Q.shape[0]
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[1] != n:
            raise ValidationError(f"A must have {n} columns, got shape {A.shape}")
        m = A.shape[0]
        prob = BoxQp(
            Q=Q,
            p=_as_vector(p, n, "p"),
            A=_as_matrix(A, m, n, "A"),
            l=_as_vector(l, m, "l"),
            u=_as_vector(u, m, "u"),
        )
        if validate:
            validate_box_qp(prob)
        return prob


def validate_box_qp(prob: BoxQp) -> None:
    """Enforce BoxQp invariants; raises ValidationError."""
    if not np.all(np.isfinite(prob.Q)):
        raise ValidationError("Q has non-finite entries")
    if not np.all(np.isfinite(prob.p)):
        raise ValidationError("p has non-finite entries")
    if not np.all(np.isfinite(prob.A)):
        raise ValidationError("A has non-finite entries")
    if np.any(np.isnan(prob.l)) or np.any(np.isnan(prob.u)):
        raise ValidationError("bounds contain NaN")
    dev = np.max(np.abs(prob.Q - prob.Q.T)) if prob.n else 0.0
    if dev > SYMMETRY_TOL:
        raise ValidationError(f"Q asymmetric: max |Q - Q'| = {dev:.3e} > {SYMMETRY_TOL}")
    if np.any(prob.l > prob.u):
        raise ValidationError("some l_i > u_i")
    lam_min = min_eigenvalue_estimate(prob.Q)
    if lam_min < PSD_TOL:
        raise ValidationError(f"Q not PSD: estimated min eigenvalue {lam_min:.3e}")


@dataclass
class Iterate:
    """Primal/dual solver state. Owned by a single solver run."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    x_tilde: np.ndarray
    z_tilde: np.ndarray
    nu: np.ndarray

    @staticmethod
    def zeros(n: int, m: int) -> "Iterate":
        return Iterate(np.zeros(n), np.zeros(m), np.zeros(m), np.zeros(n), np.zeros(m), np.zeros(m))

    def copy(self) -> "Iterate":
        return Iterate(self.x.copy(), self.z.copy(), self.y.copy(),
                       self.x_tilde.copy(), self.z_tilde.copy(), self.nu.copy())

    def assert_finite(self) -> None:
        for name in ("x", "z", "y", "x_tilde", "z_tilde", "nu"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteError(f"iterate field {name} has non-finite entries")


@dataclass(frozen=True)
class Residuals:
    r_primal: np.ndarray
    r_dual: np.ndarray
    primal_norm: float
    dual_norm: float


@dataclass
class SolveMetrics:
    objective: float = 0.0
    mean_ineq_violation: float = 0.0
    mean_eq_violation: float = 0.0
    factorization_count: int = 0
    iteration_count: int = 0
    wall_time_seconds: float = 0.0


def eval_objective(prob: BoxQp, x: np.ndarray) -> float:
    """0.5 x'Qx + p'x."""
    x = _as_vector(x, prob.n, "x")
    return float(0.5 * x @ (prob.Q @ x) + prob.p @ x)


def residuals(prob: BoxQp, it: Iterate) -> Residuals:
    """Primal residual Ax - z and dual residual Qx + p + A'y."""
    if it.x.shape != (prob.n,) or it.z.shape != (prob.m,) or it.y.shape != (prob.m,):
        raise ValidationError("iterate dimensions do not match problem")
    r_primal = prob.A @ it.x - it.z
    r_dual = prob.Q @ it.x + prob.p + prob.A.T @ it.y
    return Residuals(r_primal, r_dual,
                     float(np.linalg.norm(r_primal)), float(np.linalg.norm(r_dual)))


def project_box(v: np.ndarray, l: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Componentwise projection onto [l, u]; infinite bounds are no-ops."""
    return np.minimum(np.maximum(v, l), u)


def constraint_violations(prob: BoxQp, x: np.ndarray) -> tuple[float, float]:
    """(mean inequality violation, mean equality violation) of Ax.

    Equality rows score |a_i'x - u_i|; inequality rows score the sum of the
    positive parts of (a_i'x - u_i) and (l_i - a_i'x). Each class averages
    over its own rows and scores 0 when empty.
    """
    ax = prob.A @ _as_vector(x, prob.n, "x")
    eq = prob.equality_mask
    mean_eq = float(np.mean(np.abs(ax[eq] - prob.u[eq]))) if eq.any() else 0.0
    ineq = ~eq
    if ineq.any():
        over = np.maximum(0.0, ax[ineq] - prob.u[ineq])
        under = np.maximum(0.0, prob.l[ineq] - ax[ineq])
        # inf - inf cannot occur: u=+inf gives over=-inf clipped to 0
        mean_ineq = float(np.mean(over + under))
    else:
        mean_ineq = 0.0
    return mean_ineq, mean_eq


def stationarity_violation(prob: BoxQp, it: Iterate) -> float:
    """Max-norm KKT violation of (x, z, y).

    Combines the dual residual, the primal residual, and the normal-cone
    condition y in N_[l,u](z): strictly interior coordinates need y_i = 0,
    a lower-active coordinate needs y_i <= 0, an upper-active one y_i >= 0,
    and equality rows are unconstrained in y.
    """
    r = residuals(prob, it)
    dual_inf = float(np.max(np.abs(r.r_dual))) if prob.n else 0.0
    prim_inf = float(np.max(np.abs(r.r_primal))) if prob.m else 0.0
    cone = 0.0
    for i in range(prob.m):
        li, ui, zi, yi = prob.l[i], prob.u[i], it.z[i], it.y[i]
        if li == ui:
            continue
        at_lower = np.isfinite(li) and abs(zi - li) <= BOUND_TOL
        at_upper = np.isfinite(ui) and abs(zi - ui) <= BOUND_TOL
        if at_lower:
            v = max(0.0, yi)
        elif at_upper:
            v = max(0.0, -yi)
        else:
            v = abs(yi)
        cone = max(cone, v)
    return max(dual_inf, prim_inf, cone)
