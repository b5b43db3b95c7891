"""Modified Ruiz equilibration and exact solution unscaling.

Each sweep rescales the symmetric KKT-shaped matrix M = [[Q, A'], [A, 0]]
by delta_i = 1 / sqrt(||M_i||_inf) per row (1 for zero rows), then applies
a cost scaling gamma = 1 / max(mean_i ||Q_i||_inf, ||p||_inf) to Q and p.
The accumulated diagonals (D, E) and cost factor c transform a problem as

    Q -> c D Q D,  p -> c D p,  A -> E A D,  l -> E l,  u -> E u

and a solution of the scaled problem maps back through x = D x_s,
z = E^-1 z_s, y = (1/c) E y_s (the dual rule is fixed by requiring the
unscaled KKT conditions to hold).  Infinite bounds stay infinite under any
positive scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import BoxQp, Iterate


@dataclass(frozen=True)
class ScalingState:
    """Positive diagonal scalings D (n), E (m) and cost factor c."""

    D: np.ndarray
    E: np.ndarray
    c: float
    iterations_run: int

    @staticmethod
    def identity(n: int, m: int) -> "ScalingState":
        return ScalingState(np.ones(n), np.ones(m), 1.0, 0)


def _scale_bound(bound: np.ndarray, e: np.ndarray) -> np.ndarray:
    # e > 0 finite, so +-inf stays put and no 0*inf can occur
    return bound * e


def ruiz_equilibrate(prob: BoxQp, max_iter: int = 10) -> ScalingState:
    """Run `max_iter` equilibration sweeps and return the accumulated scaling."""
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    n, m = prob.n, prob.m
    Q = prob.Q.copy()
    p = prob.p.copy()
    A = prob.A.copy()
    l = prob.l.copy()
    u = prob.u.copy()
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    for _ in range(max_iter):
        # row inf-norms of M = [[Q, A'], [A, 0]] at the current scaling
        q_part = np.max(np.abs(Q), axis=1) if n else np.zeros(0)
        if m:
            a_col = np.max(np.abs(A), axis=0) if n else np.zeros(0)
            a_row = np.max(np.abs(A), axis=1)
        else:
            a_col = np.zeros(n)
            a_row = np.zeros(0)
        norms = np.concatenate([np.maximum(q_part, a_col), a_row])
        delta = np.where(norms > 0.0, 1.0 / np.sqrt(np.maximum(norms, 1e-300)), 1.0)
        dn, dm = delta[:n], delta[n:]
        Q = Q * np.outer(dn, dn)
        p = p * dn
        A = A * np.outer(dm, dn)
        l = _scale_bound(l, dm)
        u = _scale_bound(u, dm)
        col_norm_mean = float(np.mean(np.max(np.abs(Q), axis=0))) if n else 0.0
        p_norm = float(np.max(np.abs(p))) if n else 0.0
        denom = max(col_norm_mean, p_norm)
        gamma = 1.0 / denom if denom > 0.0 else 1.0
        Q *= gamma
        p *= gamma
        D *= dn
        E *= dm
        c *= gamma
    return ScalingState(D=D, E=E, c=c, iterations_run=max_iter)


def scale_problem(prob: BoxQp, s: ScalingState) -> BoxQp:
    Q = s.c * (prob.Q * np.outer(s.D, s.D))
    p = s.c * (prob.p * s.D)
    A = prob.A * np.outer(s.E, s.D)
    return BoxQp(Q=Q, p=p, A=A, l=_scale_bound(prob.l, s.E), u=_scale_bound(prob.u, s.E))


def unscale_solution(it: Iterate, s: ScalingState) -> Iterate:
    """Map an iterate of the scaled problem back to original coordinates."""
    dual = s.E / s.c
    return Iterate(
        x=s.D * it.x,
        z=it.z / s.E,
        y=dual * it.y,
        x_tilde=s.D * it.x_tilde,
        z_tilde=it.z_tilde / s.E,
        nu=dual * it.nu,
    )


def scale_solution(it: Iterate, s: ScalingState) -> Iterate:
    """Map an original-coordinates iterate into the scaled problem (inverse
    of unscale_solution)."""
    dual = s.c / s.E
    return Iterate(
        x=it.x / s.D,
        z=s.E * it.z,
        y=dual * it.y,
        x_tilde=it.x_tilde / s.D,
        z_tilde=s.E * it.z_tilde,
        nu=dual * it.nu,
    )


def scaled_kkt_matrix(prob: BoxQp) -> np.ndarray:
    """Assemble [[Q, A'], [A, 0]] for equilibration diagnostics."""
    n, m = prob.n, prob.m
    M = np.zeros((n + m, n + m))
    M[:n, :n] = prob.Q
    M[:n, n:] = prob.A.T
    M[n:, :n] = prob.A
    return M
