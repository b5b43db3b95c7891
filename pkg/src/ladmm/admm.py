"""Exact ADMM engine over the condensed KKT system, plus feasibility restoration.

One iteration solves

    [[Q + sigma I, A'], [A, -R^-1]] (x_tilde, nu) = (sigma x - p, z - R^-1 y)

reconstructs z_tilde = z + R^-1 (nu - y), projects z onto [l, u], updates the
dual y, and relaxes x with step alpha.  With rho static the factorization is
computed exactly once per solve.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .problem import (
    BoxQp,
    Iterate,
    SolveMetrics,
    constraint_violations,
    eval_objective,
    project_box,
    residuals,
)


class MaxIterExceeded(RuntimeError):
    """Soft failure: iteration budget exhausted. Carries the best iterate seen."""

    def __init__(self, iterate: Iterate, metrics: SolveMetrics):
        super().__init__(f"no convergence within {metrics.iteration_count} iterations")
        self.iterate = iterate
        self.metrics = metrics


def default_rho(prob: BoxQp, base: float = 0.1, eq_boost: float = 1e3) -> np.ndarray:
    """Uniform penalty with the usual boost on equality rows."""
    rho = np.full(prob.m, base)
    rho[prob.equality_mask] *= eq_boost
    return rho


@dataclass
class AdmmSettings:
    rho: np.ndarray
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000

    def __post_init__(self):
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=np.float64))
        if np.any(self.rho <= 0):
            raise ValueError("rho must be positive")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must be in (0, 2)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ValueError("tolerances must be nonnegative")

    @staticmethod
    def for_problem(prob: BoxQp, **kwargs) -> "AdmmSettings":
        return AdmmSettings(rho=default_rho(prob), **kwargs)


def admm_step(prob: BoxQp, it: Iterate, settings: AdmmSettings,
              fact: linalg.LdlFactorization) -> Iterate:
    """One full iteration; `fact` must match (prob, settings.rho, settings.sigma)."""
    n = prob.n
    rho = np.broadcast_to(settings.rho, (prob.m,))
    rhs = linalg.kkt_rhs(prob, rho, it.x, it.z, it.y, settings.sigma)
    w = fact.solve(rhs)
    x_tilde, nu = w[:n], w[n:]
    z_tilde = it.z + (nu - it.y) / rho
    z_new = project_box(z_tilde + it.y / rho, prob.l, prob.u)
    y_new = it.y + rho * (z_tilde - z_new)
    x_new = settings.alpha * x_tilde + (1.0 - settings.alpha) * it.x
    out = Iterate(x=x_new, z=z_new, y=y_new, x_tilde=x_tilde, z_tilde=z_tilde, nu=nu)
    out.assert_finite()
    return out


def _converged(prob: BoxQp, it: Iterate, settings: AdmmSettings) -> tuple[bool, float, float]:
    r = residuals(prob, it)
    ax = np.linalg.norm(prob.A @ it.x)
    eps_prim = settings.eps_abs + settings.eps_rel * max(ax, np.linalg.norm(it.z))
    eps_dual = settings.eps_abs + settings.eps_rel * max(
        np.linalg.norm(prob.Q @ it.x),
        np.linalg.norm(prob.A.T @ it.y),
        np.linalg.norm(prob.p),
    )
    return (r.primal_norm <= eps_prim and r.dual_norm <= eps_dual,
            r.primal_norm, r.dual_norm)


def _finalize(prob: BoxQp, it: Iterate, n_fact: int, n_iter: int, t0: float) -> SolveMetrics:
    mean_ineq, mean_eq = constraint_violations(prob, it.x)
    return SolveMetrics(
        objective=eval_objective(prob, it.x),
        mean_ineq_violation=mean_ineq,
        mean_eq_violation=mean_eq,
        factorization_count=n_fact,
        iteration_count=n_iter,
        wall_time_seconds=time.perf_counter() - t0,
    )


def solve_exact(prob: BoxQp, settings: AdmmSettings | None = None,
                warm: Iterate | None = None) -> tuple[Iterate, SolveMetrics]:
    """Iterate to the combined absolute/relative tolerance.

    Raises MaxIterExceeded (carrying the best iterate by worst-residual) when
    the budget runs out.
    """
    settings = settings or AdmmSettings.for_problem(prob)
    t0 = time.perf_counter()
    it = warm.copy() if warm is not None else Iterate.zeros(prob.n, prob.m)
    fact = linalg.ldl_factorize(
        linalg.build_kkt(prob, settings.rho, settings.sigma, it.x, it.z, it.y))
    best = it
    best_score = np.inf
    for k in range(settings.max_iter):
        it = admm_step(prob, it, settings, fact)
        done, prim, dual = _converged(prob, it, settings)
        score = max(prim, dual)
        if score < best_score:
            best, best_score = it, score
        if done:
            return it, _finalize(prob, it, 1, k + 1, t0)
    raise MaxIterExceeded(best, _finalize(prob, best, 1, settings.max_iter, t0))


def restore_feasibility(prob: BoxQp, start: Iterate, rho_frozen: np.ndarray,
                        iters: int = 20, sigma: float = 1e-6,
                        alpha: float = 1.6) -> tuple[Iterate, SolveMetrics]:
    """Polish a stage-one iterate with a fixed number of exact steps.

    The penalty stays frozen at `rho_frozen`, so exactly one factorization is
    performed regardless of `iters`.
    """
    t0 = time.perf_counter()
    settings = AdmmSettings(rho=np.broadcast_to(np.asarray(rho_frozen, float), (prob.m,)).copy(),
                            sigma=sigma, alpha=alpha)
    fact = linalg.ldl_factorize(
        linalg.build_kkt(prob, settings.rho, sigma, start.x, start.z, start.y))
    it = start.copy()
    for _ in range(iters):
        it = admm_step(prob, it, settings, fact)
    return it, _finalize(prob, it, 1, iters, t0)
