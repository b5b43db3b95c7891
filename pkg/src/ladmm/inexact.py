"""Verifiable inexactness framework: descent conditions, energies, CG driver.

An approximate x-step x_tilde and the exact z/y/relaxation plumbing must
satisfy five per-iteration inequalities for convergence:

  (c1)  L(x_tilde, z, y) + (rho beta_x / 2) ||x_tilde - x||^2  <=  L(x, z, y)
  (c2)  ||xi_x|| <= c_x rho ||x_tilde - x||
  (c3)  L(x_tilde, z+, y) + (rho beta_z / 2) ||z+ - z||^2  <=  L(x_tilde, z, y)
  (c4)  ||xi_z|| <= c_z rho (||z+ - z|| + ||x_tilde - x||)
  (c5)  L(x+, z+, y+) <= L(x_tilde, z+, y+) - delta rho ||x+ - x_tilde||^2

where L is the augmented Lagrangian, xi_x its x-gradient at the candidate,
and xi_z the minimal-norm element of its z-subdifferential.  The composite
residual

    R = ||x_tilde - x|| + ||z+ - z|| + ||A x_tilde - z+||

is the stopping metric.  Energy bookkeeping tracks

    Gamma~ = (8(1+tau) c_x^2 rho / s_min) ||d~x||^2 + 8(1+tau) rho kappa ||dz||^2
    Gamma  = Gamma~ + (8(1+tau) s_qmax^2 / (rho s_min)) ||d^x||^2
    E~ = L(x_tilde+, z+, y+) + Gamma~,   E = L(x+, z+, y+) + Gamma

with s_min / kappa the smallest positive eigenvalue and condition number of
A'A and s_qmax the largest eigenvalue of Q.  The beta constants

    beta_x = (2(1+tau)/(1-tau)) * (2 (s_qmax/rho + c_x)^2 + 8 c_x^2) / s_min
    beta_z = 32 (1+tau) kappa / (1-tau)

make the definiteness margins

    m1 = beta_x (1-tau) / (2(1+tau)) - (2 (s_qmax/rho + c_x)^2 + 8 c_x^2)/s_min
    m2 = (delta-tau)/(1+tau) - 8 (s_qmax/rho)^2 / s_min
    m3 = beta_z (1-tau) / (2(1+tau)) - 16 kappa

nonnegative (m1, m3 hold by construction; m2 constrains rho from below).

The theory is stated for scalar rho; when a run uses a diagonal penalty the
monitor substitutes the geometric mean of its entries and records that in
the trace header.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import linalg
from .admm import AdmmSettings, MaxIterExceeded
from .linalg import SpectralEstimates
from .problem import (
    BOUND_TOL,
    BoxQp,
    Iterate,
    SolveMetrics,
    constraint_violations,
    eval_objective,
    project_box,
)

logger = logging.getLogger(__name__)

CONDITION_SLACK = 1e-12
LINE_SEARCH_ALPHAS = (1.6, 1.4, 1.2, 1.0)
CG_BATCH = 10
CG_CAP_PER_N = 50
TRACE_COLUMNS = ("k", "lhs11", "rhs11", "lhs12", "rhs12", "lhs13", "rhs13",
                 "lhs14", "rhs14", "lhs15", "rhs15", "R", "E", "E_tilde", "L_rho")


class InfeasibleConstantsError(ValueError):
    """rho is too small for the requested (delta, tau) margin."""


def rho_effective(rho) -> float:
    """Scalar stand-in for a diagonal penalty: geometric mean of its entries."""
    rho = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    if rho.size == 0:
        return 1.0
    return float(np.exp(np.mean(np.log(rho))))


@dataclass(frozen=True)
class InexactConstants:
    c_x: float
    c_z: float
    delta: float
    tau: float
    beta_x: float
    beta_z: float
    margins: tuple[float, float, float]

    def __post_init__(self):
        if not 0 < self.tau < self.delta < 1:
            raise ValueError("need 0 < tau < delta < 1")


def derive_constants(est: SpectralEstimates, rho_scalar: float, c_x: float = 1.0,
                     c_z: float = 1.0, delta: float = 0.9, tau: float = 0.1,
                     enforce_margins: bool = True) -> InexactConstants:
    """Compute (beta_x, beta_z) and verify the three definiteness margins.

    The printed form of the beta_x bracket hard-codes c_x = 1; here the
    actual c_x is substituted so the first margin closes exactly.  The first
    and third margins are nonnegative by construction; the second bounds the
    penalty from below (see rho_for_margin) and, with `enforce_margins`,
    raises InfeasibleConstantsError when violated.  Passing
    ``enforce_margins=False`` still records all margins, for callers that
    only monitor conditions rather than rely on the descent guarantee.
    """
    if rho_scalar <= 0 or c_x <= 0 or c_z <= 0:
        raise ValueError("rho, c_x, c_z must be positive")
    s_min, kappa, s_qmax = est.sigma_ata_min, est.kappa_ata, est.sigma_q_max
    bracket = (2.0 * (s_qmax / rho_scalar + c_x) ** 2 + 8.0 * c_x**2) / s_min
    beta_x = 2.0 * (1.0 + tau) / (1.0 - tau) * bracket
    beta_z = 32.0 * (1.0 + tau) * kappa / (1.0 - tau)
    m1 = beta_x * (1.0 - tau) / (2.0 * (1.0 + tau)) - bracket
    m2 = (delta - tau) / (1.0 + tau) - 8.0 * (s_qmax / rho_scalar) ** 2 / s_min
    m3 = beta_z * (1.0 - tau) / (2.0 * (1.0 + tau)) - 16.0 * kappa
    if enforce_margins and m2 < 0.0:
        raise InfeasibleConstantsError(
            f"penalty {rho_scalar:.3g} too small for delta={delta}, tau={tau}: "
            f"margin {m2:.3e} < 0")
    assert m1 >= -CONDITION_SLACK and m3 >= -CONDITION_SLACK
    return InexactConstants(c_x=c_x, c_z=c_z, delta=delta, tau=tau,
                            beta_x=beta_x, beta_z=beta_z, margins=(m1, m2, m3))


def rho_for_margin(est: SpectralEstimates, delta: float = 0.9, tau: float = 0.1) -> float:
    """Smallest scalar penalty for which the second margin is nonnegative."""
    return est.sigma_q_max * np.sqrt(8.0 * (1.0 + tau) / ((delta - tau) * est.sigma_ata_min))


def augmented_lagrangian(prob: BoxQp, x: np.ndarray, z: np.ndarray, y: np.ndarray,
                         rho) -> float:
    """f(x) + y'(Ax - z) + 0.5 ||Ax - z||^2_rho; +inf if z leaves the box."""
    if np.any(z < prob.l - BOUND_TOL) or np.any(z > prob.u + BOUND_TOL):
        return np.inf
    r = prob.A @ x - z
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (prob.m,))
    return eval_objective(prob, x) + float(y @ r) + 0.5 * float(r @ (rho * r))


def grad_x_lagrangian(prob: BoxQp, x_tilde: np.ndarray, z: np.ndarray, y: np.ndarray,
                      rho) -> np.ndarray:
    """xi_x = Q x_tilde + p + A'y + A'(rho o (A x_tilde - z))."""
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (prob.m,))
    return prob.Q @ x_tilde + prob.p + prob.A.T @ (y + rho * (prob.A @ x_tilde - z))


def minimal_norm_subgradient_z(prob: BoxQp, x_tilde: np.ndarray, z_new: np.ndarray,
                               y_prev: np.ndarray, rho) -> np.ndarray:
    """Minimal-norm element of the z-subdifferential of L at (x_tilde, z_new, y_prev).

    The smooth part is s = -y - rho o (A x_tilde - z_new); the box normal cone
    absorbs it at active coordinates with the matching sign (entirely on
    equality rows), leaving zero there and s elsewhere.
    """
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (prob.m,))
    s = -(y_prev + rho * (prob.A @ x_tilde - z_new))
    out = s.copy()
    eq = prob.equality_mask
    at_lower = np.isfinite(prob.l) & (np.abs(z_new - prob.l) <= BOUND_TOL) & ~eq
    at_upper = np.isfinite(prob.u) & (np.abs(z_new - prob.u) <= BOUND_TOL) & ~eq
    out[eq] = 0.0
    out[at_lower & (s >= 0.0)] = 0.0   # normal cone (-inf, 0] cancels s >= 0
    out[at_upper & (s <= 0.0)] = 0.0   # normal cone [0, +inf) cancels s <= 0
    return out


@dataclass
class ConditionReport:
    k: int
    lhs11: float
    rhs11: float
    lhs12: float
    rhs12: float
    lhs13: float
    rhs13: float
    lhs14: float
    rhs14: float
    lhs15: float
    rhs15: float
    composite_R: float
    satisfied: tuple[bool, bool, bool, bool, bool]


@dataclass
class EnergyState:
    L_rho: float
    E: float
    E_tilde: float
    Gamma: float
    Gamma_tilde: float
    d_x_tilde: np.ndarray
    d_x_hat: np.ndarray
    d_z: np.ndarray
    d_y: np.ndarray


def composite_residual(prob: BoxQp, prev: Iterate, cur: Iterate) -> float:
    return float(np.linalg.norm(cur.x_tilde - prev.x)
                 + np.linalg.norm(cur.z - prev.z)
                 + np.linalg.norm(prob.A @ cur.x_tilde - cur.z))


def check_conditions(prob: BoxQp, prev: Iterate, cur: Iterate,
                     consts: InexactConstants, rho, k: int = 0) -> ConditionReport:
    """Evaluate the five inequalities for the transition prev -> cur."""
    r = rho_effective(rho)
    d_x_tilde = float(np.linalg.norm(cur.x_tilde - prev.x))
    d_z = float(np.linalg.norm(cur.z - prev.z))
    d_x_hat = float(np.linalg.norm(cur.x - cur.x_tilde))

    L_prev = augmented_lagrangian(prob, prev.x, prev.z, prev.y, r)
    L_tilde_zprev = augmented_lagrangian(prob, cur.x_tilde, prev.z, prev.y, r)
    L_tilde_znew = augmented_lagrangian(prob, cur.x_tilde, cur.z, prev.y, r)
    L_tilde_full = augmented_lagrangian(prob, cur.x_tilde, cur.z, cur.y, r)
    L_new = augmented_lagrangian(prob, cur.x, cur.z, cur.y, r)

    lhs11 = L_tilde_zprev + 0.5 * r * consts.beta_x * d_x_tilde**2
    rhs11 = L_prev
    lhs12 = float(np.linalg.norm(grad_x_lagrangian(prob, cur.x_tilde, prev.z, prev.y, r)))
    rhs12 = consts.c_x * r * d_x_tilde
    lhs13 = L_tilde_znew + 0.5 * r * consts.beta_z * d_z**2
    rhs13 = L_tilde_zprev
    lhs14 = float(np.linalg.norm(
        minimal_norm_subgradient_z(prob, cur.x_tilde, cur.z, prev.y, r)))
    rhs14 = consts.c_z * r * (d_z + d_x_tilde)
    lhs15 = L_new
    rhs15 = L_tilde_full - consts.delta * r * d_x_hat**2

    flags = tuple(bool(l <= rh + CONDITION_SLACK) for l, rh in
                  ((lhs11, rhs11), (lhs12, rhs12), (lhs13, rhs13),
                   (lhs14, rhs14), (lhs15, rhs15)))
    return ConditionReport(k=k, lhs11=lhs11, rhs11=rhs11, lhs12=lhs12, rhs12=rhs12,
                           lhs13=lhs13, rhs13=rhs13, lhs14=lhs14, rhs14=rhs14,
                           lhs15=lhs15, rhs15=rhs15,
                           composite_R=composite_residual(prob, prev, cur),
                           satisfied=flags)


def energy_step(prob: BoxQp, prev: Iterate, cur: Iterate, consts: InexactConstants,
                rho, est: SpectralEstimates) -> EnergyState:
    """Potential energies for the transition prev -> cur."""
    r = rho_effective(rho)
    d_x_tilde = cur.x_tilde - prev.x
    d_x_hat = cur.x - cur.x_tilde
    d_z = cur.z - prev.z
    d_y = cur.y - prev.y
    coef = 8.0 * (1.0 + consts.tau)
    gamma_tilde = (coef * consts.c_x**2 * r / est.sigma_ata_min * float(d_x_tilde @ d_x_tilde)
                   + coef * r * est.kappa_ata * float(d_z @ d_z))
    gamma = gamma_tilde + coef * est.sigma_q_max**2 / (r * est.sigma_ata_min) * float(d_x_hat @ d_x_hat)
    L_new = augmented_lagrangian(prob, cur.x, cur.z, cur.y, r)
    L_tilde = augmented_lagrangian(prob, cur.x_tilde, cur.z, cur.y, r)
    return EnergyState(L_rho=L_new, E=L_new + gamma, E_tilde=L_tilde + gamma_tilde,
                       Gamma=gamma, Gamma_tilde=gamma_tilde,
                       d_x_tilde=d_x_tilde, d_x_hat=d_x_hat, d_z=d_z, d_y=d_y)


@dataclass
class InexactResult:
    iterate: Iterate
    metrics: SolveMetrics
    reports: list
    energies: list
    converged: bool
    rho_eff: float = 1.0
    cg_iterations_total: int = 0
    condition12_cap_hits: int = 0
    assumption_violations: int = 0


def _inner_cg(M_red: np.ndarray, rhs: np.ndarray, x0: np.ndarray, gate, cap: int):
    """Incremental CG on M_red d = rhs - M_red x0, gated every CG_BATCH steps."""
    x = x0.copy()
    r = rhs - M_red @ x
    p = r.copy()
    rs = float(r @ r)
    iters = 0
    if gate(x):
        return x, iters, True
    while iters < cap:
        for _ in range(min(CG_BATCH, cap - iters)):
            if rs == 0.0:
                break
            Mp = M_red @ p
            alpha = rs / float(p @ Mp)
            x += alpha * p
            r -= alpha * Mp
            rs_new = float(r @ r)
            if not np.isfinite(rs_new):
                raise linalg.ConvergenceFailureError("inner CG became non-finite")
            p = r + (rs_new / rs) * p
            rs = rs_new
            iters += 1
        if gate(x):
            return x, iters, True
        if rs == 0.0:
            break
    return x, iters, gate(x)


def run_inexact_admm(prob: BoxQp, settings: AdmmSettings, consts: InexactConstants,
                     eps_tol: float, est: SpectralEstimates | None = None,
                     record_trace: bool = True, warm: Iterate | None = None,
                     alphas: tuple = LINE_SEARCH_ALPHAS,
                     inner_tol: float | None = None,
                     assumption_check_every: int = 25) -> InexactResult:
    """Inexact ADMM loop: CG x-steps gated by the gradient condition (c2).

    Per iteration: CG on (Q + sigma I + A'RA) x = sigma x - p + A'(rho o z - y)
    runs in batches of 10 until ||xi_x|| <= c_x rho ||x_tilde - x||, capped at
    50 n total steps (a cap hit is logged, not fatal); then the exact
    projection z-step, the dual step y+ = y + rho o (A x_tilde - z+), and a
    backtracking relaxation over `alphas` accepting the first candidate
    satisfying (c5) - the default list ends in 1.0, which always does; if no
    candidate passes, the last one is used.  Stops once the composite
    residual falls to eps_tol.

    `inner_tol`, when given, replaces the gradient-condition gate by a plain
    relative CG residual tolerance (used to force near-exact inner solves).

    No factorization is ever performed.  Raises MaxIterExceeded (with the
    partial InexactResult attached as `.result`) on budget exhaustion.
    """
    t0 = time.perf_counter()
    n, m = prob.n, prob.m
    rho = np.broadcast_to(settings.rho, (m,)).astype(np.float64)
    r_eff = rho_effective(rho)
    if est is None:
        est = linalg.spectral_estimates(prob)
    M_red = prob.Q + settings.sigma * np.eye(n) + prob.A.T @ (rho[:, None] * prob.A)
    pinv_a = np.linalg.pinv(prob.A)
    cap = CG_CAP_PER_N * n

    it = warm.copy() if warm is not None else Iterate.zeros(n, m)
    reports: list[ConditionReport] = []
    energies: list[EnergyState] = []
    cg_total = 0
    cap_hits = 0
    assumption_violations = 0
    converged = False
    k_done = 0

    for k in range(settings.max_iter):
        rhs_red = settings.sigma * it.x - prob.p + prob.A.T @ (rho * it.z - it.y)

        if inner_tol is None:
            def gate(x_cand, _it=it):
                xi = grad_x_lagrangian(prob, x_cand, _it.z, _it.y, rho)
                return np.linalg.norm(xi) <= consts.c_x * r_eff * np.linalg.norm(x_cand - _it.x)
        else:
            rhs_norm = max(np.linalg.norm(rhs_red), 1e-300)

            def gate(x_cand, _rhs=rhs_red, _norm=rhs_norm):
                return np.linalg.norm(M_red @ x_cand - _rhs) <= inner_tol * _norm

        x_tilde, iters, ok = _inner_cg(M_red, rhs_red, it.x, gate, cap)
        cg_total += iters
        if not ok:
            cap_hits += 1
            logger.warning("iteration %d: inner CG cap (%d) hit with gradient "
                           "condition unmet", k, cap)

        z_tilde = prob.A @ x_tilde
        z_new = project_box(z_tilde + it.y / rho, prob.l, prob.u)
        y_new = it.y + rho * (z_tilde - z_new)
        nu = it.y + rho * (z_tilde - it.z)

        cur = Iterate(x=x_tilde.copy(), z=z_new, y=y_new,
                      x_tilde=x_tilde, z_tilde=z_tilde, nu=nu)
        L_tilde_full = augmented_lagrangian(prob, x_tilde, z_new, y_new, rho)
        for alpha in alphas:
            x_cand = alpha * x_tilde + (1.0 - alpha) * it.x
            lhs = augmented_lagrangian(prob, x_cand, z_new, y_new, rho)
            rhs_ls = L_tilde_full - consts.delta * r_eff * float(
                np.linalg.norm(x_cand - x_tilde) ** 2)
            if lhs <= rhs_ls + CONDITION_SLACK:
                break
        cur.x = x_cand
        cur.assert_finite()

        if record_trace:
            reports.append(check_conditions(prob, it, cur, consts, rho, k=k))
            energies.append(energy_step(prob, it, cur, consts, rho, est))
            R_val = reports[-1].composite_R
        else:
            R_val = composite_residual(prob, it, cur)

        if assumption_check_every and k % assumption_check_every == 0:
            d_y = cur.y - it.y
            dy_norm = np.linalg.norm(d_y)
            if dy_norm > 0:
                off_range = np.linalg.norm(d_y - prob.A @ (pinv_a @ d_y))
                if off_range > 1e-8 * dy_norm:
                    assumption_violations += 1
                    logger.warning("iteration %d: dual step leaves Range(A) "
                                   "(ratio %.2e)", k, off_range / dy_norm)

        it = cur
        k_done = k + 1
        if R_val <= eps_tol:
            converged = True
            break

    mean_ineq, mean_eq = constraint_violations(prob, it.x)
    metrics = SolveMetrics(
        objective=eval_objective(prob, it.x),
        mean_ineq_violation=mean_ineq,
        mean_eq_violation=mean_eq,
        factorization_count=0,
        iteration_count=k_done,
        wall_time_seconds=time.perf_counter() - t0,
    )
    result = InexactResult(iterate=it, metrics=metrics, reports=reports,
                           energies=energies, converged=converged, rho_eff=r_eff,
                           cg_iterations_total=cg_total,
                           condition12_cap_hits=cap_hits,
                           assumption_violations=assumption_violations)
    if not converged:
        err = MaxIterExceeded(it, metrics)
        err.result = result
        raise err
    return result


def write_trace_csv(path, reports: list, energies: list, rho_eff: float) -> None:
    """One row per iteration; the header records the scalar-penalty substitution."""
    with open(path, "w") as fh:
        fh.write(f"# rho_eff={rho_eff!r} (geometric mean of diag penalty)\n")
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for rep, en in zip(reports, energies):
            row = (rep.k, rep.lhs11, rep.rhs11, rep.lhs12, rep.rhs12, rep.lhs13,
                   rep.rhs13, rep.lhs14, rep.rhs14, rep.lhs15, rep.rhs15,
                   rep.composite_R, en.E, en.E_tilde, en.L_rho)
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
