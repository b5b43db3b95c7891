"""Estimator-style front ends over the solver toolkit.

The trainable solver follows the scikit-learn protocol (``fit`` on a list of
problems from one family, ``predict`` on held-out problems, ``get_params`` /
``set_params`` for configuration), and the equilibrator is a transformer
over problems.  The plain ADMM engines expose ``solve``; they subclass
BaseEstimator only for uniform parameter handling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import lstm, training
from .admm import AdmmSettings, MaxIterExceeded, default_rho, restore_feasibility, solve_exact
from .inexact import derive_constants, rho_for_margin, run_inexact_admm
from .linalg import spectral_estimates
from .problem import (
    BoxQp,
    Iterate,
    SolveMetrics,
    constraint_violations,
    eval_objective,
    validate_box_qp,
)
from .scaling import ruiz_equilibrate, scale_problem, scale_solution, unscale_solution


def _check_problem(prob) -> BoxQp:
    if not isinstance(prob, BoxQp):
        raise TypeError(f"expected BoxQp, got {type(prob).__name__}")
    validate_box_qp(prob)
    return prob


class RuizScaler(BaseEstimator):
    """Transformer applying modified Ruiz equilibration to a problem."""

    def __init__(self, max_iter: int = 10):
        self.max_iter = max_iter

    def fit(self, problem: BoxQp, y=None):
        self.scaling_ = ruiz_equilibrate(_check_problem(problem), self.max_iter)
        return self

    def transform(self, problem: BoxQp) -> BoxQp:
        return scale_problem(problem, self.scaling_)

    def fit_transform(self, problem: BoxQp, y=None) -> BoxQp:
        return self.fit(problem).transform(problem)

    def inverse_transform(self, iterate: Iterate) -> Iterate:
        return unscale_solution(iterate, self.scaling_)


class ExactAdmm(BaseEstimator):
    """Direct-method ADMM solver (one factorization per solve)."""

    def __init__(self, rho_base: float = 0.1, sigma: float = 1e-6, alpha: float = 1.6,
                 eps_abs: float = 1e-6, eps_rel: float = 1e-6, max_iter: int = 4000,
                 equilibrate: bool = True, ruiz_iters: int = 10):
        self.rho_base = rho_base
        self.sigma = sigma
        self.alpha = alpha
        self.eps_abs = eps_abs
        self.eps_rel = eps_rel
        self.max_iter = max_iter
        self.equilibrate = equilibrate
        self.ruiz_iters = ruiz_iters

    def solve(self, problem: BoxQp, warm: Iterate | None = None) -> tuple[Iterate, SolveMetrics]:
        prob = _check_problem(problem)
        scaler = None
        work = prob
        if self.equilibrate:
            scaler = RuizScaler(self.ruiz_iters).fit(prob)
            work = scaler.transform(prob)
            if warm is not None:
                warm = scale_solution(warm, scaler.scaling_)
        settings = AdmmSettings(rho=default_rho(work, self.rho_base), sigma=self.sigma,
                                alpha=self.alpha, eps_abs=self.eps_abs,
                                eps_rel=self.eps_rel, max_iter=self.max_iter)
        try:
            it, metrics = solve_exact(work, settings, warm=warm)
        except MaxIterExceeded as err:
            it, metrics = self._unscaled(prob, scaler, err.iterate, err.metrics)
            raise MaxIterExceeded(it, metrics) from err
        return self._unscaled(prob, scaler, it, metrics)

    @staticmethod
    def _unscaled(prob, scaler, it, metrics):
        if scaler is not None:
            it = scaler.inverse_transform(it)
            metrics.objective = eval_objective(prob, it.x)
            metrics.mean_ineq_violation, metrics.mean_eq_violation = \
                constraint_violations(prob, it.x)
        return it, metrics


class InexactAdmm(BaseEstimator):
    """CG-based inexact solver monitored by the descent conditions."""

    def __init__(self, rho: float | None = None, sigma: float = 1e-6,
                 eps_tol: float = 1e-4, max_iter: int = 5000,
                 c_x: float = 1.0, c_z: float = 1.0, delta: float = 0.9,
                 tau: float = 0.1, equilibrate: bool = True, ruiz_iters: int = 10,
                 record_trace: bool = True):
        self.rho = rho
        self.sigma = sigma
        self.eps_tol = eps_tol
        self.max_iter = max_iter
        self.c_x = c_x
        self.c_z = c_z
        self.delta = delta
        self.tau = tau
        self.equilibrate = equilibrate
        self.ruiz_iters = ruiz_iters
        self.record_trace = record_trace

    def solve(self, problem: BoxQp):
        """Returns an InexactResult; the iterate is unscaled when equilibrating."""
        prob = _check_problem(problem)
        scaler = None
        work = prob
        if self.equilibrate:
            scaler = RuizScaler(self.ruiz_iters).fit(prob)
            work = scaler.transform(prob)
        est = spectral_estimates(work)
        # rho defaults to the smallest theory-feasible penalty (margin check)
        rho = self.rho if self.rho is not None else max(1.0, rho_for_margin(
            est, self.delta, self.tau))
        consts = derive_constants(est, rho, self.c_x, self.c_z, self.delta, self.tau)
        settings = AdmmSettings(rho=np.full(work.m, rho), sigma=self.sigma,
                                max_iter=self.max_iter)
        self.constants_ = consts
        self.estimates_ = est
        try:
            result = run_inexact_admm(work, settings, consts, self.eps_tol, est=est,
                                      record_trace=self.record_trace)
        except MaxIterExceeded as err:
            self._unscale_result(prob, scaler, err.result)
            raise
        self._unscale_result(prob, scaler, result)
        return result

    @staticmethod
    def _unscale_result(prob, scaler, result):
        if scaler is None:
            return
        result.iterate = scaler.inverse_transform(result.iterate)
        result.metrics.objective = eval_objective(prob, result.iterate.x)
        result.metrics.mean_ineq_violation, result.metrics.mean_eq_violation = \
            constraint_violations(prob, result.iterate.x)


class LstmSolver(BaseEstimator):
    """Trainable unrolled solver: fit on a problem family, predict solutions.

    predict() returns stage-one iterates (no factorization); solve() can
    append the feasibility-restoration stage (a fixed number of exact steps
    reusing a single factorization with the learned final penalty frozen).
    """

    def __init__(self, iterations: int = 100, truncation: int | None = None,
                 hidden: int = 64, learning_rate: float = 5e-5, batch_size: int = 2,
                 patience: int = 50, max_epochs: int = 500,
                 violation_tolerance: float = 5e-2, seed: int = 0,
                 sigma: float = 1e-6, ruiz_iters: int = 10,
                 target_val_loss: float | None = None):
        self.iterations = iterations
        self.truncation = truncation
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.patience = patience
        self.max_epochs = max_epochs
        self.violation_tolerance = violation_tolerance
        self.seed = seed
        self.sigma = sigma
        self.ruiz_iters = ruiz_iters
        self.target_val_loss = target_val_loss

    def _unroll_config(self) -> lstm.UnrollConfig:
        T = self.truncation if self.truncation is not None else self.iterations
        return lstm.UnrollConfig(K=self.iterations, T=T, h=self.hidden)

    def _train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            patience=self.patience, max_epochs=self.max_epochs,
            violation_tolerance=self.violation_tolerance, seed=self.seed,
            target_val_loss=self.target_val_loss)

    def fit(self, problems: list[BoxQp], val_problems: list[BoxQp] | None = None,
            start_epoch: int = 0):
        for prob in problems:
            _check_problem(prob)
        if val_problems is None:
            # hold out one instance if the caller gave no validation split
            problems, val_problems = problems[:-1], problems[-1:]
        train_insts = training.prepare_instances(problems, self.ruiz_iters)
        val_insts = training.prepare_instances(val_problems, self.ruiz_iters)
        result = training.train(
            train_insts, val_insts, self._unroll_config(), self._train_config(),
            start_params=getattr(self, "params_", None),
            start_adapt=getattr(self, "adapt_", None),
            start_epoch=start_epoch, sigma=self.sigma)
        self.params_ = result.params
        self.adapt_ = result.adapt
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("LstmSolver is not fitted; call fit() or load()")

    def predict(self, problems: BoxQp | list[BoxQp]) -> list[Iterate]:
        """Stage-one solutions (unscaled), one per problem."""
        self._require_fitted()
        probs = [problems] if isinstance(problems, BoxQp) else list(problems)
        out = []
        for prob in probs:
            scaler = RuizScaler(self.ruiz_iters).fit(prob)
            res = lstm.unroll(scaler.transform(prob), self.params_, self.adapt_,
                              self._unroll_config(), sigma=self.sigma)
            out.append(scaler.inverse_transform(res.iterates()[0]))
        return out

    def solve(self, problem: BoxQp, restore_iters: int = 0):
        """Run the unrolled solver, optionally followed by restoration.

        Returns (iterate, stage1_metrics_dict) where the dict carries the
        factorization count (0 without restoration, 1 with) and residual
        norms of the scaled run.
        """
        self._require_fitted()
        prob = _check_problem(problem)
        scaler = RuizScaler(self.ruiz_iters).fit(prob)
        work = scaler.transform(prob)
        res = lstm.unroll(work, self.params_, self.adapt_, self._unroll_config(),
                          sigma=self.sigma)
        it_scaled = res.iterates()[0]
        n_fact = 0
        iters = self.iterations
        if restore_iters > 0:
            it_scaled, rm = restore_feasibility(
                work, it_scaled, res.rho_last.numpy(), iters=restore_iters,
                sigma=self.sigma)
            n_fact = rm.factorization_count
            iters += restore_iters
        info = {
            "factorizations": n_fact,
            "iterations": iters,
            "prim_norms": res.prim_norms[:, 0].numpy(),
            "dual_norms": res.dual_norms[:, 0].numpy(),
        }
        return scaler.inverse_transform(it_scaled), info

    def save(self, path, extra_meta: dict | None = None) -> None:
        self._require_fitted()
        meta = {"seed": float(self.seed), "sigma": self.sigma,
                "epochs_logged": float(len(getattr(self, "history_", [])))}
        meta.update(extra_meta or {})
        lstm.save_checkpoint(path, self.params_, self.adapt_, self._unroll_config(), meta)

    def load(self, path) -> "LstmSolver":
        params, adapt, cfg, meta = lstm.load_checkpoint(path)
        self.params_ = params
        self.adapt_ = adapt
        self.iterations = cfg.K
        self.truncation = cfg.T
        self.hidden = cfg.h
        self.meta_ = meta
        return self
