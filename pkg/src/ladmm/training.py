"""Self-supervised training of the unrolled solver.

The loss for one instance is the iteration-averaged residual sum
(1/K) sum_k (||r_prim^k|| + ||r_dual^k||), averaged over the batch.
Residuals are measured on the scaled problem (training runs entirely
post-equilibration); validation objective and violations are reported on
the original problem after unscaling.  Gradients flow through every
differentiable piece of the unroll, including the box projection
(identity inside or exactly at a bound, zero where strictly clipped) and
the 1/rho terms; truncated backpropagation detaches the carried state
every T iterations.  Optimization is Adam with global-norm-10 gradient
clipping.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .lstm import (
    AdaptiveParams,
    Carry,
    LstmParams,
    TorchBatch,
    UnrollConfig,
    run_steps,
    DEFAULT_SIGMA,
)
from .problem import BoxQp, constraint_violations, eval_objective
from .rng import CounterRng
from .scaling import ScalingState, ruiz_equilibrate, scale_problem, unscale_solution

TRAIN_LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "val_obj",
                     "val_mean_ineq", "val_mean_eq", "wall_time")


class NonFiniteGradient(FloatingPointError):
    pass


class DatasetEmpty(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 2
    patience: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 500
    violation_tolerance: float = 5e-2
    seed: int = 0
    grad_clip: float = 10.0
    target_val_loss: float | None = None  # optional hard stop for budgeted runs

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.patience < 0 or self.violation_tolerance < 0:
            raise ValueError("patience and violation_tolerance must be >= 0")


@dataclass
class ScaledInstance:
    """A problem together with its equilibrated form and scaling."""

    original: BoxQp
    scaled: BoxQp
    scaling: ScalingState


def prepare_instances(probs: list[BoxQp], ruiz_iters: int = 10) -> list[ScaledInstance]:
    out = []
    for prob in probs:
        s = ruiz_equilibrate(prob, max_iter=ruiz_iters)
        out.append(ScaledInstance(original=prob, scaled=scale_problem(prob, s), scaling=s))
    return out


def trajectory_loss(prim_norms: torch.Tensor, dual_norms: torch.Tensor) -> torch.Tensor:
    """Mean over instances of the K-averaged residual-norm sum."""
    if prim_norms.shape[0] == 0:
        return torch.zeros((), dtype=prim_norms.dtype)
    return (prim_norms + dual_norms).mean(dim=0).mean()


def _trainables(params: LstmParams, adapt: AdaptiveParams) -> dict[str, torch.Tensor]:
    return {**params.tensors(), **adapt.tensors()}


def backward_tbptt(probs: list[BoxQp], params: LstmParams, adapt: AdaptiveParams,
                   cfg: UnrollConfig, sigma: float = DEFAULT_SIGMA):
    """Accumulate loss gradients segment by segment.

    State (H, C, x_hat, iterates) carries across segment boundaries but is
    detached there, so no gradient flows between segments.  Returns
    (loss_value, {name: gradient tensor}).
    """
    batch = TorchBatch.from_problems(probs)
    tensors = _trainables(params, adapt)
    for t in tensors.values():
        t.requires_grad_(True)
        t.grad = None
    carry = Carry.zeros(batch.B, batch.n, batch.m, cfg.h)
    total = 0.0
    for k0 in range(0, cfg.K, cfg.T):
        k1 = min(k0 + cfg.T, cfg.K)
        carry, prim, dual = run_steps(batch, params, adapt, carry.detach(),
                                      range(k0, k1), sigma)
        seg_loss = (prim + dual).sum(dim=0).mean() / cfg.K
        seg_loss.backward()
        total += float(seg_loss.detach())
    grads = {}
    for name, t in tensors.items():
        g = t.grad if t.grad is not None else torch.zeros_like(t)
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        grads[name] = g.detach().clone()
    return total, grads


@dataclass
class EvalSummary:
    loss: float
    objective: float
    mean_ineq: float
    mean_eq: float
    residual_ratio: float  # final (||rp||+||rd||) over its k=0 value, scaled


def evaluate(insts: list[ScaledInstance], params: LstmParams, adapt: AdaptiveParams,
             cfg: UnrollConfig, sigma: float = DEFAULT_SIGMA) -> EvalSummary:
    """Stage-one metrics on a held-out set (loss scaled, solution metrics unscaled)."""
    if not insts:
        raise DatasetEmpty("no instances to evaluate")
    batch = TorchBatch.from_problems([si.scaled for si in insts])
    carry = Carry.zeros(batch.B, batch.n, batch.m, cfg.h)
    with torch.no_grad():
        carry, prim, dual = run_steps(batch, params, adapt, carry, range(cfg.K), sigma)
        loss = float(trajectory_loss(prim, dual))
        # at the zero iterate r_prim = 0 and r_dual = p
        base = torch.linalg.vector_norm(batch.p, dim=1)
        final = (prim[-1] + dual[-1]) if cfg.K else base
        ratio = float((final / base.clamp_min(1e-300)).mean())
    objs, ineqs, eqs = [], [], []
    for b, si in enumerate(insts):
        x_scaled = carry.x[b].numpy()
        x = si.scaling.D * x_scaled
        objs.append(eval_objective(si.original, x))
        vi, ve = constraint_violations(si.original, x)
        ineqs.append(vi)
        eqs.append(ve)
    return EvalSummary(loss=loss, objective=float(np.mean(objs)),
                       mean_ineq=float(np.mean(ineqs)), mean_eq=float(np.mean(eqs)),
                       residual_ratio=ratio)


@dataclass
class TrainResult:
    params: LstmParams
    adapt: AdaptiveParams
    log: list[dict]
    best_epoch: int
    epochs_run: int


def train(train_insts: list[ScaledInstance], val_insts: list[ScaledInstance],
          ucfg: UnrollConfig, tcfg: TrainConfig,
          start_params: LstmParams | None = None,
          start_adapt: AdaptiveParams | None = None,
          start_epoch: int = 0,
          sigma: float = DEFAULT_SIGMA) -> TrainResult:
    """Adam + TBPTT epoch loop with objective-based early stopping.

    The best checkpoint is the lowest validation objective among epochs whose
    mean violations stay below the tolerance; training stops after `patience`
    epochs without improvement (or at max_epochs / target_val_loss).
    """
    if not train_insts:
        raise DatasetEmpty("empty training split")
    if not val_insts:
        raise DatasetEmpty("empty validation split")
    params = start_params if start_params is not None else LstmParams.initialize(ucfg.h, tcfg.seed)
    adapt = start_adapt if start_adapt is not None else AdaptiveParams.initialize(ucfg.K)
    tensors = _trainables(params, adapt)
    for t in tensors.values():
        t.requires_grad_(True)
    opt = torch.optim.Adam(list(tensors.values()), lr=tcfg.learning_rate,
                           betas=(tcfg.adam_beta1, tcfg.adam_beta2), eps=tcfg.adam_eps)
    shuffler = CounterRng(tcfg.seed).derive(777)
    log: list[dict] = []
    best_obj = np.inf
    best_loss = np.inf
    best_snapshot = (params.clone(), adapt.clone())
    best_epoch = start_epoch
    since_improve = 0
    t0 = time.perf_counter()
    epoch = start_epoch
    for epoch in range(start_epoch, start_epoch + tcfg.max_epochs):
        order = shuffler.derive(epoch).permutation(len(train_insts))
        batch_losses = []
        for lo in range(0, len(order), tcfg.batch_size):
            idx = order[lo:lo + tcfg.batch_size]
            probs = [train_insts[i].scaled for i in idx]
            opt.zero_grad(set_to_none=True)
            loss_val, _ = backward_tbptt(probs, params, adapt, ucfg, sigma)
            torch.nn.utils.clip_grad_norm_(list(tensors.values()), tcfg.grad_clip)
            opt.step()
            batch_losses.append(loss_val)
        summary = evaluate(val_insts, params, adapt, ucfg, sigma)
        log.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": summary.loss,
            "val_obj": summary.objective,
            "val_mean_ineq": summary.mean_ineq,
            "val_mean_eq": summary.mean_eq,
            "wall_time": time.perf_counter() - t0,
        })
        feasible = (summary.mean_ineq <= tcfg.violation_tolerance
                    and summary.mean_eq <= tcfg.violation_tolerance)
        if feasible and summary.objective < best_obj:
            best_obj = summary.objective
            best_snapshot = (params.clone(), adapt.clone())
            best_epoch = epoch
            since_improve = 0
        elif feasible:
            since_improve += 1
        if np.isinf(best_obj) and summary.loss < best_loss:
            # nothing feasible yet: fall back to tracking the residual loss
            best_loss = summary.loss
            best_snapshot = (params.clone(), adapt.clone())
            best_epoch = epoch
        if tcfg.target_val_loss is not None and summary.loss <= tcfg.target_val_loss:
            break
        if since_improve >= tcfg.patience:
            break
    return TrainResult(params=best_snapshot[0], adapt=best_snapshot[1], log=log,
                       best_epoch=best_epoch, epochs_run=epoch - start_epoch + 1)


def write_train_log(path, log: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TRAIN_LOG_COLUMNS) + "\n")
        for row in log:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in TRAIN_LOG_COLUMNS) + "\n")
