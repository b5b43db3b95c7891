"""Coordinate-wise LSTM inner solver and the unrolled solver loop.

The inner task at outer step k is the least-squares view of the condensed
KKT system: phi(xh) = 0.5 ||Ah xh - bh||^2 with

    Ah = [[Q + sigma I, A'], [A, -diag(1/rho_k)]],
    bh = (sigma x - p,  z - y / rho_k).

A single LSTM cell with shared weights acts independently on each of the
n + m coordinates; its per-coordinate input is the 2-vector (xh_j,
grad phi(xh)_j).  The cell output g is subtracted from xh.  The unrolled
loop splits xh into (x_tilde, nu), reconstructs z_tilde, projects, updates
the dual, and relaxes x with the per-iteration learned alpha; the learned
per-iteration penalty is sigmoid(rho_raw_k) with a 1e3 boost on equality
rows, so alpha in (0, 2) and rho > 0 hold by construction.

Checkpoints serialize all weights plus (alpha_raw, rho_raw), the unroll
config, and metadata into the flat container of `serialize` (see its
docstring for the exact byte layout).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .problem import BoxQp, Iterate, NonFiniteError
from . import serialize

DTYPE = torch.float64
EQ_RHO_BOOST = 1e3
DEFAULT_SIGMA = 1e-6

WEIGHT_NAMES = ("W_i", "W_f", "W_o", "W_c", "U_i", "U_f", "U_o", "U_c",
                "b_i", "b_f", "b_o", "b_c", "W_g", "b_g")


def _logit(v: float) -> float:
    return float(np.log(v / (1.0 - v)))


@dataclass
class LstmParams:
    """Shared cell weights; shapes W_*: (2,h), U_*: (h,h), b_*: (h,), W_g: (h,1)."""

    W_i: torch.Tensor
    W_f: torch.Tensor
    W_o: torch.Tensor
    W_c: torch.Tensor
    U_i: torch.Tensor
    U_f: torch.Tensor
    U_o: torch.Tensor
    U_c: torch.Tensor
    b_i: torch.Tensor
    b_f: torch.Tensor
    b_o: torch.Tensor
    b_c: torch.Tensor
    W_g: torch.Tensor
    b_g: torch.Tensor

    @property
    def h(self) -> int:
        return self.W_i.shape[1]

    @staticmethod
    def initialize(h: int, seed: int = 0) -> "LstmParams":
        """Uniform(-1/sqrt(h), 1/sqrt(h)) matrices, b_f = 1, other biases 0.

        b_g = 0 makes the untrained cell start near the identity map on xh.
        """
        g = torch.Generator().manual_seed(seed)
        s = 1.0 / np.sqrt(h)

        def mat(*shape):
            return (torch.rand(*shape, generator=g, dtype=DTYPE) * 2.0 - 1.0) * s

        return LstmParams(
            W_i=mat(2, h), W_f=mat(2, h), W_o=mat(2, h), W_c=mat(2, h),
            U_i=mat(h, h), U_f=mat(h, h), U_o=mat(h, h), U_c=mat(h, h),
            b_i=torch.zeros(h, dtype=DTYPE), b_f=torch.ones(h, dtype=DTYPE),
            b_o=torch.zeros(h, dtype=DTYPE), b_c=torch.zeros(h, dtype=DTYPE),
            W_g=mat(h, 1), b_g=torch.zeros((), dtype=DTYPE),
        )

    def tensors(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in WEIGHT_NAMES}

    def requires_grad_(self, flag: bool = True) -> "LstmParams":
        for t in self.tensors().values():
            t.requires_grad_(flag)
        return self

    def clone(self) -> "LstmParams":
        return LstmParams(**{k: v.detach().clone() for k, v in self.tensors().items()})


@dataclass
class LstmState:
    """Per-coordinate hidden and cell states, shape (..., dim, h)."""

    H: torch.Tensor
    C: torch.Tensor

    @staticmethod
    def zeros(dim: int, h: int, batch: int | None = None) -> "LstmState":
        shape = (dim, h) if batch is None else (batch, dim, h)
        return LstmState(torch.zeros(shape, dtype=DTYPE), torch.zeros(shape, dtype=DTYPE))


@dataclass
class AdaptiveParams:
    """Per-iteration raw relaxation and penalty scalars (length K each)."""

    alpha_raw: torch.Tensor
    rho_raw: torch.Tensor

    @property
    def K(self) -> int:
        return self.alpha_raw.shape[0]

    @staticmethod
    def initialize(K: int) -> "AdaptiveParams":
        # sigmoid(rho_raw) = 0.1 and 2 sigmoid(alpha_raw) = 1.6 at the start
        return AdaptiveParams(
            alpha_raw=torch.full((K,), _logit(0.8), dtype=DTYPE),
            rho_raw=torch.full((K,), _logit(0.1), dtype=DTYPE),
        )

    def alpha(self, k: int) -> torch.Tensor:
        return 2.0 * torch.sigmoid(self.alpha_raw[k])

    def rho(self, k: int, eq_mask: torch.Tensor) -> torch.Tensor:
        base = torch.sigmoid(self.rho_raw[k])
        return torch.where(eq_mask, EQ_RHO_BOOST * base, base)

    def tensors(self) -> dict[str, torch.Tensor]:
        return {"alpha_raw": self.alpha_raw, "rho_raw": self.rho_raw}

    def requires_grad_(self, flag: bool = True) -> "AdaptiveParams":
        self.alpha_raw.requires_grad_(flag)
        self.rho_raw.requires_grad_(flag)
        return self

    def clone(self) -> "AdaptiveParams":
        return AdaptiveParams(self.alpha_raw.detach().clone(), self.rho_raw.detach().clone())


@dataclass
class UnrollConfig:
    K: int
    T: int
    h: int

    def __post_init__(self):
        if not 1 <= self.T <= max(self.K, 1):
            raise ValueError("need 1 <= T <= K")
        if self.h < 1:
            raise ValueError("hidden width must be >= 1")


@dataclass
class TorchBatch:
    """A stack of same-shaped problems as float64 tensors."""

    Q: torch.Tensor
    A: torch.Tensor
    p: torch.Tensor
    l: torch.Tensor
    u: torch.Tensor
    eq_mask: torch.Tensor  # (m,) bool, shared across the batch

    @property
    def B(self) -> int:
        return self.Q.shape[0]

    @property
    def n(self) -> int:
        return self.Q.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @staticmethod
    def from_problems(probs: list[BoxQp]) -> "TorchBatch":
        masks = {tuple(pr.equality_mask.tolist()) for pr in probs}
        if len(masks) != 1:
            raise ValueError("batched problems must share the equality-row pattern")
        t = lambda arrs: torch.from_numpy(np.stack(arrs)).to(DTYPE)
        return TorchBatch(
            Q=t([pr.Q for pr in probs]),
            A=t([pr.A for pr in probs]),
            p=t([pr.p for pr in probs]),
            l=t([pr.l for pr in probs]),
            u=t([pr.u for pr in probs]),
            eq_mask=torch.from_numpy(probs[0].equality_mask.copy()),
        )


def assemble_ls(batch: TorchBatch, x: torch.Tensor, z: torch.Tensor, y: torch.Tensor,
                rho_k: torch.Tensor, sigma: float = DEFAULT_SIGMA):
    """(Ah, bh) of the condensed system at the current iterate.

    Ah: (B, n+m, n+m) symmetric; bh: (B, n+m).
    """
    B, n, m = batch.B, batch.n, batch.m
    dim = n + m
    Ah = torch.zeros((B, dim, dim), dtype=DTYPE)
    Ah[:, :n, :n] = batch.Q + sigma * torch.eye(n, dtype=DTYPE)
    Ah[:, :n, n:] = batch.A.transpose(1, 2)
    Ah[:, n:, :n] = batch.A
    idx = torch.arange(n, dim)
    Ah[:, idx, idx] = -1.0 / rho_k
    bh = torch.cat([sigma * x - batch.p, z - y / rho_k], dim=1)
    return Ah, bh


def phi_value(Ah: torch.Tensor, bh: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    r = torch.bmm(Ah, x_hat.unsqueeze(-1)).squeeze(-1) - bh
    return 0.5 * (r * r).sum(dim=-1)


def grad_phi(Ah: torch.Tensor, bh: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    r = torch.bmm(Ah, x_hat.unsqueeze(-1)).squeeze(-1) - bh
    return torch.bmm(Ah.transpose(1, 2), r.unsqueeze(-1)).squeeze(-1)


def lstm_cell(params: LstmParams, state: LstmState, x_hat: torch.Tensor,
              grad: torch.Tensor):
    """One shared-weight cell application per coordinate.

    x_hat/grad: (..., dim); state tensors: (..., dim, h).
    Returns (new_state, x_hat_next).
    """
    X = torch.stack([x_hat, grad], dim=-1)                      # (..., dim, 2)
    gate_i = torch.sigmoid(X @ params.W_i + state.H @ params.U_i + params.b_i)
    gate_f = torch.sigmoid(X @ params.W_f + state.H @ params.U_f + params.b_f)
    gate_o = torch.sigmoid(X @ params.W_o + state.H @ params.U_o + params.b_o)
    c_cand = torch.tanh(X @ params.W_c + state.H @ params.U_c + params.b_c)
    C_new = gate_i * c_cand + gate_f * state.C
    H_new = gate_o * torch.tanh(C_new)
    g = (H_new @ params.W_g).squeeze(-1) + params.b_g           # (..., dim)
    return LstmState(H=H_new, C=C_new), x_hat - g


@dataclass
class Carry:
    """Differentiable state threaded through unroll segments."""

    x: torch.Tensor
    z: torch.Tensor
    y: torch.Tensor
    x_hat: torch.Tensor
    H: torch.Tensor
    C: torch.Tensor
    x_tilde: torch.Tensor | None = None
    z_tilde: torch.Tensor | None = None
    nu: torch.Tensor | None = None

    @staticmethod
    def zeros(B: int, n: int, m: int, h: int) -> "Carry":
        dim = n + m
        return Carry(x=torch.zeros((B, n), dtype=DTYPE),
                     z=torch.zeros((B, m), dtype=DTYPE),
                     y=torch.zeros((B, m), dtype=DTYPE),
                     x_hat=torch.zeros((B, dim), dtype=DTYPE),
                     H=torch.zeros((B, dim, h), dtype=DTYPE),
                     C=torch.zeros((B, dim, h), dtype=DTYPE))

    def detach(self) -> "Carry":
        d = lambda t: None if t is None else t.detach()
        return Carry(**{k: d(getattr(self, k)) for k in
                        ("x", "z", "y", "x_hat", "H", "C", "x_tilde", "z_tilde", "nu")})


def run_steps(batch: TorchBatch, params: LstmParams, adapt: AdaptiveParams,
              carry: Carry, k_range: range, sigma: float = DEFAULT_SIGMA,
              exact_inner: bool = False, trajectory: list | None = None):
    """Execute outer iterations `k_range`, returning (carry, prim_norms, dual_norms).

    Norms are stacked (steps, B) tensors and stay on the autograd tape.
    """
    n = batch.n
    state = LstmState(H=carry.H, C=carry.C)
    x, z, y, x_hat = carry.x, carry.z, carry.y, carry.x_hat
    prim_norms, dual_norms = [], []
    x_tilde = carry.x_tilde
    z_tilde = carry.z_tilde
    nu = carry.nu
    for k in k_range:
        rho_k = adapt.rho(k, batch.eq_mask)
        Ah, bh = assemble_ls(batch, x, z, y, rho_k, sigma)
        if exact_inner:
            x_hat = torch.linalg.solve(Ah, bh.unsqueeze(-1)).squeeze(-1)
        else:
            grad = grad_phi(Ah, bh, x_hat)
            state, x_hat = lstm_cell(params, state, x_hat, grad)
        if not torch.isfinite(x_hat).all():
            raise NonFiniteError(f"unroll produced non-finite values at step {k}")
        x_tilde = x_hat[:, :n]
        nu = x_hat[:, n:]
        z_tilde = z + (nu - y) / rho_k
        z = torch.clamp(z_tilde + y / rho_k, min=batch.l, max=batch.u)
        y = y + rho_k * (z_tilde - z)
        alpha_k = adapt.alpha(k)
        x = alpha_k * x_tilde + (1.0 - alpha_k) * x
        r_p = torch.bmm(batch.A, x.unsqueeze(-1)).squeeze(-1) - z
        r_d = (torch.bmm(batch.Q, x.unsqueeze(-1)).squeeze(-1) + batch.p
               + torch.bmm(batch.A.transpose(1, 2), y.unsqueeze(-1)).squeeze(-1))
        prim_norms.append(torch.linalg.vector_norm(r_p, dim=1))
        dual_norms.append(torch.linalg.vector_norm(r_d, dim=1))
        if trajectory is not None:
            trajectory.append({"x": x.detach().clone(), "z": z.detach().clone(),
                               "y": y.detach().clone(),
                               "x_tilde": x_tilde.detach().clone(),
                               "z_tilde": z_tilde.detach().clone(),
                               "nu": nu.detach().clone()})
    out = Carry(x=x, z=z, y=y, x_hat=x_hat, H=state.H, C=state.C,
                x_tilde=x_tilde, z_tilde=z_tilde, nu=nu)
    empty = torch.zeros((0, batch.B), dtype=DTYPE)
    prim = torch.stack(prim_norms) if prim_norms else empty
    dual = torch.stack(dual_norms) if dual_norms else empty
    return out, prim, dual


@dataclass
class UnrollResult:
    carry: Carry
    prim_norms: torch.Tensor  # (K, B)
    dual_norms: torch.Tensor  # (K, B)
    rho_last: torch.Tensor    # (m,) penalty of the final iteration
    trajectory: list | None = None

    def iterates(self) -> list[Iterate]:
        c = self.carry
        out = []
        for b in range(c.x.shape[0]):
            np_ = lambda t: t[b].detach().numpy().copy()
            out.append(Iterate(x=np_(c.x), z=np_(c.z), y=np_(c.y),
                               x_tilde=np_(c.x_tilde if c.x_tilde is not None else c.x),
                               z_tilde=np_(c.z_tilde if c.z_tilde is not None else c.z),
                               nu=np_(c.nu if c.nu is not None else c.y)))
        return out


def unroll(problems: BoxQp | list[BoxQp], params: LstmParams, adapt: AdaptiveParams,
           cfg: UnrollConfig, init: Carry | None = None, sigma: float = DEFAULT_SIGMA,
           exact_inner: bool = False, record_trajectory: bool = False) -> UnrollResult:
    """Run `cfg.K` solver iterations (no gradient bookkeeping across segments)."""
    probs = [problems] if isinstance(problems, BoxQp) else list(problems)
    batch = TorchBatch.from_problems(probs)
    carry = init if init is not None else Carry.zeros(batch.B, batch.n, batch.m, cfg.h)
    trajectory: list | None = [] if record_trajectory else None
    with torch.no_grad():
        carry, prim, dual = run_steps(batch, params, adapt, carry, range(cfg.K),
                                      sigma, exact_inner, trajectory)
    if cfg.K > 0 and adapt.K > 0:
        rho_last = adapt.rho(min(cfg.K, adapt.K) - 1, batch.eq_mask).detach()
    else:
        base = torch.sigmoid(torch.tensor(_logit(0.1), dtype=DTYPE))
        rho_last = torch.where(batch.eq_mask, EQ_RHO_BOOST * base, base)
    return UnrollResult(carry=carry, prim_norms=prim, dual_norms=dual,
                        rho_last=rho_last, trajectory=trajectory)


def save_checkpoint(path, params: LstmParams, adapt: AdaptiveParams, cfg: UnrollConfig,
                    meta: dict[str, float] | None = None) -> None:
    entries = {k: v.detach().numpy() for k, v in params.tensors().items()}
    entries["alpha_raw"] = adapt.alpha_raw.detach().numpy()
    entries["rho_raw"] = adapt.rho_raw.detach().numpy()
    entries["config.K"] = np.float64(cfg.K)
    entries["config.T"] = np.float64(cfg.T)
    entries["config.h"] = np.float64(cfg.h)
    entries["meta.loss_on_scaled_residuals"] = np.float64(1.0)
    for key, val in (meta or {}).items():
        entries[f"meta.{key}"] = np.float64(val)
    serialize.save_arrays(path, entries)


def load_checkpoint(path):
    data = serialize.load_arrays(path)
    params = LstmParams(**{name: torch.from_numpy(data[name].copy()).to(DTYPE)
                           for name in WEIGHT_NAMES})
    adapt = AdaptiveParams(
        alpha_raw=torch.from_numpy(data["alpha_raw"].copy()).to(DTYPE),
        rho_raw=torch.from_numpy(data["rho_raw"].copy()).to(DTYPE),
    )
    cfg = UnrollConfig(K=int(data["config.K"]), T=int(data["config.T"]),
                       h=int(data["config.h"]))
    meta = {k[len("meta."):]: float(v) for k, v in data.items() if k.startswith("meta.")}
    return params, adapt, cfg, meta
