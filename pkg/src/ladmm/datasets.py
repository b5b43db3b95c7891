"""Seeded benchmark-problem generators and train/val/test split management.

Five families:

* ``convex_qp_rhs`` / ``convex_qp_all``: diagonal Q with Q_ii ~ U(0,1),
  p_j ~ U(0,1), dense Gaussian G (inequalities) and A (equalities),
  b_i ~ U(-1,1), and inequality bounds c = sum_j |(G A^+)_{ij}| so that
  x0 = A^+ b is always feasible.  The RHS variant shares (Q, p, G, A, c)
  across instances and resamples only b; the ALL variant resamples
  everything.
* ``random_qp``: Q = M M' + alpha I and A with 50% nonzero N(0,1) entries,
  p, b ~ N(0,1); rows are two-sided with l = b - |s|, u = b + |s|,
  s ~ N(0,1) per row (the spread is this generator's own convention and is
  recorded in the manifest).
* ``equality_qp``: Q = M M' + 1e-2 I (50% nonzeros), p, b ~ N(0,1), rows
  l = u = b.
* ``svm``: hinge-loss SVM over (x, t) with x'x + lambda 1't, t >= 0 and
  t >= diag(b) A x + 1; labels are +1 on the first half of the rows;
  A rows are N(+-1/n, 1/n) by label with 50% nonzeros; lambda = |N(0,1)|
  + 1e-3 (clamped positive so the t-direction stays bounded).

All randomness flows through CounterRng; instance i draws from the child
stream derive(i + 1) while family-shared parameters use derive(0), so the
seed alone determines every byte of the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import BoxQp
from .rng import CounterRng

FAMILIES = ("convex_qp_rhs", "convex_qp_all", "random_qp", "equality_qp", "svm")
PINV_RCOND = 1e-10


class RankDeficientA(RuntimeError):
    """The equality block failed the pseudoinverse residual check."""


@dataclass
class GeneratorSpec:
    family: str
    n: int
    m_ineq: int = 0
    m_eq: int = 0
    seed: int = 0
    count: int = 1
    alpha_reg: float = 1e-2
    lambda_svm: float | None = None  # None: sampled per instance

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.n <= 0 or self.count <= 0:
            raise ValueError("n and count must be positive")


def _dense_normal(rng: CounterRng, rows: int, cols: int) -> np.ndarray:
    return rng.normal((rows, cols))


def _half_sparse_normal(rng: CounterRng, rows: int, cols: int) -> np.ndarray:
    """Gaussian matrix with an independent 50% zero mask (values drawn first)."""
    vals = rng.normal((rows, cols))
    mask = rng.uniform((rows, cols)) < 0.5
    return np.where(mask, vals, 0.0)


def _checked_pinv(A: np.ndarray) -> np.ndarray:
    pinv = np.linalg.pinv(A, rcond=PINV_RCOND)
    resid = np.max(np.abs(A @ pinv @ A - A)) if A.size else 0.0
    if resid > 1e-8 * max(1.0, np.max(np.abs(A))):
        raise RankDeficientA(f"pseudoinverse residual {resid:.3e}")
    return pinv


def _convex_qp_base(rng: CounterRng, n: int, m_ineq: int, m_eq: int):
    """Shared structure (Q, p, G, A, c) for the convex_qp families."""
    for attempt in range(5):
        stream = rng.derive(1000 + attempt) if attempt else rng
        q_diag = stream.uniform(n)
        p = stream.uniform(n)
        G = _dense_normal(stream, m_ineq, n)
        A = _dense_normal(stream, m_eq, n)
        try:
            pinv = _checked_pinv(A)
        except RankDeficientA:
            continue
        c = np.abs(G @ pinv).sum(axis=1)
        return np.diag(q_diag), p, G, A, pinv, c
    raise RankDeficientA("could not draw a full-rank equality block in 5 attempts")


def _stack_convex_qp(Q, p, G, A, c, b) -> BoxQp:
    m_ineq, m_eq = G.shape[0], A.shape[0]
    stacked = np.vstack([G, A])
    l = np.concatenate([np.full(m_ineq, -np.inf), b])
    u = np.concatenate([c, b])
    return BoxQp.create(Q, p, stacked, l, u)


def gen_convex_qp(spec: GeneratorSpec) -> list[BoxQp]:
    if spec.family not in ("convex_qp_rhs", "convex_qp_all"):
        raise ValueError("spec.family must be convex_qp_rhs or convex_qp_all")
    if spec.m_eq <= 0:
        raise ValueError("convex_qp families need m_eq >= 1")
    root = CounterRng(spec.seed)
    out = []
    if spec.family == "convex_qp_rhs":
        Q, p, G, A, _, c = _convex_qp_base(root.derive(0), spec.n, spec.m_ineq, spec.m_eq)
        for i in range(spec.count):
            b = root.derive(i + 1).uniform(spec.m_eq, -1.0, 1.0)
            out.append(_stack_convex_qp(Q, p, G, A, c, b))
    else:
        for i in range(spec.count):
            stream = root.derive(i + 1)
            Q, p, G, A, _, c = _convex_qp_base(stream, spec.n, spec.m_ineq, spec.m_eq)
            b = stream.uniform(spec.m_eq, -1.0, 1.0)
            out.append(_stack_convex_qp(Q, p, G, A, c, b))
    return out


def _sparse_psd_objective(stream: CounterRng, n: int, alpha: float):
    M = _half_sparse_normal(stream, n, n)
    Q = M @ M.T + alpha * np.eye(n)
    return 0.5 * (Q + Q.T)  # kill BLAS round-off asymmetry


def gen_random_qp(spec: GeneratorSpec) -> list[BoxQp]:
    if spec.family != "random_qp":
        raise ValueError("spec.family must be random_qp")
    m = spec.m_ineq
    root = CounterRng(spec.seed)
    out = []
    for i in range(spec.count):
        stream = root.derive(i + 1)
        Q = _sparse_psd_objective(stream, spec.n, spec.alpha_reg)
        A = _half_sparse_normal(stream, m, spec.n)
        p = stream.normal(spec.n)
        b = stream.normal(m)
        spread = np.abs(stream.normal(m))
        out.append(BoxQp.create(Q, p, A, b - spread, b + spread))
    return out


def gen_equality_qp(spec: GeneratorSpec) -> list[BoxQp]:
    if spec.family != "equality_qp":
        raise ValueError("spec.family must be equality_qp")
    m = spec.m_eq
    root = CounterRng(spec.seed)
    out = []
    for i in range(spec.count):
        stream = root.derive(i + 1)
        Q = _sparse_psd_objective(stream, spec.n, 1e-2)
        A = _half_sparse_normal(stream, m, spec.n)
        p = stream.normal(spec.n)
        b = stream.normal(m)
        out.append(BoxQp.create(Q, p, A, b.copy(), b.copy()))
    return out


def gen_svm(spec: GeneratorSpec) -> list[BoxQp]:
    if spec.family != "svm":
        raise ValueError("spec.family must be svm")
    n, m = spec.n, spec.m_ineq
    if m < 2:
        raise ValueError("svm needs m_ineq >= 2 data points")
    root = CounterRng(spec.seed)
    labels = np.where(np.arange(m) < m // 2, 1.0, -1.0)
    out = []
    for i in range(spec.count):
        stream = root.derive(i + 1)
        raw = stream.normal((m, n))
        mask = stream.uniform((m, n)) < 0.5
        mean = labels[:, None] / n
        std = 1.0 / np.sqrt(n)
        A_data = np.where(mask, mean + std * raw, 0.0)
        lam = spec.lambda_svm if spec.lambda_svm is not None else abs(stream.normal()) + 1e-3
        Q = np.diag(np.concatenate([np.full(n, 2.0), np.zeros(m)]))
        p = np.concatenate([np.zeros(n), np.full(m, lam)])
        # rows: diag(b) A x - t <= -1  and  -t <= 0
        top = np.hstack([labels[:, None] * A_data, -np.eye(m)])
        bottom = np.hstack([np.zeros((m, n)), -np.eye(m)])
        stacked = np.vstack([top, bottom])
        l = np.full(2 * m, -np.inf)
        u = np.concatenate([np.full(m, -1.0), np.zeros(m)])
        out.append(BoxQp.create(Q, p, stacked, l, u))
    return out


def generate(spec: GeneratorSpec) -> list[BoxQp]:
    if spec.family in ("convex_qp_rhs", "convex_qp_all"):
        return gen_convex_qp(spec)
    if spec.family == "random_qp":
        return gen_random_qp(spec)
    if spec.family == "equality_qp":
        return gen_equality_qp(spec)
    return gen_svm(spec)


def split_sizes(count: int) -> tuple[int, int, int]:
    """(train, val, test); 1000 instances split exactly 940/10/50."""
    train = int(count * 0.94)
    val = max(1, int(round(count * 0.01))) if count > 1 else 0
    val = min(val, count - train) if count > train else 0
    test = count - train - val
    return train, val, test


def split_labels(count: int) -> list[str]:
    train, val, test = split_sizes(count)
    return ["train"] * train + ["val"] * val + ["test"] * test


def write_manifest(path, spec: GeneratorSpec, files: list[str]) -> None:
    labels = split_labels(spec.count)
    payload = {
        "family": spec.family,
        "seed": spec.seed,
        "n": spec.n,
        "m_ineq": spec.m_ineq,
        "m_eq": spec.m_eq,
        "count": spec.count,
        "alpha_reg": spec.alpha_reg,
        "lambda_svm": spec.lambda_svm,
        "instances": [
            {"file": f, "index": i, "split": labels[i]} for i, f in enumerate(files)
        ],
    }
    if spec.family == "random_qp":
        payload["notes"] = ("two-sided bounds l = b - |s|, u = b + |s| with "
                            "s ~ N(0,1) per row; the spread convention is "
                            "specific to this generator")
    Path(path).write_text(json.dumps(payload, indent=2))


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
