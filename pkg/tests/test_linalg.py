import numpy as np
import pytest

from ladmm.linalg import (
    KktSystem,
    LdlFactorization,
    SingularMatrixError,
    build_kkt,
    cg_solve,
    kkt_matrix,
    ldl_factorize,
    spectral_estimates,
)
from ladmm.problem import BoxQp
from ladmm.rng import CounterRng
from oracles import gepp_solve, jacobi_eigenvalues


def quasi_definite(rng, n, m):
    """Random [[P, B'], [B, -N]] with P, N SPD."""
    Mp = rng.normal((n, n))
    Mn = rng.normal((m, m))
    B = rng.normal((m, n))
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Mp @ Mp.T + 0.5 * np.eye(n)
    K[n:, n:] = -(Mn @ Mn.T + 0.5 * np.eye(m))
    K[:n, n:] = B.T
    K[n:, :n] = B
    K = 0.5 * (K + K.T)
    return K


def test_ldl_two_by_two_hand_case():
    # Q=1, sigma=1, A=1, rho=1: [[2, 1], [1, -1]] w = (1, 0) -> w = (1/3, 1/3)
    K = np.array([[2.0, 1.0], [1.0, -1.0]])
    fact = LdlFactorization(K, n_pos=1)
    w = fact.solve(np.array([1.0, 0.0]))
    assert np.allclose(w, [1.0 / 3.0, 1.0 / 3.0], atol=1e-14)


def test_ldl_identity():
    fact = LdlFactorization(np.eye(4), n_pos=4)
    b = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.allclose(fact.solve(b), b, atol=1e-15)


def test_ldl_matches_gepp_on_random_quasi_definite():
    rng = CounterRng(13)
    K = quasi_definite(rng, 12, 8)
    fact = LdlFactorization(K, n_pos=12)
    b = rng.normal(20)
    assert np.allclose(fact.solve(b), gepp_solve(K, b), atol=1e-9)


def test_ldl_repeated_solves_match_independent_gepp():
    rng = CounterRng(29)
    for trial in range(20):
        K = quasi_definite(rng, 7, 5)
        fact = LdlFactorization(K, n_pos=7)
        for _ in range(5):
            b = rng.normal(12)
            assert np.allclose(fact.solve(b), gepp_solve(K, b), atol=1e-8)


def test_ldl_residual_contract():
    rng = CounterRng(31)
    K = quasi_definite(rng, 15, 10)
    fact = LdlFactorization(K, n_pos=15)
    b = rng.normal(25)
    w = fact.solve(b)
    assert np.max(np.abs(K @ w - b)) <= 1e-8 * (1.0 + np.max(np.abs(b)))


def test_ldl_regularizes_zero_pivot_and_raises_when_hopeless():
    # zero diagonal in the trailing block is rescued by the -1e-9 shift
    K = np.array([[1.0, 0.0], [0.0, 0.0]])
    fact = LdlFactorization(K, n_pos=1)
    w = fact.solve(np.array([1.0, 0.0]))
    assert np.isfinite(w).all()
    with pytest.raises(SingularMatrixError):
        # a pivot the static shift cancels almost exactly stays singular
        LdlFactorization(np.array([[np.nextafter(1e-9, 0.0)]]), n_pos=0)


def test_kkt_builder_shapes_and_symmetry():
    prob = BoxQp.create(np.eye(3), np.zeros(3), np.array([[1.0, 0, 0], [0, 1, 1]]),
                        [0.0, 1.0], [2.0, 1.0])
    sys_ = build_kkt(prob, rho=np.array([0.5, 2.0]), sigma=1e-6,
                     x=np.zeros(3), z=np.zeros(2), y=np.zeros(2))
    assert isinstance(sys_, KktSystem)
    K = sys_.matrix
    assert K.shape == (5, 5)
    assert np.max(np.abs(K - K.T)) <= 1e-12
    assert np.allclose(np.diag(K)[3:], [-2.0, -0.5])
    w = ldl_factorize(sys_).solve(sys_.rhs)
    assert np.allclose(K @ w, sys_.rhs, atol=1e-10)


def test_cg_identity_single_iteration():
    b = CounterRng(1).normal(6)
    w, iters = cg_solve(np.eye(6), b, tol=1e-12, max_iter=50)
    assert iters == 1
    assert np.allclose(w, b, atol=1e-12)


def test_cg_diagonal():
    w, _ = cg_solve(np.diag([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]),
                    tol=1e-14, max_iter=50)
    assert np.allclose(w, np.ones(3), atol=1e-12)


def test_cg_matches_gepp_on_random_spd():
    rng = CounterRng(8)
    M = rng.normal((30, 30))
    S = M @ M.T + 0.5 * np.eye(30)
    b = rng.normal(30)
    w, iters = cg_solve(S, b, tol=1e-10, max_iter=1000)
    assert np.allclose(w, gepp_solve(S, b), atol=1e-8)
    assert iters < 1000


def test_cg_error_is_monotone_in_m_norm():
    rng = CounterRng(77)
    M = rng.normal((25, 25))
    S = M @ M.T + 0.5 * np.eye(25)
    b = rng.normal(25)
    x_ref = gepp_solve(S, b)
    errs = []
    for k in range(1, 26):
        w, _ = cg_solve(S, b, tol=0.0, max_iter=k)
        e = w - x_ref
        errs.append(float(e @ (S @ e)))
    for prev, cur in zip(errs, errs[1:]):
        assert cur <= prev + 1e-12 * max(1.0, prev)


def test_cg_flags_cap_without_error():
    rng = CounterRng(12)
    M = rng.normal((20, 20))
    S = M @ M.T + 1e-4 * np.eye(20)
    w, iters = cg_solve(S, rng.normal(20), tol=1e-16, max_iter=3)
    assert iters == 3


def test_spectral_diagonal_and_identity():
    prob = BoxQp.create(np.diag([1.0, 2.0, 3.0]), np.zeros(3), np.eye(3),
                        -np.ones(3), np.ones(3))
    est = spectral_estimates(prob)
    assert est.sigma_q_max == pytest.approx(3.0, abs=1e-6)
    assert est.sigma_ata_min == pytest.approx(1.0, abs=1e-8)
    assert est.sigma_ata_max == pytest.approx(1.0, abs=1e-8)
    assert est.kappa_ata == pytest.approx(1.0, abs=1e-8)


def test_spectral_matches_jacobi_oracle():
    rng = CounterRng(41)
    A = rng.normal((15, 10))
    M = rng.normal((10, 10))
    Q = M @ M.T
    Q = 0.5 * (Q + Q.T)
    prob = BoxQp.create(Q, np.zeros(10), A, -np.ones(15), np.ones(15))
    est = spectral_estimates(prob)
    q_evals = jacobi_eigenvalues(Q)
    ata_evals = jacobi_eigenvalues(A.T @ A)
    assert est.sigma_q_max == pytest.approx(q_evals[-1], rel=1e-4)
    assert est.sigma_ata_max == pytest.approx(ata_evals[-1], rel=1e-4)
    positive = ata_evals[ata_evals > 1e-10 * ata_evals[-1]]
    assert est.sigma_ata_min == pytest.approx(positive[0], rel=1e-4)


def test_spectral_scale_covariance():
    rng = CounterRng(4)
    A = rng.normal((8, 6))
    Q = np.eye(6)
    base = spectral_estimates(BoxQp.create(Q, np.zeros(6), A, -np.ones(8), np.ones(8)))
    t = 3.7
    scaled = spectral_estimates(BoxQp.create(Q, np.zeros(6), t * A,
                                             -np.ones(8), np.ones(8)))
    assert scaled.sigma_ata_min == pytest.approx(t**2 * base.sigma_ata_min, rel=1e-6)
    assert scaled.sigma_ata_max == pytest.approx(t**2 * base.sigma_ata_max, rel=1e-6)
    assert scaled.kappa_ata == pytest.approx(base.kappa_ata, rel=1e-6)
