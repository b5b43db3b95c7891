import numpy as np
import pytest

from ladmm.datasets import GeneratorSpec, generate
from ladmm.serialize import (
    FormatError,
    load_arrays,
    load_problem,
    save_arrays,
    save_problem,
)


def test_array_container_roundtrip_bit_exact(tmp_path):
    path = tmp_path / "blob.bin"
    arrays = {
        "scalar": np.float64(3.5),
        "vec": np.array([1.0, -np.inf, np.inf, 1e-300, np.pi]),
        "mat": np.arange(12.0).reshape(3, 4) * 1e17,
    }
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert set(loaded) == set(arrays)
    for k in arrays:
        a = np.asarray(arrays[k])
        assert loaded[k].shape == a.shape
        assert np.array_equal(loaded[k].view(np.uint64), a.view(np.uint64))


def test_container_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_arrays(path)
    save_arrays(path, {"a": np.zeros(2)})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        load_arrays(path)


@pytest.mark.parametrize("sparse", [False, True])
def test_problem_roundtrip(tmp_path, sparse):
    prob = generate(GeneratorSpec(family="random_qp", n=8, m_ineq=6, seed=5))[0]
    path = tmp_path / "prob.qpf"
    save_problem(path, prob, sparse=sparse)
    back = load_problem(path)
    for field in ("Q", "p", "A", "l", "u"):
        a, b = getattr(prob, field), getattr(back, field)
        assert np.array_equal(a.view(np.uint64), b.view(np.uint64)), field


def test_problem_roundtrip_preserves_infinities(tmp_path):
    prob = generate(GeneratorSpec(family="convex_qp_rhs", n=6, m_ineq=3, m_eq=2, seed=1))[0]
    path = tmp_path / "prob.qpf"
    save_problem(path, prob)
    back = load_problem(path)
    assert np.all(np.isneginf(back.l[:3]))
    assert np.array_equal(back.u.view(np.uint64), prob.u.view(np.uint64))


def test_loader_enforces_invariants(tmp_path):
    from ladmm.problem import ValidationError
    path = tmp_path / "bad.qpf"
    save_arrays(path, {
        "format_version": np.float64(1), "n": np.float64(1), "m": np.float64(1),
        "dense": np.float64(1), "Q": np.array([[-5.0]]), "A": np.array([[1.0]]),
        "p": np.zeros(1), "l": np.zeros(1), "u": np.ones(1),
    })
    with pytest.raises(ValidationError):
        load_problem(path)
