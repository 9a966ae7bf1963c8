import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bandloc.ensembles import BlockHamiltonian, ModelParams, assemble_dense, sample_hamiltonian
from bandloc.errors import DomainError, ExactlySingular
from bandloc.greens import (ScaledMatrix, corner_green, corner_log_norms, dense_green_block,
                            gamma_chain, log_norm_X, op_norm)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_gamma_examples():
    H = BlockHamiltonian.from_blocks([2.0], [])
    assert gamma_chain(H, 1.0).gammas[0, 0, 0] == 1.0
    H = BlockHamiltonian.from_blocks([2.0, 0.0], [1.0])
    assert gamma_chain(H, 0.0).gammas[1, 0, 0] == pytest.approx(-0.5, abs=1e-15)


def test_corner_small_example():
    H = BlockHamiltonian.from_blocks([2.0, 0.0], [1.0])
    g = corner_green(H, 0.0)
    assert g.value()[0, 0] == pytest.approx(-1.0, abs=1e-14)
    assert log_norm_X(H, 0.0) == pytest.approx(0.0, abs=1e-14)
    assert dense_green_block(H, 0.0, 1, 2)[0, 0] == pytest.approx(-1.0, abs=1e-14)
    assert log_norm_X(BlockHamiltonian.from_blocks([2.0], []), 1.0) == pytest.approx(0.0, abs=1e-15)


def test_identity_resolvent():
    V = np.stack([np.eye(2)] * 3)
    H = BlockHamiltonian.from_blocks(V, np.zeros((2, 2, 2)))
    for x in (1, 2, 3):
        for y in (1, 2, 3):
            assert np.allclose(dense_green_block(H, 0.0, x, y), np.eye(2) * (x == y))


def test_corner_n1_is_inverse():
    H = sample_hamiltonian(ModelParams(1, 3), 5)
    assert rel(corner_green(H, 0.2).value(), np.linalg.inv(H.V[0] - 0.2 * np.eye(3))) < 1e-12


@settings(max_examples=30, deadline=None)
@given(W=st.sampled_from([1, 2, 4]), n=st.integers(1, 20), z=st.sampled_from([0.0, 0.5, -0.3]),
       seed=st.integers(0, 10**6))
def test_corner_matches_dense(W, n, z, seed):
    H = sample_hamiltonian(ModelParams(n, W), seed)
    assert rel(corner_green(H, z).value(), dense_green_block(H, z, 1, n)) < 1e-8


@settings(max_examples=20, deadline=None)
@given(W=st.sampled_from([1, 2, 3]), n=st.integers(1, 12), seed=st.integers(0, 10**6))
def test_schur_identity(W, n, seed):
    H = sample_hamiltonian(ModelParams(n, W), seed)
    chain = gamma_chain(H, 0.3)
    for j in range(1, n + 1):
        sub = BlockHamiltonian(H.V[:j], H.T[:j - 1], H.params)
        g = dense_green_block(sub, 0.3, j, j)
        assert rel(chain.gammas[j - 1], np.linalg.inv(g)) < 1e-8


def test_gamma_hermitian_and_first():
    H = sample_hamiltonian(ModelParams(8, 3), 3)
    c = gamma_chain(H, 0.1)
    assert np.array_equal(c.gammas[0], H.V[0] - 0.1 * np.eye(3))
    assert np.allclose(c.gammas, np.conj(np.swapaxes(c.gammas, -1, -2)), atol=0)


def test_resolvent_symmetry():
    H = sample_hamiltonian(ModelParams(6, 2), 8)
    a = dense_green_block(H, 0.4, 2, 5)
    b = dense_green_block(H, 0.4, 5, 2)
    assert np.max(np.abs(a - b.conj().T)) < 1e-10


def test_scaled_unit_norm_and_long_chain():
    H = sample_hamiltonian(ModelParams(50, 2), 4)
    g = corner_green(H, 0.0)
    assert 0.5 <= op_norm(g.unit) <= 2
    dense = np.log(op_norm(dense_green_block(H, 0.0, 1, 50)))
    assert abs(g.log_norm - dense) / abs(dense) < 1e-8
    long = sample_hamiltonian(ModelParams(5000, 1), 4)
    x = log_norm_X(long, 0.0)
    assert np.isfinite(x) and x < -200  # far below double underflow of a raw product


def test_batch_matches_single():
    p = ModelParams(7, 2)
    Hs = [sample_hamiltonian(p, s) for s in range(5)]
    V = np.stack([h.V for h in Hs])
    T = np.stack([h.T for h in Hs])
    X, bad = corner_log_norms(V, T, 0.0)
    assert not bad.any()
    assert np.allclose(X, [log_norm_X(h, 0.0) for h in Hs], rtol=1e-12)


def test_singular_detection():
    H = BlockHamiltonian.from_blocks([1.0, 0.0], [1.0])
    with pytest.raises(ExactlySingular) as e:
        gamma_chain(H, 1.0)
    assert e.value.index == 1
    V = np.zeros((1, 1, 1))
    with pytest.raises(ExactlySingular):
        corner_green(BlockHamiltonian.from_blocks(V, []), 0.0)
    _, bad = corner_log_norms(V[None], np.zeros((1, 0, 1, 1)), 0.0)
    assert bad[0]


def test_zero_scaled_matrix():
    m = ScaledMatrix(np.zeros((2, 2)), -np.inf)
    assert m.log_norm == -np.inf and np.all(m.value() == 0)


def test_block_index_errors():
    H = sample_hamiltonian(ModelParams(3, 1), 0)
    with pytest.raises(DomainError):
        dense_green_block(H, 0.0, 0, 2)
