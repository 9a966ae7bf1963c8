import math

import numpy as np
import pytest

from bandloc.ensembles import (BlockHamiltonian, Ensemble, MixtureSpec, ModelParams,
                               assemble_dense, mixture_second_moment, sample_batch,
                               sample_ginibre, sample_goe, sample_gue, sample_hamiltonian,
                               sample_mixture, sample_triangular)
from bandloc.errors import DomainError
from bandloc.rng import Streams

N = 100_000


def _within(sample_values, target, k=4.0):
    v = np.asarray(sample_values, float)
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - target) < k * se, (v.mean(), target, se)


def tr2(M):
    return np.sum(np.abs(M) ** 2, axis=(-2, -1))


@pytest.mark.parametrize("W", [1, 2, 4])
def test_gue_trace_moment(W, rng):
    V = sample_gue(W, rng, N)
    _within(tr2(V), W / 2)


def test_gue_w1_variance(rng):
    V = sample_gue(1, rng, N)
    assert np.all(V.imag == 0)
    _within(V.real[:, 0, 0] ** 2, 0.5)


def test_gue_entry_variances(rng):
    V = sample_gue(3, rng, N)
    _within(V[:, 0, 0].real ** 2, 1 / 6)
    _within(np.abs(V[:, 0, 1]) ** 2, 1 / 6)


def test_gue_exactly_hermitian(rng):
    V = sample_gue(5, rng, 50)
    assert np.array_equal(V, np.conj(np.swapaxes(V, -1, -2)))


@pytest.mark.parametrize("W", [1, 3])
def test_ginibre_trace_moment(W, rng):
    _within(tr2(sample_ginibre(W, rng, N)), W)


def test_real_variants(rng):
    V = sample_goe(3, rng, N)
    T = sample_ginibre(3, rng, N, real=True)
    assert V.dtype.kind == "f" and T.dtype.kind == "f"
    assert np.array_equal(V, np.swapaxes(V, -1, -2))
    # same trace densities on the real spaces
    _within(tr2(V), 3 * (1 / 6) + 6 * (1 / 12))
    _within(tr2(T), 9 / 6)


def test_triangular_zero_upper(rng):
    T = sample_triangular(4, rng, 1000)
    assert np.all(np.triu(T, 1) == 0)
    _within(tr2(sample_triangular(4, rng, N)), 10 / 4)


def test_hamiltonian_shapes_and_boundary():
    H = sample_hamiltonian(ModelParams(1, 3), 0)
    assert H.V.shape == (1, 3, 3) and H.T.shape == (0, 3, 3)
    H = sample_hamiltonian(ModelParams(5, 2, Ensemble.TRIANGULAR_RBM), 0)
    assert np.all(np.triu(H.T, 1) == 0)
    H = sample_hamiltonian(ModelParams(4, 2, Ensemble.WEGNER_REAL), 0)
    assert H.V.dtype.kind == "f" and H.T.dtype.kind == "f"


def test_hamiltonian_immutable():
    H = sample_hamiltonian(ModelParams(3, 2), 0)
    with pytest.raises(ValueError):
        H.V[0, 0, 0] = 1.0


def test_determinism():
    p = ModelParams(6, 3)
    a = sample_hamiltonian(p, Streams(9).generator(4))
    b = sample_hamiltonian(p, Streams(9).generator(4))
    assert np.array_equal(a.V, b.V) and np.array_equal(a.T, b.T)
    V1, T1 = sample_batch(p, Streams(9), range(10))
    V2, T2 = sample_batch(p, Streams(9), [3, 7])
    assert np.array_equal(V1[[3, 7]], V2) and np.array_equal(T1[[3, 7]], T2)


def test_mixture_single_atom_matches_gue(rng):
    spec = MixtureSpec(2.0, ((1.0, 1.0),))
    V = sample_mixture(3, spec, rng, hermitian=True, size=N)
    _within(tr2(V), 1.5)
    T = sample_mixture(3, spec, rng, hermitian=False, size=N)
    _within(tr2(T), mixture_second_moment(3, 1.0, hermitian=False))


def test_mixture_two_atoms_average(rng):
    spec = MixtureSpec(4.0, ((1.0, 0.5), (4.0, 0.5)))
    V = sample_mixture(2, spec, rng, hermitian=True, size=N)
    target = 0.5 * (mixture_second_moment(2, 1.0) + mixture_second_moment(2, 4.0))
    _within(tr2(V), target)


def test_mixture_weights(rng):
    spec = MixtureSpec(4.0, ((1.0, 0.3), (4.0, 0.7)))
    T = sample_mixture(2, spec, rng, hermitian=False, size=N)
    target = 0.3 * mixture_second_moment(2, 1.0, False) + 0.7 * mixture_second_moment(2, 4.0, False)
    _within(tr2(T), target)


def test_mixture_validation():
    with pytest.raises(DomainError):
        MixtureSpec(1.0, ((2.0, 1.0),))
    with pytest.raises(DomainError):
        MixtureSpec(1.0, ((0.5, 0.4),))
    with pytest.raises(DomainError):
        MixtureSpec(1.0, ())


def test_params_validation():
    with pytest.raises(DomainError):
        ModelParams(0, 1)
    with pytest.raises(DomainError):
        ModelParams(2, 1, Ensemble.GAUSSIAN_MIXTURE)
    with pytest.warns(UserWarning):
        ModelParams(2, 1, z=5.0)


def test_assemble_dense_examples():
    H = BlockHamiltonian.from_blocks([2.0, 0.0], [1.0])
    assert np.array_equal(assemble_dense(H), np.array([[2.0, -1.0], [-1.0, 0.0]]))
    H1 = sample_hamiltonian(ModelParams(1, 3), 1)
    assert np.array_equal(assemble_dense(H1), H1.V[0])
    M = assemble_dense(sample_hamiltonian(ModelParams(5, 3), 2))
    assert np.array_equal(M, M.conj().T)
