import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bandloc.ensembles import ModelParams, sample_batch, sample_ginibre
from bandloc.greens import gamma_chain_batch
from bandloc.errors import DomainError
from bandloc.oracles import (change_of_variables, finite_diff_jacobian, hopping_norm_tail,
                             inverse_norm_tail, jacobian_entry_error, m_phi_complement,
                             mw_lower_bound_check, pigeonhole_check, ramp_bond_inputs,
                             random_mw_case, sup_probe_bonds, aq_ratio, tail_probability,
                             wilson_interval)
from bandloc.rng import Streams
from bandloc.shift import CutoffSpec, ShiftContext, eta_derivative, log_jacobian


# fluctuation lemma

def test_mw_two_point():
    c = mw_lower_bound_check([-2.0, 2.0], [0.5, 0.5], 1.0, 2.0, 1.0, 0.1)
    assert c.hypothesis_holds and c.passes and c.second_moment == 4.0
    assert c.bound == pytest.approx(0.9 / 1.5)


def test_mw_point_mass_fails_hypothesis():
    c = mw_lower_bound_check([0.0], [1.0], 1.0, 2.0, 1.0, 0.4)
    assert not c.hypothesis_holds and c.passes


def test_mw_domain():
    with pytest.raises(DomainError):
        mw_lower_bound_check([0.0], [1.0], 2.0, 1.0, 1.0, 0.4)
    with pytest.raises(DomainError):
        mw_lower_bound_check([0.0], [1.0], 1.0, 2.0, 1.0, 1.0)


def test_mw_random_cases_no_counterexample():
    holds = 0
    for k in range(10_000):
        res = mw_lower_bound_check(*random_mw_case(np.random.default_rng(k)))
        holds += res.hypothesis_holds
        assert res.passes
    assert holds > 500  # the sampler does exercise the non-vacuous branch


# finite differences

def test_fd_identity_at_zero_delta(rng):
    A, G, Gt = ramp_bond_inputs(2, rng)
    assert np.max(np.abs(finite_diff_jacobian(A, G, Gt, ShiftContext(0.0)) - np.eye(8))) < 1e-8


def test_fd_linear_on_plateau(rng):
    A = sample_ginibre(2, rng) * 0.1
    G, Gt = np.eye(2), np.eye(2)
    D = finite_diff_jacobian(A, G, Gt, ShiftContext(0.01))
    assert np.max(np.abs(D - math.exp(0.01) * np.eye(8))) < 1e-8


def test_fd_second_order(rng):
    A, G, Gt = ramp_bond_inputs(2, np.random.default_rng(5))
    ctx = ShiftContext(0.02)
    D = eta_derivative(A, G, Gt, ctx)
    h = 1e-3 * float(np.linalg.norm(A))
    e1 = np.max(np.abs(finite_diff_jacobian(A, G, Gt, ctx, h) - D))
    e2 = np.max(np.abs(finite_diff_jacobian(A, G, Gt, ctx, h / 2) - D))
    assert 3.0 < e1 / e2 < 5.0


def test_fd_matches_derivative_w2(rng):
    A, G, Gt = ramp_bond_inputs(2, rng)
    ctx = ShiftContext(0.025)
    assert jacobian_entry_error(eta_derivative(A, G, Gt, ctx),
                                finite_diff_jacobian(A, G, Gt, ctx)) < 1e-4


# samplers

def test_ramp_inputs_on_ramp(rng):
    K = 4.0
    for W in (1, 2, 3):
        A, G, Gt = ramp_bond_inputs(W, rng, K)
        f = np.sum(np.abs(A) ** 2) / W
        V = G + A @ Gt @ A.conj().T
        g = np.sum(np.abs(V) ** 2) / W**2
        assert K < f < 2 * K and K < g < 2 * K


@pytest.mark.parametrize("family", ["gaussian", "rank-one", "off-diagonal"])
def test_sup_probe_finite(family, rng):
    bonds = sup_probe_bonds(4, 500, rng, family=family)
    r = aq_ratio(*bonds)
    assert r.shape == (500,) and np.all(np.isfinite(r)) and np.all(r >= 0)


def test_sup_probe_unknown_family(rng):
    with pytest.raises(DomainError):
        sup_probe_bonds(2, 10, rng, family="nope")


# change of variables

def test_change_of_variables_detects_missing_jacobian():
    params, ctx = ModelParams(2, 2), ShiftContext(1e-2)
    cv = change_of_variables(params, ctx, 20_000, Streams(3))
    h = lambda T: np.tanh(np.sum(np.abs(T) ** 2, axis=(-3, -2, -1)))
    good = h(cv.T) - h(cv.T_shift) * cv.weight
    assert abs(good.mean()) < 3 * good.std(ddof=1) / math.sqrt(good.size)
    # dropping the Jacobian factor biases the identity far beyond noise
    V, T = sample_batch(params, Streams(3), range(20_000))
    gam, inv, _, _ = gamma_chain_batch(V, T, 0.0)
    J = np.exp(log_jacobian(T, gam[:, 1:], inv[:, :-1], ctx).sum(axis=-1))
    bad = h(cv.T) - h(cv.T_shift) * cv.weight / J
    assert abs(bad.mean()) > 10 * bad.std(ddof=1) / math.sqrt(bad.size)


# tails

def test_wilson_contains_estimate():
    lo, hi = wilson_interval(7, 1000)
    assert lo < 0.007 < hi
    lo, hi = wilson_interval(0, 100_000)
    assert lo == 0.0 and hi == pytest.approx(3.84e-5, rel=1e-2)


def test_tail_always_false():
    est = tail_probability(lambda T: np.zeros(len(T), bool), sample_ginibre, 2, 2000, Streams(0))
    assert est.probability == 0.0 and est.hits == 0 and est.interval[0] == 0.0
    with pytest.raises(DomainError):
        tail_probability(lambda T: np.zeros(len(T), bool), sample_ginibre, 2, 10, Streams(0))


def test_hopping_tail_monotone_in_threshold():
    ests = [hopping_norm_tail(2, K, 5000, Streams(4)) for K in (1.0, 1.5, 2.0, 3.0)]
    probs = [e.probability for e in ests]
    assert all(a >= b for a, b in zip(probs, probs[1:]))
    assert probs[0] > 0


def test_inverse_tail_constant_fit():
    W, C = 2, 1.0
    A = np.diag([-0.5, 0.5])
    p = {K: inverse_norm_tail(W, K, C, A, 20_000, Streams(6, (int(K),))).probability
         for K in (4.0, 8.0, 16.0, 32.0, 64.0)}
    c_fit = max(p[K] * K / C**2 for K in (4.0, 8.0, 16.0))
    for K in (32.0, 64.0):
        assert p[K] <= c_fit * C**2 / K


def test_m_phi_complement_shape():
    est = m_phi_complement(ModelParams(8, 1), CutoffSpec(1.0), 0.15, 1000, Streams(2))
    assert est.n_samples == 1000 and 0 <= est.probability <= 1
    assert est.interval[0] <= est.probability <= est.interval[1]


# pigeonhole

def test_pigeonhole_all_true():
    r = pigeonhole_check(np.ones((4, 11), bool), 0.1, 12)
    assert r.count == 11 and r.count >= 0.1 * 12 and r.satisfied and r.guaranteed


def test_pigeonhole_one_false():
    f = np.ones((4, 11), bool)
    f[2] = False
    r = pigeonhole_check(f, 0.1, 12)
    assert r.count == 0 and r.prediction <= 0 and r.satisfied


def test_pigeonhole_exhaustive_small():
    n = 5
    for bits in itertools.product([False, True], repeat=4 * (n - 1)):
        f = np.array(bits).reshape(4, n - 1)
        assert pigeonhole_check(f, 0.15, n).satisfied


def test_pigeonhole_misaligned():
    n, phi = 25, 0.14
    m = math.ceil(6 * phi * n)  # 21 of the 24 bonds
    rng = np.random.default_rng(0)
    for _ in range(200):
        f = np.zeros((4, n - 1), bool)
        for i in range(4):
            f[i, rng.permutation(n - 1)[:m]] = True
        r = pigeonhole_check(f, phi, n)
        assert r.prediction == 4 * m - 3 * (n - 1)
        assert r.count >= r.prediction >= phi * n and r.guaranteed


def test_pigeonhole_shape_error():
    with pytest.raises(DomainError):
        pigeonhole_check(np.ones((4, 3), bool), 0.1, 10)
