"""Brute-force and closed-form oracles for the shift and the moment machinery."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .ensembles import ModelParams, sample_batch, sample_ginibre, sample_gue
from .errors import DomainError
from .greens import gamma_chain_batch, hs_norm
from .montecarlo import map_chunks
from .rng import Streams, as_generator
from .shift import (CutoffSpec, ShiftContext, batch_bond_factors, eta, log_jacobian,
                    q_vector, realify, derealify)


# --- fluctuation lemma -------------------------------------------------------

@dataclass(frozen=True)
class MWCheck:
    hypothesis_holds: bool
    bound: float
    second_moment: float
    passes: bool


def mw_lower_bound_check(values: Sequence[float], probs: Sequence[float], alpha: float,
                         a: float, beta: float, epsilon: float) -> MWCheck:
    """Evaluate the fluctuation lemma exactly on a finite distribution.

    Hypothesis: ``P[|X| <= alpha] <= beta sqrt(P[X >= a] P[X <= -a]) + epsilon``.
    Conclusion: ``E[X^2] >= (1 - epsilon) / (1 + beta/2) * alpha^2``.
    ``passes`` is vacuously true when the hypothesis fails.
    """
    if not 0 < alpha < a:
        raise DomainError("need 0 < alpha < a")
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    if beta <= 0:
        raise DomainError("beta must be positive")
    x = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    if x.shape != p.shape or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise DomainError("probs must be a probability vector matching values")
    inner = p[np.abs(x) <= alpha].sum()
    right = p[x >= a].sum()
    left = p[x <= -a].sum()
    holds = bool(inner <= beta * math.sqrt(right * left) + epsilon)
    bound = (1 - epsilon) / (1 + beta / 2) * alpha**2
    m2 = float(np.sum(p * x * x))
    # relative slack absorbs rounding in the probability sums
    ok = (not holds) or m2 >= bound * (1 - 1e-12)
    return MWCheck(holds, float(bound), m2, bool(ok))


def random_mw_case(rng, points: int = 7):
    """A random finite distribution plus lemma parameters biased towards the hypothesis."""
    rng = as_generator(rng)
    a = rng.uniform(0.2, 3.0)
    alpha = a * rng.uniform(0.05, 0.95)
    # mass sits near +-a and inside [-alpha, alpha] so both branches get exercised
    centers = rng.choice([-a, a, 0.0], size=points) + rng.normal(0, 0.5 * a, points)
    p = rng.dirichlet(np.ones(points))
    return centers, p, alpha, a, rng.uniform(0.1, 5.0), rng.uniform(0.01, 0.99)


# --- finite differences ------------------------------------------------------

FD_STEP = 1e-6


def finite_diff_jacobian(A, G, Gtilde, ctx: ShiftContext, step: Optional[float] = None) -> np.ndarray:
    """Central differences of ``eta`` in every realified coordinate.

    ``step`` defaults to ``1e-6 * |A|_HS`` (or 1e-6 for ``A = 0``).
    """
    A = np.asarray(A, dtype=complex)
    W = A.shape[-1]
    if step is None:
        nrm = float(hs_norm(A))
        step = FD_STEP * (nrm if nrm > 0 else 1.0)
    if step <= 0:
        raise DomainError("step must be positive")
    m = 2 * W * W
    a0 = realify(A)
    E = np.eye(m) * step
    Ap = derealify(a0[None, :] + E, W)
    Am = derealify(a0[None, :] - E, W)
    yp = realify(eta(Ap, G, Gtilde, ctx))
    ym = realify(eta(Am, G, Gtilde, ctx))
    # column k holds d eta / d a_k
    return ((yp - ym) / (2 * step)).T


def jacobian_entry_error(D: np.ndarray, D_fd: np.ndarray) -> float:
    """``max |D - D_fd| / (1 + max |D|)``."""
    return float(np.max(np.abs(D - D_fd)) / (1.0 + np.max(np.abs(D))))


# --- bond samplers -----------------------------------------------------------

def _adj(A):
    return np.conj(np.swapaxes(A, -1, -2))


def ramp_bond_inputs(W: int, rng, K: float = 4.0, z: float = 0.0, max_tries: int = 10000):
    """Random ``(A, G, Gtilde)`` with both ``|A|^2/W`` and ``|V|^2/W^2`` on the ramp (K, 2K).

    ``V = G + z + A Gtilde A^*`` is drawn first and ``G`` solved for; draws
    whose ``G`` or ``Gtilde`` leave the cutoff support are rejected.
    """
    rng = as_generator(rng)
    eye = np.eye(W)
    for _ in range(max_tries):
        A = sample_ginibre(W, rng)
        A *= math.sqrt(W * K * rng.uniform(1.05, 1.95)) / hs_norm(A)
        V = sample_gue(W, rng)
        V *= math.sqrt(W * W * K * rng.uniform(1.05, 1.95)) / hs_norm(V)
        Gt = sample_gue(W, rng)
        Gt *= W * rng.uniform(0.05, 0.5) / hs_norm(A @ Gt @ _adj(A))
        G = V - z * eye - A @ Gt @ _adj(A)
        if hs_norm(G) ** 2 < 2 * K * W * W and hs_norm(Gt) ** 2 < 2 * K * W * W:
            return A, G, Gt
    raise RuntimeError("ramp rejection sampler did not converge")


def _unit_vectors(rng, S, W):
    v = rng.normal(size=(S, W)) + 1j * rng.normal(size=(S, W))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _outer(u, w):
    return u[:, :, None] * np.conj(w)[:, None, :]


def _rescale(M, target):
    return M * (target / hs_norm(M))[:, None, None]


SUP_FAMILIES = ("gaussian", "rank-one", "off-diagonal")


def sup_probe_bonds(W: int, size: int, rng, K: float = 4.0, z: float = 0.0,
                    family: str = "off-diagonal"):
    """Bond inputs ``(A, G, Gtilde)`` spread over the cutoff support.

    Norm levels are uniform over the support of every cutoff factor, and the
    directions come from one of three families: Gaussian blocks, aligned
    rank-one blocks, or rank-one ``A = u w^*`` with a ``Gtilde`` that couples
    ``w`` to an orthogonal direction. The last family drives ``|A| |Q_A|``
    towards its supremum; isotropic draws sit far below it.
    """
    if family not in SUP_FAMILIES:
        raise DomainError(f"unknown family {family!r}")
    rng = as_generator(rng)
    S = size
    a = np.sqrt(W * 2 * K * rng.uniform(0, 1, S))
    gt = W * np.sqrt(2 * K * rng.uniform(0, 1, S))
    v = W * np.sqrt(2 * K * rng.uniform(0, 1, S))
    sign = np.sign(rng.normal(size=S))[:, None, None]
    if family == "gaussian":
        A = sample_ginibre(W, rng, S)
        Gt = sample_gue(W, rng, S)
        V = sample_gue(W, rng, S)
    else:
        u = _unit_vectors(rng, S, W)
        w = _unit_vectors(rng, S, W)
        A = _outer(u, w)
        V = _outer(u, u) * sign
        if family == "rank-one" or W == 1:
            Gt = _outer(w, w) * sign
        else:
            x = _unit_vectors(rng, S, W)
            x = x - np.sum(np.conj(w) * x, -1)[:, None] * w
            x /= np.linalg.norm(x, axis=-1, keepdims=True)
            th = rng.uniform(0, np.pi / 2, S)[:, None, None]
            Gt = np.cos(th) * _outer(w, w) + np.sin(th) * (_outer(w, x) + _outer(x, w)) / math.sqrt(2)
    A, Gt, V = _rescale(A, a), _rescale(Gt, gt), _rescale(V, v)
    G = V - z * np.eye(W) - A @ Gt @ _adj(A)
    return A, G, Gt


def aq_ratio(A, G, Gtilde, z: float = 0.0, K: float = 4.0) -> np.ndarray:
    """``|A|_HS |Q_A|_HS / W`` for a batch of bonds."""
    W = A.shape[-1]
    q = q_vector(A, G, Gtilde, z, W, CutoffSpec(K))
    return hs_norm(A) * hs_norm(q) / W


def sup_aq_ratio(W: int, n_samples: int, streams: Streams, K: float = 4.0,
                 families: Sequence[str] = SUP_FAMILIES, threads: int = 1, chunk: int = 2000) -> float:
    """Max of ``|A||Q_A|/W`` over ``n_samples`` bonds split evenly across ``families``."""
    best = 0.0
    per = n_samples // len(families)
    for f, fam in enumerate(families):
        count = per + (n_samples - per * len(families) if f == 0 else 0)
        sub = streams.child(f)

        def run(idx, fam=fam, sub=sub):
            bonds = sup_probe_bonds(W, len(idx), sub.generator(idx.start), K, family=fam)
            return float(aq_ratio(*bonds, K=K).max())

        best = max([best] + map_chunks(run, count, threads, chunk))
    return best


# --- change of variables -----------------------------------------------------

def _energy_batch(gammas, invs, T, z):
    """Energy functional for stacked samples at fixed Gamma."""
    W = gammas.shape[-1]
    V = gammas + z * np.eye(W)
    V[:, 1:] = V[:, 1:] + T @ invs[:, :-1] @ _adj(T)
    return np.sum(np.abs(V) ** 2, axis=(-3, -2, -1)) + np.sum(np.abs(T) ** 2, axis=(-3, -2, -1))


@dataclass(frozen=True)
class ChangeOfVariables:
    T: np.ndarray          # (S, n-1, W, W) sampled hoppings
    T_shift: np.ndarray    # eta(T) bond-wise
    weight: np.ndarray     # J * exp(-W (E(eta T) - E(T)))
    n_excluded: int


def change_of_variables(params: ModelParams, ctx: ShiftContext, n_samples: int,
                        streams: Streams) -> ChangeOfVariables:
    """Samples for ``E[h(T)] = E[h(eta T) J exp(-W dE)]`` at fixed Gamma.

    The map ``V -> Gamma`` has unit Jacobian, so in ``(Gamma, T)`` the
    density is ``exp(-W E(Gamma, T))``; shifting ``T`` bond-wise multiplies
    it by the Jacobian ``J`` and the energy ratio.
    """
    V, T = sample_batch(params, streams, range(n_samples))
    gam, inv, _, bad = gamma_chain_batch(V, T, params.z)
    gam, inv, T = gam[~bad], inv[~bad], T[~bad]
    W = params.W
    G, Gt = gam[:, 1:], inv[:, :-1]
    Ts = eta(T, G, Gt, ctx)
    logJ = log_jacobian(T, G, Gt, ctx).sum(axis=-1)
    dE = _energy_batch(gam, inv, Ts, params.z) - _energy_batch(gam, inv, T, params.z)
    return ChangeOfVariables(T, Ts, np.exp(logJ - W * dE), int(bad.sum()))


# --- tails and counting -------------------------------------------------------

@dataclass(frozen=True)
class TailEstimate:
    event: str
    probability: float
    interval: tuple[float, float]
    n_samples: int
    hits: int
    bound: Optional[float] = None

    @property
    def consistent(self) -> Optional[bool]:
        """Analytic bound lies inside or above the lower Wilson limit."""
        if self.bound is None:
            return None
        return self.interval[0] <= self.bound


def wilson_interval(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(hits), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def tail_estimate(event: str, hits: int, n: int, bound: Optional[float] = None) -> TailEstimate:
    return TailEstimate(event, hits / n, wilson_interval(hits, n), n, int(hits), bound)


def tail_probability(event: Callable[[np.ndarray], np.ndarray], sampler: Callable, W: int,
                     n_samples: int, streams: Streams, name: str = "event",
                     bound: Optional[float] = None, threads: int = 1) -> TailEstimate:
    """Empirical frequency of ``event`` over blocks from ``sampler(W, rng, size)``."""
    if n_samples < 1000:
        raise DomainError("tail estimates need at least 1000 samples")

    def run(idx):
        blocks = sampler(W, streams.generator(idx.start), len(idx))
        return int(np.count_nonzero(event(blocks)))

    hits = sum(map_chunks(run, n_samples, threads, 4096))
    return tail_estimate(name, hits, n_samples, bound)


def hopping_norm_tail(W: int, K: float, n_samples: int, streams: Streams, threads: int = 1) -> TailEstimate:
    """``P[|T|_HS^2 > K W]`` for Ginibre hoppings, against ``exp(-W^2)``."""
    return tail_probability(lambda T: np.sum(np.abs(T) ** 2, axis=(-2, -1)) > K * W,
                            sample_ginibre, W, n_samples, streams,
                            f"|T|_HS^2 > {K:g} W", math.exp(-W * W), threads)


def inverse_norm_tail(W: int, K: float, C: float, A: np.ndarray, n_samples: int,
                      streams: Streams, threads: int = 1) -> TailEstimate:
    """``P[|(V - A)^{-1}|_HS > K W / (3 C^2)]`` for GUE ``V`` and a fixed Hermitian ``A``."""
    thr = K * W / (3 * C * C)

    def event(V):
        return hs_norm(np.linalg.inv(V - A)) > thr

    return tail_probability(event, sample_gue, W, n_samples, streams,
                            f"|(V-A)^-1|_HS > {thr:g}", None, threads)


def m_phi_complement(params: ModelParams, cut: CutoffSpec, phi_fraction: float,
                     n_samples: int, streams: Streams, threads: int = 1) -> TailEstimate:
    """Frequency of ``F < phi n`` (the complement of ``M_phi``)."""
    n = params.n

    def run(idx):
        V, T = sample_batch(params, streams, idx)
        F = batch_bond_factors(V, T, params.z, cut).sum(axis=-1)
        return int(np.count_nonzero(F < phi_fraction * n))

    hits = sum(map_chunks(run, n_samples, threads))
    return tail_estimate(f"F < {phi_fraction:g} n", hits, n_samples)


@dataclass(frozen=True)
class PigeonholeResult:
    count: int
    prediction: float
    satisfied: bool
    guaranteed: bool  # prediction >= phi n, i.e. the counting argument closes


def pigeonhole_check(flags: np.ndarray, phi_fraction: float, n: int) -> PigeonholeResult:
    """Count bonds meeting all four norm conditions and compare with inclusion-exclusion.

    ``prediction = (n-1) - sum_i #(complement of condition i)``.
    """
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (4, n - 1):
        raise DomainError(f"flags must have shape (4, {n - 1}), got {flags.shape}")
    count = int(np.count_nonzero(flags.all(axis=0)))
    prediction = float((n - 1) - np.sum((n - 1) - flags.sum(axis=1)))
    return PigeonholeResult(count, prediction, count >= prediction,
                            prediction >= phi_fraction * n)
