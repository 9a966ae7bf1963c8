"""Adaptive plus/minus shift of the hopping matrices.

Each hopping block is dilated, ``T -> exp(sigma * delta * Phi(T)) T``, where
the scalar ``Phi`` is a product of smooth cutoffs of Hilbert-Schmidt norms.
The module provides the cutoff, the bond factors ``F_j``, the maps
``eta^sigma``, the gradient ``Q_A`` of ``Phi``, the real derivative and
Jacobian determinants of the maps, the energy remainder, the step-size rule
and the large-deviation events.

Realification convention: a complex ``W x W`` matrix ``A`` corresponds to the
real vector ``concat(Re(A).ravel(), Im(A).ravel())`` (row-major), so the
Euclidean norm of the vector is ``|A|_HS``.

All matrix arguments may carry leading batch dimensions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensembles import BlockHamiltonian
from .errors import DomainError, RegimeViolation
from .greens import GammaChain, gamma_chain_batch, hs_norm, op_norm

#: numerical stand-in for "delta * W << 1"
REGIME_LIMIT = 0.1


def _adj(A):
    return np.conj(np.swapaxes(A, -1, -2))


def _hs2(A):
    return np.sum(np.abs(A) ** 2, axis=(-2, -1))


def _hs_inner(A, B):
    """Real part of the Hilbert-Schmidt inner product, batched."""
    return np.sum(np.real(np.conj(A) * B), axis=(-2, -1))


@dataclass(frozen=True)
class CutoffSpec:
    K: float = 4.0

    def __post_init__(self):
        if self.K < 1:
            raise DomainError(f"cutoff K must be >= 1, got {self.K}")


def _smoothstep(u):
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def _cut(t, K):
    u = np.clip((np.asarray(t, dtype=float) - K) / K, 0.0, 1.0)
    return 1.0 - _smoothstep(u)


def _dcut(t, K):
    u = (np.asarray(t, dtype=float) - K) / K
    inside = (u > 0) & (u < 1)
    u = np.where(inside, u, 0.0)
    return np.where(inside, -30.0 * u * u * (1.0 - u) ** 2 / K, 0.0)


def cutoff(t, K: float = 4.0):
    """1 on [0, K], 0 on [2K, inf), quintic smoothstep ramp in between."""
    out = _cut(t, K)
    return out if out.ndim else float(out)


def cutoff_deriv(t, K: float = 4.0):
    """Exact derivative of :func:`cutoff`; its sup is 15/(8K)."""
    out = _dcut(t, K)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ShiftContext:
    delta: float
    sign: int = 1
    cutoff: CutoffSpec = CutoffSpec()
    z: float = 0.0

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise DomainError("sign must be +1 or -1")
        if self.delta < 0:
            raise DomainError("delta must be nonnegative")

    def flipped(self) -> "ShiftContext":
        return ShiftContext(self.delta, -self.sign, self.cutoff, self.z)

    def check_regime(self, W: int):
        if self.delta * W >= REGIME_LIMIT:
            raise RegimeViolation(f"delta*W = {self.delta * W:.4g} >= {REGIME_LIMIT}")


@dataclass(frozen=True)
class BondQuadruple:
    """``(T_j, Gamma_{j+1}, Gamma_j^{-1}, V_{j+1})`` for one bond."""

    T: np.ndarray
    G: np.ndarray
    Gtilde: np.ndarray
    V: np.ndarray

    @classmethod
    def from_chain(cls, H: BlockHamiltonian, chain: GammaChain, j: int) -> "BondQuadruple":
        """Bond ``j`` (1-based, 1 <= j <= n-1)."""
        if not 1 <= j <= H.n - 1:
            raise DomainError(f"bond {j} outside 1..{H.n - 1}")
        return cls(H.T[j - 1], chain.gammas[j], chain.inverses[j - 1], H.V[j])

    @classmethod
    def from_parts(cls, T, G, Gtilde, z: float) -> "BondQuadruple":
        return cls(T, G, Gtilde, G + z * np.eye(T.shape[-1]) + T @ Gtilde @ _adj(T))


def _parts(A, G, Gtilde, z, K):
    """Pieces shared by Phi, Q_A and eta.

    Returns (gamma, f/W, g/W^2, V) with ``V = G + z + A Gtilde A^*``.
    """
    W = A.shape[-1]
    V = G + z * np.eye(W) + A @ Gtilde @ _adj(A)
    gamma = _cut(_hs2(G) / W**2, K) * _cut(_hs2(Gtilde) / W**2, K)
    return gamma, _hs2(A) / W, _hs2(V) / W**2, V


def phi_value(A, G, Gtilde, z: float, cut: CutoffSpec = CutoffSpec()):
    """The scalar ``Phi(A)`` multiplying ``sigma * delta`` in the exponent."""
    gamma, fa, ga, _ = _parts(A, G, Gtilde, z, cut.K)
    return gamma * _cut(fa, cut.K) * _cut(ga, cut.K)


def f_factor(bond: BondQuadruple, W: int, cut: CutoffSpec = CutoffSpec()):
    """Bond weight ``F_j`` in [0, 1]."""
    K = cut.K
    return (_cut(_hs2(bond.T) / W, K) * _cut(_hs2(bond.V) / W**2, K)
            * _cut(_hs2(bond.G) / W**2, K) * _cut(_hs2(bond.Gtilde) / W**2, K))


def bond_factors(H: BlockHamiltonian, chain: GammaChain, cut: CutoffSpec = CutoffSpec()) -> np.ndarray:
    """All ``F_j`` for j = 1..n-1 as an array."""
    if H.n < 2:
        return np.zeros(0)
    bonds = BondQuadruple(H.T, chain.gammas[1:], chain.inverses[:-1], H.V[1:])
    return np.atleast_1d(f_factor(bonds, H.W, cut))


def batch_bond_factors(V: np.ndarray, T: np.ndarray, z: float,
                       cut: CutoffSpec = CutoffSpec()) -> np.ndarray:
    """``F_j`` for stacked samples, shape (S, n-1); singular samples get 0."""
    gam, inv, _, bad = gamma_chain_batch(V, T, z)
    bonds = BondQuadruple(T, gam[:, 1:], inv[:, :-1], V[:, 1:])
    F = np.asarray(f_factor(bonds, V.shape[-1], cut)).reshape(T.shape[:2])
    F[bad] = 0.0
    return F


def total_F(H: BlockHamiltonian, chain: GammaChain, cut: CutoffSpec = CutoffSpec()) -> float:
    return float(bond_factors(H, chain, cut).sum())


def eta(A, G, Gtilde, ctx: ShiftContext):
    """``eta^sigma(A) = exp(sigma * delta * Phi(A)) * A``."""
    ctx.check_regime(A.shape[-1])
    phi = phi_value(A, G, Gtilde, ctx.z, ctx.cutoff)
    return np.exp(ctx.sign * ctx.delta * phi)[..., None, None] * A


def q_vector(A, G, Gtilde, z: float, W: int | None = None, cut: CutoffSpec = CutoffSpec()):
    """Gradient of ``Phi`` at ``A`` as a complex matrix.

    ``d Phi(A)[B] = Re <Q_A, B>_HS`` for every direction ``B``.
    """
    W = A.shape[-1] if W is None else W
    K = cut.K
    gamma, fa, ga, V = _parts(A, G, Gtilde, z, K)
    c1 = gamma * _dcut(fa, K) * _cut(ga, K) * (2.0 / W)
    c2 = gamma * _cut(fa, K) * _dcut(ga, K) * (4.0 / W**2)
    # (G + z) A Gt + A Gt |A|^2 Gt  ==  V A Gt
    return c1[..., None, None] * A + c2[..., None, None] * (V @ A @ Gtilde)


def realify(A) -> np.ndarray:
    A = np.asarray(A)
    lead = A.shape[:-2]
    return np.concatenate([A.real.reshape(*lead, -1), A.imag.reshape(*lead, -1)], axis=-1)


def derealify(v, W: int) -> np.ndarray:
    v = np.asarray(v)
    m = W * W
    return (v[..., :m] + 1j * v[..., m:]).reshape(*v.shape[:-1], W, W)


def eta_derivative(A, G, Gtilde, ctx: ShiftContext) -> np.ndarray:
    """Real derivative of ``eta^sigma`` on ``R^{2W^2}``.

    ``exp(sigma delta Phi) * (I + sigma delta a q^T)`` with ``a``, ``q`` the
    realified ``A`` and ``Q_A``.
    """
    ctx.check_regime(A.shape[-1])
    W = A.shape[-1]
    phi = phi_value(A, G, Gtilde, ctx.z, ctx.cutoff)
    a = realify(A)
    q = realify(q_vector(A, G, Gtilde, ctx.z, W, ctx.cutoff))
    eye = np.eye(2 * W * W)
    sd = ctx.sign * ctx.delta
    D = eye + sd * a[..., :, None] * q[..., None, :]
    return np.exp(sd * phi)[..., None, None] * D


@dataclass(frozen=True)
class JacobianPair:
    j_plus: float
    j_minus: float
    product: float
    product_rank_one: float
    alignment: float  # <Q_A, A>_R


def jacobian_det_pair(A, G, Gtilde, ctx: ShiftContext) -> JacobianPair:
    """``|det D eta^+|``, ``|det D eta^-|`` and their product, two ways.

    The direct route takes determinants of the realified derivatives; the
    rank-one route uses ``det(I + c a q^T) = 1 + c <q, a>``.
    """
    W = A.shape[-1]
    ctx.check_regime(W)
    q = q_vector(A, G, Gtilde, ctx.z, W, ctx.cutoff)
    if ctx.delta * float(hs_norm(A)) * float(hs_norm(q)) >= 0.5:
        raise RegimeViolation("delta |A| |Q_A| >= 1/2")
    plus = ShiftContext(ctx.delta, 1, ctx.cutoff, ctx.z)
    minus = plus.flipped()
    sp, lp = np.linalg.slogdet(eta_derivative(A, G, Gtilde, plus))
    sm, lm = np.linalg.slogdet(eta_derivative(A, G, Gtilde, minus))
    c = float(_hs_inner(q, A))
    d = ctx.delta
    return JacobianPair(float(np.exp(lp)), float(np.exp(lm)), float(np.exp(lp + lm)),
                        abs(1.0 - (d * c) ** 2), c)


def log_jacobian(A, G, Gtilde, ctx: ShiftContext):
    """Batched ``log |det D eta^sigma|`` via the rank-one formula."""
    W = A.shape[-1]
    ctx.check_regime(W)
    phi = phi_value(A, G, Gtilde, ctx.z, ctx.cutoff)
    q = q_vector(A, G, Gtilde, ctx.z, W, ctx.cutoff)
    sd = ctx.sign * ctx.delta
    return 2 * W * W * sd * phi + np.log(np.abs(1.0 + sd * _hs_inner(q, A)))


def energy(chain: GammaChain, T: np.ndarray) -> float:
    """``tr(|Gamma_1 + z|^2 + sum_j |Gamma_j + z + T Gamma^{-1} T^*|^2 + sum |T_j|^2)``."""
    z = chain.z
    W = chain.gammas.shape[-1]
    eye = np.eye(W)
    V = chain.gammas + z * eye
    if len(T):
        V = V.copy()
        V[1:] = V[1:] + T @ chain.inverses[:-1] @ _adj(T)
    return float(_hs2(V).sum() + _hs2(T).sum())


def shifted_hoppings(H: BlockHamiltonian, chain: GammaChain, ctx: ShiftContext) -> np.ndarray:
    """``eta^sigma`` applied bond-wise with ``G = Gamma_{j+1}``, ``Gtilde = Gamma_j^{-1}``."""
    if H.n < 2:
        return H.T.copy()
    return eta(H.T, chain.gammas[1:], chain.inverses[:-1], ctx)


def remainder(H: BlockHamiltonian, chain: GammaChain, ctx: ShiftContext) -> float:
    """``R = E(T^+)/2 + E(T^-)/2 - E(T)`` at fixed Gamma.

    With ``T^pm = exp(pm a) T`` on each bond and ``S = T Gamma^{-1} T^*``,
    the per-bond contributions are
    ``(cosh 2a - 1) |T|^2 + 2 (cosh 2a - 1) Re<Gamma' , S> + (cosh 4a - 1) |S|^2``
    with ``Gamma' = Gamma_{j+1} + z``; written with ``2 sinh^2`` to avoid
    cancellation.
    """
    if H.n < 2:
        return 0.0
    ctx.check_regime(H.W)
    G = chain.gammas[1:]
    Gt = chain.inverses[:-1]
    a = ctx.delta * phi_value(H.T, G, Gt, chain.z, ctx.cutoff)
    S = H.T @ Gt @ _adj(H.T)
    Gp = G + chain.z * np.eye(H.W)
    c2 = 2.0 * np.sinh(a) ** 2
    c4 = 2.0 * np.sinh(2.0 * a) ** 2
    terms = c2 * _hs2(H.T) + 2.0 * c2 * _hs_inner(Gp, S) + c4 * _hs2(S)
    return float(terms.sum())


def remainder_direct(H: BlockHamiltonian, chain: GammaChain, ctx: ShiftContext) -> float:
    """Same quantity straight from the energy functional (oracle)."""
    Tp = shifted_hoppings(H, chain, ShiftContext(ctx.delta, 1, ctx.cutoff, chain.z))
    Tm = shifted_hoppings(H, chain, ShiftContext(ctx.delta, -1, ctx.cutoff, chain.z))
    return 0.5 * energy(chain, Tp) + 0.5 * energy(chain, Tm) - energy(chain, H.T)


def delta_rule(alpha, phi_fraction: float, n: int, W: int, sharp: float = 3) -> float:
    """``delta = 3 alpha / (phi n)``; ``alpha=None`` means ``sqrt(n / W^sharp)``."""
    if not 0 < phi_fraction < 1 / 6:
        raise DomainError("phi_fraction must lie in (0, 1/6)")
    if sharp < 3:
        raise DomainError("sharp must be >= 3")
    if n < 1 or W < 1:
        raise DomainError("n and W must be positive")
    if alpha is None:
        alpha = math.sqrt(n / W**sharp)
    return 3.0 * alpha / (phi_fraction * n)


@dataclass(frozen=True)
class EventFlags:
    M_phi: bool
    M1: bool
    M2: bool
    M3: bool
    M4: bool
    total_F: float
    per_index: np.ndarray  # (4, n-1) booleans for the conditions of M1..M4

    @property
    def all_norm_events(self) -> bool:
        return self.M1 and self.M2 and self.M3 and self.M4


def event_membership(H: BlockHamiltonian, chain: GammaChain, cut: CutoffSpec,
                     phi_fraction: float, C_norm: float = 3.0,
                     K_event: float = 16.0) -> EventFlags:
    """Membership of one sample in ``M_phi`` and ``M_1..M_4``.

    ``M_1`` uses ``|Gamma_j^{-1}|_HS``: with ``A_j = z + T_{j-1}
    Gamma_{j-1}^{-1} T_{j-1}^*`` one has ``V_j - A_j = Gamma_j``.
    Per-index conditions run over the bonds j = 1..n-1.
    """
    if not 0 < phi_fraction < 1 / 6:
        raise DomainError("phi_fraction must lie in (0, 1/6)")
    n, W = H.n, H.W
    F = total_F(H, chain, cut)
    inv_hs = hs_norm(chain.inverses[:-1])
    c1 = inv_hs <= K_event * W / (3 * C_norm**2)
    c2 = hs_norm(H.V[1:]) <= K_event * W / 3
    c3 = _hs2(H.T) <= K_event * W
    c4 = op_norm(H.T) <= C_norm if n > 1 else np.zeros(0, bool)
    per = np.array([c1, c2, c3, c4], dtype=bool).reshape(4, n - 1)
    need = 6 * phi_fraction * n
    counts = per.sum(axis=1)
    return EventFlags(F >= phi_fraction * n, *(bool(c >= need) for c in counts),
                      total_F=F, per_index=per)
