"""Block Green's functions of the band matrix at real energy.

The corner block ``G(1, n; z)`` factorizes as
``Gamma_1^{-1} T_1^* Gamma_2^{-1} ... T_{n-1}^* Gamma_n^{-1}`` with the Schur
complements ``Gamma_1 = V_1 - z`` and
``Gamma_j = V_j - z - T_{j-1} Gamma_{j-1}^{-1} T_{j-1}^*``. The product is
accumulated left to right and renormalized after every factor, so long
chains neither overflow nor underflow.

The batched kernels take stacked blocks ``V`` of shape (S, n, W, W) and
``T`` of shape (S, n-1, W, W) and flag singular samples instead of raising.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensembles import BlockHamiltonian, assemble_dense
from .errors import DomainError, ExactlySingular

SINGULAR_FLOOR = 1e-14


def _adj(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def op_norm(A: np.ndarray) -> np.ndarray:
    """Largest singular value over the last two axes (full SVD)."""
    A = np.asarray(A)
    if A.shape[-1] == 1 and A.shape[-2] == 1:
        return np.abs(A[..., 0, 0])
    return np.linalg.svd(A, compute_uv=False)[..., 0]


def hs_norm(A: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(A) ** 2, axis=(-2, -1)))


@dataclass(frozen=True)
class GammaChain:
    z: float
    gammas: np.ndarray
    inverses: np.ndarray
    min_singular_values: np.ndarray

    @property
    def n(self) -> int:
        return self.gammas.shape[0]


@dataclass(frozen=True)
class ScaledMatrix:
    """The matrix ``exp(log_scale) * unit`` with ``|unit|`` kept in [1/2, 2].

    A zero matrix is stored as ``unit = 0`` and ``log_scale = -inf``.
    """

    unit: np.ndarray
    log_scale: float

    @property
    def log_norm(self) -> float:
        nrm = float(op_norm(self.unit))
        if nrm == 0.0:
            return -np.inf
        return self.log_scale + np.log(nrm)

    def value(self) -> np.ndarray:
        if self.log_scale == -np.inf:
            return np.zeros_like(self.unit)
        return np.exp(self.log_scale) * self.unit


def _step_inverse(g: np.ndarray, bad: np.ndarray, floor: float):
    """Diagnose and invert a stack of Hermitian blocks.

    Returns (inverse, smin, newly_singular). Singular entries are replaced by
    the identity before the LU-based inversion so the batch keeps going.
    """
    ev = np.abs(np.linalg.eigvalsh(g))
    smin = ev.min(axis=-1)
    smax = ev.max(axis=-1)
    sing = ~(smin > floor * smax)
    safe = bad | sing
    if safe.any():
        g = np.where(safe[:, None, None], np.eye(g.shape[-1]), g)
    return np.linalg.inv(g), smin, sing


def gamma_chain_batch(V: np.ndarray, T: np.ndarray, z: float, floor: float = SINGULAR_FLOOR):
    """Schur complements for a stack of samples.

    Returns (gammas, inverses, min_singular_values, singular_mask).
    """
    S, n, W, _ = V.shape
    dtype = np.result_type(V, T, float)
    eye = np.eye(W)
    gammas = np.empty((S, n, W, W), dtype=dtype)
    invs = np.empty_like(gammas)
    smins = np.empty((S, n))
    bad = np.zeros(S, dtype=bool)
    for j in range(n):
        if j == 0:
            g = V[:, 0] - z * eye
        else:
            t = T[:, j - 1]
            g = V[:, j] - z * eye - t @ invs[:, j - 1] @ _adj(t)
            g = 0.5 * (g + _adj(g))
        gi, smin, sing = _step_inverse(g, bad, floor)
        bad |= sing
        gammas[:, j] = g
        invs[:, j] = gi
        smins[:, j] = smin
    return gammas, invs, smins, bad


def gamma_chain(H: BlockHamiltonian, z: float, floor: float = SINGULAR_FLOOR) -> GammaChain:
    gam, inv, smin, bad = gamma_chain_batch(H.V[None], H.T[None], z, floor)
    if bad[0]:
        norms = np.abs(np.linalg.eigvalsh(gam[0])).max(axis=-1)
        j = int(np.argmax(~(smin[0] > floor * norms)))
        raise ExactlySingular(j + 1, float(smin[0, j]), float(norms[j]))
    return GammaChain(float(z), gam[0], inv[0], smin[0])


def corner_green_batch(V: np.ndarray, T: np.ndarray, z: float, floor: float = SINGULAR_FLOOR):
    """Streaming Gamma recursion and corner product for a stack of samples.

    Returns (unit, log_scale, singular_mask) where ``unit`` has shape
    (S, W, W) and unit operator norm, so ``X_n = log_scale`` up to the
    rounding in ``log |unit|``.
    """
    S, n, W, _ = V.shape
    eye = np.eye(W)
    bad = np.zeros(S, dtype=bool)
    g = V[:, 0] - z * eye
    gi, _, sing = _step_inverse(g, bad, floor)
    bad |= sing
    P = gi
    log_scale = np.zeros(S)
    P, log_scale = _renormalize(P, log_scale)
    for j in range(1, n):
        t = T[:, j - 1]
        td = _adj(t)
        g = V[:, j] - z * eye - t @ gi @ td
        g = 0.5 * (g + _adj(g))
        gi, _, sing = _step_inverse(g, bad, floor)
        bad |= sing
        P = P @ td @ gi
        P, log_scale = _renormalize(P, log_scale)
    return P, log_scale, bad


def _renormalize(P: np.ndarray, log_scale: np.ndarray):
    nrm = op_norm(P)
    pos = nrm > 0
    safe = np.where(pos, nrm, 1.0)
    P = P / safe[:, None, None]
    log_scale = np.where(pos, log_scale + np.log(safe), -np.inf)
    return P, log_scale


def corner_green(H: BlockHamiltonian, z: float, floor: float = SINGULAR_FLOOR) -> ScaledMatrix:
    """``G(1, n; z)`` via the Schur factorization, as a ScaledMatrix."""
    P, log_scale, bad = corner_green_batch(H.V[None], H.T[None], z, floor)
    if bad[0]:
        gamma_chain(H, z, floor)  # raises with the offending index
    return ScaledMatrix(P[0], float(log_scale[0]))


def log_norm_X(H: BlockHamiltonian, z: float) -> float:
    """``X_n = log |G(1, n; z)|`` in operator norm."""
    return corner_green(H, z).log_norm


def corner_log_norms(V: np.ndarray, T: np.ndarray, z: float, floor: float = SINGULAR_FLOOR):
    """Batched ``X_n`` and singular mask."""
    P, log_scale, bad = corner_green_batch(V, T, z, floor)
    with np.errstate(divide="ignore"):
        X = log_scale + np.log(op_norm(P))
    return X, bad


def _check_blocks(n: int, x: int, y: int):
    if not (1 <= x <= n and 1 <= y <= n):
        raise DomainError(f"block indices ({x}, {y}) outside 1..{n}")


def dense_green_block(H: BlockHamiltonian, z: float, x: int, y: int) -> np.ndarray:
    """Block ``(x, y)`` (1-based) of ``(H - z)^{-1}`` from the dense matrix."""
    _check_blocks(H.n, x, y)
    W = H.W
    M = assemble_dense(H) - z * np.eye(H.n * W)
    rhs = np.zeros((H.n * W, W), dtype=M.dtype)
    rhs[(y - 1) * W:y * W] = np.eye(W)
    try:
        cols = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise ExactlySingular(None) from exc
    return cols[(x - 1) * W:x * W]


def dense_green_blocks_batch(V: np.ndarray, T: np.ndarray, z: float, x: int, y: int):
    """Batched dense oracle: block (x, y) for every stacked sample.

    Returns (blocks, singular_mask).
    """
    S, n, W, _ = V.shape
    _check_blocks(n, x, y)
    N = n * W
    dtype = np.result_type(V, T, float)
    M = np.zeros((S, N, N), dtype=dtype)
    for j in range(n):
        M[:, j * W:(j + 1) * W, j * W:(j + 1) * W] = V[:, j]
    for j in range(n - 1):
        lo, mid, hi = j * W, (j + 1) * W, (j + 2) * W
        M[:, mid:hi, lo:mid] = -T[:, j]
        M[:, lo:mid, mid:hi] = -_adj(T[:, j])
    M -= z * np.eye(N)
    ev = np.abs(np.linalg.eigvalsh(M))
    bad = ~(ev.min(axis=-1) > SINGULAR_FLOOR * ev.max(axis=-1))
    if bad.any():
        M[bad] = np.eye(N)
    rhs = np.zeros((S, N, W), dtype=dtype)
    rhs[:, (y - 1) * W:y * W] = np.eye(W)
    cols = np.linalg.solve(M, rhs)
    return cols[:, (x - 1) * W:x * W], bad
