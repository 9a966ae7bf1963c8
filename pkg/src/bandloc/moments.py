"""Monte Carlo fractional moments, decay fits and tilted statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .ensembles import BlockHamiltonian, ModelParams, assemble_dense, sample_batch
from .errors import CapExceeded, DegenerateWeights, DomainError, NonDecaying
from .greens import corner_log_norms, dense_green_blocks_batch, op_norm
from .montecarlo import RunningStats, map_chunks, merge_all
from .rng import Streams

DENSE_CAP = 4096
MIN_ESS = 10.0


@dataclass(frozen=True)
class MomentEstimate:
    """Estimate of ``E |G(x, y; z)|^s``; ``distance`` is ``|x - y|`` in blocks."""

    s: float
    distance: int
    mean: float
    stderr: float
    n_samples: int
    n_excluded: int = 0

    @property
    def excluded_fraction(self) -> float:
        total = self.n_samples + self.n_excluded
        return self.n_excluded / total if total else 0.0


@dataclass(frozen=True)
class MomentSeries:
    estimates: tuple[MomentEstimate, ...]
    W: int
    z: float
    s: float
    ensemble: str = "wegner-complex"

    def __post_init__(self):
        d = [e.distance for e in self.estimates]
        if any(b <= a for a, b in zip(d, d[1:])):
            raise DomainError("distances must be strictly increasing")

    @property
    def distances(self) -> np.ndarray:
        return np.array([e.distance for e in self.estimates], dtype=float)

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])


@dataclass(frozen=True)
class DecayFit:
    xi: float
    mu: float
    intercept: float
    r_squared: float
    mu_stderr: float = 0.0

    @property
    def xi_stderr(self) -> float:
        return self.mu_stderr / self.mu**2


def _check_s(s):
    if not 0 < s < 1:
        raise DomainError(f"s must lie in (0, 1), got {s}")


def fractional_moment(params: ModelParams, s: float, x: int, y: int, n_samples: int,
                      streams: Streams, threads: int = 1) -> MomentEstimate:
    """Sample mean and standard error of ``|G(x, y; z)|^s``.

    Uses the Schur factorization for the corner ``(1, n)`` and the dense
    resolvent otherwise. Singular samples are dropped and counted.
    """
    _check_s(s)
    if not 1 <= x <= y <= params.n:
        raise DomainError(f"need 1 <= x <= y <= n, got x={x}, y={y}, n={params.n}")
    corner = (x, y) == (1, params.n)

    def chunk(idx):
        V, T = sample_batch(params, streams, idx)
        if corner:
            X, bad = corner_log_norms(V, T, params.z)
            vals = np.exp(s * X[~bad])
        else:
            blocks, bad = dense_green_blocks_batch(V, T, params.z, x, y)
            vals = op_norm(blocks[~bad]) ** s
        return RunningStats.of(vals), int(bad.sum())

    parts = map_chunks(chunk, n_samples, threads)
    stats = merge_all([p[0] for p in parts])
    excluded = sum(p[1] for p in parts)
    return MomentEstimate(s, y - x, stats.mean, stats.stderr, stats.count, excluded)


def corner_moment(W: int, z: float, s: float, n: int, n_samples: int, streams: Streams,
                  threads: int = 1, ensemble="wegner-complex", mixture=None) -> MomentEstimate:
    params = ModelParams(n, W, ensemble, z, mixture)
    return fractional_moment(params, s, 1, n, n_samples, streams, threads)


def decay_series(W: int, z: float, s: float, distances: Sequence[int], n_samples: int,
                 streams: Streams, threads: int = 1, ensemble="wegner-complex",
                 mixture=None) -> MomentSeries:
    """Corner moments at block separations ``distances`` (chain length d + 1)."""
    est = tuple(corner_moment(W, z, s, d + 1, n_samples, streams.child(k), threads,
                              ensemble, mixture)
                for k, d in enumerate(distances))
    return MomentSeries(est, W, z, s, str(getattr(ensemble, "value", ensemble)))


def _wls(x, y, w):
    """Weighted straight-line fit; returns slope, intercept, r^2, slope stderr."""
    X = np.column_stack([np.ones_like(x), x])
    Wm = X * w[:, None]
    cov = np.linalg.inv(X.T @ Wm)
    beta = cov @ (Wm.T @ y)
    resid = y - X @ beta
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    ss_res = np.sum(w * resid**2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(x) - 2
    # inverse-variance weights: inflate by the reduced chi^2 when the line misfits
    scale = max(1.0, ss_res / dof) if dof > 0 else 1.0
    return beta[1], beta[0], r2, math.sqrt(cov[1, 1] * scale)


def log_slope(xs: Sequence[float], means: Sequence[float], stderrs: Sequence[float]):
    """Weighted regression of ``log(mean)`` on ``xs`` (delta-method weights).

    Returns (slope, intercept, r_squared, slope_stderr).
    """
    x = np.asarray(xs, dtype=float)
    m = np.asarray(means, dtype=float)
    se = np.asarray(stderrs, dtype=float)
    if np.any(m <= 0):
        raise DomainError("means must be positive")
    y = np.log(m)
    if np.all(se > 0):
        w = (m / se) ** 2
        return _wls(x, y, w)
    slope, icpt, r2, _ = _wls(x, y, np.ones_like(x))
    resid = y - (icpt + slope * x)
    dof = len(x) - 2
    sxx = np.sum((x - x.mean()) ** 2)
    se_slope = math.sqrt(np.sum(resid**2) / dof / sxx) if dof > 0 else 0.0
    return slope, icpt, r2, se_slope


def fit_localization_length(series: MomentSeries) -> DecayFit:
    """Exponential decay fit ``mean ~ exp(intercept - distance / xi)``."""
    if len(series.estimates) < 4:
        raise DomainError("need at least 4 distances")
    slope, icpt, r2, se = log_slope(series.distances, series.means, series.stderrs)
    if slope >= 0:
        raise NonDecaying(f"fitted slope {slope:.4g} >= 0")
    mu = -slope
    return DecayFit(1.0 / mu, mu, icpt, r2, se)


@dataclass(frozen=True)
class Envelope:
    estimates: tuple[MomentEstimate, ...]
    n_list: tuple[int, ...]
    max_mean: float
    argmax_n: int
    slope: float
    slope_stderr: float


def apriori_envelope(W: int, z: float, s: float, n_list: Sequence[int], n_samples: int,
                     streams: Streams, threads: int = 1) -> Envelope:
    """``E |G(1, n)|^s`` across chain lengths; reports the max and the trend."""
    n_list = tuple(int(n) for n in n_list)
    est = tuple(corner_moment(W, z, s, n, n_samples, streams.child(k), threads)
                for k, n in enumerate(n_list))
    means = np.array([e.mean for e in est])
    k = int(np.argmax(means))
    if len(n_list) >= 3:
        slope, _, _, se = log_slope(n_list, means, [e.stderr for e in est])
    else:
        slope, se = float("nan"), float("nan")
    return Envelope(est, n_list, float(means[k]), n_list[k], float(slope), float(se))


def f_weight(r: float, s: float, q: float) -> float:
    """``min(r, q) * (s - max(r, q)) / s``."""
    if not 0 < r < s < 1:
        raise DomainError("need 0 < r < s < 1")
    if not 0 <= q <= s:
        raise DomainError("q must lie in [0, s]")
    return min(r, q) * (s - max(r, q)) / s


@dataclass(frozen=True)
class TiltedStats:
    mean: float
    variance: float
    ess: float


def tilted_stats(samples: Sequence[float], q: float, min_ess: float = MIN_ESS) -> TiltedStats:
    """Self-normalized mean and variance under weights ``exp(q X_i)``."""
    X = np.asarray(samples, dtype=float)
    if X.size == 0:
        raise DomainError("no samples")
    w = np.exp(q * (X - X.max()) if q >= 0 else q * (X - X.min()))
    w /= w.sum()
    ess = 1.0 / np.sum(w**2)
    if ess < min_ess:
        raise DegenerateWeights(f"effective sample size {ess:.3g} < {min_ess}")
    mean = float(np.sum(w * X))
    var = float(np.sum(w * (X - mean) ** 2))
    return TiltedStats(mean, var, float(ess))


def _tilted_var_exact(logy: np.ndarray, p: np.ndarray, q: float) -> float:
    a = np.log(p) + q * logy
    w = np.exp(a - a.max())
    w /= w.sum()
    m = np.sum(w * logy)
    return float(np.sum(w * (logy - m) ** 2))


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    gap: float


def log_variance_identity_check(values: Sequence[float], probs: Sequence[float], r: float,
                                s: float, tol: float = 1e-9) -> IdentityCheck:
    """Both sides of ``E[Y^r] = E[Y^s]^{r/s} exp(-int_0^s f_{r,s}(q) Var_q[log Y] dq)``.

    ``Y`` is the finite distribution ``P(Y = values[i]) = probs[i]``; the
    tilted variances are exact and the integral is adaptive Gauss-Kronrod,
    split at the kink ``q = r``.
    """
    if not 0 < r < s < 1:
        raise DomainError("need 0 < r < s < 1")
    y = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    if np.any(y <= 0) or np.any(p <= 0):
        raise DomainError("values and probabilities must be positive")
    p = p / p.sum()
    logy = np.log(y)
    lhs = float(np.sum(p * y**r))
    integrand = lambda q: f_weight(r, s, q) * _tilted_var_exact(logy, p, q)
    i1 = integrate.quad(integrand, 0.0, r, epsabs=tol, epsrel=tol, limit=200)[0]
    i2 = integrate.quad(integrand, r, s, epsabs=tol, epsrel=tol, limit=200)[0]
    rhs = float(np.sum(p * y**s) ** (r / s) * math.exp(-(i1 + i2)))
    return IdentityCheck(lhs, rhs, abs(lhs - rhs))


def eigen_correlator(H: BlockHamiltonian, i: int, j: int, cap: int = DENSE_CAP) -> float:
    """``sum_k |psi_k(i) psi_k(j)|`` over the eigenvectors of H (1-based sites)."""
    N = H.n * H.W
    if N > cap:
        raise CapExceeded(f"nW = {N} exceeds dense cap {cap}")
    if not (1 <= i <= N and 1 <= j <= N):
        raise DomainError(f"sites ({i}, {j}) outside 1..{N}")
    _, psi = np.linalg.eigh(assemble_dense(H))
    return float(np.sum(np.abs(psi[i - 1, :] * psi[j - 1, :])))


def correlator_samples(params: ModelParams, pairs: Sequence[tuple[int, int]], n_samples: int,
                       streams: Streams, threads: int = 1, cap: int = DENSE_CAP) -> np.ndarray:
    """Per-sample correlators, shape (n_samples, len(pairs)), one diagonalization each."""
    N = params.n * params.W
    if N > cap:
        raise CapExceeded(f"nW = {N} exceeds dense cap {cap}")

    def chunk(idx):
        V, T = sample_batch(params, streams, idx)
        out = np.empty((len(idx), len(pairs)))
        for k in range(len(idx)):
            H = BlockHamiltonian(V[k], T[k], params)
            _, psi = np.linalg.eigh(assemble_dense(H))
            for c, (a, b) in enumerate(pairs):
                out[k, c] = np.sum(np.abs(psi[a - 1] * psi[b - 1]))
        return out

    return np.concatenate(map_chunks(chunk, n_samples, threads, chunk=64))
