"""Experiment pipelines shared by the command line and the acceptance suite.

Every runner takes an ExperimentConfig and returns an ExperimentResult:
named tables (header plus rows, written as CSV), scalar results, and named
pass/fail checks that ``--assert`` turns into an exit code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .config import ExperimentConfig
from .ensembles import MixtureSpec, ModelParams, sample_hamiltonian
from .errors import ExactlySingular, NonDecaying
from .greens import gamma_chain, hs_norm
from .moments import (apriori_envelope, correlator_samples, decay_series,
                      fit_localization_length, log_variance_identity_check)
from .oracles import (change_of_variables, finite_diff_jacobian, hopping_norm_tail,
                      jacobian_entry_error, m_phi_complement, mw_lower_bound_check,
                      pigeonhole_check, ramp_bond_inputs, random_mw_case, sup_aq_ratio)
from .rng import Streams
from .shift import (CutoffSpec, ShiftContext, delta_rule, eta_derivative, event_membership,
                    jacobian_det_pair, q_vector, remainder, total_F)


@dataclass
class Table:
    header: list[str]
    rows: list[list[Any]] = field(default_factory=list)


@dataclass
class ExperimentResult:
    tables: dict[str, Table] = field(default_factory=dict)
    results: dict[str, Any] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    exclusions: int = 0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _mixture(cfg: ExperimentConfig):
    if cfg.mixture is None:
        return None
    return MixtureSpec(cfg.mixture.support_bound, tuple(cfg.mixture.atoms))


def _params(cfg: ExperimentConfig, n: int, W: int) -> ModelParams:
    return ModelParams(n, W, cfg.ensemble, cfg.z, _mixture(cfg))


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


# --- decay ---------------------------------------------------------------------

def run_decay(cfg: ExperimentConfig) -> ExperimentResult:
    out = ExperimentResult()
    series_t = Table(["W", "distance", "mean", "stderr", "n_samples", "n_excluded"])
    fit_t = Table(["W", "xi", "mu", "r_squared", "intercept", "xi_stderr"])
    root = Streams(cfg.seed, (1,))
    fits = []
    total = 0
    for W in cfg.W_list:
        ser = decay_series(W, cfg.z, cfg.s, cfg.distances, cfg.n_samples, root.child(W),
                           cfg.threads, cfg.ensemble, _mixture(cfg))
        for e in ser.estimates:
            series_t.rows.append([W, e.distance, e.mean, e.stderr, e.n_samples, e.n_excluded])
            out.exclusions += e.n_excluded
            total += e.n_samples + e.n_excluded
        try:
            fit = fit_localization_length(ser)
        except NonDecaying:
            fit = None
        fits.append(fit)
        if fit is not None:
            fit_t.rows.append([W, fit.xi, fit.mu, fit.r_squared, fit.intercept, fit.xi_stderr])
        out.results[f"W={W}"] = None if fit is None else {
            "xi": fit.xi, "xi_stderr": fit.xi_stderr, "r_squared": fit.r_squared}
        out.checks[f"r_squared>={cfg.r_squared_min} (W={W})"] = (
            fit is not None and fit.xi > 0 and fit.r_squared >= cfg.r_squared_min)
    for (W1, f1), (W2, f2) in zip(zip(cfg.W_list, fits), zip(cfg.W_list[1:], fits[1:])):
        ok = (f1 is not None and f2 is not None
              and f2.xi - f1.xi > f1.xi_stderr + f2.xi_stderr)
        out.checks[f"xi(W={W2}) > xi(W={W1}) beyond stderr"] = ok
    out.checks["excluded fraction < 1e-3"] = out.exclusions < 1e-3 * max(total, 1)
    out.tables = {"decay": series_t, "decay_fit": fit_t}
    return out


# --- a-priori envelope -----------------------------------------------------------

def run_apriori(cfg: ExperimentConfig) -> ExperimentResult:
    out = ExperimentResult()
    t = Table(["W", "n", "mean", "stderr", "n_samples", "n_excluded"])
    env_t = Table(["W", "max_mean", "argmax_n", "slope", "slope_stderr"])
    root = Streams(cfg.seed, (2,))
    maxima = []
    for W in cfg.W_list:
        env = apriori_envelope(W, cfg.z, cfg.s, cfg.n_list, cfg.n_samples, root.child(W), cfg.threads)
        for n, e in zip(env.n_list, env.estimates):
            t.rows.append([W, n, e.mean, e.stderr, e.n_samples, e.n_excluded])
            out.exclusions += e.n_excluded
        env_t.rows.append([W, env.max_mean, env.argmax_n, env.slope, env.slope_stderr])
        maxima.append(env.max_mean)
        out.checks[f"slope <= 3 sigma (W={W})"] = bool(env.slope <= 3 * env.slope_stderr)
    Ws = np.asarray(cfg.W_list, float)
    scaled = np.asarray(maxima) / Ws**cfg.s
    C = float(np.exp(np.mean(np.log(scaled))))
    misfit = float(np.max(np.abs(scaled / C - 1)))
    out.results.update({"C": C, "envelope_misfit": misfit, "maxima": maxima})
    out.checks[f"envelope misfit < {cfg.envelope_misfit}"] = misfit < cfg.envelope_misfit
    out.tables = {"apriori": t, "apriori_envelope": env_t}
    return out


# --- Jacobian verification --------------------------------------------------------

def run_jacobian_verify(cfg: ExperimentConfig) -> ExperimentResult:
    out = ExperimentResult()
    t = Table(["W", "trial", "delta", "fd_error", "product", "product_rank_one",
               "half_bound", "two_bound"])
    root = Streams(cfg.seed, (3,))
    cut = CutoffSpec(cfg.K)
    worst_fd = 0.0
    half_viol = two_viol = 0
    rank_gap = 0.0
    for W in cfg.W_list:
        delta = cfg.delta_W / W
        for k in range(cfg.trials):
            A, G, Gt = ramp_bond_inputs(W, root.child(W).generator(k), cfg.K, cfg.z)
            ctx = ShiftContext(delta, 1, cut, cfg.z)
            err = jacobian_entry_error(eta_derivative(A, G, Gt, ctx),
                                       finite_diff_jacobian(A, G, Gt, ctx))
            jp = jacobian_det_pair(A, G, Gt, ctx)
            q = q_vector(A, G, Gt, cfg.z, W, cut)
            x = delta**2 * float(hs_norm(A)) ** 2 * float(hs_norm(q)) ** 2
            half, two = math.exp(-0.5 * x), math.exp(-2.0 * x)
            # compare the exact rank-one product; rounding ties count as equal
            half_viol += jp.product_rank_one < half * (1 - 1e-12)
            two_viol += jp.product_rank_one < two * (1 - 1e-12)
            worst_fd = max(worst_fd, err)
            rank_gap = max(rank_gap, abs(jp.product - jp.product_rank_one))
            t.rows.append([W, k, delta, err, jp.product, jp.product_rank_one, half, two])
    out.results.update({"max_fd_error": worst_fd, "half_bound_violations": int(half_viol),
                        "two_bound_violations": int(two_viol), "max_rank_one_gap": rank_gap})
    out.checks[f"max fd error < {cfg.fd_tolerance:g}"] = worst_fd < cfg.fd_tolerance
    out.checks["product >= exp(-d^2|A|^2|Q|^2/2)"] = half_viol == 0
    out.checks["product >= exp(-2 d^2|A|^2|Q|^2)"] = two_viol == 0
    out.checks["rank-one product agrees"] = rank_gap < 1e-10
    out.tables = {"jacobian": t}
    return out


# --- shift verification ------------------------------------------------------------

TEST_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh_hs2": lambda T: np.tanh(np.sum(np.abs(T) ** 2, axis=(-3, -2, -1))),
    "cos_re_t11": lambda T: np.cos(np.real(T[:, 0, 0, 0])),
    "lorentz_t12": lambda T: 1.0 / (1.0 + np.abs(T[:, 0, 0, -1]) ** 2),
}


def remainder_chain_length(W: int, phi_fraction: float, sharp: float, delta_W: float) -> int:
    """Smallest n with ``delta W < delta_W`` under the step-size rule."""
    return int(math.floor(((3 / phi_fraction) / delta_W) ** 2 * W ** (2 - sharp))) + 1


def run_shift_verify(cfg: ExperimentConfig) -> ExperimentResult:
    out = ExperimentResult()
    root = Streams(cfg.seed, (4,))

    sup_t = Table(["W", "n_samples", "max_ratio"])
    sups = []
    for W in cfg.W_list:
        m = sup_aq_ratio(W, cfg.n_samples, root.child(1, W), cfg.K, threads=cfg.threads)
        sups.append(m)
        sup_t.rows.append([W, cfg.n_samples, m])
    sup_slope = loglog_slope(cfg.W_list, sups)
    out.results["aq_slope"] = sup_slope
    out.checks[f"|A||Q|/W slope within +-{cfg.slope_window}"] = abs(sup_slope) <= cfg.slope_window

    rem_t = Table(["W", "n", "delta", "sample", "in_M_phi", "F", "R", "W_abs_R"])
    cut = CutoffSpec(cfg.K)
    maxima = []
    for W in cfg.remainder_W_list:
        n = remainder_chain_length(W, cfg.phi_fraction, cfg.sharp, cfg.remainder_delta_W)
        delta = delta_rule(None, cfg.phi_fraction, n, W, cfg.sharp)
        params = _params(cfg, n, W)
        best = 0.0
        for i in range(cfg.trials):
            H = sample_hamiltonian(params, root.child(2, W).generator(i))
            try:
                chain = gamma_chain(H, cfg.z)
            except ExactlySingular:
                out.exclusions += 1
                continue
            F = total_F(H, chain, cut)
            inside = F >= cfg.phi_fraction * n
            R = remainder(H, chain, ShiftContext(delta, 1, cut, cfg.z)) if inside else float("nan")
            if inside:
                best = max(best, W * abs(R))
            rem_t.rows.append([W, n, delta, i, int(inside), F, R, W * abs(R)])
        maxima.append(best)
    if all(m > 0 for m in maxima):
        rem_slope = loglog_slope(cfg.remainder_W_list, maxima)
    else:
        rem_slope = float("nan")
    out.results["remainder_slope"] = rem_slope
    out.results["remainder_maxima"] = maxima
    out.checks[f"W|R| slope within +-{cfg.remainder_slope_window}"] = (
        abs(rem_slope) <= cfg.remainder_slope_window)

    cov_t = Table(["function", "mean_direct", "mean_shifted", "difference", "stderr"])
    cv = change_of_variables(_params(cfg, cfg.cov_n, cfg.cov_W),
                             ShiftContext(cfg.cov_delta, 1, cut, cfg.z),
                             cfg.cov_samples, root.child(3))
    out.exclusions += cv.n_excluded
    for name, h in TEST_FUNCTIONS.items():
        direct = h(cv.T)
        shifted = h(cv.T_shift) * cv.weight
        d = direct - shifted
        se = float(d.std(ddof=1) / math.sqrt(d.size))
        diff = float(d.mean())
        cov_t.rows.append([name, float(direct.mean()), float(shifted.mean()), diff, se])
        out.checks[f"change of variables ({name})"] = abs(diff) < 3 * se

    out.tables = {"lemma_bound": sup_t, "remainder": rem_t, "change_of_variables": cov_t}
    return out


# --- events -------------------------------------------------------------------------

def run_events(cfg: ExperimentConfig) -> ExperimentResult:
    out = ExperimentResult()
    root = Streams(cfg.seed, (5,))
    cut = CutoffSpec(cfg.K)
    t = Table(["n", "hits", "n_samples", "probability", "wilson_low", "wilson_high"])
    tails = []
    for n in cfg.n_list:
        est = m_phi_complement(_params(cfg, n, cfg.W), cut, cfg.phi_fraction, cfg.n_samples,
                               root.child(1, n), cfg.threads)
        tails.append(est)
        t.rows.append([n, est.hits, est.n_samples, est.probability, *est.interval])
    for (n1, a), (n2, b) in zip(zip(cfg.n_list, tails), zip(cfg.n_list[1:], tails[1:])):
        out.checks[f"P[M_phi^c] n={n1} -> {n2} strictly decreasing"] = b.interval[1] < a.interval[0]

    hop = hopping_norm_tail(cfg.tail_W, cfg.tail_K, cfg.tail_samples, root.child(2), cfg.threads)
    tail_t = Table(["event", "W", "hits", "n_samples", "probability", "wilson_low",
                    "wilson_high", "bound"])
    tail_t.rows.append([hop.event, cfg.tail_W, hop.hits, hop.n_samples, hop.probability,
                        *hop.interval, hop.bound])
    out.checks[f"|T|^2 > {cfg.tail_K:g} W tail has zero hits"] = hop.hits == 0

    # counting argument on per-sample membership flags
    n = cfg.n_list[-1]
    params = _params(cfg, n, cfg.W)
    failures = all_four = 0
    probe = min(cfg.n_samples, 200)
    for i in range(probe):
        H = sample_hamiltonian(params, root.child(3).generator(i))
        try:
            chain = gamma_chain(H, cfg.z)
        except ExactlySingular:
            out.exclusions += 1
            continue
        fl = event_membership(H, chain, cut, cfg.phi_fraction, cfg.C_norm, cfg.K_event)
        ph = pigeonhole_check(fl.per_index, cfg.phi_fraction, n)
        failures += not ph.satisfied
        all_four += fl.all_norm_events
    out.results.update({"pigeonhole_samples": probe, "pigeonhole_failures": failures,
                        "all_norm_events": all_four})
    out.checks["pigeonhole count >= prediction"] = failures == 0
    out.tables = {"events": t, "tails": tail_t}
    return out


# --- correlator ------------------------------------------------------------------------

def run_correlator(cfg: ExperimentConfig) -> ExperimentResult:
    out = ExperimentResult()
    params = _params(cfg, cfg.n, cfg.W)
    sites = sorted({s for p in cfg.pairs for s in p})
    pairs = list(cfg.pairs) + [(s, s) for s in sites]
    vals = correlator_samples(params, pairs, cfg.n_samples, Streams(cfg.seed, (6,)),
                              cfg.threads, cfg.dense_cap)
    t = Table(["i", "j", "mean", "stderr", "n_samples"])
    means = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / math.sqrt(len(vals))
    for (i, j), m, se in zip(pairs, means, ses):
        t.rows.append([i, j, float(m), float(se), len(vals)])
    k = len(cfg.pairs)
    diag_err = float(np.max(np.abs(vals[:, k:] - 1.0)))
    out.results["diagonal_max_error"] = diag_err
    out.checks["correlator(i,i) = 1 within 1e-10"] = diag_err < 1e-10
    if k >= 2:
        gap = means[0] - means[k - 1]
        out.checks[f"correlator{tuple(cfg.pairs[-1])} < correlator{tuple(cfg.pairs[0])} beyond 3 sigma"] = bool(
            gap > 3 * math.hypot(ses[0], ses[k - 1]))
    out.tables = {"correlator": t}
    return out


# --- lemma checks ------------------------------------------------------------------------

def run_lemma_check(cfg: ExperimentConfig) -> ExperimentResult:
    out = ExperimentResult()
    root = Streams(cfg.seed, (7,))
    t = Table(["r", "s", "trial", "lhs", "rhs", "gap"])
    worst = 0.0
    for p, (r, s) in enumerate(cfg.rs_pairs):
        for k in range(cfg.trials):
            rng = root.child(1, p).generator(k)
            y = np.exp(rng.normal(0, 1.5, 5))
            w = rng.dirichlet(np.ones(5))
            chk = log_variance_identity_check(y, w, r, s)
            worst = max(worst, chk.gap)
            t.rows.append([r, s, k, chk.lhs, chk.rhs, chk.gap])
    out.results["max_identity_gap"] = worst
    out.checks["log-variance identity gap < 1e-6"] = worst < 1e-6

    counter = holds = 0
    for k in range(cfg.mw_trials):
        res = mw_lower_bound_check(*random_mw_case(root.child(2).generator(k)))
        holds += res.hypothesis_holds
        counter += not res.passes
    out.results.update({"mw_trials": cfg.mw_trials, "mw_hypothesis_held": holds,
                        "mw_counterexamples": counter})
    out.checks["fluctuation lemma: zero counterexamples"] = counter == 0
    out.tables = {"identity": t}
    return out


RUNNERS: dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "decay": run_decay,
    "apriori": run_apriori,
    "jacobian-verify": run_jacobian_verify,
    "shift-verify": run_shift_verify,
    "events": run_events,
    "correlator": run_correlator,
    "lemma-check": run_lemma_check,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg)
