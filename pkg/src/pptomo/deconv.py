"""Two-stage recovery of the pump-probe response from heterodyne signals.

Stage 1 turns the complex signal S = P E_LO* into P, one delay at a time, with
optional Tikhonov smoothing along frequency. Stage 2 deconvolves the probe
from P, one frequency at a time, on a delay grid extended below the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from concurrent.futures import ThreadPoolExecutor

from .constants import CM_TO_RAD_FS, default_threads
from .forward import (Pulse, ResponseSurface, complex_noise, complex_signal,
                      trapezoid_weights)
from .regularize import (RegularizationError, SelectorConfig, TikhonovFactorization,
                         penalty_matrix, select_lambda)


class DeconvolutionError(ValueError):
    pass


@dataclass
class StageReport:
    lambdas: np.ndarray
    converged: np.ndarray
    flags: list = field(default_factory=list)
    scores: Optional[np.ndarray] = None


# --- stage 1 -----------------------------------------------------------------

def supported_band(lo_spectrum, threshold=1e-3):
    """Mask of frequencies where |E_LO| exceeds ``threshold`` times its peak."""
    mag = np.abs(np.asarray(lo_spectrum))
    mask = mag > threshold * mag.max()
    if not mask.any():
        raise DeconvolutionError("local oscillator has no support on the frequency grid")
    return mask


def invert_signal_to_polarization(signal_abs, signal_disp, lo_spectrum, method="tikhonov",
                                  cfg: Optional[SelectorConfig] = None, penalty="D2",
                                  threshold=1e-3):
    """Estimate P(w, T) from the phase-0 and phase-pi/2 heterodyne surfaces.

    ``signal_disp`` may be None, in which case only the absorptive part is
    available; the estimate then carries an ``absorptive-only`` flag and a
    zero dispersive channel. Frequencies outside the LO support are NaN.
    """
    cfg = cfg or SelectorConfig("gcv")
    S_abs = np.asarray(signal_abs, dtype=float)
    flags = []
    if signal_disp is None:
        flags.append("absorptive-only")
        S_disp = np.zeros_like(S_abs)
    else:
        S_disp = np.asarray(signal_disp, dtype=float)
    Sc = complex_signal(S_abs, S_disp)
    lo = np.asarray(lo_spectrum)
    mask = supported_band(lo, threshold)
    if not mask.all():
        flags.append("masked-frequencies")
    out = np.full(Sc.shape, np.nan + 0j)
    W, T = Sc.shape
    lams = np.zeros(T)
    conv = np.ones(T, bool)
    scores = np.full(T, np.nan)
    if method == "naive":
        out[mask] = Sc[mask] / np.conj(lo[mask])[:, None]
        return out, StageReport(lams, conv, flags)
    if method != "tikhonov":
        raise DeconvolutionError(f"unknown stage-1 method {method!r}")
    # scaled so that lam is dimensionless
    scale = np.abs(lo).max()
    A = np.diag(np.conj(lo[mask]) / scale)
    fact = TikhonovFactorization(A, penalty_matrix(penalty, int(mask.sum())))
    for j in range(T):
        b = Sc[mask, j] / scale
        sel = select_lambda(_Problem(A, b), cfg, fact=fact, data=b)
        out[mask, j] = fact.solve(b, sel.lam)
        lams[j], conv[j], scores[j] = sel.lam, sel.converged, sel.score
    return out, StageReport(lams, conv, flags, scores)


class _Problem:
    """Lightweight stand-in for RegularizedProblem when a factorization is cached."""

    def __init__(self, A, b):
        self.operator, self.data = A, b


# --- stage 2 -----------------------------------------------------------------

def reconstruction_delays(delays, probe: Pulse, below=None, above=None):
    """Data delays padded by ceil(3 fwhm / dT) points on each side.

    The padding below carries the response inside the pulse-overlap region;
    the padding above carries the response just past the last delay, which
    the probe still samples.
    """
    delays = np.asarray(delays, dtype=float)
    dT = np.diff(delays).mean()
    pad = int(np.ceil(3 * probe.fwhm / dT))
    below = pad if below is None else below
    above = pad if above is None else above
    lo = delays[0] - dT * np.arange(below, 0, -1)
    hi = delays[-1] + dT * np.arange(1, above + 1)
    return np.concatenate([lo, delays, hi]), below


def toeplitz_operator(freq, delays, tau, probe: Pulse, rotating_frame=12800.0):
    """A[j, k] = w_k E_pr(tau_k - T_j) exp(i (w - w_rf)(tau_k - T_j)) for one frequency."""
    s = np.asarray(tau)[None, :] - np.asarray(delays)[:, None]
    det = CM_TO_RAD_FS * (freq - rotating_frame)
    return probe.envelope(s, rotating_frame) * np.exp(1j * det * s) * trapezoid_weights(tau)[None, :]


def naive_response(P3, freqs, probe: Pulse):
    """R ~ P / E_pr(w): the impulsive-probe estimate on the data delays."""
    return np.asarray(P3) / probe.spectrum(freqs)[:, None]


@dataclass
class Stage2Cache:
    """Per-frequency factorizations, reusable across noise instances."""

    tau: np.ndarray
    n_below: int
    scales: np.ndarray = None
    operators: dict = field(default_factory=dict)
    factorizations: dict = field(default_factory=dict)


def stage2_cache(freqs, delays, probe, rotating_frame=12800.0, penalty="D2",
                 below=None, above=None) -> Stage2Cache:
    """Normalized Toeplitz operators A / E_pr(w) and their factorizations.

    Dividing by the probe spectrum makes A close to the identity for a short
    probe, so lam has the same dimensionless meaning at every frequency.
    """
    tau, nb = reconstruction_delays(delays, probe, below, above)
    freqs = np.asarray(freqs, dtype=float)
    cache = Stage2Cache(tau, nb, probe.spectrum(freqs))
    L = penalty_matrix(penalty, tau.size)
    for i, w in enumerate(freqs):
        A = toeplitz_operator(w, delays, tau, probe, rotating_frame) / cache.scales[i]
        cache.operators[i] = A
        cache.factorizations[i] = TikhonovFactorization(A, L)
    return cache


def invert_polarization_to_response(P3, freqs, delays, probe: Pulse, method="tikhonov",
                                    cfg: Optional[SelectorConfig] = None, penalty="D2",
                                    rotating_frame=12800.0, cache: Optional[Stage2Cache] = None,
                                    truth=None, threads=None):
    """Deconvolve the probe from P(w, T) for every w.

    Returns a :class:`ResponseSurface` (extended delay grid for Tikhonov,
    data grid for naive) and a :class:`StageReport`. ``truth`` on the
    extended grid is needed only for the exact-oracle selector. Frequencies
    are solved independently, on ``threads`` workers (default from
    ``PPTOMO_THREADS``).
    """
    if probe is None:
        raise DeconvolutionError("the probe envelope is required for deconvolution")
    freqs = np.asarray(freqs, dtype=float)
    delays = np.asarray(delays, dtype=float)
    P3 = np.asarray(P3)
    if method == "naive":
        R = naive_response(P3, freqs, probe)
        return (ResponseSurface(freqs, delays, R, {"method": "naive"}),
                StageReport(np.zeros(freqs.size), np.ones(freqs.size, bool)))
    if method != "tikhonov":
        raise DeconvolutionError(f"unknown stage-2 method {method!r}")
    cfg = cfg or SelectorConfig("gcv")
    if cache is None:
        cache = stage2_cache(freqs, delays, probe, rotating_frame, penalty)
    tau = cache.tau
    R = np.full((freqs.size, tau.size), np.nan + 0j)
    lams = np.zeros(freqs.size)
    conv = np.ones(freqs.size, bool)
    scores = np.full(freqs.size, np.nan)
    flags = []
    window = slice(cache.n_below, cache.n_below + delays.size)

    def solve_one(i):
        b = P3[i] / cache.scales[i]
        if not np.all(np.isfinite(b)):
            return None
        fact = cache.factorizations[i]
        t = None if truth is None else truth[i]
        sel = select_lambda(_Problem(cache.operators[i], b), cfg, truth=t, window=window,
                            fact=fact, data=b)
        return fact.solve(b, sel.lam), sel

    threads = default_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(solve_one, range(freqs.size)))
    else:
        results = [solve_one(i) for i in range(freqs.size)]
    for i, res in enumerate(results):
        if res is None:
            flags.append(f"masked frequency {freqs[i]:.2f}")
            continue
        R[i], sel = res
        lams[i], conv[i], scores[i] = sel.lam, sel.converged, sel.score
    meta = {"method": "tikhonov", "n_below": cache.n_below, "penalty": penalty}
    return ResponseSurface(freqs, tau, R, meta), StageReport(lams, conv, flags, scores)


def rmse(estimate: ResponseSurface, truth: ResponseSurface) -> float:
    """(sum |R_est - R_true|^2)^(1/2) over the estimate's grid."""
    t = truth.restrict(estimate.delays)
    if estimate.values.shape != t.values.shape or not np.allclose(estimate.freqs, truth.freqs):
        raise DeconvolutionError("estimate and truth grids differ")
    diff = estimate.values - t.values
    return float(np.sqrt(np.nansum(np.abs(diff) ** 2)))


def score_window(est: ResponseSurface, delays) -> ResponseSurface:
    return est.restrict(delays)


# --- benchmark experiments --------------------------------------------------------

COMBINATIONS = (("naive", "naive"), ("tikhonov", "naive"), ("naive", "tikhonov"),
                ("tikhonov", "tikhonov"))


def run_pipeline(S_abs, S_disp, lo, freqs, delays, probe, stage1, stage2, cfg1=None,
                 cfg2=None, rotating_frame=12800.0, cache=None, penalty="D2"):
    P_hat, rep1 = invert_signal_to_polarization(S_abs, S_disp, lo, stage1, cfg1, "D2")
    R_hat, rep2 = invert_polarization_to_response(P_hat, freqs, delays, probe, stage2, cfg2,
                                                  penalty, rotating_frame, cache)
    return R_hat, rep1, rep2


def deconvolution_benchmark(sim, probe: Pulse, noise, n_instances, seed=0,
                            combinations=COMBINATIONS, rotating_frame=12800.0):
    """RMSE of each stage combination over noise instances (Table-I style).

    ``sim`` is a noise-free :class:`~pptomo.forward.SimulationResult`. Returns
    a dict mapping (stage1, stage2) to an array of per-instance RMSE values.
    """
    grid = sim.signal_abs.grid
    freqs, delays = grid.probe_freqs, grid.delays
    truth = sim.response
    Sc = complex_signal(sim.signal_abs.values, sim.signal_disp.values)
    sigma = noise * np.abs(Sc).max()
    cache = None
    if any(s2 == "tikhonov" for _, s2 in combinations):
        cache = stage2_cache(freqs, delays, probe, rotating_frame)
    n = n_instances if noise > 0 else 1
    out = {c: np.zeros(n) for c in combinations}
    ss = np.random.SeedSequence(seed)
    for k, child in enumerate(ss.spawn(n)):
        rng = np.random.default_rng(child)
        noisy = Sc + (complex_noise(Sc.shape, sigma, rng) if noise > 0 else 0)
        for combo in combinations:
            R_hat, _, _ = run_pipeline(noisy.imag, noisy.real, sim.lo_spectrum, freqs, delays,
                                       probe, combo[0], combo[1], cache=cache,
                                       rotating_frame=rotating_frame)
            out[combo][k] = rmse(R_hat.restrict(delays), truth)
    return out


def improvement_summary(rmses: dict, baseline=("naive", "naive")) -> dict:
    """Mean RMSE, its spread and the improvement ratio over the baseline for each method."""
    base = rmses[baseline]
    summary = {}
    for combo, vals in rmses.items():
        ratios = base / vals
        summary[combo] = {"rmse_mean": float(vals.mean()), "rmse_std": float(vals.std()),
                          "improvement": float(base.mean() / vals.mean()),
                          "improvement_std": float(ratios.std())}
    return summary


SELECTION_CASES = (("I", "exact-oracle"), ("D1", "exact-oracle"), ("D2", "exact-oracle"),
                   ("D2", "gcv"), ("D2", "ncp"))


def selection_benchmark(sim, probe: Pulse, freq, noise, n_instances, seed=0,
                        cases=SELECTION_CASES, rotating_frame=12800.0):
    """Stage-2 penalty/selector comparison at one probe frequency (Table-III style).

    Noise with relative width ``noise`` (of the column's peak |P|) is added
    directly to P(freq, T). Improvement is the naive mean-squared error over
    the Tikhonov one, scored on the data delays.
    """
    grid = sim.signal_abs.grid
    freqs, delays = grid.probe_freqs, grid.delays
    i = int(np.argmin(np.abs(freqs - freq)))
    w = freqs[i]
    P = sim.polarization[i]
    truth_full = sim.response
    tau, nb = reconstruction_delays(delays, probe)
    x_true = truth_full.restrict(tau).values[i]
    window = slice(nb, nb + delays.size)
    E = probe.spectrum(w)
    A = toeplitz_operator(w, delays, tau, probe, rotating_frame) / E
    facts = {pen: TikhonovFactorization(A, penalty_matrix(pen, tau.size))
             for pen in {c[0] for c in cases}}
    sigma = noise * np.abs(P).max()
    res = {c: {"lam": np.zeros(n_instances), "improvement": np.zeros(n_instances)}
           for c in cases}
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(n_instances)):
        rng = np.random.default_rng(child)
        b = (P + complex_noise(P.shape, sigma, rng)) / E
        mse_naive = np.sum(np.abs(b - x_true[window]) ** 2)
        for pen, method in cases:
            fact = facts[pen]
            sel = select_lambda(_Problem(A, b), SelectorConfig(method), truth=x_true,
                                window=window, fact=fact, data=b)
            x = fact.solve(b, sel.lam)
            mse = np.sum(np.abs(x[window] - x_true[window]) ** 2)
            res[(pen, method)]["lam"][k] = sel.lam
            res[(pen, method)]["improvement"][k] = mse_naive / mse
    return res
