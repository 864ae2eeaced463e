"""Forward simulation of heterodyne-detected pump-probe experiments.

Time is in fs and frequency in cm^-1. Pulse envelopes are carrier-free in a
frame rotating at ``ExperimentGrid.rotating_frame_freq``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import ALIGN_TOL, pump_second_order_kernel, second_order_single
from .bath import BathSpec, RedfieldRates, redfield_rates
from .constants import CM_TO_RAD_FS
from .model import (EnsembleSpec, ExcitonBasis, SiteModel, diagonalize,
                    orientation_frames, sample_ensemble)
from .response import (RESPONSE_PREFACTOR, complex_basis_response, polarization_pairs)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class Pulse:
    """Gaussian (default) or tabulated pulse envelope.

    Parameters
    ----------
    fwhm : float
        Full width at half maximum of the field envelope, fs.
    center_freq : float
        Carrier frequency, cm^-1.
    amplitude : float
        Peak field amplitude.
    times, samples : arrays, optional
        Tabulated complex envelope (carrier-free, relative to ``center_freq``).
        Samples are rescaled so that max |samples| equals ``amplitude``.
    """

    fwhm: float = 40.0
    center_freq: float = 12800.0
    amplitude: float = 1.0
    times: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.fwhm > 0:
            raise SimulationError("pulse fwhm must be positive")
        if (self.times is None) != (self.samples is None):
            raise SimulationError("tabulated pulses need both times and samples")
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            s = np.asarray(self.samples, dtype=complex)
            if t.shape != s.shape or t.ndim != 1 or np.any(np.diff(t) <= 0):
                raise SimulationError("tabulated envelope must be 1-D on increasing times")
            peak = np.abs(s).max()
            if peak == 0:
                raise SimulationError("tabulated envelope is identically zero")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "samples", s * (self.amplitude / peak))

    @property
    def tabulated(self) -> bool:
        return self.times is not None

    @property
    def _a(self) -> float:
        return 4 * np.log(2) / self.fwhm ** 2

    @property
    def support(self) -> float:
        """Half-width beyond which the envelope is treated as zero (fs)."""
        if self.tabulated:
            return float(np.abs(self.times).max())
        return 4.0 * self.fwhm

    def envelope(self, t, rotating_frame=None):
        """Complex field envelope E(t) in the frame rotating at ``rotating_frame``."""
        t = np.asarray(t, dtype=float)
        if self.tabulated:
            env = (np.interp(t, self.times, self.samples.real, left=0.0, right=0.0)
                   + 1j * np.interp(t, self.times, self.samples.imag, left=0.0, right=0.0))
        else:
            env = self.amplitude * np.exp(-self._a * t ** 2) + 0j
        if rotating_frame is not None:
            env = env * np.exp(-1j * CM_TO_RAD_FS * (self.center_freq - rotating_frame) * t)
        return env

    def spectrum(self, omega):
        """E(w) = int dt exp(i (w - w_0) t) E(t) in absolute frequency (field units x fs).

        The value does not depend on the rotating frame.
        """
        det = CM_TO_RAD_FS * (np.asarray(omega, dtype=float) - self.center_freq)
        if not self.tabulated:
            a = self._a
            out = self.amplitude * np.sqrt(np.pi / a) * np.exp(-det ** 2 / (4 * a)) + 0j
        else:
            w = np.atleast_1d(det)
            phase = np.exp(1j * w[:, None] * self.times[None, :])
            out = np.trapezoid(phase * self.samples[None, :], self.times, axis=1)
            out = out.reshape(np.shape(det))
        return out


@dataclass(frozen=True)
class ExperimentGrid:
    """Probe frequencies (cm^-1), delays T (fs) and the rotating-frame frequency."""

    probe_freqs: np.ndarray
    delays: np.ndarray
    rotating_frame_freq: float = 12800.0

    def __post_init__(self):
        for name in ("probe_freqs", "delays"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or v.size < 1 or np.any(np.diff(v) <= 0):
                raise SimulationError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, v)

    @classmethod
    def default(cls):
        """181 frequencies over 12500-13100 cm^-1 and 140 delays over 50-1000 fs."""
        return cls(np.linspace(12500.0, 13100.0, 181), np.linspace(50.0, 1000.0, 140), 12800.0)

    @property
    def delay_step(self) -> float:
        d = np.diff(self.delays)
        if d.size and np.ptp(d) > 1e-6 * d.mean():
            raise SimulationError("delay grid is not uniform")
        return float(d.mean()) if d.size else 1.0

    def extended_delays(self, below: int = 0, above: int = 0) -> np.ndarray:
        dT = self.delay_step
        lo = self.delays[0] - dT * np.arange(below, 0, -1)
        hi = self.delays[-1] + dT * np.arange(1, above + 1)
        return np.concatenate([lo, self.delays, hi])


@dataclass
class SignalSurface:
    """Real heterodyne signal S(w, T) for one local-oscillator phase."""

    grid: ExperimentGrid
    values: np.ndarray
    phase: float = 0.0
    noise_sigma_relative: float = 0.0


@dataclass
class ResponseSurface:
    """Complex R_PP(w, tau) on ``freqs`` x ``delays`` (delays may extend past the data)."""

    freqs: np.ndarray
    delays: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def restrict(self, delays) -> "ResponseSurface":
        delays = np.asarray(delays, dtype=float)
        idx = np.array([np.argmin(np.abs(self.delays - d)) for d in delays])
        if np.any(np.abs(self.delays[idx] - delays) > 1e-6):
            raise SimulationError("requested delays are not on the response grid")
        return ResponseSurface(self.freqs, self.delays[idx], self.values[:, idx], dict(self.meta))


# --- second-order density matrix ----------------------------------------------

def _kick_fields(pulses, t0, K, dt, rotating_frame):
    """Kick areas dt * E(t_k) and dt * dE/dt on the grid t0 + k dt."""
    tk = t0 + dt * np.arange(-1, K + 1)
    out = []
    for p in pulses:
        f = dt * p.envelope(tk, rotating_frame)
        df = (f[2:] - f[:-2]) / (2 * dt)
        out += [f[1:-1].astype(complex), df.astype(complex)]
    return out


def _aligned_runs(times, start, stop, dt, run):
    """Evaluate ``run(t0, K, dt, times)`` on kick grids that contain every output time.

    Output times inside the pulse window [start, stop] are grouped by their
    offset from the grid; each group gets a grid shifted onto it. Later times
    ride with the first group. Uniformly spaced outputs shrink ``dt`` to the
    nearest divisor of their spacing so that one grid serves them all.
    """
    times = np.asarray(times, dtype=float)
    inside = np.nonzero((times > start) & (times < stop))[0]
    if inside.size > 1:
        gaps = np.diff(times[inside])
        if gaps.min() > 0 and np.ptp(gaps) <= 1e-9 * gaps.mean():
            dt = gaps.mean() / np.ceil(gaps.mean() / dt - 1e-9)
    groups = {}
    if inside.size:
        ref = times[inside[0]]
        for i in inside:
            off = (times[i] - ref) / dt
            key = round((off - np.floor(off + ALIGN_TOL)) * 1e6)
            key = 0 if key in (0, 1000000) else key
            groups.setdefault(key, []).append(i)
    else:
        groups[0] = []
    rest = [i for i in range(times.size) if i not in set(inside.tolist())]
    result = None
    for n_group, idx in enumerate(groups.values()):
        if n_group == 0:
            idx = sorted(idx + rest)
        idx = np.array(idx, dtype=int)
        sub = times[idx]
        anchor = sub[(sub > start) & (sub < stop)]
        t0 = start if anchor.size == 0 else anchor[0] - dt * np.ceil((anchor[0] - start) / dt)
        K = int(np.floor((min(sub.max(), stop) - t0) / dt + ALIGN_TOL)) + 1
        part = run(t0, max(K, 1), dt, sub)
        if result is None:
            result = np.zeros(part.shape[:1] + (times.size,) + part.shape[2:], part.dtype)
        result[:, idx] = part
    return result


def _stack_dynamics(bases, rates_list, rotating_frame):
    """Arrays for the kick kernel: detuned rates and population eigensystems."""
    N = len(bases)
    n = bases[0].n
    c_rate = np.empty((N, n), complex)
    coh_rate = np.zeros((N, n, n), complex)
    V = np.empty((N, n, n), complex)
    lam = np.empty((N, n), complex)
    Vinv = np.empty((N, n, n), complex)
    for s, (b, r) in enumerate(zip(bases, rates_list)):
        eps = b.one_exciton_energies
        c_rate[s] = 1j * CM_TO_RAD_FS * (eps - rotating_frame) + r.coherence_gamma_01
        coh_rate[s] = 1j * CM_TO_RAD_FS * (eps[:, None] - eps[None, :]) + r.coherence_gamma_11
        np.fill_diagonal(coh_rate[s], 0.0)
        w, v = np.linalg.eig(r.generator().T)
        V[s], lam[s], Vinv[s] = v, w, np.linalg.inv(v)
    return c_rate, coh_rate, V, lam, Vinv


def pump_second_order_ensemble(bases, rates_list, pump: Pulse, times, rotating_frame=None,
                               pump_polarizations=None, dt=1.0, use_numba=None):
    """Excited-state block of the pump-prepared second-order density matrix.

    The two pump interactions are integrated on a uniform grid of step ``dt``
    (trapezoid rule with end corrections, fourth order in ``dt``); between
    grid points the optical coherences, excited-state coherences and
    populations evolve exactly under secular Redfield dynamics. Output times
    inside the pulse window get a grid aligned onto them. With several pump
    polarizations the result is their average.

    Returns
    -------
    rho : (N, M, n, n) complex
        In each member's exciton basis (ascending energy).
    ground : (N, M)
        Ground-state population change; equals -tr(rho) at every time.
    """
    rf = pump.center_freq if rotating_frame is None else rotating_frame
    times = np.asarray(times, dtype=float)
    order = np.argsort(times, kind="stable")
    if pump_polarizations is None:
        pump_polarizations = np.eye(3)
    pols = np.atleast_2d(np.asarray(pump_polarizations, dtype=float))
    _check_step(bases, rf, dt)
    mu = np.stack([b.dipoles_g_to_1 @ pols.T for b in bases])  # (N, n, P)
    args = _stack_dynamics(bases, rates_list, rf)

    def run(t0, K, h, sub):
        f, df = _kick_fields([pump], t0, K, h, rf)
        return pump_second_order_kernel(f, df, float(t0), float(h), mu, *args, sub,
                                        use_numba=use_numba)

    rho = _aligned_runs(times[order], -pump.support, pump.support, dt, run)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    rho = rho[:, inv]
    return rho, -np.trace(rho, axis1=2, axis2=3).real


def _check_step(bases, rf, dt):
    eps = np.concatenate([b.one_exciton_energies for b in bases])
    span = max(np.ptp(eps), np.max(np.abs(eps - rf)))
    if CM_TO_RAD_FS * span * dt >= np.pi:
        raise SimulationError("pump quadrature step too coarse for the detuning span")


def pump_second_order(basis: ExcitonBasis, rates: RedfieldRates, pump: Pulse, times,
                      rotating_frame=None, pump_polarizations=None, dt=1.0):
    """Single-member version of :func:`pump_second_order_ensemble`; returns (rho, ground)."""
    rho, ground = pump_second_order_ensemble([basis], [rates], pump, np.atleast_1d(times),
                                             rotating_frame, pump_polarizations, dt)
    return rho[0], ground[0]


def photon_echo_second_order(basis: ExcitonBasis, rates: RedfieldRates, pulse1: Pulse,
                             pulse2: Pulse, times, rotating_frame=12800.0,
                             polarization=(1.0, 0.0, 0.0), dt=1.0):
    """Phase-matched term with pulse 1 acting on the bra and pulse 2 on the ket.

    The result is generally not Hermitian. For identical pulses, this term
    plus its conjugate-ordered partner (its adjoint) equals the pump-probe
    second-order matrix.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    order = np.argsort(times, kind="stable")
    e = np.asarray(polarization, dtype=float)
    mu = (basis.dipoles_g_to_1 @ e)[None, :, None]
    _check_step([basis], rotating_frame, dt)
    args = _stack_dynamics([basis], [rates], rotating_frame)
    support = max(pulse1.support, pulse2.support)

    def run(t0, K, h, sub):
        f1, df1, f2, df2 = _kick_fields([pulse1, pulse2], t0, K, h, rotating_frame)
        return second_order_single(f2, df2, f1, df1, float(t0), float(h), mu, *args, sub)

    rho = _aligned_runs(times[order], -support, support, dt, run)[0]
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return rho[inv]


# --- probe convolution and detection ------------------------------------------

def polarization(response: ResponseSurface, probe: Pulse, delays, rotating_frame=12800.0):
    """P(w, T) = int dtau R(w, tau) E_pr(tau - T) exp(i (w - w_rf)(tau - T)).

    Trapezoidal quadrature on the response's own delay grid, which must cover
    T +- the probe support for every requested T.
    """
    delays = np.asarray(delays, dtype=float)
    tau = response.delays
    if delays.min() - probe.support < tau[0] - 1e-9 or delays.max() + probe.support > tau[-1] + 1e-9:
        raise SimulationError("response does not cover the probe support at all delays")
    K = convolution_matrix(response.freqs, tau, delays, probe, rotating_frame)
    return np.einsum("wtk,wk->wt", K, response.values)


def trapezoid_weights(x):
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    if x.size > 1:
        d = np.diff(x)
        w[:-1] += d / 2
        w[1:] += d / 2
    else:
        w[:] = 1.0
    return w


def convolution_matrix(freqs, tau, delays, probe: Pulse, rotating_frame=12800.0):
    """Kernel K[w, T, tau] with trapezoid weights so that P = K @ R along tau."""
    freqs = np.asarray(freqs, dtype=float)
    s = np.asarray(tau, dtype=float)[None, :] - np.asarray(delays, dtype=float)[:, None]
    env = probe.envelope(s, rotating_frame)
    det = CM_TO_RAD_FS * (freqs - rotating_frame)
    phase = np.exp(1j * det[:, None, None] * s[None])
    return phase * (env * trapezoid_weights(tau)[None, :])[None]


def heterodyne(P3, lo_spectrum, phase=0.0):
    """Real heterodyne signal: Im[P E_LO*] at phase 0, Re[P E_LO*] at phase pi/2."""
    P3 = np.asarray(P3)
    lo = np.conj(np.asarray(lo_spectrum))
    prod = P3 * (lo[:, None] if P3.ndim == 2 else lo)
    return (prod * np.exp(1j * phase)).imag


def complex_signal(abs_signal, disp_signal):
    """Combine the phase-0 and phase-pi/2 channels into P E_LO*."""
    return np.asarray(disp_signal) + 1j * np.asarray(abs_signal)


def complex_noise(shape, sigma, rng):
    """Complex noise with uniform phase and Gaussian amplitude of width ``sigma``."""
    amp = sigma * rng.standard_normal(shape)
    phi = rng.uniform(0.0, 2 * np.pi, shape)
    return amp * np.exp(1j * phi)


def add_detection_noise(abs_surface: SignalSurface, disp_surface: SignalSurface,
                        relative_sigma, seed=None, rng=None):
    """Add i.i.d. complex detection noise to a pair of heterodyne surfaces.

    The noise width is ``relative_sigma`` times the peak magnitude of the
    combined complex signal; its real part lands on the dispersive channel and
    its imaginary part on the absorptive channel.
    """
    if relative_sigma == 0:
        return abs_surface, disp_surface
    rng = np.random.default_rng(seed) if rng is None else rng
    Sc = complex_signal(abs_surface.values, disp_surface.values)
    noisy = Sc + complex_noise(Sc.shape, relative_sigma * np.abs(Sc).max(), rng)
    return (SignalSurface(abs_surface.grid, noisy.imag, 0.0, relative_sigma),
            SignalSurface(disp_surface.grid, noisy.real, np.pi / 2, relative_sigma))


# --- full pipeline ------------------------------------------------------------

@dataclass
class Experiment:
    """Everything needed to generate a dataset."""

    model: SiteModel
    bath: BathSpec = field(default_factory=BathSpec)
    pump: Pulse = field(default_factory=Pulse)
    probe: Pulse = field(default_factory=Pulse)
    grid: ExperimentGrid = field(default_factory=ExperimentGrid.default)
    ensemble: EnsembleSpec = field(default_factory=lambda: EnsembleSpec(200, 0))
    noise: float = 0.0
    seed: int = 0


@dataclass
class SimulationResult:
    signal_abs: SignalSurface
    signal_disp: SignalSurface
    response: ResponseSurface
    polarization: np.ndarray
    lo_spectrum: np.ndarray
    bloch_truth: Optional[np.ndarray] = None
    rho_truth: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)


def truth_delays(grid: ExperimentGrid, probe: Pulse) -> np.ndarray:
    """Delay grid of the true response: measured delays padded by the probe support."""
    pad = int(np.ceil(probe.support / grid.delay_step))
    return grid.extended_delays(pad, pad)


def ensemble_members(model: SiteModel, bath: BathSpec, ensemble: EnsembleSpec):
    models = sample_ensemble(model, ensemble)
    bases = [diagonalize(m) for m in models]
    rates = [redfield_rates(b, bath) for b in bases]
    return bases, rates


def ensemble_response(bases, rates, pump: Pulse, freqs, delays, rotating_frame,
                      orientation_mode="isotropic-xyz-average", chunk=2000, dt=1.0):
    """Disorder-averaged R_PP(w, tau), with per-member operator/state correlations kept.

    Also returns the averaged excited-state matrix (tau, n, n) in the members'
    own exciton bases.
    """
    pump_pols = orientation_frames(orientation_mode)
    probe_pol = "iso" if orientation_mode == "isotropic-xyz-average" else "xx"
    freqs = np.asarray(freqs, dtype=float)
    delays = np.asarray(delays, dtype=float)
    N = len(bases)
    n = bases[0].n
    R = np.zeros((freqs.size, delays.size), complex)
    rho_mean = np.zeros((delays.size, n, n), complex)
    for start in range(0, N, chunk):
        sl = slice(start, min(N, start + chunk))
        rho, _ = pump_second_order_ensemble(bases[sl], rates[sl], pump, delays,
                                            rotating_frame, pump_pols, dt)
        Q = np.stack([complex_basis_response(b, r, freqs, probe_pol)
                      for b, r in zip(bases[sl], rates[sl])])  # (s, a, b, w)
        m = Q.shape[0]
        # Q[a, b] responds to |a><b|: R(w, tau) = sum_s sum_ab Q[s, a, b, w] rho[s, tau, a, b]
        Qm = Q.transpose(3, 0, 1, 2).reshape(freqs.size, m * n * n)
        Rm = rho.transpose(0, 2, 3, 1).reshape(m * n * n, delays.size)
        R += Qm @ Rm
        rho_mean += rho.sum(axis=0)
    return RESPONSE_PREFACTOR * R / N, rho_mean / N


def overlap_warning(grid: ExperimentGrid, pump: Pulse, probe: Pulse) -> Optional[str]:
    """Message when the earliest delay is shorter than the longer pulse FWHM.

    Below that delay the field envelopes overlap by more than 25% and the
    sequential pump-then-probe picture no longer holds.
    """
    width = max(pump.fwhm, probe.fwhm)
    if grid.delays[0] < width:
        return (f"pump and probe overlap: earliest delay {grid.delays[0]:g} fs is shorter "
                f"than the pulse FWHM {width:g} fs")
    return None


def simulate_experiment(exp: Experiment, keep_truth_states=True) -> SimulationResult:
    """Signals (phase 0 and pi/2), true response and polarization for ``exp``."""
    grid = exp.grid
    notes = []
    msg = overlap_warning(grid, exp.pump, exp.probe)
    if msg:
        warnings.warn(msg)
        notes.append(msg)
    bases, rates = ensemble_members(exp.model, exp.bath, exp.ensemble)
    tau = truth_delays(grid, exp.probe)
    R, rho = ensemble_response(bases, rates, exp.pump, grid.probe_freqs, tau,
                               grid.rotating_frame_freq, exp.ensemble.orientation_mode)
    response = ResponseSurface(grid.probe_freqs, tau, R)
    P3 = polarization(response, exp.probe, grid.delays, grid.rotating_frame_freq)
    lo = exp.probe.spectrum(grid.probe_freqs)
    s_abs = SignalSurface(grid, heterodyne(P3, lo, 0.0), 0.0)
    s_disp = SignalSurface(grid, heterodyne(P3, lo, np.pi / 2), np.pi / 2)
    if exp.noise:
        rng = np.random.default_rng(exp.seed)
        s_abs, s_disp = add_detection_noise(s_abs, s_disp, exp.noise, rng=rng)
    bloch = None
    if exp.model.n_sites == 2:
        from .response import bloch_vector
        bloch = bloch_vector(rho)
    return SimulationResult(s_abs, s_disp, response, P3, lo, bloch,
                            rho if keep_truth_states else None, notes)
