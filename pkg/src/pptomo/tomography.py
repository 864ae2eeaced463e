"""Dimer excited-state tomography from the pump-probe response.

The response at the two one-exciton frequencies gives two complex numbers,
i.e. four real equations, for the Bloch vector (r0, r1, r2, r3) of the
excited-state density matrix. The four-parameter system is badly
conditioned, so r0 (the excited-state population) is fixed from a long-delay
measurement and only (r1, r2, r3) are solved for at each delay.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bath import BathSpec
from .forward import Pulse, ensemble_members, ensemble_response
from .model import EnsembleSpec, SiteModel, diagonalize, reference_dimer
from .response import (RESPONSE_PREFACTOR, PumpProbeOperator, ensemble_operator)

COMPONENTS = ("r0", "r1", "r2", "r3")
CHANNELS = ("absorptive", "dispersive")


class TomographyInfeasible(ValueError):
    """The reconstruction map is singular for the requested unknowns."""


@dataclass
class TomographyPlan:
    """Real linear map from Bloch components to sampled response values.

    ``matrix`` has one row per (channel, frequency): absorptive rows are
    Im R_PP and dispersive rows Re R_PP, each in the order of
    ``sample_freqs``. Columns are r0..r3.
    """

    sample_freqs: np.ndarray
    matrix: np.ndarray
    channels: tuple = CHANNELS
    solve_components: tuple = ("r1", "r2", "r3")
    normalization_delay: float = 10000.0
    cond_full: float = np.nan
    cond_reduced: float = np.nan

    @property
    def solve_index(self) -> list:
        return [COMPONENTS.index(c) for c in self.solve_components]


@dataclass
class TomographyResult:
    delays: np.ndarray
    bloch: np.ndarray  # (T, 4) unnormalized, r0 held fixed
    r0: float
    fidelity: Optional[np.ndarray] = None
    cond_full: float = np.nan
    cond_reduced: float = np.nan
    flags: list = field(default_factory=list)

    @property
    def normalized(self) -> np.ndarray:
        """(T, 3) array of r1/r0, r2/r0, r3/r0."""
        return self.bloch[:, 1:] / self.bloch[:, :1]


def condition_number(M) -> float:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def _rows_at(op: PumpProbeOperator, freqs, atol=1e-6):
    """Operator rows at ``freqs``; linear interpolation when off-grid."""
    freqs = np.asarray(freqs, dtype=float)
    out = np.empty((freqs.size, op.rows.shape[-1]), complex)
    for i, w in enumerate(freqs):
        j = int(np.argmin(np.abs(op.grid - w)))
        if abs(op.grid[j] - w) <= atol:
            out[i] = op.rows[j]
        elif op.grid[0] <= w <= op.grid[-1]:
            for k in range(out.shape[1]):
                out[i, k] = (np.interp(w, op.grid, op.rows[:, k].real)
                             + 1j * np.interp(w, op.grid, op.rows[:, k].imag))
        else:
            raise TomographyInfeasible(f"frequency {w} outside the operator grid")
    return out


def response_matrix(op: PumpProbeOperator, sample_freqs, channels=CHANNELS) -> np.ndarray:
    """Stack the physical response covectors into a real (rows, 4) matrix."""
    if op.representation != "bloch":
        raise TomographyInfeasible("tomography needs a Bloch-representation operator")
    C = RESPONSE_PREFACTOR * 0.5 * _rows_at(op, sample_freqs)
    blocks = []
    for ch in channels:
        if ch == "absorptive":
            blocks.append(C.imag)
        elif ch == "dispersive":
            blocks.append(C.real)
        else:
            raise TomographyInfeasible(f"unknown channel {ch!r}")
    return np.concatenate(blocks, axis=0)


def _diagnose(M, solve_index, tol):
    """Name the degeneracy that makes the reduced system singular, if any."""
    scale = np.abs(M).max()
    if scale == 0:
        return "the response map is identically zero (no transition strength)"
    zero = [COMPONENTS[k] for k in solve_index if np.abs(M[:, k]).max() <= tol * scale]
    if {"r1", "r2"} <= set(zero):
        return ("coherence columns vanish: the exciton coherences are invisible "
                "(homodimer or equivalent symmetric degeneracy)")
    if zero:
        return f"column(s) {', '.join(zero)} vanish"
    return "response columns are linearly dependent"


def build_plan(projector: PumpProbeOperator, sample_freqs, channels=CHANNELS,
               solve_components=("r1", "r2", "r3"), normalization_delay=10000.0,
               max_cond=1e10) -> TomographyPlan:
    """Reconstruction plan at ``sample_freqs`` (normally the two exciton energies).

    Raises :class:`TomographyInfeasible` if the system for ``solve_components``
    is singular, with a message naming the degeneracy.
    """
    freqs = np.atleast_1d(np.asarray(sample_freqs, dtype=float))
    M = response_matrix(projector, freqs, tuple(channels))
    plan = TomographyPlan(freqs, M, tuple(channels), tuple(solve_components),
                          float(normalization_delay))
    idx = plan.solve_index
    if M.shape[0] < len(idx):
        raise TomographyInfeasible(f"{M.shape[0]} equations cannot fix {len(idx)} unknowns")
    plan.cond_full = condition_number(M)
    plan.cond_reduced = condition_number(M[:, idx])
    if not plan.cond_reduced < max_cond:
        raise TomographyInfeasible(_diagnose(M, idx, 1e-12))
    return plan


def _real_rhs(values, plan: TomographyPlan):
    """Complex R_PP at the sample frequencies (F, ...) -> real right-hand side."""
    values = np.asarray(values)
    parts = [values.imag if ch == "absorptive" else values.real for ch in plan.channels]
    return np.concatenate(parts, axis=0)


@dataclass
class Normalization:
    r0: float
    r3: float
    flags: list = field(default_factory=list)


def fix_normalization(values, plan: TomographyPlan, tol=1e-14) -> Normalization:
    """Solve for (r0, r3) at a long delay where the coherences have vanished.

    ``values`` are the complex responses at ``plan.sample_freqs``.
    """
    b = _real_rhs(values, plan)
    sub = plan.matrix[:, [0, 3]]
    if condition_number(sub) > 1e12:
        raise TomographyInfeasible("the population system (r0, r3) is singular")
    if np.abs(b).max() <= tol * max(np.abs(plan.matrix).max(), 1.0):
        return Normalization(0.0, 0.0, ["no-excitation"])
    (r0, r3), *_ = np.linalg.lstsq(sub, b, rcond=None)
    flags = [] if r0 > 0 else ["non-positive population"]
    return Normalization(float(r0), float(r3), flags)


def invert_state(values, plan: TomographyPlan, r0: Optional[float] = None):
    """Least-squares Bloch vectors from responses ``values`` of shape (F,) or (F, T).

    With r0 in ``plan.solve_components`` the full system is solved and ``r0``
    is ignored; otherwise r0 is held fixed at the given value. Returns
    ``(bloch (T, 4), flags)``; no positivity repair is applied, but states
    with |r| > r0 are flagged.
    """
    values = np.asarray(values)
    single = values.ndim == 1
    b = _real_rhs(values if not single else values[:, None], plan)
    idx = plan.solve_index
    fixed = [k for k in range(4) if k not in idx]
    T = b.shape[1]
    out = np.zeros((T, 4))
    if fixed:
        if r0 is None:
            raise TomographyInfeasible("r0 must be supplied when it is not solved for")
        if fixed != [0]:
            raise TomographyInfeasible("only r0 may be held fixed")
        out[:, 0] = r0
        b = b - plan.matrix[:, [0]] * r0
    sol, *_ = np.linalg.lstsq(plan.matrix[:, idx], b, rcond=None)
    out[:, idx] = sol.T
    flags = []
    bad = np.sum(out[:, 1:] ** 2, axis=1) > out[:, 0] ** 2 * (1 + 1e-6)
    if np.any(bad):
        flags.append(f"unphysical Bloch vector at {int(bad.sum())} delay(s)")
    return (out[0] if single else out), flags


def fidelity(a, b) -> np.ndarray:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 of normalized qubit states.

    ``a`` and ``b`` are Bloch vectors (..., 4) or :class:`BlochState` objects.
    For qubits this is tr(rho sigma) + 2 sqrt(det rho det sigma).
    """
    a = np.asarray(getattr(a, "vector", a), dtype=float)
    b = np.asarray(getattr(b, "vector", b), dtype=float)
    if np.any(a[..., 0] <= 0) or np.any(b[..., 0] <= 0):
        raise ValueError("fidelity needs r0 > 0")
    n = a[..., 1:] / a[..., :1]
    m = b[..., 1:] / b[..., :1]
    overlap = 0.5 * (1 + np.sum(n * m, axis=-1))
    dets = np.clip(1 - np.sum(n * n, axis=-1), 0, None) * np.clip(1 - np.sum(m * m, axis=-1), 0, None)
    return np.clip(overlap + 0.5 * np.sqrt(dets), 0.0, 1.0)


def fit_population_decay(delays, r0_values):
    """Fit r0(t) = A exp(-k t) by least squares; returns (A, k).

    For systems without a clear separation between coherence decay and
    population relaxation, where a single long-delay r0 is not adequate.
    """
    from scipy.optimize import curve_fit

    t = np.asarray(delays, dtype=float)
    y = np.asarray(r0_values, dtype=float)
    pos = y > 0
    k0, a0 = -np.polyfit(t[pos], np.log(y[pos]), 1) if pos.sum() >= 2 else (0.0, 0.0)
    popt, _ = curve_fit(lambda t, A, k: A * np.exp(-k * t), t, y,
                        p0=(np.exp(a0) if pos.any() else y.max(), max(k0, 0.0)))
    return float(popt[0]), float(popt[1])


# --- pipelines -----------------------------------------------------------------

def exciton_frequencies(model: SiteModel) -> np.ndarray:
    """One-exciton energies of the mean Hamiltonian, ascending (beta, alpha)."""
    return diagonalize(model).one_exciton_energies


def ensemble_plan(bases, rates, sample_freqs, **kwargs) -> TomographyPlan:
    """Plan from the disorder-averaged isotropic projector of an ensemble."""
    op = ensemble_operator(bases, rates, np.asarray(sample_freqs, float), "iso", "bloch")
    return build_plan(op, sample_freqs, **kwargs)


def reconstruct(values, delays, plan: TomographyPlan, r0: float, truth=None) -> TomographyResult:
    """Invert responses (F, T) at every delay and score against ``truth`` (T, 4)."""
    bloch, flags = invert_state(values, plan, r0)
    fid = None
    if truth is not None and r0 > 0:
        fid = fidelity(bloch, truth)
    return TomographyResult(np.asarray(delays, float), bloch, r0, fid,
                            plan.cond_full, plan.cond_reduced, flags)


@dataclass
class SweepPoint:
    width: float
    worst: float
    average: float
    result: TomographyResult


def tomography_experiment(model: SiteModel, bath: BathSpec = BathSpec(), pump: Pulse = Pulse(),
                          n_samples=10000, seed=0, delays=None, normalization_delay=10000.0,
                          rotating_frame=12800.0, chunk=2000) -> TomographyResult:
    """Forward-simulate exact ensemble responses at the exciton energies and invert them.

    Stage-1 inversion is bypassed: the exact R_PP at the two exciton energies
    is used, so only the factorized ensemble average limits the accuracy.
    """
    delays = np.linspace(50.0, 1000.0, 140) if delays is None else np.asarray(delays, float)
    freqs = exciton_frequencies(model)
    bases, rates = ensemble_members(model, bath, EnsembleSpec(n_samples, seed))
    plan = ensemble_plan(bases, rates, freqs, normalization_delay=normalization_delay)
    times = np.append(delays, normalization_delay)
    R, rho = ensemble_response(bases, rates, pump, freqs, times, rotating_frame, chunk=chunk)
    norm = fix_normalization(R[:, -1], plan)
    from .response import bloch_vector

    truth = bloch_vector(rho[:-1])
    res = reconstruct(R[:, :-1], delays, plan, norm.r0, truth)
    res.flags = norm.flags + res.flags
    return res


def disorder_sweep(widths: Sequence[float], n_samples=10000, seed=0, model=None,
                   bath: BathSpec = BathSpec(), pump: Pulse = Pulse(), delays=None):
    """Worst-case and average fidelity over the delay window for each disorder width."""
    base = reference_dimer() if model is None else model
    from dataclasses import replace

    out = []
    for w in widths:
        m = replace(base, disorder_sigma=np.full(base.n_sites, float(w)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = tomography_experiment(m, bath, pump, n_samples if w > 0 else 1, seed, delays)
        out.append(SweepPoint(float(w), float(res.fidelity.min()), float(res.fidelity.mean()), res))
    return out
