"""Ohmic bath and secular Redfield relaxation in the exciton basis.

Only the real (dissipative) part of the Redfield tensor is kept, so there are
no Lamb shifts and all coherences decay as pure exponentials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import CM_TO_RAD_FS, K_B_CM
from .model import ExcitonBasis


class BathError(ValueError):
    pass


@dataclass(frozen=True)
class BathSpec:
    """Independent identical Ohmic baths on every site.

    Parameters
    ----------
    reorg_energy : float
        Reorganization energy lambda_b, cm^-1.
    cutoff : float
        Cutoff frequency omega_c, cm^-1.
    temperature : float
        Kelvin.
    """

    reorg_energy: float = 30.0
    cutoff: float = 120.0
    temperature: float = 273.0

    def __post_init__(self):
        for name in ("reorg_energy", "cutoff", "temperature"):
            if not getattr(self, name) > 0:
                raise BathError(f"{name} must be strictly positive")

    @property
    def kT(self) -> float:
        return K_B_CM * self.temperature


def spectral_density(spec: BathSpec, omega):
    """J(w) = (lambda_b / w_c) w exp(-w / w_c) for w >= 0 (cm^-1)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise BathError("spectral_density takes non-negative frequencies; "
                        "use bath_correlation for signed ones")
    return spec.reorg_energy / spec.cutoff * omega * np.exp(-omega / spec.cutoff)


def bath_correlation(spec: BathSpec, omega):
    """Thermal bath correlation spectrum C(w) = 2 J(w) [1 + n(w)], cm^-1.

    J is extended as an odd function so that C(-w) = exp(-w/kT) C(w) (detailed
    balance). The w -> 0 limit is 2 lambda_b kT / w_c.
    """
    omega = np.asarray(omega, dtype=float)
    kT = spec.kT
    out = np.empty_like(omega)
    zero = np.abs(omega) < 1e-12
    w = np.where(zero, 1.0, omega)
    aw = np.abs(w)
    J = spec.reorg_energy / spec.cutoff * aw * np.exp(-aw / spec.cutoff)
    # 1 + n(w) for w > 0 and n(|w|) for w < 0; both equal 1 / (1 - exp(-w/kT))
    out[...] = 2.0 * np.sign(w) * J / -np.expm1(-w / kT)
    out[zero] = 2.0 * spec.reorg_energy * kT / spec.cutoff
    return out


@dataclass(frozen=True)
class RedfieldRates:
    """Secular Redfield rates in fs^-1.

    ``pop_rates[a, b]`` is k_{a->b} between one-exciton states and
    ``pop_rates_2`` the same within the two-exciton manifold.
    ``coherence_gamma_01[a]`` damps |a><g|, ``coherence_gamma_12[a, f]`` damps
    |f><a| and ``coherence_gamma_11[a, b]`` damps |a><b|.
    """

    pop_rates: np.ndarray
    pop_rates_2: np.ndarray
    coherence_gamma_01: np.ndarray
    coherence_gamma_12: np.ndarray
    coherence_gamma_11: np.ndarray

    def generator(self) -> np.ndarray:
        """Population generator G with G[a, b] = k_{a->b}; rows sum to zero.

        Populations evolve as dp/dt = G.T p.
        """
        G = self.pop_rates.copy()
        np.fill_diagonal(G, 0.0)
        G[np.diag_indices_from(G)] = -G.sum(axis=1)
        return G


def _transfer_rates(spec, energies, overlap):
    """k_{a->b} = 2 pi sum_m |<a|n_m|b>|^2 C(e_a - e_b), in cm^-1."""
    weights = np.einsum("mab,mab->ab", overlap, overlap)
    gaps = energies[:, None] - energies[None, :]
    k = 2 * np.pi * weights * bath_correlation(spec, gaps)
    np.fill_diagonal(k, 0.0)
    return k


def redfield_rates(basis: ExcitonBasis, spec: BathSpec) -> RedfieldRates:
    """Secular Redfield population and coherence rates for ``basis``."""
    occ1 = basis.site_occupation_1()
    occ2 = basis.site_occupation_2()
    k1 = _transfer_rates(spec, basis.one_exciton_energies, occ1)
    k2 = _transfer_rates(spec, basis.two_exciton_energies, occ2) if basis.n2 else np.zeros((0, 0))
    out1 = k1.sum(axis=1)
    out2 = k2.sum(axis=1)
    # diagonal site occupations of each eigenstate; the ground state has none
    p1 = np.einsum("maa->ma", occ1)
    p2 = np.einsum("mff->mf", occ2) if basis.n2 else np.zeros((basis.n, 0))
    # pure dephasing: half the zero-frequency rate, pi C(0) per unit occupation difference
    pure = np.pi * bath_correlation(spec, np.zeros(1))[0]
    g01 = 0.5 * out1 + pure * np.sum(p1 ** 2, axis=0)
    g12 = (0.5 * (out1[:, None] + out2[None, :])
           + pure * np.sum((p1[:, :, None] - p2[:, None, :]) ** 2, axis=0))
    g11 = (0.5 * (out1[:, None] + out1[None, :])
           + pure * np.sum((p1[:, :, None] - p1[:, None, :]) ** 2, axis=0))
    np.fill_diagonal(g11, 0.0)
    c = CM_TO_RAD_FS
    return RedfieldRates(c * k1, c * k2, (c * g01).astype(complex),
                         (c * g12).astype(complex), (c * g11).astype(complex))


def propagator_factor(gamma, omega0, omega):
    """Lineshape factor 1 / (i (w0 - w) - gamma).

    ``gamma`` in fs^-1, frequencies in cm^-1; the result is in fs. This equals
    -int_0^inf exp(-i (w - w0) t - gamma t) dt.
    """
    gamma = np.asarray(gamma, dtype=complex)
    if np.any(gamma.real <= 0):
        raise BathError("coherence decay rate must have positive real part")
    detuning = CM_TO_RAD_FS * (np.asarray(omega0, dtype=float) - np.asarray(omega, dtype=float))
    return 1.0 / (1j * detuning - gamma)


BATH_KEYS = {"reorg_cm1": "reorg_energy", "cutoff_cm1": "cutoff", "temperature_K": "temperature"}


def bath_from_dict(data: dict | None, **overrides) -> BathSpec:
    """BathSpec from a model-file bath block; missing keys take the defaults."""
    data = dict(data or {})
    unknown = set(data) - set(BATH_KEYS)
    if unknown:
        raise BathError(f"unknown bath keys: {sorted(unknown)}")
    kwargs = {BATH_KEYS[k]: float(v) for k, v in data.items()}
    kwargs.update(overrides)
    return BathSpec(**kwargs)


def bath_to_dict(spec: BathSpec) -> dict:
    return {"reorg_cm1": spec.reorg_energy, "cutoff_cm1": spec.cutoff,
            "temperature_K": spec.temperature}
