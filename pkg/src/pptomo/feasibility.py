"""Feasibility of density-matrix recovery for larger aggregates.

The global pump-probe map sends the n^2 real state coefficients to the
concatenated real and imaginary parts of the response on a dense frequency
grid, for every measured polarization configuration. Its singular values
tell how well each direction in state space is constrained by the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bath import BathSpec, redfield_rates
from .constants import CM_TO_RAD_FS
from .model import (EnsembleSpec, SiteModel, Uncertainty, diagonalize, perturb_hamiltonian,
                    sample_ensemble, sample_rng)
from .response import (ALL_PAIRS, ISOTROPIC_PAIRS, PAIR_LABELS, RESPONSE_PREFACTOR,
                       LiouvilleBasis, complex_basis_response)


class ScenarioError(ValueError):
    pass


SAMPLE_TYPES = ("single-complex", "disorder-ensemble")
POLARIZATION_SETS = ("isotropic", "all")
CHANNEL_SETS = ("absorptive", "absorptive+dispersive")


@dataclass(frozen=True)
class Scenario:
    """Experimental setting for the map: temperature, sample, polarizations, channels."""

    label: str = "scenario"
    temperature: float = 77.0
    sample_type: str = "single-complex"
    polarization_set: str = "all"
    channels: str = "absorptive+dispersive"

    def __post_init__(self):
        if self.sample_type not in SAMPLE_TYPES:
            raise ScenarioError(f"sample_type must be one of {SAMPLE_TYPES}")
        if self.polarization_set not in POLARIZATION_SETS:
            raise ScenarioError(f"polarization_set must be one of {POLARIZATION_SETS}")
        if self.channels not in CHANNEL_SETS:
            raise ScenarioError(f"channels must be one of {CHANNEL_SETS}")
        if not self.temperature > 0:
            raise ScenarioError("temperature must be positive")


def cumulative_scenarios() -> list:
    """Scenarios from the most to the least informative, each adding one restriction."""
    steps = [
        Scenario("single complex, 77 K, all polarizations"),
        Scenario("+ static disorder", 77.0, "disorder-ensemble"),
        Scenario("+ 300 K", 300.0, "disorder-ensemble"),
        Scenario("+ isotropic sample", 300.0, "disorder-ensemble", "isotropic"),
        Scenario("+ absorptive only", 300.0, "disorder-ensemble", "isotropic", "absorptive"),
    ]
    return steps


@dataclass
class PumpProbeMap:
    scenario: Scenario
    basis: LiouvilleBasis
    grid: np.ndarray
    matrix: np.ndarray
    singular_values: np.ndarray = field(default=None)
    config_labels: tuple = ()

    def __post_init__(self):
        if self.singular_values is None:
            s = np.linalg.svd(self.matrix, compute_uv=False) if self.matrix.size else np.zeros(0)
            self.singular_values = s


def homogeneous_widths(model: SiteModel, bath: BathSpec) -> np.ndarray:
    """Decay rates of the ground-to-exciton coherences in cm^-1."""
    basis = diagonalize(model)
    return redfield_rates(basis, bath).coherence_gamma_01.real / CM_TO_RAD_FS


def default_grid(model: SiteModel, bath: BathSpec, span=5.0, per_width=4.0) -> np.ndarray:
    """Exciton energies +- ``span`` widths, sampled at (narrowest width) / ``per_width``."""
    eps = diagonalize(model).one_exciton_energies
    g = homogeneous_widths(model, bath)
    step = g.min() / per_width
    lo, hi = eps.min() - span * g.max(), eps.max() + span * g.max()
    return np.arange(lo, hi + 0.5 * step, step)


def _configs(scenario: Scenario):
    if scenario.polarization_set == "all":
        return ALL_PAIRS, tuple(PAIR_LABELS)
    return ISOTROPIC_PAIRS, ("iso",)


def species_responses(model: SiteModel, bath: BathSpec, scenario: Scenario, grid,
                      n_samples=1000, seed=0) -> np.ndarray:
    """Physical responses of each Liouville basis element, shape (configs, W, n^2).

    Isotropic scenarios average xx, yy and zz into a single configuration.
    Ensemble scenarios average over static-disorder draws, each member in
    its own exciton basis.
    """
    bath = replace(bath, temperature=scenario.temperature)
    pol, _ = _configs(scenario)
    if scenario.sample_type == "disorder-ensemble":
        models = sample_ensemble(model, EnsembleSpec(n_samples, seed))
    else:
        models = [replace(model, disorder_sigma=np.zeros(model.n_sites))]
    acc = None
    for m in models:
        b = diagonalize(m)
        Q = complex_basis_response(b, redfield_rates(b, bath), grid, pol, average=False)
        acc = Q if acc is None else acc + Q
    acc = acc / len(models)
    if scenario.polarization_set == "isotropic":
        acc = acc.mean(axis=0, keepdims=True)
    lb = LiouvilleBasis(model.n_sites)
    return RESPONSE_PREFACTOR * lb.project(acc)


def build_map(model: SiteModel, bath: BathSpec, scenario: Scenario, grid=None,
              n_samples=1000, seed=0) -> PumpProbeMap:
    """Real map from Liouville coefficients to stacked spectra for ``scenario``.

    Rows are ordered by polarization configuration, then channel (absorptive
    Im R, dispersive Re R), then frequency.
    """
    grid = default_grid(model, bath) if grid is None else np.asarray(grid, dtype=float)
    R = species_responses(model, bath, scenario, grid, n_samples, seed)
    blocks = []
    for q in range(R.shape[0]):
        blocks.append(R[q].imag)
        if scenario.channels == "absorptive+dispersive":
            blocks.append(R[q].real)
    M = np.concatenate(blocks, axis=0)
    if not np.all(np.isfinite(M)):
        raise ScenarioError("map contains non-finite rows")
    return PumpProbeMap(scenario, LiouvilleBasis(model.n_sites), grid, M,
                        config_labels=_configs(scenario)[1])


def singular_spectrum(pmap) -> tuple:
    """Normalized singular values sigma_i / sigma_1 and the condition number.

    The condition number is +inf when the map loses rank numerically.
    """
    M = pmap.matrix if isinstance(pmap, PumpProbeMap) else np.atleast_2d(pmap)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros_like(s), np.inf
    tol = max(M.shape) * np.finfo(float).eps * s[0]
    n_cols = M.shape[1]
    if s.size < n_cols or s[-1] <= tol:
        cond = np.inf
    else:
        cond = float(s[0] / s[-1])
    return s / s[0], cond


def species_amplitude_matrix(species, n=None, channel="absorptive") -> np.ndarray:
    """Maximum over frequency of |species spectrum| arranged as an n x n matrix.

    ``species`` holds the physical responses (W, n^2) of one configuration
    (or a :class:`PumpProbeMap`-compatible array). Entry (a, a) is the
    population |a><a|; for a < b, entry (a, b) is the real coherence element
    and entry (b, a) the imaginary one. ``channel`` selects the absorptive
    (Im R), dispersive (Re R) or full complex magnitude.
    """
    R = np.asarray(species)
    K = R.shape[-1]
    n = int(round(np.sqrt(K))) if n is None else n
    if n * n != K:
        raise ScenarioError("species count is not a square")
    if channel == "absorptive":
        amp = np.abs(R.imag).max(axis=0)
    elif channel == "dispersive":
        amp = np.abs(R.real).max(axis=0)
    elif channel == "complex":
        amp = np.abs(R).max(axis=0)
    else:
        raise ScenarioError(f"unknown channel {channel!r}")
    out = np.zeros((n, n))
    out[np.arange(n), np.arange(n)] = amp[:n]
    k = n
    for a, b in LiouvilleBasis(n).index_pairs():
        out[a, b] = amp[k]
        out[b, a] = amp[k + 1]
        k += 2
    return out


def is_diagonally_dominant(M) -> bool:
    """Each diagonal entry exceeds every off-diagonal entry in its row and column."""
    M = np.asarray(M)
    d = np.diag(M)
    off = M - np.diag(d)
    return bool(np.all(d > off.max(axis=1)) and np.all(d > off.max(axis=0)))


@dataclass
class SpeciesBands:
    grid: np.ndarray
    labels: tuple
    nominal: np.ndarray  # (W, n^2) complex
    lower: np.ndarray
    upper: np.ndarray  # complex; real and imaginary parts banded separately


def uncertainty_bands(model: SiteModel, bath: BathSpec, scenario: Scenario,
                      uncertainty: Optional[Uncertainty] = None, n_draws=1000, grid=None,
                      seed=0, n_disorder=100, percentiles=(2.5, 97.5)) -> SpeciesBands:
    """Percentile envelopes of the species spectra under Hamiltonian uncertainty.

    Each draw perturbs the site energies and couplings and rebuilds the
    species spectra (first polarization configuration); static disorder
    keeps its nominal magnitude.
    """
    uncertainty = Uncertainty() if uncertainty is None else uncertainty
    grid = default_grid(model, bath) if grid is None else np.asarray(grid, dtype=float)
    nominal = species_responses(model, bath, scenario, grid, n_disorder, seed)[0]
    draws = np.empty((n_draws,) + nominal.shape, complex)
    for k in range(n_draws):
        m = perturb_hamiltonian(model, uncertainty, sample_rng(seed + 1, k))
        draws[k] = species_responses(m, bath, scenario, grid, n_disorder, seed)[0]
    lo_re, hi_re = np.percentile(draws.real, percentiles, axis=0)
    lo_im, hi_im = np.percentile(draws.imag, percentiles, axis=0)
    labels = tuple(LiouvilleBasis(model.n_sites).labels)
    return SpeciesBands(grid, labels, nominal, lo_re + 1j * lo_im, hi_re + 1j * hi_im)
