"""Excitonic aggregates: site Hamiltonians, exciton bases and ensembles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class ModelError(ValueError):
    """Raised for malformed aggregate definitions."""


@dataclass(frozen=True)
class SiteModel:
    """An n-pigment aggregate in the site basis.

    Parameters
    ----------
    energies : (n,) array
        Site transition energies in cm^-1.
    couplings : (n, n) array
        Symmetric off-diagonal couplings J_mn in cm^-1 (diagonal ignored).
    dipoles : (n, 3) array
        Site transition dipole vectors in a common molecular frame.
    disorder_sigma : float or (n,) array
        Gaussian static-disorder width per site, cm^-1.
    """

    energies: np.ndarray
    couplings: np.ndarray
    dipoles: np.ndarray
    disorder_sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        energies = np.atleast_1d(np.asarray(self.energies, dtype=float))
        n = energies.size
        if n < 1:
            raise ModelError("a model needs at least one site")
        couplings = np.asarray(self.couplings, dtype=float)
        if n == 1 and couplings.size in (0, 1):
            couplings = np.zeros((1, 1))
        if couplings.shape != (n, n):
            raise ModelError(f"couplings must be {n}x{n}, got {couplings.shape}")
        scale = max(np.abs(couplings).max(), 1.0)
        if np.abs(couplings - couplings.T).max() > 1e-12 * scale:
            raise ModelError("couplings matrix is not symmetric")
        couplings = couplings.copy()
        np.fill_diagonal(couplings, 0.0)
        dipoles = np.asarray(self.dipoles, dtype=float).reshape(n, 3)
        sigma = np.asarray(self.disorder_sigma, dtype=float)
        sigma = np.zeros(n) if sigma.size == 0 else np.broadcast_to(sigma, (n,)).copy()
        if np.any(sigma < 0):
            raise ModelError("disorder_sigma must be non-negative")
        if not (np.all(np.isfinite(energies)) and np.all(np.isfinite(couplings))
                and np.all(np.isfinite(dipoles))):
            raise ModelError("model contains non-finite values")
        for name, value in (("energies", energies), ("couplings", couplings),
                            ("dipoles", dipoles), ("disorder_sigma", sigma)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_sites(self) -> int:
        return self.energies.size

    @property
    def hamiltonian(self) -> np.ndarray:
        """One-exciton block of the site Hamiltonian, cm^-1."""
        return np.diag(self.energies) + self.couplings

    def with_energies(self, energies) -> "SiteModel":
        return replace(self, energies=np.asarray(energies, dtype=float))

    @classmethod
    def dimer(cls, e1, e2, coupling, delta=1.0, phi=0.0, disorder_sigma=0.0):
        """Two-site model with |d2|/|d1| = delta and angle phi between dipoles."""
        dipoles = np.array([[1.0, 0.0, 0.0],
                            [delta * np.cos(phi), delta * np.sin(phi), 0.0]])
        return cls(np.array([e1, e2]), np.array([[0.0, coupling], [coupling, 0.0]]),
                   dipoles, disorder_sigma)


@dataclass(frozen=True)
class ExcitonBasis:
    """Eigenbasis of a :class:`SiteModel` up to the two-exciton manifold.

    ``rotation[m, a]`` is the amplitude of site m in exciton a; one-exciton
    states are sorted by ascending energy. ``dipoles_g_to_1[a]`` is
    <g|mu^-|a> and ``dipoles_1_to_2[a, f]`` is <a|mu^-|f>.
    """

    one_exciton_energies: np.ndarray
    rotation: np.ndarray
    two_exciton_energies: np.ndarray
    two_exciton_rotation: np.ndarray
    pairs: tuple
    dipoles_g_to_1: np.ndarray
    dipoles_1_to_2: np.ndarray
    mixing_angle: Optional[float] = None

    @property
    def n(self) -> int:
        return self.one_exciton_energies.size

    @property
    def n2(self) -> int:
        return self.two_exciton_energies.size

    def site_occupation_1(self) -> np.ndarray:
        """<a|n_m|b> for one-exciton states, shape (n_sites, n, n)."""
        U = self.rotation
        return np.einsum("ma,mb->mab", U, U)

    def site_occupation_2(self) -> np.ndarray:
        """<f|n_m|f'> for two-exciton states, shape (n_sites, n2, n2)."""
        n = self.n
        W = self.two_exciton_rotation
        occ = np.zeros((n, len(self.pairs)))
        for p, (i, j) in enumerate(self.pairs):
            occ[i, p] = occ[j, p] = 1.0
        return np.einsum("pf,mp,pg->mfg", W, occ, W)


def _fix_columns(energies, vectors):
    """Sort ascending (ties by dominant site) and make dominant entries positive."""
    vectors = np.array(vectors, dtype=float, copy=True)
    if vectors.size == 0:
        return energies, vectors
    dominant = np.argmax(np.abs(vectors), axis=0)
    order = np.lexsort((dominant, energies))
    energies = energies[order]
    vectors = vectors[:, order]
    dominant = dominant[order]
    signs = np.sign(vectors[dominant, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return energies, vectors * signs


def mixing_angle(e1, e2, coupling) -> float:
    """Dimer mixing angle with tan(2 theta) = 2J / (E1 - E2).

    The branch is chosen so (cos theta, sin theta) is the upper exciton.
    """
    return 0.5 * np.arctan2(2.0 * coupling, e1 - e2)


def two_exciton_block(model: SiteModel):
    """Hard-core boson pair states |mn>, m<n, and their Hamiltonian block."""
    n = model.n_sites
    pairs = tuple(combinations(range(n), 2))
    index = {p: k for k, p in enumerate(pairs)}
    H2 = np.zeros((len(pairs), len(pairs)))
    E, J = model.energies, model.couplings
    for k, (m, l) in enumerate(pairs):
        H2[k, k] = E[m] + E[l]
        # hop one excitation: |m l> -> |m q> via J_lq, and |q l> via J_mq
        for fixed, moving in ((m, l), (l, m)):
            for q in range(n):
                if q in (m, l) or J[moving, q] == 0.0:
                    continue
                key = (min(fixed, q), max(fixed, q))
                H2[k, index[key]] += J[moving, q]
    return pairs, H2


def annihilation_1_from_2(n, pairs):
    """Matrices A_m with A_m[k, p] = <k|a_m|pair p>, shape (n, n, n_pairs)."""
    A = np.zeros((n, n, len(pairs)))
    for p, (i, j) in enumerate(pairs):
        A[i, j, p] = 1.0
        A[j, i, p] = 1.0
    return A


def diagonalize(model: SiteModel) -> ExcitonBasis:
    """Diagonalize the one- and two-exciton blocks of ``model``."""
    n = model.n_sites
    eps, U = np.linalg.eigh(model.hamiltonian)
    eps, U = _fix_columns(eps, U)
    pairs, H2 = two_exciton_block(model)
    if pairs:
        eps2, W = np.linalg.eigh(H2)
        eps2, W = _fix_columns(eps2, W)
    else:
        eps2, W = np.zeros(0), np.zeros((0, 0))
    d = model.dipoles
    mu_g1 = U.T @ d
    A = annihilation_1_from_2(n, pairs)
    # <a|mu^-|f> = sum_m d_m <a|a_m|f>
    mu_12 = np.einsum("ka,mkp,pf,mx->afx", U, A, W, d) if pairs else np.zeros((n, 0, 3))
    theta = None
    if n == 2:
        theta = float(mixing_angle(model.energies[0], model.energies[1],
                                   model.couplings[0, 1]))
    return ExcitonBasis(eps, U, eps2, W, pairs, mu_g1, mu_12, theta)


def _check_rotation(R):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ModelError("orientation must be a 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-10 or np.linalg.det(R) < 0:
        raise ModelError("orientation is not a proper rotation")
    return R


def lab_frame_dipoles(basis: ExcitonBasis, orientation) -> ExcitonBasis:
    """Rotate all exciton transition dipoles by the proper rotation ``orientation``."""
    R = _check_rotation(orientation)
    return replace(basis, dipoles_g_to_1=basis.dipoles_g_to_1 @ R.T,
                   dipoles_1_to_2=basis.dipoles_1_to_2 @ R.T)


def rotate_model(model: SiteModel, orientation) -> SiteModel:
    R = _check_rotation(orientation)
    return replace(model, dipoles=model.dipoles @ R.T)


# --- ensembles ---------------------------------------------------------------

@dataclass(frozen=True)
class Uncertainty:
    """Hamiltonian uncertainty: additive site noise and relative coupling noise."""

    site_sigma: float = 20.0
    coupling_relative_sigma: float = 0.10


@dataclass(frozen=True)
class EnsembleSpec:
    n_samples: int = 1
    seed: int = 0
    orientation_mode: str = "isotropic-xyz-average"
    uncertainty: Optional[Uncertainty] = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ModelError("n_samples must be >= 1")
        if self.orientation_mode not in ("fixed-frame", "isotropic-xyz-average"):
            raise ModelError(f"unknown orientation_mode {self.orientation_mode!r}")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index``; serial and parallel draws agree."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def perturb_hamiltonian(model: SiteModel, uncertainty: Uncertainty,
                        rng: np.random.Generator) -> SiteModel:
    """One draw of Hamiltonian uncertainty (site energies and couplings)."""
    n = model.n_sites
    energies = model.energies + uncertainty.site_sigma * rng.standard_normal(n)
    iu = np.triu_indices(n, 1)
    J = model.couplings.copy()
    noise = rng.standard_normal(iu[0].size)
    J[iu] += uncertainty.coupling_relative_sigma * np.abs(J[iu]) * noise
    J[(iu[1], iu[0])] = J[iu]
    return replace(model, energies=energies, couplings=J)


def sample_arrays(model: SiteModel, spec: EnsembleSpec):
    """Vectorized ensemble: site energies (N, n) and couplings (N, n, n)."""
    n = model.n_sites
    N = spec.n_samples
    energies = np.empty((N, n))
    couplings = np.broadcast_to(model.couplings, (N, n, n)).copy()
    iu = np.triu_indices(n, 1)
    for s in range(N):
        rng = sample_rng(spec.seed, s)
        e = model.energies + model.disorder_sigma * rng.standard_normal(n)
        if spec.uncertainty is not None:
            u = spec.uncertainty
            e = e + u.site_sigma * rng.standard_normal(n)
            noise = rng.standard_normal(iu[0].size)
            J = couplings[s]
            J[iu] += u.coupling_relative_sigma * np.abs(model.couplings[iu]) * noise
            J[(iu[1], iu[0])] = J[iu]
        energies[s] = e
    return energies, couplings


def sample_ensemble(model: SiteModel, spec: EnsembleSpec) -> list:
    """``spec.n_samples`` perturbed copies of ``model`` (static disorder + uncertainty)."""
    energies, couplings = sample_arrays(model, spec)
    return [replace(model, energies=e, couplings=J) for e, J in zip(energies, couplings)]


# --- files -------------------------------------------------------------------

MODEL_KEYS = {"energies_cm1", "couplings_cm1", "dipoles", "disorder_sigma_cm1"}
OPTIONAL_KEYS = {"bath", "description", "name"}


def model_from_dict(data: dict) -> SiteModel:
    unknown = set(data) - MODEL_KEYS - OPTIONAL_KEYS
    if unknown:
        raise ModelError(f"unknown model keys: {sorted(unknown)}")
    missing = MODEL_KEYS - set(data)
    if missing:
        raise ModelError(f"missing model keys: {sorted(missing)}")
    if any(v is None for k, v in data.items() if k in MODEL_KEYS):
        raise ModelError("model template has unfilled values")
    return SiteModel(np.asarray(data["energies_cm1"], dtype=float),
                     np.asarray(data["couplings_cm1"], dtype=float),
                     np.asarray(data["dipoles"], dtype=float),
                     np.asarray(data["disorder_sigma_cm1"], dtype=float))


def model_to_dict(model: SiteModel) -> dict:
    sigma = model.disorder_sigma
    return {
        "energies_cm1": model.energies.tolist(),
        "couplings_cm1": model.couplings.tolist(),
        "dipoles": model.dipoles.tolist(),
        "disorder_sigma_cm1": float(sigma[0]) if np.all(sigma == sigma[0]) else sigma.tolist(),
    }


def load_model_file(path):
    """Read a model file; returns ``(SiteModel, raw dict)``."""
    with open(path) as fh:
        data = json.load(fh)
    return model_from_dict(data), data


DATA_DIR = Path(__file__).parent / "data"


def reference_dimer(disorder_sigma: float = 40.0) -> SiteModel:
    """The benchmark heterodimer: E1=12881, E2=12719, J=120 cm^-1, delta=2, phi=0.3."""
    return SiteModel.dimer(12881.0, 12719.0, 120.0, delta=2.0, phi=0.3,
                           disorder_sigma=disorder_sigma)


def orientation_frames(mode: str, polarization: Sequence[float] = (1.0, 0.0, 0.0)):
    """Pump polarization unit vectors for an orientation mode."""
    if mode == "isotropic-xyz-average":
        return np.eye(3)
    p = np.asarray(polarization, dtype=float)
    return (p / np.linalg.norm(p))[None, :]
