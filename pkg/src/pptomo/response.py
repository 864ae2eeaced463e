"""Pump-probe response operator, species spectra and the dimer closed forms.

Rows of a :class:`PumpProbeOperator` are stored in the lineshape form, built
from factors f = 1 / (i (w0 - w) - gamma). The physical response of a state is
``RESPONSE_PREFACTOR * rows @ coeffs``; with this choice the imaginary part of
R_PP is absorptive and a ground-state bleach is negative-going.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import pathways
from .bath import RedfieldRates, propagator_factor
from .model import ExcitonBasis

RESPONSE_PREFACTOR = -1j

XYZ = np.eye(3)
ISOTROPIC_PAIRS = np.stack([np.stack([e, e]) for e in XYZ])  # xx, yy, zz
ALL_PAIRS = np.stack([np.stack([p, s]) for p in XYZ for s in XYZ])  # 9 configurations
PAIR_LABELS = [p + s for p in "xyz" for s in "xyz"]


class ResponseError(ValueError):
    pass


@dataclass(frozen=True)
class LiouvilleBasis:
    """Real parametrization of Hermitian n x n matrices.

    Elements are |a><a| for each a, then for a < b the pair
    |a><b| + |b><a| and i|a><b| - i|b><a|. The coefficients of a state are
    its populations followed by (Re rho_ab, Im rho_ab) pairs.
    """

    n: int

    @property
    def size(self) -> int:
        return self.n * self.n

    def index_pairs(self):
        return [(a, b) for a in range(self.n) for b in range(a + 1, self.n)]

    @property
    def labels(self) -> list:
        labels = [f"{a + 1}{a + 1}" for a in range(self.n)]
        for a, b in self.index_pairs():
            labels += [f"Re{a + 1}{b + 1}", f"Im{a + 1}{b + 1}"]
        return labels

    @property
    def elements(self) -> np.ndarray:
        n = self.n
        out = np.zeros((self.size, n, n), complex)
        for a in range(n):
            out[a, a, a] = 1.0
        k = n
        for a, b in self.index_pairs():
            out[k, a, b] = out[k, b, a] = 1.0
            out[k + 1, a, b] = 1j
            out[k + 1, b, a] = -1j
            k += 2
        return out

    def coefficients(self, rho) -> np.ndarray:
        """Coefficients of Hermitian ``rho`` (..., n, n) in this basis."""
        rho = np.asarray(rho)
        n = self.n
        idx = np.arange(n)
        parts = [rho[..., idx, idx].real]
        pairs = self.index_pairs()
        if pairs:
            a, b = np.array(pairs).T
            off = rho[..., a, b]
            parts.append(np.stack([off.real, off.imag], axis=-1).reshape(*off.shape[:-1], -1))
        return np.concatenate(parts, axis=-1)

    def matrix(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs)
        return np.tensordot(coeffs, self.elements, axes=(-1, 0))

    def project(self, Q) -> np.ndarray:
        """Map a complex-basis response Q[..., a, b, w] to rows (..., w, n^2)."""
        n = self.n
        idx = np.arange(n)
        cols = [Q[..., idx, idx, :]]
        pairs = self.index_pairs()
        if pairs:
            a, b = np.array(pairs).T
            qab, qba = Q[..., a, b, :], Q[..., b, a, :]
            cols.append(np.stack([qab + qba, 1j * (qab - qba)], axis=-2)
                        .reshape(*qab.shape[:-2], -1, qab.shape[-1]))
        return np.swapaxes(np.concatenate(cols, axis=-2), -1, -2)


# Pauli matrices in the (alpha, beta) = (upper, lower) exciton order.
PAULI = np.array([[[1, 0], [0, 1]],
                  [[0, 1], [1, 0]],
                  [[0, -1j], [1j, 0]],
                  [[1, 0], [0, -1]]], dtype=complex)
# One-exciton states are stored in ascending energy, so alpha is index 1.
_SWAP = np.array([[0, 1], [1, 0]])
PAULI_ASCENDING = np.einsum("ij,kjl,lm->kim", _SWAP, PAULI, _SWAP)


@dataclass(frozen=True)
class BlochState:
    """Unnormalized dimer excited state rho_e = (r . sigma) / 2 in the (alpha, beta) basis."""

    r0: float
    r1: float
    r2: float
    r3: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.r0, self.r1, self.r2, self.r3])

    @property
    def normalized(self) -> np.ndarray:
        return self.vector[1:] / self.r0

    def density(self) -> np.ndarray:
        """2x2 matrix in ascending-energy exciton order."""
        return 0.5 * np.tensordot(self.vector, PAULI_ASCENDING, axes=1)

    def is_physical(self, rtol=1e-6) -> bool:
        return self.r0 > 0 and np.sum(self.vector[1:] ** 2) <= self.r0 ** 2 * (1 + rtol)


def bloch_vector(rho) -> np.ndarray:
    """r_k = tr(sigma_k rho) for dimer states in ascending order, shape (..., 4)."""
    rho = np.asarray(rho)
    return np.einsum("kab,...ba->...k", PAULI_ASCENDING, rho).real


@dataclass(frozen=True)
class PumpProbeOperator:
    """Rows <<P(w)| sampled on ``grid`` (cm^-1).

    ``representation`` is ``"liouville"`` (columns follow :class:`LiouvilleBasis`)
    or ``"bloch"`` (columns r0..r3, each the response to sigma_k).
    """

    grid: np.ndarray
    rows: np.ndarray
    representation: str = "liouville"
    labels: tuple = ()

    def response(self, state) -> np.ndarray:
        """Physical R_PP(w) of a state given as coefficients (..., K).

        For the Bloch representation the state is the vector r and rho = r.sigma/2.
        """
        state = np.asarray(state)
        scale = 0.5 if self.representation == "bloch" else 1.0
        return RESPONSE_PREFACTOR * scale * np.tensordot(state, self.rows, axes=([-1], [-1]))

    def __add__(self, other):
        _check_grids([self, other])
        return PumpProbeOperator(self.grid, self.rows + other.rows, self.representation, self.labels)

    def scaled(self, c):
        return PumpProbeOperator(self.grid, c * self.rows, self.representation, self.labels)


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ResponseError("frequency grid must be strictly increasing")
    return grid


def _check_grids(ops):
    g0 = ops[0].grid
    for op in ops[1:]:
        if op.grid.shape != g0.shape or not np.allclose(op.grid, g0, rtol=0, atol=1e-9):
            raise ResponseError("operators live on different frequency grids")


def lineshape_factors(basis: ExcitonBasis, rates: RedfieldRates, grid):
    """F[a, w] for |a><g| and Fp[b, f, w] for |f><b| coherences."""
    grid = np.asarray(grid, dtype=float)
    F = propagator_factor(rates.coherence_gamma_01[:, None],
                          basis.one_exciton_energies[:, None], grid[None, :])
    w_fb = basis.two_exciton_energies[None, :] - basis.one_exciton_energies[:, None]
    Fp = propagator_factor(rates.coherence_gamma_12[:, :, None], w_fb[:, :, None],
                           grid[None, None, :])
    return F, Fp


def polarization_pairs(polarization) -> np.ndarray:
    """Normalize a polarization spec to an array (Q, 2, 3) of (probe, signal) pairs."""
    if isinstance(polarization, str):
        if polarization in ("iso", "isotropic", "magic"):
            return ISOTROPIC_PAIRS
        if polarization == "all":
            return ALL_PAIRS
        if len(polarization) == 2 and set(polarization) <= set("xyz"):
            return np.stack([XYZ["xyz".index(polarization[0])],
                             XYZ["xyz".index(polarization[1])]])[None]
        raise ResponseError(f"unknown polarization {polarization!r}")
    pol = np.asarray(polarization, dtype=float)
    if pol.shape == (3,):
        pol = np.stack([pol, pol])[None]
    elif pol.shape == (2, 3):
        pol = pol[None]
    if pol.ndim != 3 or pol.shape[1:] != (2, 3):
        raise ResponseError("polarization must be (3,), (2, 3) or (Q, 2, 3)")
    return pol


def complex_basis_response(basis, rates, grid, polarization="iso", average=True):
    """Q[..., a, b, w]: lineshape-form response to |a><b|.

    With ``average`` the polarization configurations are averaged (magic
    angle when the configurations are xx, yy, zz).
    """
    grid = _check_grid(grid)
    F, Fp = lineshape_factors(basis, rates, grid)
    pol = polarization_pairs(polarization)
    Q = pathways(basis.dipoles_g_to_1, basis.dipoles_1_to_2, F, Fp, pol)
    return Q.mean(axis=0) if average else Q


def build_operator(basis: ExcitonBasis, rates: RedfieldRates, grid,
                   polarization="iso", representation="liouville") -> PumpProbeOperator:
    """Pump-probe operator from the double-sided pathways of mu^- G V^+ rho.

    Includes excited-state absorption, stimulated emission and the
    ground-state bleach implied by tr(rho_PP) = 0.
    """
    grid = _check_grid(grid)
    Q = complex_basis_response(basis, rates, grid, polarization)
    return operator_from_complex(Q, grid, representation)


def operator_from_complex(Q, grid, representation="liouville") -> PumpProbeOperator:
    n = Q.shape[-2]
    if representation == "bloch":
        if n != 2:
            raise ResponseError("Bloch representation needs a dimer")
        rows = np.einsum("kab,...abw->...wk", PAULI_ASCENDING, Q)
        return PumpProbeOperator(np.asarray(grid, float), rows, "bloch", ("r0", "r1", "r2", "r3"))
    lb = LiouvilleBasis(n)
    return PumpProbeOperator(np.asarray(grid, float), lb.project(Q), "liouville", tuple(lb.labels))


# --- dimer closed forms -------------------------------------------------------

def dimer_f_factors(basis: ExcitonBasis, rates: RedfieldRates, grid):
    """f_alpha, f_beta, f'_alpha, f'_beta on ``grid`` (alpha = upper exciton)."""
    if basis.n != 2:
        raise ResponseError("dimer_f_factors needs n = 2")
    F, Fp = lineshape_factors(basis, rates, grid)
    beta, alpha = 0, 1
    # f'_alpha peaks at w_f - w_beta = w_alpha
    return {"f_a": F[alpha], "f_b": F[beta], "fp_a": Fp[beta, 0], "fp_b": Fp[alpha, 0]}


def dimer_exciton_dipoles(theta, d1, d2):
    c, s = np.cos(theta), np.sin(theta)
    return {"ga": d1 * c + d2 * s, "gb": -d1 * s + d2 * c,
            "af": d1 * s + d2 * c, "bf": d1 * c - d2 * s}


def dimer_covector(mu, f):
    """Bloch-component covector of a dimer for projected exciton dipoles ``mu``."""
    ga, gb, af, bf = mu["ga"], mu["gb"], mu["af"], mu["bf"]
    fa, fb, pa, pb = f["f_a"], f["f_b"], f["fp_a"], f["fp_b"]
    r0 = -3 * ga ** 2 * fa + bf ** 2 * pa - 3 * gb ** 2 * fb + af ** 2 * pb
    r1 = -ga * gb * (fa + fb) + af * bf * (pa + pb)
    r2 = 1j * (ga * gb * (fa - fb) - af * bf * (pa - pb))
    r3 = -ga ** 2 * fa - bf ** 2 * pa + gb ** 2 * fb + af ** 2 * pb
    return np.stack([r0, r1, r2, r3], axis=-1)


def dimer_projector_analytic(basis: ExcitonBasis, rates: RedfieldRates, grid,
                             polarization=(1.0, 0.0, 0.0), site_dipoles=None) -> PumpProbeOperator:
    """Closed-form dimer covector for one lab polarization (probe = signal).

    ``site_dipoles`` are the lab-frame site dipoles; by default they are
    recovered from the exciton dipoles.
    """
    if basis.n != 2 or basis.mixing_angle is None:
        raise ResponseError("dimer_projector_analytic needs n = 2")
    grid = _check_grid(grid)
    e = np.asarray(polarization, dtype=float)
    theta = basis.mixing_angle
    if site_dipoles is None:
        # site dipoles from mu_g1 = U^T d
        site_dipoles = basis.rotation @ basis.dipoles_g_to_1
    d1, d2 = np.asarray(site_dipoles) @ e
    mu = dimer_exciton_dipoles(theta, d1, d2)
    rows = dimer_covector(mu, dimer_f_factors(basis, rates, grid))
    # the closed form uses alpha = (c, s), beta = (-s, c); when the basis columns
    # carry the opposite relative sign, the coherence components flip
    c, s = np.cos(theta), np.sin(theta)
    sign = np.sign(basis.rotation[:, 1] @ [c, s]) * np.sign(basis.rotation[:, 0] @ [-s, c])
    rows[:, 1:3] *= sign
    return PumpProbeOperator(grid, rows, "bloch", ("r0", "r1", "r2", "r3"))


def dimer_projector_isotropic(theta, delta, phi, f, grid=None, d1_norm=1.0) -> PumpProbeOperator:
    """Exact isotropic average of the dimer covector.

    Equal to the mean of the xx, yy and zz configurations, hence the overall
    factor 1/3 relative to the bare trigonometric form.
    """
    fa, fb, pa, pb = (np.asarray(f[k]) for k in ("f_a", "f_b", "fp_a", "fp_b"))
    c2, s2 = np.cos(theta) ** 2, np.sin(theta) ** 2
    sin2, cos2 = np.sin(2 * theta), np.cos(2 * theta)
    A = c2 + delta ** 2 * s2
    B = s2 + delta ** 2 * c2
    x = delta * np.cos(phi)
    h = 0.5 * (delta ** 2 - 1) * sin2
    r0 = A * (pa - 3 * fa) + B * (pb - 3 * fb) + x * sin2 * (-pa + pb - 3 * fa + 3 * fb)
    r1 = -h * (pa + pb + fa + fb) + x * cos2 * (pa + pb - fa - fb)
    r2 = 1j * (h * (pa - pb + fa - fb) + x * cos2 * (-pa + pb + fa - fb))
    r3 = -A * (pa + fa) + B * (pb + fb) + x * sin2 * (pa + pb - fa - fb)
    rows = d1_norm ** 2 / 3.0 * np.stack([r0, r1, r2, r3], axis=-1)
    grid = np.arange(rows.shape[0], dtype=float) if grid is None else np.asarray(grid, float)
    return PumpProbeOperator(grid, rows, "bloch", ("r0", "r1", "r2", "r3"))


def magic_angle_average(items: Sequence):
    """Mean of the xx, yy, zz results (operators or arrays)."""
    items = list(items)
    if not items:
        raise ResponseError("nothing to average")
    if isinstance(items[0], PumpProbeOperator):
        _check_grids(items)
        rows = np.mean([op.rows for op in items], axis=0)
        return PumpProbeOperator(items[0].grid, rows, items[0].representation, items[0].labels)
    arrays = [np.asarray(x) for x in items]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ResponseError("mismatched shapes in magic-angle average")
    return np.mean(arrays, axis=0)


def species_spectra(op: PumpProbeOperator) -> dict:
    """Absorptive (real) and dispersive (imaginary) species-associated spectra.

    Returns ``{label: (re, im)}`` with arrays over ``op.grid``.
    """
    labels = op.labels or tuple(str(k) for k in range(op.rows.shape[-1]))
    return {lab: (op.rows[..., k].real, op.rows[..., k].imag) for k, lab in enumerate(labels)}


def ensemble_operator(bases, rates_list, grid, polarization="iso",
                      representation="liouville") -> PumpProbeOperator:
    """Arithmetic mean of per-member operators (each in its own exciton basis)."""
    grid = _check_grid(grid)
    acc = None
    for basis, rates in zip(bases, rates_list):
        Q = complex_basis_response(basis, rates, grid, polarization, average=False)
        acc = Q if acc is None else acc + Q
    acc /= len(bases)
    pol = polarization_pairs(polarization)
    if pol.shape[0] > 1 and polarization not in ("all",) and not _is_all(pol):
        acc = acc.mean(axis=0)
    elif pol.shape[0] == 1:
        acc = acc[0]
    return operator_from_complex(acc, grid, representation)


def _is_all(pol):
    return pol.shape == ALL_PAIRS.shape and np.allclose(pol, ALL_PAIRS)
