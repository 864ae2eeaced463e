import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.linalg import expm

from pptomo.bath import (BathError, BathSpec, bath_correlation, bath_from_dict, bath_to_dict,
                         propagator_factor, redfield_rates, spectral_density)
from pptomo.constants import CM_TO_RAD_FS, K_B_CM
from pptomo.model import SiteModel, diagonalize, load_model_file, DATA_DIR

from conftest import random_dimer


def test_spectral_density_values():
    spec = BathSpec(30.0, 120.0, 273.0)
    assert spectral_density(spec, 120.0) == pytest.approx(30.0 / np.e, rel=1e-14)
    assert spectral_density(spec, 120.0) == pytest.approx(11.036, abs=5e-4)
    assert spectral_density(spec, 0.0) == 0.0
    with pytest.raises(BathError):
        spectral_density(spec, -1.0)


def test_correlation_zero_frequency_limit():
    spec = BathSpec(30.0, 120.0, 273.0)
    c0 = bath_correlation(spec, np.array([0.0]))[0]
    assert c0 == pytest.approx(2 * 30.0 * K_B_CM * 273.0 / 120.0)
    near = bath_correlation(spec, np.array([1e-6, -1e-6]))
    np.testing.assert_allclose(near, c0, rtol=1e-6)


@given(st.floats(1.0, 2000.0), st.floats(5.0, 400.0))
def test_correlation_detailed_balance(w, T):
    spec = BathSpec(35.0, 100.0, T)
    up, down = bath_correlation(spec, np.array([-w, w]))
    assert up == pytest.approx(down * np.exp(-w / spec.kT), rel=1e-9, abs=1e-300)


def test_uncoupled_dimer_has_no_transfer():
    b = diagonalize(SiteModel.dimer(12900.0, 12700.0, 0.0, delta=1.3, phi=0.2))
    r = redfield_rates(b, BathSpec())
    assert np.abs(r.pop_rates).max() == 0.0


def test_reference_dimer_golden_rates(dimer_basis):
    # frozen from an independent evaluation of the rate formulas (see below)
    r = redfield_rates(dimer_basis, BathSpec(30.0, 120.0, 273.0))
    beta, alpha = 0, 1
    assert r.pop_rates[alpha, beta] == pytest.approx(0.00673468803616817, rel=1e-12)
    assert r.pop_rates[beta, alpha] == pytest.approx(0.00146408182895417, rel=1e-12)
    assert r.coherence_gamma_01[alpha].real == pytest.approx(0.04022499258606416, rel=1e-12)
    assert r.coherence_gamma_01[beta].real == pytest.approx(0.03758968948245715, rel=1e-12)
    assert r.coherence_gamma_11[0, 1].real == pytest.approx(0.03924552725572333, rel=1e-12)


def test_reference_dimer_rates_independent_formula(dimer_basis):
    lam, wc, T = 30.0, 120.0, 273.0
    kT = K_B_CM * T
    th = 0.5 * np.arctan2(240.0, 162.0)
    gap = np.sqrt(162.0 ** 2 + 4 * 120.0 ** 2)
    J = lam / wc * gap * np.exp(-gap / wc)
    n = 1.0 / np.expm1(gap / kT)
    overlap = 2 * (np.cos(th) * np.sin(th)) ** 2
    k_down = 2 * np.pi * overlap * 2 * J * (1 + n) * CM_TO_RAD_FS
    k_up = 2 * np.pi * overlap * 2 * J * n * CM_TO_RAD_FS
    c0 = 2 * lam * kT / wc
    p_alpha = np.array([np.cos(th) ** 2, np.sin(th) ** 2])
    g_alpha = (0.5 * k_down + np.pi * c0 * np.sum(p_alpha ** 2) * CM_TO_RAD_FS)
    r = redfield_rates(dimer_basis, BathSpec(lam, wc, T))
    assert r.pop_rates[1, 0] == pytest.approx(k_down, rel=1e-12)
    assert r.pop_rates[0, 1] == pytest.approx(k_up, rel=1e-12)
    assert r.coherence_gamma_01[1].real == pytest.approx(g_alpha, rel=1e-12)


def _fmo():
    m, _ = load_model_file(DATA_DIR / "fmo7_example.json")
    return m


@given(st.integers(0, 1000), st.floats(10.0, 400.0))
def test_downhill_exceeds_uphill(seed, T):
    b = diagonalize(random_dimer(np.random.default_rng(seed)))
    r = redfield_rates(b, BathSpec(temperature=T))
    assert r.pop_rates[1, 0] >= r.pop_rates[0, 1]
    gap = b.one_exciton_energies[1] - b.one_exciton_energies[0]
    if r.pop_rates[1, 0] > 0:
        ratio = r.pop_rates[0, 1] / r.pop_rates[1, 0]
        assert ratio == pytest.approx(np.exp(-gap / (K_B_CM * T)), rel=1e-9)


def test_generator_rows_sum_to_zero():
    for b in (diagonalize(_fmo()), diagonalize(random_dimer(np.random.default_rng(1)))):
        G = redfield_rates(b, BathSpec()).generator()
        assert np.abs(G.sum(axis=1)).max() <= 1e-12 * np.abs(G).max()


def test_long_time_boltzmann():
    b = diagonalize(_fmo())
    spec = BathSpec(35.0, 106.0, 77.0)
    G = redfield_rates(b, spec).generator()
    kmin = np.abs(G[G != 0]).min()
    p0 = np.zeros(b.n)
    p0[-1] = 1.0
    p = expm(G.T * 200.0 / kmin) @ p0
    w = np.exp(-(b.one_exciton_energies - b.one_exciton_energies.min()) / spec.kT)
    np.testing.assert_allclose(p, w / w.sum(), atol=1e-6)


def test_optical_dephasing_bounds_population_leakage():
    for b in (diagonalize(_fmo()), diagonalize(random_dimer(np.random.default_rng(2)))):
        r = redfield_rates(b, BathSpec())
        leak = r.pop_rates.sum(axis=1)
        assert np.all(r.coherence_gamma_01.real >= 0.5 * leak - 1e-15)


def test_propagator_factor_examples():
    g = 0.005 + 0j
    assert propagator_factor(g, 12800.0, 12800.0) == pytest.approx(-1 / g)
    assert propagator_factor(0.005, 12800.0, 12800.0) == pytest.approx(-200.0)
    hw = 0.005 / CM_TO_RAD_FS
    peak = abs(propagator_factor(g, 12800.0, 12800.0)) ** 2
    for w in (12800.0 - hw, 12800.0 + hw):
        assert abs(propagator_factor(g, 12800.0, w)) ** 2 == pytest.approx(0.5 * peak)
    with pytest.raises(BathError):
        propagator_factor(0.0, 1.0, 1.0)


@given(st.floats(0.002, 0.05), st.floats(-300.0, 300.0))
def test_propagator_factor_matches_quadrature(gamma, detuning):
    w0, w = 12800.0, 12800.0 + detuning
    x = CM_TO_RAD_FS * (w - w0)
    re = quad(lambda t: np.exp(-gamma * t) * np.cos(x * t), 0, np.inf, limit=400)[0]
    im = quad(lambda t: -np.exp(-gamma * t) * np.sin(x * t), 0, np.inf, limit=400)[0]
    ref = -(re + 1j * im)
    assert abs(propagator_factor(gamma, w0, w) - ref) <= 1e-6 * abs(ref)


def test_bath_dict_round_trip():
    spec = BathSpec(35.0, 106.0, 77.0)
    assert bath_from_dict(bath_to_dict(spec)) == spec
    assert bath_from_dict(None) == BathSpec()
    with pytest.raises(BathError):
        bath_from_dict({"temperature": 3})
    with pytest.raises(BathError):
        BathSpec(temperature=-1.0)
