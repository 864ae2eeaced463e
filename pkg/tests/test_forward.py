import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pptomo.bath import BathSpec, redfield_rates
from pptomo.forward import (Experiment, ExperimentGrid, Pulse, ResponseSurface, SignalSurface,
                            SimulationError, add_detection_noise, complex_noise,
                            ensemble_members, ensemble_response, heterodyne, overlap_warning,
                            photon_echo_second_order, polarization, pump_second_order,
                            pump_second_order_ensemble, simulate_experiment, truth_delays)
from pptomo.model import EnsembleSpec, diagonalize, load_model_file, reference_dimer, DATA_DIR
from pptomo.response import RESPONSE_PREFACTOR, build_operator, complex_basis_response

from conftest import random_dimer

FREQS = np.linspace(12500.0, 13100.0, 61)
TIMES = np.array([-30.3, 0.0, 60.0, 100.0, 300.0, 800.0])


def test_pulse_validation():
    with pytest.raises(SimulationError):
        Pulse(fwhm=0.0)
    with pytest.raises(SimulationError):
        Pulse(40.0, 12800.0, 1.0, times=np.arange(5.0))
    with pytest.raises(SimulationError):
        Pulse(40.0, 12800.0, 1.0, np.array([0.0, 1.0]), np.zeros(2))


def test_tabulated_pulse_normalized_to_amplitude():
    t = np.linspace(-100, 100, 201)
    p = Pulse(40.0, 12800.0, 2.5, t, 7.0 * np.exp(-t ** 2 / 900.0))
    assert np.abs(p.samples).max() == pytest.approx(2.5)


def test_gaussian_fwhm_is_field_fwhm():
    p = Pulse(40.0)
    assert abs(p.envelope(20.0)) == pytest.approx(0.5)


def test_tabulated_spectrum_matches_gaussian():
    g = Pulse(40.0, 12800.0)
    t = np.linspace(-200, 200, 2001)
    tab = Pulse(40.0, 12800.0, 1.0, t, g.envelope(t))
    w = np.linspace(12500, 13100, 31)
    assert np.allclose(tab.spectrum(w), g.spectrum(w), rtol=1e-9, atol=1e-9 * abs(g.spectrum(12800.)))


def test_grid_validation():
    with pytest.raises(SimulationError):
        ExperimentGrid(np.array([1.0, 1.0]), np.array([1.0, 2.0]))
    g = ExperimentGrid.default()
    assert g.probe_freqs.size == 181 and g.delays.size == 140
    assert np.diff(g.probe_freqs)[0] == pytest.approx(3.333333, rel=1e-6)
    assert g.delays[0] == 50.0 and g.delays[-1] == 1000.0


# --- second-order density matrix ------------------------------------------------

def test_zero_pump_gives_zero(dimer_basis, dimer_rates):
    rho, ground = pump_second_order(dimer_basis, dimer_rates, Pulse(amplitude=0.0), TIMES, 12800.0)
    assert np.all(rho == 0) and np.all(ground == 0)


def test_trace_zero_with_ground_block(dimer_basis, dimer_rates):
    rho, ground = pump_second_order(dimer_basis, dimer_rates, Pulse(), TIMES, 12800.0)
    tr = np.trace(rho, axis1=1, axis2=2)
    assert np.abs(tr + ground).max() <= 1e-12 * np.abs(rho).max()
    assert np.all(ground[1:] < 0)


def test_hermitian_and_psd(dimer_basis, dimer_rates):
    rho, _ = pump_second_order(dimer_basis, dimer_rates, Pulse(), TIMES, 12800.0)
    assert np.allclose(rho, rho.conj().transpose(0, 2, 1), atol=1e-12 * np.abs(rho).max())
    for r in rho:
        assert np.linalg.eigvalsh(r).min() >= -1e-10 * max(np.abs(r).max(), 1e-300)


@given(seed=st.integers(0, 2 ** 31 - 1), fwhm=st.floats(10.0, 80.0),
       detuning=st.floats(-200.0, 200.0), temperature=st.floats(20.0, 350.0),
       chirp=st.floats(-1e-3, 1e-3))
def test_positivity_property(seed, fwhm, detuning, temperature, chirp):
    rng = np.random.default_rng(seed)
    b = diagonalize(random_dimer(rng))
    r = redfield_rates(b, BathSpec(temperature=temperature))
    t = np.linspace(-4 * fwhm, 4 * fwhm, 401)
    pump = Pulse(fwhm, 12800.0 + detuning, 1.0, t,
                 np.exp(-4 * np.log(2) * t ** 2 / fwhm ** 2 + 1j * chirp * t ** 2))
    times = np.sort(rng.uniform(-fwhm, 1500.0, 8))
    rho, ground = pump_second_order(b, r, pump, times, 12800.0)
    scale = np.abs(rho).max()
    assert np.abs(np.trace(rho, axis1=1, axis2=2) + ground).max() <= 1e-12 * scale
    assert min(np.linalg.eigvalsh(x).min() for x in rho) >= -1e-10 * scale


def test_step_halving_converges(dimer_basis, dimer_rates):
    rho = [pump_second_order(dimer_basis, dimer_rates, Pulse(), TIMES, 12800.0, dt=h)[0]
           for h in (1.0, 0.5, 0.25)]
    d1 = np.abs(rho[0] - rho[1]).max() / np.abs(rho[1]).max()
    d2 = np.abs(rho[1] - rho[2]).max() / np.abs(rho[2]).max()
    assert d1 < 1e-6
    # fourth order: each halving shrinks the change about 16x
    assert d1 / d2 > 10


def test_polarization_converges_under_step_halving(dimer_basis, dimer_rates):
    g = ExperimentGrid.default()
    pump = Pulse()
    tau = truth_delays(g, pump)
    P = []
    for h in (1.0, 0.5):
        R, _ = ensemble_response([dimer_basis], [dimer_rates], pump, FREQS, tau, 12800.0, dt=h)
        P.append(polarization(ResponseSurface(FREQS, tau, R), pump, g.delays))
    assert np.abs(P[0] - P[1]).max() < 1e-6 * np.abs(P[1]).max()


def test_step_too_coarse(dimer_basis, dimer_rates):
    with pytest.raises(SimulationError):
        pump_second_order(dimer_basis, dimer_rates, Pulse(), TIMES, 12800.0, dt=200.0)


def test_unaligned_output_times_match_aligned(dimer_basis, dimer_rates):
    t = np.array([13.37, 21.0, 44.123, 300.0])
    rho, _ = pump_second_order(dimer_basis, dimer_rates, Pulse(), t, 12800.0)
    for i, ti in enumerate(t):
        one, _ = pump_second_order(dimer_basis, dimer_rates, Pulse(), [ti], 12800.0)
        assert np.allclose(rho[i], one[0], rtol=0, atol=1e-9 * np.abs(one).max())


def test_ensemble_matches_members(dimer):
    bases, rates = ensemble_members(reference_dimer(), BathSpec(), EnsembleSpec(5, 1))
    rho, _ = pump_second_order_ensemble(bases, rates, Pulse(), TIMES, 12800.0)
    for s in range(5):
        one, _ = pump_second_order(bases[s], rates[s], Pulse(), TIMES, 12800.0)
        assert np.allclose(rho[s], one, rtol=0, atol=1e-12 * np.abs(one).max())


def test_numba_and_numpy_agree():
    bases, rates = ensemble_members(reference_dimer(), BathSpec(), EnsembleSpec(8, 2))
    a = pump_second_order_ensemble(bases, rates, Pulse(), TIMES, 12800.0, use_numba=True)[0]
    b = pump_second_order_ensemble(bases, rates, Pulse(), TIMES, 12800.0, use_numba=False)[0]
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_late_time_populations_relax_to_boltzmann(dimer_basis, dimer_rates):
    rho, _ = pump_second_order(dimer_basis, dimer_rates, Pulse(), [20000.0], 12800.0)
    p = np.diag(rho[0]).real
    # pop_rates[i, j] is the rate from exciton i to exciton j
    k_up, k_down = dimer_rates.pop_rates[0, 1], dimer_rates.pop_rates[1, 0]
    assert p[1] / p[0] == pytest.approx(k_up / k_down, rel=1e-6)


# --- photon echo ------------------------------------------------------------------

def test_photon_echo_pair_reproduces_pump(dimer_basis, dimer_rates):
    pump = Pulse()
    t = TIMES[2:]
    pe = photon_echo_second_order(dimer_basis, dimer_rates, pump, pump, t, 12800.0)
    pp, _ = pump_second_order(dimer_basis, dimer_rates, pump, t, 12800.0,
                              pump_polarizations=[(1.0, 0.0, 0.0)])
    assert np.abs(pe + pe.conj().transpose(0, 2, 1) - pp).max() <= 1e-12 * np.abs(pp).max()


def test_photon_echo_zero_fields(dimer_basis, dimer_rates):
    z = Pulse(amplitude=0.0)
    pe = photon_echo_second_order(dimer_basis, dimer_rates, z, Pulse(), [200.0], 12800.0)
    assert np.all(pe == 0)


def test_photon_echo_not_hermitian(dimer_basis, dimer_rates):
    pe = photon_echo_second_order(dimer_basis, dimer_rates, Pulse(40.0, 12750.0),
                                  Pulse(30.0, 12850.0), [200.0], 12800.0)[0]
    # the defect is as large as the coherences themselves
    assert np.abs(pe - pe.conj().T).max() > 0.1 * abs(pe[0, 1])


# --- probe convolution and detection ------------------------------------------------

def test_constant_response_gives_probe_spectrum():
    probe = Pulse(40.0, 12790.0)
    tau = np.arange(-300.0, 600.0, 1.0)
    R0 = np.exp(1j * np.linspace(0, 2, FREQS.size)) * np.linspace(1, 3, FREQS.size)
    resp = ResponseSurface(FREQS, tau, np.repeat(R0[:, None], tau.size, axis=1))
    P = polarization(resp, probe, [0.0, 100.0, 250.0])
    expect = probe.spectrum(FREQS)[:, None] * R0[:, None]
    assert np.abs(P - expect).max() <= 1e-10 * np.abs(expect).max()


def test_impulsive_probe_returns_response():
    tau = np.arange(-50.0, 350.0, 0.05)
    R = np.exp(-tau / 300.0)[None, :] * np.exp(1j * FREQS[:, None] / 500.0)
    probe = Pulse(0.5, 12800.0)
    P = polarization(ResponseSurface(FREQS, tau, R), probe, [100.0])
    ref = R[:, np.argmin(np.abs(tau - 100.0))]
    # for a 0.5 fs probe E_pr(w) is flat to 1e-4 across the band
    assert np.abs(P[:, 0] / probe.spectrum(12800.0).real - ref).max() < 1e-4
    assert np.abs(P[:, 0] / probe.spectrum(FREQS) - ref).max() < 1e-4


def test_polarization_matches_dense_quadrature(dimer_basis, dimer_rates):
    g = ExperimentGrid.default()
    pump = Pulse()
    T = g.delays[7]  # about 100 fs
    out = []
    for tau in (truth_delays(g, pump), np.arange(-150.0, 330.0, 0.25)):
        R, _ = ensemble_response([dimer_basis], [dimer_rates], pump, FREQS, tau, 12800.0)
        out.append(polarization(ResponseSurface(FREQS, tau, R), pump, [T]))
    assert np.abs(out[0] - out[1]).max() < 1e-6 * np.abs(out[1]).max()


def test_polarization_needs_support():
    tau = np.arange(0.0, 200.0, 1.0)
    resp = ResponseSurface(FREQS, tau, np.ones((FREQS.size, tau.size), complex))
    with pytest.raises(SimulationError):
        polarization(resp, Pulse(), [100.0])


def test_heterodyne_real_inputs_phase0_zero():
    P = np.linspace(1, 2, 11)[:, None] * np.ones((1, 3))
    assert np.all(heterodyne(P, np.linspace(3, 4, 11)) == 0)


def test_heterodyne_phase_shift_picks_real_part():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(11, 3)) + 1j * rng.normal(size=(11, 3))
    lo = rng.normal(size=11) + 1j * rng.normal(size=11)
    prod = P * lo.conj()[:, None]
    assert np.allclose(heterodyne(P, lo, 0.0), prod.imag, atol=1e-14)
    assert np.allclose(heterodyne(P, lo, np.pi / 2), prod.real, atol=1e-14)


def test_impulsive_self_heterodyne():
    probe = Pulse(0.5, 12800.0)
    tau = np.arange(-50.0, 350.0, 0.05)
    R = (1 + 0.5j) * np.exp(-tau / 300.0)[None, :] * np.linspace(1, 2, FREQS.size)[:, None]
    P = polarization(ResponseSurface(FREQS, tau, R), probe, [100.0])
    lo = probe.spectrum(FREQS)
    S = heterodyne(P, lo)
    ref = np.abs(lo) ** 2 * R[:, np.argmin(np.abs(tau - 100.0))].imag
    assert np.abs(S[:, 0] - ref).max() < 1e-4 * np.abs(ref).max()


def test_noise_zero_is_identity():
    g = ExperimentGrid(FREQS, np.linspace(50, 100, 5))
    a = SignalSurface(g, np.ones((61, 5)))
    d = SignalSurface(g, np.zeros((61, 5)), np.pi / 2)
    na, nd = add_detection_noise(a, d, 0.0, seed=1)
    assert na is a and nd is d


def test_noise_statistics():
    z = complex_noise((100000,), 0.3, np.random.default_rng(5))
    assert np.sqrt(np.mean(np.abs(z) ** 2)) == pytest.approx(0.3, rel=0.01)
    assert np.std(z.real) == pytest.approx(0.3 / np.sqrt(2), rel=0.01)
    # uniform phase: no preferred direction
    assert abs(np.mean(z)) < 5 * 0.3 / np.sqrt(z.size)


def test_noise_seeded_and_scaled():
    g = ExperimentGrid(FREQS, np.linspace(50, 100, 5))
    a = SignalSurface(g, np.full((61, 5), 2.0))
    d = SignalSurface(g, np.zeros((61, 5)), np.pi / 2)
    n1 = add_detection_noise(a, d, 1e-2, seed=3)
    n2 = add_detection_noise(a, d, 1e-2, seed=3)
    assert np.array_equal(n1[0].values, n2[0].values)
    resid = (n1[1].values - d.values) + 1j * (n1[0].values - a.values)
    assert np.sqrt(np.mean(np.abs(resid) ** 2)) == pytest.approx(2e-2, rel=0.2)
    assert n1[0].noise_sigma_relative == 1e-2


# --- full pipeline ----------------------------------------------------------------------

def test_simulation_consistent_with_convolution(small_experiment, small_sim):
    g = small_experiment.grid
    P = polarization(small_sim.response, small_experiment.probe, g.delays)
    lo = small_experiment.probe.spectrum(g.probe_freqs)
    assert np.array_equal(heterodyne(P, lo, 0.0), small_sim.signal_abs.values)
    assert np.array_equal(heterodyne(P, lo, np.pi / 2), small_sim.signal_disp.values)


def test_bleach_sign_and_band(small_sim, small_experiment):
    S = small_sim.signal_abs.values
    assert np.all(S < 0)
    eps = diagonalize(small_experiment.model).one_exciton_energies
    peak = small_experiment.grid.probe_freqs[np.argmin(S[:, -1])]
    assert eps[0] < peak < eps[1]


def test_truth_is_ensemble_average(small_sim):
    assert small_sim.bloch_truth.shape == (small_sim.response.delays.size, 4)
    assert np.all(small_sim.bloch_truth[-1, 0] > 0)


def test_ensemble_response_contraction(dimer_basis, dimer_rates):
    tau = np.array([100.0, 400.0])
    R, rho = ensemble_response([dimer_basis], [dimer_rates], Pulse(), FREQS, tau, 12800.0)
    op = build_operator(dimer_basis, dimer_rates, FREQS, "iso")
    from pptomo.response import LiouvilleBasis

    coeffs = LiouvilleBasis(2).coefficients(rho)
    assert np.allclose(R.T, op.response(coeffs), rtol=1e-12, atol=1e-12 * np.abs(R).max())
    Q = complex_basis_response(dimer_basis, dimer_rates, FREQS)
    direct = RESPONSE_PREFACTOR * np.einsum("abw,tab->wt", Q, rho)
    assert np.allclose(R, direct, rtol=1e-12, atol=0)


def test_overlap_warning():
    pump = probe = Pulse(40.0)
    ok = ExperimentGrid(FREQS, np.linspace(50, 100, 5))
    bad = ExperimentGrid(FREQS, np.linspace(30, 100, 5))
    assert overlap_warning(ok, pump, probe) is None
    assert "overlap" in overlap_warning(bad, pump, probe)


def test_simulate_warns_on_overlap():
    grid = ExperimentGrid(FREQS, np.linspace(20.0, 200.0, 20))
    exp = Experiment(reference_dimer(0), grid=grid, ensemble=EnsembleSpec(1, 0))
    with pytest.warns(UserWarning, match="overlap"):
        sim = simulate_experiment(exp)
    assert sim.warnings


def test_seven_site_simulation_runs():
    model, raw = load_model_file(DATA_DIR / "fmo7_example.json")
    grid = ExperimentGrid(np.linspace(12000, 12700, 21), np.linspace(200.0, 400.0, 10),
                          12400.0)
    exp = Experiment(model, BathSpec(35.0, 106.0, 77.0), Pulse(40.0, 12400.0),
                     Pulse(40.0, 12400.0), grid, EnsembleSpec(3, 0))
    sim = simulate_experiment(exp)
    assert sim.bloch_truth is None
    assert np.all(np.isfinite(sim.signal_abs.values))


# first-run snapshot of a seeded simulation (61 x 140 grid, 40 members, seed 3)
GOLDEN_ABS = [[-7364758.736726028, -14016223.853371734, -18853160.095228232, -19299991.173852243],
              [-43696864.08809241, -58704770.951158375, -75312672.42952293, -76572937.47796433],
              [-74617788.3298829, -81255500.8618341, -89997169.69088718, -90703314.21807101],
              [-82095000.30128367, -82355731.63799281, -78308897.11692424, -78164601.72725676],
              [-26591743.88356006, -27621756.671403665, -25526356.24090433, -25424101.309312094]]
GOLDEN_DISP = [[16227606.779985428, 19185274.51314242, 22427993.79599286, 22667789.921754986],
               [46433276.49035493, 36712910.02763432, 27871612.30991509, 27155582.787154913],
               [45617095.72890052, 32196844.8318493, 14922707.517056933, 13689016.705355592],
               [-4758929.5111584235, -9857169.649879986, -19422179.960179254, -20147203.69586665],
               [-20316050.566551596, -21706724.265690252, -23012685.516548626, -23157652.32910698]]


def test_golden_snapshot(small_sim):
    rows, cols = [0, 20, 30, 45, 60], [0, 10, 70, 139]
    np.testing.assert_allclose(small_sim.signal_abs.values[rows][:, cols], GOLDEN_ABS, rtol=1e-9)
    np.testing.assert_allclose(small_sim.signal_disp.values[rows][:, cols], GOLDEN_DISP, rtol=1e-9)


def test_noisy_simulation_reproducible(small_experiment):
    from dataclasses import replace

    exp = replace(small_experiment, noise=1e-2, seed=11, ensemble=EnsembleSpec(4, 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = simulate_experiment(exp), simulate_experiment(exp)
    assert np.array_equal(a.signal_abs.values, b.signal_abs.values)
    assert a.signal_abs.noise_sigma_relative == 1e-2
