import numpy as np
import pytest
from hypothesis import given, strategies as st

from pptomo.bath import BathSpec, redfield_rates
from pptomo.model import SiteModel, diagonalize, reference_dimer
from pptomo.response import build_operator, dimer_projector_analytic, magic_angle_average
from pptomo.tomography import (TomographyInfeasible, build_plan, condition_number,
                               disorder_sweep, exciton_frequencies, fidelity,
                               fit_population_decay, fix_normalization, invert_state,
                               reconstruct, response_matrix, tomography_experiment)


def _plan_for(model, **kw):
    b = diagonalize(model)
    r = redfield_rates(b, BathSpec())
    freqs = b.one_exciton_energies
    return build_plan(build_operator(b, r, freqs, "iso", "bloch"), freqs, **kw)


@pytest.fixture(scope="module")
def plan():
    return _plan_for(reference_dimer(0.0))


def _forward(plan, bloch):
    """Complex responses at the sample frequencies from Bloch vectors (T, 4)."""
    b = plan.matrix @ np.atleast_2d(bloch).T
    F = plan.sample_freqs.size
    return b[F:] + 1j * b[:F]


def test_reference_dimer_condition_numbers(plan):
    assert plan.cond_full > 500
    assert plan.cond_reduced < 10
    assert plan.matrix.shape == (4, 4)


def test_analytic_projector_gives_same_plan(dimer_basis, dimer_rates):
    freqs = dimer_basis.one_exciton_energies
    num = build_plan(build_operator(dimer_basis, dimer_rates, freqs, "iso", "bloch"), freqs)
    iso = magic_angle_average([dimer_projector_analytic(dimer_basis, dimer_rates, freqs, e)
                               for e in np.eye(3)])
    ana = build_plan(iso, freqs)
    assert np.allclose(num.matrix, ana.matrix, rtol=0, atol=1e-8 * np.abs(num.matrix).max())


def test_homodimer_is_infeasible():
    with pytest.raises(TomographyInfeasible, match="coherence"):
        _plan_for(SiteModel.dimer(12800.0, 12800.0, 100.0, delta=1.0, phi=0.7))


def test_zero_dipoles_infeasible():
    m = SiteModel(np.array([12700.0, 12900.0]), np.array([[0, 50.0], [50.0, 0]]), np.zeros((2, 3)))
    with pytest.raises(TomographyInfeasible, match="zero"):
        _plan_for(m)


def test_too_few_equations(dimer_basis, dimer_rates):
    freqs = dimer_basis.one_exciton_energies[:1]
    op = build_operator(dimer_basis, dimer_rates, freqs, "iso", "bloch")
    with pytest.raises(TomographyInfeasible):
        build_plan(op, freqs, channels=("absorptive",))


def test_liouville_operator_rejected(dimer_basis, dimer_rates):
    freqs = dimer_basis.one_exciton_energies
    with pytest.raises(TomographyInfeasible):
        response_matrix(build_operator(dimer_basis, dimer_rates, freqs), freqs)


def test_off_grid_frequency_interpolates(dimer_basis, dimer_rates):
    grid = np.linspace(12500.0, 13100.0, 601)
    op = build_operator(dimer_basis, dimer_rates, grid, "iso", "bloch")
    freqs = dimer_basis.one_exciton_energies
    exact = response_matrix(build_operator(dimer_basis, dimer_rates, freqs, "iso", "bloch"), freqs)
    assert np.abs(response_matrix(op, freqs) - exact).max() < 1e-2 * np.abs(exact).max()
    with pytest.raises(TomographyInfeasible):
        response_matrix(op, [14000.0])


@given(st.floats(0.1, 10.0), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_invert_state_round_trip(plan, r0, a, b, c):
    v = np.array([a, b, c])
    v = 0.99 * r0 * v / max(np.linalg.norm(v), 1.0)
    bloch = np.concatenate([[r0], v])
    est, flags = invert_state(_forward(plan, bloch)[:, 0], plan, r0)
    assert np.allclose(est, bloch, atol=1e-10 * r0)
    assert flags == []


def test_full_solve_ignores_r0(plan):
    full = _plan_for(reference_dimer(0.0), solve_components=("r0", "r1", "r2", "r3"))
    bloch = np.array([[2.0, 0.3, -0.5, 1.1]])
    est, _ = invert_state(_forward(full, bloch), full, r0=None)
    assert np.allclose(est, bloch, atol=1e-9)
    with pytest.raises(TomographyInfeasible):
        invert_state(_forward(plan, bloch), plan, None)


def test_unphysical_state_is_flagged_not_repaired(plan):
    bloch = np.array([[1.0, 0.9, 0.9, 0.9]])
    est, flags = invert_state(_forward(plan, bloch), plan, 1.0)
    assert np.allclose(est, bloch)
    assert flags and "unphysical" in flags[0]


def test_normalization_at_long_delay(plan):
    bloch = np.array([3.0, 0.0, 0.0, -1.2])
    norm = fix_normalization(_forward(plan, bloch)[:, 0], plan)
    assert norm.r0 == pytest.approx(3.0, rel=1e-12)
    assert norm.r3 == pytest.approx(-1.2, rel=1e-12)
    assert norm.flags == []


def test_zero_response_is_flagged(plan):
    norm = fix_normalization(np.zeros(2, complex), plan)
    assert norm.r0 == 0.0 and "no-excitation" in norm.flags
    norm = fix_normalization(_forward(plan, [-1.0, 0, 0, 0])[:, 0], plan)
    assert "non-positive population" in norm.flags


def test_r0_is_stable_under_small_perturbations(plan):
    """With coherences gone, (r0, r3) is solved by a well-conditioned 4x2 system."""
    bloch = np.array([1.0, 0.0, 0.0, 0.4])
    R = _forward(plan, bloch)[:, 0]
    rng = np.random.default_rng(0)
    eps = 1e-6 * np.abs(R).max()
    shifts = [fix_normalization(R + eps * (rng.normal(size=2) + 1j * rng.normal(size=2)), plan).r0
              for _ in range(50)]
    assert condition_number(plan.matrix[:, [0, 3]]) < 50
    assert np.max(np.abs(np.array(shifts) - 1.0)) < 1e-3


def test_fidelity_cases():
    a = np.array([1.0, 0.0, 0.0, 1.0])
    assert fidelity(a, a) == pytest.approx(1.0)
    assert fidelity(a, [1.0, 0.0, 0.0, -1.0]) == pytest.approx(0.0)
    mixed = np.array([1.0, 0.0, 0.0, 0.0])
    assert fidelity(a, mixed) == pytest.approx(0.5)
    assert fidelity(mixed, mixed) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fidelity([0.0, 0, 0, 0], a)


@given(st.floats(0.01, 100.0), st.floats(0.01, 100.0),
       st.lists(st.floats(-0.55, 0.55), min_size=6, max_size=6))
def test_fidelity_scale_invariant_and_symmetric(s1, s2, xs):
    a = np.array([1.0, *xs[:3]])
    b = np.array([1.0, *xs[3:]])
    f = fidelity(a, b)
    assert fidelity(s1 * a, s2 * b) == pytest.approx(f, abs=1e-12)
    assert fidelity(b, a) == pytest.approx(f, abs=1e-12)
    assert 0.0 <= f <= 1.0


def test_fidelity_matches_matrix_formula():
    from scipy.linalg import sqrtm

    rng = np.random.default_rng(5)
    sig = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    for _ in range(20):
        u, v = rng.normal(size=3), rng.normal(size=3)
        u *= rng.uniform(0, 1) / np.linalg.norm(u)
        v *= rng.uniform(0, 1) / np.linalg.norm(v)
        a, b = np.r_[1.0, u], np.r_[1.0, v]
        ra = sum(x * s for x, s in zip(a, sig)) / 2
        rb = sum(x * s for x, s in zip(b, sig)) / 2
        sa = sqrtm(ra)
        ref = np.trace(sqrtm(sa @ rb @ sa)).real ** 2
        assert fidelity(a, b) == pytest.approx(ref, abs=1e-6)


def test_population_decay_fit():
    t = np.linspace(0, 5000, 40)
    A, k = fit_population_decay(t, 2.5 * np.exp(-t / 1500.0))
    assert A == pytest.approx(2.5, rel=1e-6)
    assert k == pytest.approx(1 / 1500.0, rel=1e-6)


def test_reconstruct_scores_against_truth(plan):
    truth = np.array([[1.0, 0.2, -0.1, 0.5], [1.0, 0.1, 0.05, 0.3]])
    res = reconstruct(_forward(plan, truth), [100.0, 200.0], plan, 1.0, truth)
    assert np.allclose(res.fidelity, 1.0)
    assert np.allclose(res.normalized, truth[:, 1:])
    assert res.cond_reduced == plan.cond_reduced


def test_exciton_frequencies_ascending():
    f = exciton_frequencies(reference_dimer())
    assert f[0] < f[1]


def test_zero_disorder_end_to_end():
    res = tomography_experiment(reference_dimer(0.0), n_samples=1)
    assert res.flags == []
    assert res.r0 > 0
    assert 1 - res.fidelity.min() < 1e-6
    assert res.cond_reduced < 10


def test_disorder_sweep_small():
    pts = disorder_sweep([0.0, 40.0], n_samples=200, seed=1, delays=np.linspace(50, 1000, 20))
    assert [p.width for p in pts] == [0.0, 40.0]
    assert pts[0].worst > 1 - 1e-6
    assert pts[1].worst < pts[0].worst
    assert all(p.average >= p.worst for p in pts)
