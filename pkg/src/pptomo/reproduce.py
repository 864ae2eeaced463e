"""Benchmark tables and figure data for the dimer and the seven-site model."""

from __future__ import annotations

import warnings
from dataclasses import replace

import numpy as np

from .bath import BathSpec, bath_from_dict
from .deconv import (COMBINATIONS, SELECTION_CASES, deconvolution_benchmark,
                     improvement_summary, selection_benchmark)
from .feasibility import (Scenario, build_map, cumulative_scenarios, default_grid,
                          is_diagonally_dominant, singular_spectrum, species_amplitude_matrix,
                          species_responses)
from .forward import Experiment, simulate_experiment
from .model import DATA_DIR, EnsembleSpec, diagonalize, load_model_file, reference_dimer
from .tomography import (disorder_sweep, ensemble_plan, exciton_frequencies)
from .forward import ensemble_members


def dimer_simulation(n_samples=1000, seed=0, noise=0.0):
    """Noise-free benchmark dataset for the heterodimer on the default grid."""
    exp = Experiment(reference_dimer(), ensemble=EnsembleSpec(n_samples, seed), noise=noise, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return exp, simulate_experiment(exp)


def table1(n_instances=100, noise=1e-2, n_samples=1000, seed=0, sim=None):
    """RMSE improvement of every stage combination at ``noise`` and at zero noise."""
    exp, sim = dimer_simulation(n_samples, seed) if sim is None else sim
    rows = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for level, n in ((noise, n_instances), (0.0, 1)):
            r = deconvolution_benchmark(sim, exp.probe, level, n, seed)
            rows[level] = improvement_summary(r)
    return rows


def table1_rows(result) -> list:
    out = []
    for level, summary in result.items():
        for (s1, s2), v in summary.items():
            out.append({"noise": level, "stage1": s1, "stage2": s2, "rmse_mean": v["rmse_mean"],
                        "rmse_std": v["rmse_std"], "improvement": v["improvement"],
                        "improvement_std": v["improvement_std"]})
    return out


def table3(n_instances=100, noises=(1e-2, 1e-3), n_samples=1000, seed=0, sim=None):
    """Penalty/selector comparison for stage 2 at the upper exciton frequency."""
    exp, sim = dimer_simulation(n_samples, seed) if sim is None else sim
    w_alpha = diagonalize(exp.model).one_exciton_energies[1]
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for level in noises:
            res = selection_benchmark(sim, exp.probe, w_alpha, level, n_instances, seed)
            out[level] = {case: {"lam_mean": float(v["lam"].mean()), "lam_std": float(v["lam"].std()),
                                 "improvement": float(v["improvement"].mean()),
                                 "improvement_std": float(v["improvement"].std())}
                          for case, v in res.items()}
    return out


def fig3(widths=(0.0, 40.0, 80.0, 120.0), n_samples=10000, seed=0):
    return disorder_sweep(widths, n_samples, seed)


def conditioning(n_samples=10000, seed=0, model=None, bath=None):
    """Four- and three-parameter condition numbers of the dimer tomography plan."""
    model = reference_dimer() if model is None else model
    bath = BathSpec() if bath is None else bath
    bases, rates = ensemble_members(model, bath, EnsembleSpec(n_samples, seed))
    plan = ensemble_plan(bases, rates, exciton_frequencies(model))
    return {"cond_full": plan.cond_full, "cond_reduced": plan.cond_reduced}


def fmo_model():
    model, raw = load_model_file(DATA_DIR / "fmo7_example.json")
    return model, bath_from_dict(raw.get("bath"))


def fig5(model=None, bath=None, n_samples=1000, seed=0, scenarios=None):
    """Singular spectra for the cumulative scenarios on one common frequency grid."""
    if model is None:
        model, bath = fmo_model()
    scenarios = cumulative_scenarios() if scenarios is None else scenarios
    grid = common_grid(model, bath, scenarios)
    out = []
    for sc in scenarios:
        pm = build_map(model, bath, sc, grid, n_samples, seed)
        sig, cond = singular_spectrum(pm)
        out.append({"scenario": sc, "sigma": sig, "cond": cond, "map": pm})
    return out


def common_grid(model, bath, scenarios):
    """Finest step and widest span over the scenario temperatures."""
    grids = [default_grid(model, replace(bath, temperature=sc.temperature)) for sc in scenarios]
    step = min(np.diff(g)[0] for g in grids)
    lo = min(g[0] for g in grids)
    hi = max(g[-1] for g in grids)
    return np.arange(lo, hi + 0.5 * step, step)


def fig6(model=None, bath=None, n_samples=1000, seed=0, temperature=77.0):
    """Species-amplitude matrices for the isotropic and each oriented configuration."""
    if model is None:
        model, bath = fmo_model()
    grid = default_grid(model, replace(bath, temperature=temperature))
    out = {}
    iso = species_responses(model, bath, Scenario("iso", temperature, "disorder-ensemble",
                                                  "isotropic"), grid, n_samples, seed)
    out["iso"] = species_amplitude_matrix(iso[0])
    allc = species_responses(model, bath, Scenario("all", temperature, "disorder-ensemble", "all"),
                             grid, n_samples, seed)
    from .response import PAIR_LABELS

    for q, lab in enumerate(PAIR_LABELS):
        out[lab] = species_amplitude_matrix(allc[q])
    out["iso_diagonally_dominant"] = is_diagonally_dominant(out["iso"])
    return out
