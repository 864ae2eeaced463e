"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 infeasible reconstruction,
4 numerical failure. ``PPTOMO_THREADS`` sets the default worker count for
per-frequency solves and ``PPTOMO_DISABLE_NUMBA=1`` forces the numpy kernels.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .bath import BathError
from .config import (ConfigError, RunConfig, build_experiment, grid_from, load_config_file,
                     load_model, pulse_from, validate)
from .deconv import (DeconvolutionError, invert_polarization_to_response,
                     invert_signal_to_polarization, rmse)
from .feasibility import (Scenario, ScenarioError, build_map, cumulative_scenarios,
                          default_grid, singular_spectrum, species_amplitude_matrix,
                          species_responses, uncertainty_bands)
from .forward import Pulse, ResponseSurface, SimulationError, simulate_experiment
from .model import ModelError, Uncertainty
from .regularize import RegularizationError, SelectorConfig
from .tomography import (TomographyInfeasible, ensemble_plan, exciton_frequencies,
                         fix_normalization, reconstruct)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    pass


def _check_finite(name, arr):
    # NaN marks masked frequencies; inf or an all-NaN result is a failure
    arr = np.asarray(arr)
    if np.isinf(arr).any() or np.isnan(arr).all():
        raise NumericalFailure(f"{name} contains non-finite values")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- simulate -----------------------------------------------------------------

def cmd_simulate(rc: RunConfig, args):
    cfg = rc.resolved()
    exp = build_experiment(cfg)
    out = _outdir(rc.output)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sim = simulate_experiment(exp)
    g = exp.grid
    _check_finite("signal", sim.signal_abs.values)
    io.write_surface(out / "signal_abs.csv", g.probe_freqs, g.delays, sim.signal_abs.values,
                     "signal_abs", "heterodyne signal at LO phase 0 (arb.)")
    io.write_surface(out / "signal_disp.csv", g.probe_freqs, g.delays, sim.signal_disp.values,
                     "signal_disp", "heterodyne signal at LO phase pi/2 (arb.)")
    io.write_complex_surface(out / "response_true.csv", sim.response.freqs, sim.response.delays,
                             sim.response.values)
    t = np.linspace(-exp.probe.support, exp.probe.support, 321)
    io.write_probe(out / "probe.csv", t, exp.probe.envelope(t))
    if sim.bloch_truth is not None:
        io.write_table(out / "bloch_truth.csv", "bloch_truth", ["tau_fs", "r0", "r1", "r2", "r3"],
                       [[float(tau)] + [float(x) for x in r]
                        for tau, r in zip(sim.response.delays, sim.bloch_truth)],
                       "ensemble-averaged excited-state Bloch vector vs delay (fs)")
    _, _, mpath = load_model(cfg)
    io.write_manifest(out, "simulate", {**cfg, "warnings": sim.warnings}, [mpath], cfg["seed"])
    return EXIT_OK


# --- invert-response ------------------------------------------------------------

def _selector(name, lam):
    name = {"oracle": "exact-oracle"}.get(name, name)
    if name == "exact-oracle":
        raise ConfigError("the oracle selector needs ground truth; it is available in benchmarks only")
    return SelectorConfig(name, fixed_lambda=lam)


def cmd_invert(rc: RunConfig, args):
    cfg = rc.resolved()
    inv = cfg["inversion"]
    for key in ("stage1", "stage2", "penalty", "selector", "lambda"):
        val = getattr(args, key, None)
        if val is not None:
            inv[key] = val
    src = Path(args.input)
    try:
        freqs, delays, s_abs = io.read_surface(src / "signal_abs.csv", "signal_abs")
    except FileNotFoundError as exc:
        raise ConfigError(f"missing input: {exc.filename}") from exc
    disp_path = src / "signal_disp.csv"
    s_disp = io.read_surface(disp_path, "signal_disp")[2] if disp_path.exists() else None
    probe_file = Path(args.probe_file) if args.probe_file else src / "probe.csv"
    center = float(cfg["probe"]["center_cm1"])
    if probe_file.exists():
        t, e = io.read_probe(probe_file)
        probe = Pulse(float(cfg["probe"]["fwhm_fs"]), center, float(np.abs(e).max()), t, e)
    elif args.probe_file is None and args.config:
        probe = pulse_from(cfg["probe"])
    else:
        raise ConfigError("probe characterization is required (pass --probe-file or --config)")
    rf = float(cfg["grid"]["rotating_frame_cm1"])
    lo = probe.spectrum(freqs)
    sel = _selector(inv["selector"], inv["lambda"])
    P, rep1 = invert_signal_to_polarization(s_abs, s_disp, lo, inv["stage1"], sel, "D2")
    R, rep2 = invert_polarization_to_response(P, freqs, delays, probe, inv["stage2"], sel,
                                              inv["penalty"], rf)
    _check_finite("response estimate", R.values)
    out = _outdir(rc.output)
    io.write_complex_surface(out / "response_est.csv", R.freqs, R.delays, R.values)
    report = {"stage1": {"method": inv["stage1"], "lambda": rep1.lambdas, "score": rep1.scores,
                         "converged": rep1.converged, "flags": rep1.flags},
              "stage2": {"method": inv["stage2"], "freqs": freqs, "lambda": rep2.lambdas,
                         "score": rep2.scores, "converged": rep2.converged, "flags": rep2.flags},
              "selector": inv["selector"], "penalty": inv["penalty"]}
    truth_path = src / "response_true.csv"
    if truth_path.exists():
        tf, td, tv = io.read_complex_surface(truth_path)
        truth = ResponseSurface(tf, td, tv)
        report["rmse_vs_truth"] = rmse(R.restrict(delays), truth)
    io.write_json(out / "inversion_report.json", report)
    inputs = [src / "signal_abs.csv", disp_path, probe_file]
    io.write_manifest(out, "invert-response", cfg, inputs, cfg["seed"])
    return EXIT_OK


# --- tomography -----------------------------------------------------------------

def cmd_tomography(rc: RunConfig, args):
    cfg = rc.resolved()
    model, bath, mpath = load_model(cfg)
    if model.n_sites != 2:
        raise TomographyInfeasible("tomography is implemented for dimers only")
    freqs, delays, values = io.read_complex_surface(args.response)
    n_samples = args.n_samples or int(cfg["tomography"]["n_samples"])
    from .forward import ensemble_members
    from .model import EnsembleSpec

    bases, rates = ensemble_members(model, bath, EnsembleSpec(n_samples, int(cfg["seed"])))
    sample = exciton_frequencies(model)
    norm_delay = float(args.normalization_delay or cfg["tomography"]["normalization_delay_fs"])
    plan = ensemble_plan(bases, rates, sample, normalization_delay=norm_delay)
    at = np.empty((2, delays.size), complex)
    for k, w in enumerate(sample):
        if not freqs[0] <= w <= freqs[-1]:
            raise TomographyInfeasible(f"exciton energy {w:.2f} outside the response grid")
        at[k] = [np.interp(w, freqs, values[:, j].real) + 1j * np.interp(w, freqs, values[:, j].imag)
                 for j in range(delays.size)]
    flags = []
    j_norm = int(np.argmin(np.abs(delays - norm_delay)))
    if abs(delays[j_norm] - norm_delay) > 1.0:
        flags.append(f"normalization taken at {delays[j_norm]:g} fs (latest available), "
                     f"not {norm_delay:g} fs")
    if args.r0 is not None:
        r0 = float(args.r0)
    else:
        norm = fix_normalization(at[:, j_norm], plan)
        r0 = norm.r0
        flags += norm.flags
    lo = float(cfg["grid"]["delay_min_fs"]) - 1e-9
    keep = delays >= lo
    truth = None
    if args.truth:
        _, rows = io.read_table(args.truth, "bloch_truth")
        tb = np.array(rows, dtype=float)
        idx = [int(np.argmin(np.abs(tb[:, 0] - d))) for d in delays[keep]]
        if np.all(np.abs(tb[idx, 0] - delays[keep]) < 1e-6):
            truth = tb[idx, 1:]
        else:
            flags.append("truth delays do not match; fidelity not computed")
    if r0 <= 0:
        raise TomographyInfeasible("no excitation: normalization r0 is not positive")
    res = reconstruct(at[:, keep], delays[keep], plan, r0, truth)
    out = _outdir(rc.output)
    fid = res.fidelity if res.fidelity is not None else np.full(res.delays.size, np.nan)
    io.write_table(out / "bloch_trajectory.csv", "bloch_trajectory",
                   ["tau_fs", "r1_r0", "r2_r0", "r3_r0", "fidelity"],
                   [[float(t)] + [float(x) for x in n] + [float(f)]
                    for t, n, f in zip(res.delays, res.normalized, fid)],
                   "normalized Bloch components vs delay (fs)")
    report = {"cond_full": plan.cond_full, "cond_reduced": plan.cond_reduced, "r0": r0,
              "sample_freqs": sample, "flags": flags + res.flags,
              "fidelity_min": float(np.nanmin(fid)) if truth is not None else None,
              "fidelity_mean": float(np.nanmean(fid)) if truth is not None else None}
    io.write_json(out / "tomography_report.json", report)
    io.write_manifest(out, "tomography", {**cfg, "n_samples": n_samples}, [args.response, mpath],
                      cfg["seed"])
    return EXIT_OK


# --- feasibility / species spectra -------------------------------------------------

def _scenarios(arg):
    if arg in (None, "cumulative"):
        return cumulative_scenarios()
    data = load_config_file(arg)
    items = data.get("scenarios")
    if not isinstance(items, list):
        raise ConfigError(f"{arg}: expected a 'scenarios' list")
    try:
        return [Scenario(**item) for item in items]
    except TypeError as exc:
        raise ConfigError(f"{arg}: {exc}") from exc


def cmd_feasibility(rc: RunConfig, args):
    cfg = rc.resolved()
    model, bath, mpath = load_model(cfg)
    scenarios = _scenarios(args.scenarios)
    from .reproduce import common_grid

    grid = common_grid(model, bath, scenarios)
    out = _outdir(rc.output)
    sv_rows, amp_rows, conds = [], [], {}
    for sc in scenarios:
        pm = build_map(model, bath, sc, grid, args.n_samples, int(cfg["seed"]))
        sig, cond = singular_spectrum(pm)
        conds[sc.label] = cond
        sv_rows += [[sc.label, i + 1, float(s)] for i, s in enumerate(sig)]
        R = species_responses(model, bath, sc, grid, args.n_samples, int(cfg["seed"]))
        for q, lab in enumerate(pm.config_labels):
            A = species_amplitude_matrix(R[q])
            amp_rows += [[sc.label, lab, a + 1, b + 1, float(A[a, b])]
                         for a in range(A.shape[0]) for b in range(A.shape[1])]
    io.write_table(out / "singular_values.csv", "singular_values", ["scenario", "i", "sigma_rel"],
                   sv_rows, "singular values normalized to the largest")
    io.write_table(out / "species_amplitudes.csv", "species_amplitudes",
                   ["scenario", "config", "a", "b", "amplitude"], amp_rows,
                   "max over omega of |absorptive species spectrum|; a<=b real part, a>b imaginary")
    if args.bands:
        sc = scenarios[0]
        bands = uncertainty_bands(model, bath, sc, Uncertainty(args.site_sigma, args.coupling_sigma),
                                  args.bands, grid, int(cfg["seed"]), n_disorder=args.band_samples)
        _write_bands(out / "species_bands.csv", bands)
    io.write_json(out / "feasibility_report.json", {"condition_numbers": conds, "grid_points": grid.size})
    io.write_manifest(out, "feasibility", {**cfg, "scenarios": [vars(s) for s in scenarios],
                                           "n_samples": args.n_samples, "bands": args.bands},
                      [mpath], cfg["seed"])
    return EXIT_OK


def _write_bands(path, bands):
    rows = []
    for k, lab in enumerate(bands.labels):
        for i, w in enumerate(bands.grid):
            n, lo, hi = bands.nominal[i, k], bands.lower[i, k], bands.upper[i, k]
            rows.append([float(w), lab, float(n.real), float(n.imag), float(lo.real),
                         float(hi.real), float(lo.imag), float(hi.imag)])
    io.write_table(path, "species_bands", ["omega_cm1", "species", "re", "im", "re_lo", "re_hi",
                                           "im_lo", "im_hi"], rows,
                   "species spectra with central 95% bands; omega in cm^-1")


def cmd_species(rc: RunConfig, args):
    cfg = rc.resolved()
    model, bath, mpath = load_model(cfg)
    T = args.temperature or bath.temperature
    sample = "disorder-ensemble" if args.n_samples > 1 else "single-complex"
    pol = "isotropic" if args.polarization in ("iso", "isotropic") else "all"
    sc = Scenario("species", T, sample, pol)
    from dataclasses import replace

    grid = default_grid(model, replace(bath, temperature=T))
    R = species_responses(model, bath, sc, grid, args.n_samples, int(cfg["seed"]))
    from .response import LiouvilleBasis, PAIR_LABELS

    q = 0 if pol == "isotropic" else PAIR_LABELS.index(args.polarization)
    labels = LiouvilleBasis(model.n_sites).labels
    out = _outdir(rc.output)
    if args.uncertainty_draws:
        bands = uncertainty_bands(model, bath, sc, Uncertainty(args.site_sigma, args.coupling_sigma),
                                  args.uncertainty_draws, grid, int(cfg["seed"]),
                                  n_disorder=args.n_samples)
        _write_bands(out / "species_spectra.csv", bands)
    else:
        rows = [[float(w), lab, float(R[q, i, k].real), float(R[q, i, k].imag)]
                for k, lab in enumerate(labels) for i, w in enumerate(grid)]
        io.write_table(out / "species_spectra.csv", "species_spectra",
                       ["omega_cm1", "species", "re", "im"], rows,
                       "species-associated spectra (R_PP per basis element); omega in cm^-1")
    io.write_manifest(out, "species-spectra", {**cfg, "polarization": args.polarization,
                                               "temperature": T, "n_samples": args.n_samples},
                      [mpath], cfg["seed"])
    return EXIT_OK


# --- reproduce ------------------------------------------------------------------------

def cmd_reproduce(rc: RunConfig, args):
    from . import reproduce as rp

    out = _outdir(rc.output)
    seed = int(rc.resolved()["seed"])
    targets = ("table1", "table3", "fig3", "cond", "fig5", "fig6") if args.target == "all" \
        else (args.target,)
    sim = None
    for target in targets:
        if target in ("table1", "table3") and sim is None:
            sim = rp.dimer_simulation(args.n_samples or 1000, seed)
        if target == "table1":
            rows = rp.table1_rows(rp.table1(args.instances, args.noise, sim=sim, seed=seed))
            io.write_table(out / "table1.csv", "table1", list(rows[0]),
                           [list(r.values()) for r in rows], "RMSE improvement over double-naive")
        elif target == "table3":
            res = rp.table3(args.instances, sim=sim, seed=seed)
            rows = [[lvl, pen, meth, v["lam_mean"], v["lam_std"], v["improvement"],
                     v["improvement_std"]] for lvl, cases in res.items()
                    for (pen, meth), v in cases.items()]
            io.write_table(out / "table3.csv", "table3", ["noise", "penalty", "selector", "lam_mean",
                                                        "lam_std", "improvement", "improvement_std"],
                           rows, "stage-2 MSE improvement at the upper exciton frequency")
        elif target == "fig3":
            pts = rp.fig3(n_samples=args.n_samples or 10000, seed=seed)
            io.write_table(out / "fig3.csv", "fig3", ["width_cm1", "worst", "average"],
                           [[p.width, p.worst, p.average] for p in pts],
                           "reconstruction fidelity vs static disorder width")
            rows = [[p.width, float(t)] + [float(x) for x in n] + [float(f)]
                    for p in pts for t, n, f in zip(p.result.delays, p.result.normalized,
                                                    p.result.fidelity)]
            io.write_table(out / "fig3_trajectories.csv", "fig3_trajectories",
                           ["width_cm1", "tau_fs", "r1_r0", "r2_r0", "r3_r0", "fidelity"], rows,
                           "reconstructed normalized Bloch vectors")
        elif target == "cond":
            io.write_json(out / "conditioning.json", rp.conditioning(args.n_samples or 10000, seed))
        elif target == "fig5":
            res = rp.fig5(n_samples=args.n_samples or 1000, seed=seed)
            io.write_table(out / "fig5.csv", "singular_values", ["scenario", "i", "sigma_rel"],
                           [[r["scenario"].label, i + 1, float(s)] for r in res
                            for i, s in enumerate(r["sigma"])], "normalized singular values")
            io.write_json(out / "fig5_conditions.json",
                          {r["scenario"].label: r["cond"] for r in res})
        elif target == "fig6":
            res = rp.fig6(n_samples=args.n_samples or 1000, seed=seed)
            rows = [[cfg_label, a + 1, b + 1, float(M[a, b])] for cfg_label, M in res.items()
                    if isinstance(M, np.ndarray) for a in range(M.shape[0])
                    for b in range(M.shape[1])]
            io.write_table(out / "fig6.csv", "species_amplitudes", ["config", "a", "b", "amplitude"],
                           rows, "max over omega of |absorptive species spectrum|")
    io.write_manifest(out, "reproduce", {"targets": targets, "instances": args.instances,
                                         "n_samples": args.n_samples, "noise": args.noise},
                      (), seed)
    return EXIT_OK


def cmd_validate(rc: RunConfig, args):
    diags = validate(rc.resolved())
    for d in diags:
        print(f"warning: {d}")
    if not diags:
        print("ok: no diagnostics")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="pptomo", description="Pump-probe deconvolution and "
                                "excited-state tomography toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--model", help="model file, or a builtin name (dimer, fmo7)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. grid.n_delay=70")

    sp = sub.add_parser("simulate", help="generate heterodyne signals and the true response")
    common(sp)
    sp.add_argument("--noise", type=float)
    sp.add_argument("--n-samples", type=int)

    sp = sub.add_parser("invert-response", help="recover R_PP from heterodyne signals")
    common(sp)
    sp.add_argument("--input", required=True, help="directory with signal_abs.csv etc.")
    sp.add_argument("--probe-file", help="probe envelope CSV (t_fs, re, im)")
    sp.add_argument("--stage1", choices=("naive", "tikhonov"))
    sp.add_argument("--stage2", choices=("naive", "tikhonov"))
    sp.add_argument("--penalty", choices=("I", "D1", "D2"))
    sp.add_argument("--selector", choices=("gcv", "ncp", "fixed", "oracle"))
    sp.add_argument("--lambda", dest="lambda", type=float)

    sp = sub.add_parser("tomography", help="dimer Bloch-vector reconstruction")
    common(sp)
    sp.add_argument("--response", required=True, help="response_est.csv or response_true.csv")
    sp.add_argument("--truth", help="bloch_truth.csv for fidelity scoring")
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--normalization-delay", type=float)
    sp.add_argument("--r0", type=float, help="fix the excited-state population directly")

    sp = sub.add_parser("feasibility", help="singular spectra of the global pump-probe map")
    common(sp)
    sp.add_argument("--scenarios", default="cumulative", help="'cumulative' or a JSON file")
    sp.add_argument("--n-samples", type=int, default=1000)
    sp.add_argument("--bands", type=int, default=0, help="uncertainty draws for species bands")
    sp.add_argument("--band-samples", type=int, default=50, help="disorder draws per band draw")
    sp.add_argument("--site-sigma", type=float, default=20.0)
    sp.add_argument("--coupling-sigma", type=float, default=0.10)

    sp = sub.add_parser("species-spectra", help="species-associated spectra")
    common(sp)
    sp.add_argument("--polarization", default="iso")
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--n-samples", type=int, default=1)
    sp.add_argument("--uncertainty-draws", type=int, default=0)
    sp.add_argument("--site-sigma", type=float, default=20.0)
    sp.add_argument("--coupling-sigma", type=float, default=0.10)

    sp = sub.add_parser("reproduce", help="regenerate benchmark tables and figure data")
    common(sp)
    sp.add_argument("target", choices=("table1", "table3", "fig3", "cond", "fig5", "fig6", "all"))
    sp.add_argument("--instances", type=int, default=100)
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--noise", type=float, default=1e-2)

    sp = sub.add_parser("validate", help="dry-run checks of a configuration")
    common(sp)
    return p


HANDLERS = {"simulate": cmd_simulate, "invert-response": cmd_invert, "tomography": cmd_tomography,
            "feasibility": cmd_feasibility, "species-spectra": cmd_species,
            "reproduce": cmd_reproduce, "validate": cmd_validate}


def run_config_from(args) -> RunConfig:
    experiment = load_config_file(args.config) if args.config else {}
    overrides = list(args.set)
    if getattr(args, "noise", None) is not None and args.command == "simulate":
        overrides.append(f"noise={args.noise}")
    if getattr(args, "n_samples", None) is not None and args.command == "simulate":
        overrides.append(f"ensemble.n_samples={args.n_samples}")
    command = "reproduce" if args.command == "validate" else args.command
    return RunConfig(command, args.model, experiment, args.seed, args.out, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        rc = run_config_from(args)
        return HANDLERS[args.command](rc, args)
    except (ConfigError, ModelError, BathError, ScenarioError, io.SchemaError,
            RegularizationError, SimulationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TomographyInfeasible, DeconvolutionError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
