"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--samples N] [--repeat R]

Each kernel is run once to trigger compilation, then timed; the two paths
are also checked for agreement.
"""

import argparse
import time

import numpy as np

from pptomo.bath import BathSpec
from pptomo.forward import Pulse, ensemble_members, pump_second_order_ensemble
from pptomo.model import EnsembleSpec, diagonalize, load_model_file, reference_dimer, DATA_DIR
from pptomo.bath import redfield_rates
from pptomo.response import complex_basis_response


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_pump(n_samples, repeat):
    bases, rates = ensemble_members(reference_dimer(), BathSpec(), EnsembleSpec(n_samples, 0))
    delays = np.linspace(-200.0, 1200.0, 180)
    pump = Pulse()
    results = {}
    for use in (True, False):
        run = lambda: pump_second_order_ensemble(bases, rates, pump, delays, 12800.0,
                                                 use_numba=use)[0]
        run()
        results[use] = best_of(run, repeat)
    return results


def bench_pathways(repeat):
    model, _ = load_model_file(DATA_DIR / "fmo7_example.json")
    b = diagonalize(model)
    r = redfield_rates(b, BathSpec(35.0, 106.0, 77.0))
    grid = np.linspace(11800.0, 12800.0, 400)
    pols = np.array([np.eye(3)[i] for i in range(3)])
    from pptomo import _kernels

    results = {}
    for use in (True, False):
        orig = _kernels.numba_enabled
        _kernels.numba_enabled = lambda use=use: use
        try:
            run = lambda: complex_basis_response(b, r, grid, "iso")
            run()
            results[use] = best_of(run, repeat)
        finally:
            _kernels.numba_enabled = orig
    return results


def report(name, results):
    (t_nb, a), (t_np, c) = results[True], results[False]
    err = np.max(np.abs(a - c)) / max(np.max(np.abs(c)), 1e-300)
    print(f"{name:<28s} numba {t_nb * 1e3:9.2f} ms   numpy {t_np * 1e3:9.2f} ms   "
          f"speedup {t_np / t_nb:6.1f}x   max rel diff {err:.1e}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=200, help="disorder draws for the pump kernel")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    report(f"pump second order (N={args.samples})", bench_pump(args.samples, args.repeat))
    report("pathway sums (7 sites)", bench_pathways(args.repeat))


if __name__ == "__main__":
    main()
