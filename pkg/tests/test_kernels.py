import os
import subprocess
import sys

import numpy as np
import pytest

from pptomo import _kernels
from pptomo.bath import BathSpec, redfield_rates
from pptomo.constants import default_threads, numba_enabled
from pptomo.model import DATA_DIR, diagonalize, load_model_file
from pptomo.response import ALL_PAIRS

numba = pytest.importorskip("numba")


@pytest.mark.parametrize("value,expect", [("1", False), ("true", False), ("0", True),
                                          ("", True), ("no", True)])
def test_disable_flag(monkeypatch, value, expect):
    monkeypatch.setenv("PPTOMO_DISABLE_NUMBA", value)
    assert numba_enabled() is expect


def test_thread_env(monkeypatch):
    monkeypatch.setenv("PPTOMO_THREADS", "4")
    assert default_threads() == 4
    monkeypatch.setenv("PPTOMO_THREADS", "zero")
    assert default_threads() == 1
    monkeypatch.setenv("PPTOMO_THREADS", "-2")
    assert default_threads() == 1


def _pathway_inputs(seed=0):
    model, raw = load_model_file(DATA_DIR / "fmo7_example.json")
    b = diagonalize(model)
    r = redfield_rates(b, BathSpec(35.0, 106.0, 77.0))
    from pptomo.response import lineshape_factors

    F, Fp = lineshape_factors(b, r, np.linspace(11900.0, 12800.0, 57))
    return b.dipoles_g_to_1, b.dipoles_1_to_2, F, Fp


def test_pathways_numba_matches_numpy():
    mu_g1, mu_12, F, Fp = _pathway_inputs()
    a = _kernels.pathways(mu_g1, mu_12, F, Fp, ALL_PAIRS, use_numba=True)
    b = _kernels.pathways(mu_g1, mu_12, F, Fp, ALL_PAIRS, use_numba=False)
    assert a.shape == (9, 7, 7, 57)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_env_var_selects_numpy_path(monkeypatch):
    mu_g1, mu_12, F, Fp = _pathway_inputs()
    calls = []
    orig = _kernels._pathways_np
    monkeypatch.setattr(_kernels, "_pathways_np", lambda *a: calls.append(1) or orig(*a))
    monkeypatch.setenv("PPTOMO_DISABLE_NUMBA", "1")
    _kernels.pathways(mu_g1, mu_12, F, Fp, ALL_PAIRS)
    assert calls == [1]
    monkeypatch.setenv("PPTOMO_DISABLE_NUMBA", "0")
    _kernels.pathways(mu_g1, mu_12, F, Fp, ALL_PAIRS)
    assert calls == [1]


def test_full_simulation_identical_without_numba(tmp_path):
    """A CLI run with the numpy fallback reproduces the compiled run to rounding."""
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, PPTOMO_DISABLE_NUMBA=flag)
        d = tmp_path / flag
        r = subprocess.run([sys.executable, "-m", "pptomo.cli", "simulate", "--out", str(d),
                            "--set", "grid.n_freq=21", "--set", "grid.n_delay=20",
                            "--set", "ensemble.n_samples=4"], env=env, capture_output=True,
                           text=True)
        assert r.returncode == 0, r.stderr
        from pptomo.io import read_surface

        outs[flag] = read_surface(d / "signal_abs.csv", "signal_abs")[2]
    a, b = outs["0"], outs["1"]
    assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()
