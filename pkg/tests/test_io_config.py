import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pptomo.config import (DEFAULTS, ConfigError, RunConfig, apply_override, build_experiment,
                           load_config_file, load_model, resolve, validate)
from pptomo.io import (SchemaError, file_digest, read_complex_surface, read_probe, read_surface,
                       read_table, write_complex_surface, write_manifest, write_probe,
                       write_surface, write_table)

finite = st.floats(-1e12, 1e12, allow_nan=False, allow_subnormal=False)


@given(arrays(float, (3, 4), elements=finite))
def test_surface_round_trip(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("io") / "s.csv"
    freqs, delays = np.linspace(12500, 13100, 3), np.array([50.0, 56.8, 63.6, 1000 / 3])
    write_surface(p, freqs, delays, values)
    f, d, v = read_surface(p)
    assert np.array_equal(f, freqs) and np.array_equal(d, delays) and np.array_equal(v, values)


@given(arrays(float, (2, 3), elements=finite), arrays(float, (2, 3), elements=finite))
def test_complex_surface_round_trip(tmp_path_factory, re, im):
    p = tmp_path_factory.mktemp("io") / "r.csv"
    values = re + 1j * im
    write_complex_surface(p, [1.0, 2.0], [0.1, 0.2, 0.3], values)
    f, d, v = read_complex_surface(p)
    assert np.array_equal(v, values) and np.array_equal(d, [0.1, 0.2, 0.3])


def test_probe_round_trip(tmp_path):
    t = np.linspace(-100, 100, 11)
    s = np.exp(-t ** 2 / 900) * np.exp(0.01j * t)
    write_probe(tmp_path / "p.csv", t, s)
    t2, s2 = read_probe(tmp_path / "p.csv")
    assert np.array_equal(t, t2) and np.array_equal(s, s2)


def test_schema_errors(tmp_path):
    p = tmp_path / "s.csv"
    write_surface(p, [1.0], [2.0], [[3.0]])
    with pytest.raises(SchemaError, match="schema"):
        read_surface(p, "response")
    p.write_text("omega_cm1,1\n1,2\n")
    with pytest.raises(SchemaError, match="header"):
        read_surface(p)
    p.write_text("# pptomo signal v1; x\nomega_cm1,1,2\n1,2\n")
    with pytest.raises(SchemaError, match="ragged"):
        read_surface(p)
    p.write_text("# pptomo response v1; x\nomega_cm1,re_1,re_2\n1,2,3\n")
    with pytest.raises(SchemaError):
        read_complex_surface(p)
    write_table(p, "probe", ["t", "x", "y"], [(0.0, 1.0, 2.0)])
    with pytest.raises(SchemaError, match="columns"):
        read_probe(p)


def test_table_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    write_table(p, "fidelity", ["delay_fs", "label", "value"], [(1.0, "a", 0.1 + 0.2)])
    cols, rows = read_table(p, "fidelity")
    assert cols == ["delay_fs", "label", "value"]
    assert float(rows[0][2]) == 0.1 + 0.2 and rows[0][1] == "a"


def test_manifest_is_deterministic(tmp_path):
    inp = tmp_path / "in.csv"
    write_surface(inp, [1.0], [2.0], [[3.0]])
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        write_manifest(tmp_path / d, "simulate", {"x": np.float64(1.5), "n": np.int64(3),
                                                  "arr": np.arange(2), "inf": np.inf}, [inp], 7)
    a = (tmp_path / "a" / "manifest.json").read_text()
    assert a == (tmp_path / "b" / "manifest.json").read_text()
    m = json.loads(a)
    assert m["seed"] == 7 and m["inputs"][str(inp)] == file_digest(inp)
    assert m["params"] == {"x": 1.5, "n": 3, "arr": [0, 1], "inf": "inf"}
    assert "numpy" in m["versions"]


# --- config -------------------------------------------------------------------

def test_defaults_validate_cleanly():
    assert validate(resolve()) == []


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key 'grid.n_frq'"):
        resolve({"grid": {"n_frq": 3}})
    with pytest.raises(ConfigError, match="unknown"):
        resolve(overrides=["pump.width=3"])
    with pytest.raises(ConfigError, match="key=value"):
        resolve(overrides=["noise"])
    with pytest.raises(ConfigError):
        RunConfig("simulat")


def test_overrides_and_precedence():
    cfg = resolve({"noise": 0.1, "grid": {"n_freq": 11}}, ["noise=0.01", "pump.fwhm_fs=30",
                                                           "bath.temperature_K=77"])
    assert cfg["noise"] == 0.01 and cfg["grid"]["n_freq"] == 11
    assert cfg["pump"]["fwhm_fs"] == 30 and cfg["bath"]["temperature_K"] == 77
    assert DEFAULTS["noise"] == 0.0  # defaults untouched
    rc = RunConfig("simulate", model="fmo7", experiment={"seed": 1}, seed=5)
    r = rc.resolved()
    assert r["model"] == "fmo7" and r["seed"] == 5
    c = {"a": {"b": 1}}
    apply_override(c, "a.b=\"text\"")
    assert c["a"]["b"] == "text"


def test_parse_errors_report_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "noise": 0.1,\n  "seed": ,\n}\n')
    with pytest.raises(ConfigError, match=r"bad.json:3:\d+"):
        load_config_file(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="mapping"):
        load_config_file(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config_file(tmp_path / "missing.json")


def test_negative_temperature_is_hard_error():
    with pytest.raises(ConfigError, match="bath"):
        validate(resolve(overrides=["bath.temperature_K=-5"]))


def test_missing_model_file():
    with pytest.raises(ConfigError, match="not found"):
        load_model(resolve(overrides=['model="nope.json"']))


def test_overlap_warning_reported():
    diags = validate(resolve(overrides=["grid.delay_min_fs=30", "pump.fwhm_fs=40"]))
    assert any("overlap" in d for d in diags)


def test_soft_diagnostics():
    diags = validate(resolve(overrides=["grid.n_delay=2", "inversion.selector=\"fixed\"",
                                        "inversion.lambda=1e-20"]))
    assert any("fewer than 3" in d for d in diags)
    assert any("clamped" in d for d in diags)
    diags = validate(resolve(overrides=["grid.freq_min_cm1=12700"]))
    assert any("outside" in d for d in diags)


def test_hard_inversion_errors():
    with pytest.raises(ConfigError, match="selector"):
        validate(resolve(overrides=['inversion.selector="lcurve"']))
    with pytest.raises(ConfigError, match="needs"):
        validate(resolve(overrides=['inversion.selector="fixed"']))
    with pytest.raises(ConfigError, match="noise"):
        validate(resolve(overrides=["noise=-1"]))


def test_build_experiment_from_defaults():
    exp = build_experiment(resolve())
    assert exp.grid.probe_freqs.size == 181 and exp.grid.delays.size == 140
    assert exp.pump.fwhm == 40.0 and exp.ensemble.n_samples == 200
