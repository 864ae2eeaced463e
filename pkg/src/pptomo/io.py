"""CSV and JSON readers/writers for pptomo artifacts.

Every CSV starts with one comment line ``# pptomo <schema> v<version>; ...``
giving the schema name and units, followed by a header row. Floats are
written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
FMT = "%.17g"


class SchemaError(ValueError):
    pass


def _comment(schema, units):
    return f"# pptomo {schema} v{SCHEMA_VERSION}; {units}\n"


def _read_comment(fh, schema):
    line = fh.readline()
    if not line.startswith("# pptomo "):
        raise SchemaError(f"{getattr(fh, 'name', 'file')}: missing pptomo header comment")
    found = line.split()[2]
    if found != schema:
        raise SchemaError(f"expected schema {schema!r}, found {found!r}")
    return line


def _fmt(x):
    return FMT % x


# --- surfaces -----------------------------------------------------------------

def write_surface(path, freqs, delays, values, schema="signal", units="signal (arb.)"):
    """Real surface: rows are frequencies, columns delays."""
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(_comment(schema, f"rows omega (cm^-1); columns delay T (fs); values {units}"))
        w = csv.writer(fh)
        w.writerow(["omega_cm1"] + [_fmt(t) for t in delays])
        for f, row in zip(freqs, values):
            w.writerow([_fmt(f)] + [_fmt(v) for v in row])


def read_surface(path, schema="signal"):
    """Returns (freqs, delays, values)."""
    with open(path, newline="") as fh:
        _read_comment(fh, schema)
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "omega_cm1":
        raise SchemaError(f"{path}: header row must start with omega_cm1")
    delays = np.array([float(x) for x in rows[0][1:]])
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    if data.ndim != 2 or data.shape[1] != delays.size + 1:
        raise SchemaError(f"{path}: ragged rows")
    return data[:, 0], delays, data[:, 1:]


def write_complex_surface(path, freqs, delays, values, schema="response"):
    """Complex surface with interleaved re/im columns per delay."""
    values = np.asarray(values, dtype=complex)
    with open(path, "w", newline="") as fh:
        fh.write(_comment(schema, "rows omega (cm^-1); columns re_<T>, im_<T> with T in fs; "
                                  "values R_PP (arb.)"))
        w = csv.writer(fh)
        header = ["omega_cm1"]
        for t in delays:
            header += [f"re_{_fmt(t)}", f"im_{_fmt(t)}"]
        w.writerow(header)
        for f, row in zip(freqs, values):
            out = [_fmt(f)]
            for v in row:
                out += [_fmt(v.real), _fmt(v.imag)]
            w.writerow(out)


def read_complex_surface(path, schema="response"):
    with open(path, newline="") as fh:
        _read_comment(fh, schema)
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "omega_cm1" or len(header) % 2 != 1:
        raise SchemaError(f"{path}: malformed complex-surface header")
    delays = np.array([float(h[3:]) for h in header[1::2]])
    if any(not h.startswith("re_") for h in header[1::2]) or \
            any(not h.startswith("im_") for h in header[2::2]):
        raise SchemaError(f"{path}: columns must alternate re_/im_")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], delays, data[:, 1::2] + 1j * data[:, 2::2]


# --- tables -------------------------------------------------------------------

def write_table(path, schema, columns, rows, units=""):
    with open(path, "w", newline="") as fh:
        fh.write(_comment(schema, units or "see column names"))
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def read_table(path, schema):
    """Returns (columns, rows as lists of strings)."""
    with open(path, newline="") as fh:
        _read_comment(fh, schema)
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_probe(path, times, samples):
    write_table(path, "probe", ["t_fs", "re", "im"],
                [(float(t), float(s.real), float(s.imag)) for t, s in zip(times, samples)],
                "complex carrier-free probe envelope vs time (fs)")


def read_probe(path):
    cols, rows = read_table(path, "probe")
    if cols != ["t_fs", "re", "im"]:
        raise SchemaError(f"{path}: probe columns must be t_fs, re, im")
    a = np.array(rows, dtype=float)
    return a[:, 0], a[:, 1] + 1j * a[:, 2]


# --- manifests ----------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    out = {"pptomo": __version__, "python": platform.python_version(),
           "numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        out["numba"] = None
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(outdir, command, params, inputs=(), seed=None):
    """manifest.json with resolved parameters, versions, seed and input digests."""
    digests = {str(p): file_digest(p) for p in inputs if p is not None and Path(p).is_file()}
    write_json(Path(outdir) / "manifest.json",
               {"command": command, "params": params, "seed": seed,
                "inputs": digests, "versions": versions(), "schema_version": SCHEMA_VERSION})
