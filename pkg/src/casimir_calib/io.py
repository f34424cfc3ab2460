"""Run and report file formats.

Run files are CSV with ``#`` header lines carrying ``key: value`` metadata
(values JSON-encoded), a mandatory ``units`` declaration and a header row.
Reports are JSON key-value trees; each plot series goes to a two-column CSV
sidecar next to the report.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .pipeline.analysis import AnalysisReport, jsonable
from .pipeline.simulate import BIASED, CAPACITANCE, REFERENCE, RunDataset

__all__ = [
    "RunFileError",
    "FORMAT_VERSION",
    "COLUMNS",
    "load_run_csv",
    "write_run_csv",
    "dump_run_csv",
    "write_report",
    "load_report",
    "write_table",
    "read_table",
]

FORMAT_VERSION = 1

#: column -> (SI unit, accepted units with factor to SI)
COLUMNS = {
    "record": (None, {}),
    "V_pzt": ("V", {"V": 1.0, "mV": 1e-3}),
    "V_bias": ("V", {"V": 1.0, "mV": 1e-3}),
    "nu_m": ("Hz", {"Hz": 1.0, "kHz": 1e3, "mHz": 1e-3}),
    "t": ("s", {"s": 1.0, "min": 60.0, "h": 3600.0}),
    "C": ("F", {"F": 1.0, "nF": 1e-9, "pF": 1e-12}),
    "x": ("m", {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9}),
}
REQUIRED = ("V_pzt", "V_bias", "nu_m", "t")
RECORDS = (BIASED, REFERENCE, CAPACITANCE)


class RunFileError(ValueError):
    """Malformed run file. ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None, column=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


def _parse_units(text, line):
    units = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise RunFileError(f"bad units entry {item!r}", line)
        k, u = (s.strip() for s in item.split("=", 1))
        units[k] = u
    return units


def load_run_csv(path) -> RunDataset:
    """Read a run file; values are converted to SI and row order is kept."""
    text = Path(path).read_text(encoding="utf-8")
    return _parse_run(text)


def _parse_run(text: str) -> RunDataset:
    meta, units = {}, None
    header, header_line = None, None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body and header is None:
                k, v = (s.strip() for s in body.split(":", 1))
                if k == "units":
                    units = (_parse_units(v, lineno), lineno)
                elif k:
                    try:
                        meta[k] = json.loads(v)
                    except json.JSONDecodeError:
                        meta[k] = v
            continue
        if header is None:
            header = [h.strip() for h in next(csv.reader([line]))]
            header_line = lineno
            continue
        rows.append((lineno, next(csv.reader([line]))))
    if header is None:
        raise RunFileError("missing header row")
    version = meta.get("format_version")
    if version is None:
        raise RunFileError("missing format_version in header")
    if version != FORMAT_VERSION:
        raise RunFileError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    unknown = [h for h in header if h not in COLUMNS]
    if unknown:
        raise RunFileError(f"unknown column {unknown[0]!r}", header_line, unknown[0])
    if len(set(header)) != len(header):
        raise RunFileError("duplicate column in header", header_line)
    for col in REQUIRED:
        if col not in header:
            raise RunFileError(f"missing required column {col!r}", header_line, col)
    if units is None:
        raise RunFileError("missing units declaration")
    unit_map, unit_line = units
    factors = {}
    for col in header:
        si, accepted = COLUMNS[col]
        if si is None:
            continue
        if col not in unit_map:
            raise RunFileError(f"no unit declared for column {col!r}", unit_line, col)
        u = unit_map[col]
        if u not in accepted:
            raise RunFileError(f"unit {u!r} not valid for column {col!r} (expected one of {sorted(accepted)})",
                               unit_line, col)
        factors[col] = accepted[u]
    extra = set(unit_map) - set(header)
    if extra:
        col = sorted(extra)[0]
        raise RunFileError(f"unit declared for absent column {col!r}", unit_line, col)

    idx = {h: i for i, h in enumerate(header)}
    cols = {h: [] for h in header}
    for lineno, fields in rows:
        if len(fields) != len(header):
            raise RunFileError(f"expected {len(header)} fields, got {len(fields)}", lineno)
        for h, f in zip(header, fields):
            f = f.strip()
            if h == "record":
                cols[h].append(f)
                continue
            if f == "":
                cols[h].append(math.nan)
                continue
            try:
                cols[h].append(float(f) * factors[h])
            except ValueError:
                raise RunFileError(f"non-numeric value {f!r} in column {h!r}", lineno, h) from None

    n = len(rows)
    nan = np.full(n, np.nan)
    V_pzt = np.array(cols["V_pzt"], dtype=float)
    V_bias = np.array(cols["V_bias"], dtype=float)
    nu = np.array(cols["nu_m"], dtype=float)
    t = np.array(cols["t"], dtype=float)
    C = np.array(cols["C"], dtype=float) if "C" in cols else nan
    x = np.array(cols["x"], dtype=float) if "x" in cols else None
    if "record" in cols:
        rec = np.array(cols["record"], dtype=object)
    else:
        rec = np.where(np.isnan(nu) & ~np.isnan(C), CAPACITANCE, np.where(np.isnan(V_bias), REFERENCE, BIASED))
    rec = rec.astype(str)
    for (lineno, _), r, vp, vb, nm, c in zip(rows, rec, V_pzt, V_bias, nu, C):
        if r not in RECORDS:
            raise RunFileError(f"unknown record kind {r!r}", lineno, "record")
        if np.isnan(vp):
            raise RunFileError("empty value in column 'V_pzt'", lineno, "V_pzt")
        if r == BIASED and np.isnan(vb):
            raise RunFileError("biased record without a value in column 'V_bias'", lineno, "V_bias")
        if r != CAPACITANCE and np.isnan(nm):
            raise RunFileError("frequency record without a value in column 'nu_m'", lineno, "nu_m")
        if r == CAPACITANCE and np.isnan(c):
            raise RunFileError("capacitance record without a value in column 'C'", lineno, "C")
    cap = rec == CAPACITANCE
    f = ~cap
    return RunDataset(
        rec[f],
        V_pzt[f],
        np.where(rec[f] == REFERENCE, np.nan, V_bias[f]),
        nu[f],
        t[f],
        V_pzt[cap],
        C[cap],
        None if x is None else x[f],
        meta,
    )


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def dump_run_csv(run: RunDataset) -> str:
    meta = dict(run.metadata)
    meta["format_version"] = FORMAT_VERSION
    meta.setdefault("tool_version", __version__)
    meta.setdefault("config_hash", None)
    meta.setdefault("seed", None)
    header = ["record", "V_pzt", "V_bias", "nu_m", "t", "C"]
    if run.x is not None:
        header.append("x")
    out = io.StringIO()
    out.write("# run file\n")
    for k in sorted(meta):
        out.write(f"# {k}: {json.dumps(jsonable(meta[k]), sort_keys=True)}\n")
    out.write("# units: " + ", ".join(f"{h}={COLUMNS[h][0]}" for h in header if COLUMNS[h][0]) + "\n")
    out.write(",".join(header) + "\n")
    for i in range(len(run)):
        row = [str(run.record[i]), _fmt(run.V_pzt[i]), _fmt(run.V_bias[i]), _fmt(run.nu_m[i]), _fmt(run.t[i]), ""]
        if run.x is not None:
            row.append(_fmt(run.x[i]))
        out.write(",".join(row) + "\n")
    for v, c in zip(run.cap_V_pzt, run.cap_C):
        row = [CAPACITANCE, _fmt(v), "", "", "", _fmt(c)]
        if run.x is not None:
            row.append("")
        out.write(",".join(row) + "\n")
    return out.getvalue()


def write_run_csv(run: RunDataset, path) -> None:
    Path(path).write_text(dump_run_csv(run), encoding="utf-8")


# --------------------------------------------------------------------------- tables and reports


def write_table(path, columns: dict, meta: dict | None = None) -> None:
    """Numeric CSV with ``#`` metadata lines; ``columns`` maps name -> equal-length sequence."""
    meta = {"tool_version": __version__, **(meta or {})}
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float) for n in names]
    with open(path, "w", encoding="utf-8") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}: {json.dumps(jsonable(meta[k]), sort_keys=True)}\n")
        fh.write(",".join(names) + "\n")
        for row in zip(*data):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_table(path) -> tuple[dict, dict]:
    """Inverse of :func:`write_table`: ``(columns, metadata)``."""
    meta, names, rows = {}, None, []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    k, v = (s.strip() for s in body.split(":", 1))
                    try:
                        meta[k] = json.loads(v)
                    except json.JSONDecodeError:
                        meta[k] = v
                continue
            fields = [f.strip() for f in line.split(",")]
            if names is None:
                names = fields
                continue
            if len(fields) != len(names):
                raise RunFileError(f"expected {len(names)} fields, got {len(fields)}", lineno)
            try:
                rows.append([float(f) if f else math.nan for f in fields])
            except ValueError:
                raise RunFileError("non-numeric value", lineno) from None
    if names is None:
        raise RunFileError("missing header row")
    arr = np.array(rows, dtype=float).reshape(-1, len(names))
    return {n: arr[:, i] for i, n in enumerate(names)}, meta


def _sidecar(path: Path, name: str) -> Path:
    return path.with_name(f"{path.stem}.{name}.csv")


def write_report(report: AnalysisReport, path) -> list[Path]:
    """Write the JSON report and one two-column CSV per series. Returns all written paths."""
    path = Path(path)
    d = report.to_dict()
    series = d.pop("series")
    stamp = {
        "tool_version": report.metadata.get("tool_version", __version__),
        "config_hash": report.metadata.get("config_hash"),
        "seed": report.metadata.get("seed"),
    }
    d["series_files"] = {}
    written = []
    for name, pts in series.items():
        sp = _sidecar(path, name)
        arr = np.asarray(pts, dtype=float).reshape(-1, 2)
        write_table(sp, {"x": arr[:, 0], "y": arr[:, 1]}, {**stamp, "series": name})
        d["series_files"][name] = sp.name
        written.append(sp)
    path.write_text(json.dumps(d, indent=1, sort_keys=True, allow_nan=False), encoding="utf-8")
    return [path, *written]


def load_report(path) -> AnalysisReport:
    path = Path(path)
    d = json.loads(path.read_text(encoding="utf-8"))
    series = {}
    for name, fname in d.pop("series_files", {}).items():
        cols, _ = read_table(path.with_name(fname))
        series[name] = [[float(a), float(b)] for a, b in zip(cols["x"], cols["y"])]
    d["series"] = series
    return AnalysisReport.from_dict(d)
