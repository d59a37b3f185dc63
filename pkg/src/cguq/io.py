"""Plain-text dataset and result formats.

Machine files print floats with 17 significant digits so a write/read
round trip is exact. Lines starting with ``#`` carry metadata; readers skip
them except for the ones they understand (``# h=`` in time-series files,
``# config=`` blocks in pair trajectories).
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import re
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import BasisSet, ConfidenceReport, IidDataset, ParamEstimate, TimeSeriesDataset
from .exceptions import ArgumentError

FLOAT_FMT = ".17g"


def fmt(v) -> str:
    return format(float(v), FLOAT_FMT)


def meta_line(meta: Optional[dict]) -> str:
    if not meta:
        return ""
    return "# cguq " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n"


def _write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise ArgumentError(f"output directory {d} does not exist")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _data_lines(path):
    with open(path, newline="") as fh:
        return [ln for ln in fh.read().splitlines() if ln.strip() and not ln.startswith("#")]


def _comments(path):
    with open(path, newline="") as fh:
        return [ln for ln in fh.read().splitlines() if ln.startswith("#")]


def _rows(header: Sequence[str], rows: Iterable[Sequence], meta=None, pre: str = "") -> str:
    buf = _io.StringIO()
    buf.write(meta_line(meta))
    buf.write(pre)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _numeric_table(lines):
    header = next(csv.reader([lines[0]]))
    body = np.array([[float(v) for v in row] for row in csv.reader(lines[1:])], dtype=float)
    if body.size == 0:
        body = body.reshape(0, len(header))
    return header, body


# ---------------------------------------------------------------------------
# Datasets


def iid_to_csv(data: IidDataset, meta=None) -> str:
    D = data.states.shape[1]
    header = [f"x_{k + 1}" for k in range(D)]
    cols = [data.states]
    if data.cg_forces is not None:
        header += [f"f_{k + 1}" for k in range(data.cg_forces.shape[1])]
        cols.append(data.cg_forces)
    return _rows(header, np.hstack(cols), meta)


def write_iid_csv(path, data: IidDataset, meta=None):
    _write_text(path, iid_to_csv(data, meta))


def read_iid_csv(path) -> IidDataset:
    header, body = _numeric_table(_data_lines(path))
    xi = [i for i, h in enumerate(header) if h.startswith("x_")]
    fi = [i for i, h in enumerate(header) if h.startswith("f_")]
    if not xi or len(xi) + len(fi) != len(header):
        raise ArgumentError(f"{path}: expected columns x_1..x_D[,f_1..f_d], got {header}")
    return IidDataset(body[:, xi], body[:, fi] if fi else None)


def ts_to_csv(data: TimeSeriesDataset, meta=None) -> str:
    D = data.paths[0].shape[1]
    header = ["path_id", "step"] + [f"x_{k + 1}" for k in range(D)]
    with_f = data.cg_forces is not None
    if with_f:
        header += [f"f_{k + 1}" for k in range(data.cg_forces[0].shape[1])]
    rows = []
    for p, path in enumerate(data.paths):
        for s in range(path.shape[0]):
            row = [p, s] + [fmt(v) for v in path[s]]
            if with_f:
                row += [fmt(v) for v in data.cg_forces[p][s]]
            rows.append(row)
    return _rows(header, rows, meta, pre=f"# h={fmt(data.time_step)}\n")


def write_ts_csv(path, data: TimeSeriesDataset, meta=None):
    _write_text(path, ts_to_csv(data, meta))


def read_ts_csv(path, stationary: bool = True) -> TimeSeriesDataset:
    h = None
    for c in _comments(path):
        m = re.match(r"#\s*h\s*=\s*(\S+)", c)
        if m:
            h = float(m.group(1))
    if h is None:
        raise ArgumentError(f"{path}: missing '# h=<real>' metadata line")
    header, body = _numeric_table(_data_lines(path))
    if header[:2] != ["path_id", "step"]:
        raise ArgumentError(f"{path}: expected columns path_id,step,x_1..x_D")
    xi = [i for i, c in enumerate(header) if c.startswith("x_")]
    fi = [i for i, c in enumerate(header) if c.startswith("f_")]
    ids = body[:, 0].astype(int)
    paths, forces = [], []
    for p in np.unique(ids):
        rows = body[ids == p]
        rows = rows[np.argsort(rows[:, 1], kind="stable")]
        paths.append(rows[:, xi])
        forces.append(rows[:, fi])
    return TimeSeriesDataset(tuple(paths), h, stationary=stationary, cg_forces=tuple(forces) if fi else None)


def read_dataset(path):
    """Read an i.i.d. or time-series CSV, telling them apart by the header."""
    lines = _data_lines(path)
    if not lines:
        raise ArgumentError(f"{path}: empty file")
    if lines[0].startswith("path_id"):
        return read_ts_csv(path)
    return read_iid_csv(path)


# ---------------------------------------------------------------------------
# JSON records


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    _write_text(path, _dump_json(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_basis_json(path, basis: BasisSet):
    write_json(path, basis.to_dict())


def read_basis_json(path) -> BasisSet:
    return BasisSet.from_dict(read_json(path))


def write_estimate_json(path, est: ParamEstimate, meta=None):
    d = est.to_dict()
    if meta:
        d["meta"] = meta
    write_json(path, d)


def read_estimate_json(path) -> ParamEstimate:
    d = read_json(path)
    d.pop("meta", None)
    return ParamEstimate.from_dict(d)


# ---------------------------------------------------------------------------
# Confidence reports and bands

REPORT_HEADER = ["param", "estimate", "variance", "lower", "upper", "method", "alpha"]


def reports_to_csv(reports: Sequence[ConfidenceReport], meta=None) -> str:
    rows = []
    for rep in reports:
        var = rep.variance if rep.variance is not None else np.full(rep.estimate.shape, np.nan)
        for k in range(rep.estimate.size):
            rows.append([k + 1, fmt(rep.estimate[k]), fmt(var[k]), fmt(rep.lower[k]), fmt(rep.upper[k]),
                         rep.method, fmt(rep.alpha)])
    return _rows(REPORT_HEADER, rows, meta)


def write_reports_csv(path, reports, meta=None):
    _write_text(path, reports_to_csv(list(reports), meta))


def read_reports_csv(path) -> list:
    lines = _data_lines(path)
    rd = list(csv.DictReader(lines))
    out = []
    for method in dict.fromkeys(r["method"] for r in rd):
        rows = [r for r in rd if r["method"] == method]
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        var = col("variance")
        out.append(ConfidenceReport(method, float(rows[0]["alpha"]), col("estimate"), col("lower"), col("upper"),
                                    None if np.all(np.isnan(var)) else var))
    return out


def band_to_csv(report: ConfidenceReport, meta=None) -> str:
    if report.grid is None:
        raise ArgumentError("band report has no grid")
    rows = zip(map(fmt, report.grid), map(fmt, report.lower), map(fmt, report.estimate), map(fmt, report.upper))
    return _rows(["grid", "lower", "estimate", "upper"], rows, meta)


def write_band_csv(path, report: ConfidenceReport, meta=None):
    _write_text(path, band_to_csv(report, meta))


def comparison_table(reports: Sequence[ConfidenceReport], digits: int = 4) -> str:
    """Human-readable table: one row per parameter, variance and CI per method."""
    head = ["param", "estimate"]
    for rep in reports:
        head += [f"var[{rep.method}]", f"CI[{rep.method}]"]
    lines = ["  ".join(head)]
    f = f"{{:.{digits}f}}"
    for k in range(reports[0].estimate.size):
        cells = [f"theta_{k + 1}", f.format(reports[0].estimate[k])]
        for rep in reports:
            v = "-" if rep.variance is None else f.format(rep.variance[k])
            cells += [v, f"[{f.format(rep.lower[k])}, {f.format(rep.upper[k])}]"]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Curves


def write_xy_csv(path, header, columns, meta=None):
    cols = [np.asarray(c, dtype=float) for c in columns]
    rows = [[fmt(v) for v in r] for r in zip(*cols)]
    _write_text(path, _rows(header, rows, meta))


def write_potential_csv(path, r, u, lower=None, upper=None, meta=None):
    if (lower is None) != (upper is None):
        raise ArgumentError("give both lower and upper or neither")
    if lower is None:
        write_xy_csv(path, ["r", "u"], [r, u], meta)
    else:
        write_xy_csv(path, ["r", "u", "lower", "upper"], [r, u, lower, upper], meta)


def write_density_csv(path, xs, density, meta=None):
    write_xy_csv(path, ["x", "density"], [xs, density], meta)


def read_xy_csv(path):
    header, body = _numeric_table(_data_lines(path))
    return {h: body[:, i] for i, h in enumerate(header)}


# ---------------------------------------------------------------------------
# Pair trajectories


def pair_trajectory_to_csv(configs, meta=None) -> str:
    buf = _io.StringIO()
    buf.write(meta_line(meta))
    for i, c in enumerate(configs):
        buf.write(f"# config={i} box={fmt(c.box_length)}\n")
        buf.write("I,x,y,z,fx,fy,fz\n")
        for I in range(c.m):
            vals = list(c.positions[I]) + list(c.forces[I])
            buf.write(f"{I}," + ",".join(fmt(v) for v in vals) + "\n")
    return buf.getvalue()


def write_pair_trajectory(path, configs, meta=None):
    _write_text(path, pair_trajectory_to_csv(configs, meta))


def read_pair_trajectory(path) -> list:
    from .pairfm import ParticleConfig

    configs, box, rows = [], None, []

    def flush():
        if box is not None:
            if not rows:
                raise ArgumentError(f"{path}: empty configuration block")
            a = np.array(rows, dtype=float)
            a = a[np.argsort(a[:, 0], kind="stable")]
            configs.append(ParticleConfig(a[:, 1:4], a[:, 4:7], box))

    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            m = re.match(r"#\s*config=(\d+)\s+box=(\S+)", ln)
            if m:
                flush()
                box, rows = float(m.group(2)), []
            elif ln.startswith("#") or ln.startswith("I,"):
                continue
            else:
                if box is None:
                    raise ArgumentError(f"{path}: data row before any '# config=' header")
                rows.append([float(v) for v in ln.split(",")])
    flush()
    if not configs:
        raise ArgumentError(f"{path}: no configurations")
    return configs
