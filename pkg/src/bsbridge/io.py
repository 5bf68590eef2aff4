"""CSV / JSON artifacts. Every write goes to a temp file renamed into place."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .kernels import GeneratorMatrix, TransitionKernel


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(path, buf.getvalue())


def read_rows(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def field_rows(values, index_name="k", offset=0):
    """``(k, z, value)`` rows for a 2-D field."""
    for k, row in enumerate(values):
        for z, v in enumerate(row):
            yield (k + offset, z, float(v))


def write_matrix(path, m: GeneratorMatrix | TransitionKernel):
    """Dense row-major CSV whose first line is ``# n=..,dt=..,topology=..``."""
    grid = m.grid
    dt = getattr(m, "dt", None)
    n = m.entries.shape[0]
    topo = grid.topology if grid is not None else ""
    lines = [f"# n={n},dt={'' if dt is None else repr(float(dt))},topology={topo}"]
    for row in m.entries:
        lines.append(",".join(repr(float(v)) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_matrix(path):
    """Returns ``(entries, meta)`` for a file produced by :func:`write_matrix`."""
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise ValueError("missing '# n,dt,topology' header")
        meta = dict(kv.split("=", 1) for kv in head[1:].strip().split(","))
        entries = np.loadtxt(fh, delimiter=",", ndmin=2)
    meta["n"] = int(meta["n"])
    meta["dt"] = float(meta["dt"]) if meta.get("dt") else None
    if entries.shape != (meta["n"], meta["n"]):
        raise ValueError("matrix size disagrees with header")
    return entries, meta


SOLVE_REPORT_SCHEMA = {
    "type": "object",
    "required": ["scenario", "solve", "hjb", "entropy_check"],
    "properties": {
        "scenario": {"type": "string"},
        "solve": {
            "type": "object",
            "required": ["iterations", "constraint_gap", "entropy", "entropy_trace", "converged"],
            "properties": {
                "iterations": {"type": "integer", "minimum": 0},
                "constraint_gap": {"type": "number", "minimum": 0},
                "entropy": {"type": "number"},
                "entropy_trace": {"type": "array", "items": {"type": "number"}},
                "converged": {"type": "boolean"},
            },
        },
        "hjb": {
            "type": "object",
            "required": ["max_abs_residual", "window_l2_residual", "window_bulk_sup_residual", "discrete_residual_max",
                         "backward_identity_gap", "htransform_gap"],
        },
        "entropy_check": {
            "type": "object",
            "required": ["direct", "chain_rule"],
        },
    },
}

CERTIFICATE_SCHEMA = {
    "type": "object",
    "required": ["c", "r", "s", "C", "min_eigenvalue", "entropy_terms", "invariance", "feasible"],
    "properties": {
        "c": {"type": "number"},
        "r": {"type": "number"},
        "s": {"type": ["number", "null"]},
        "feasible": {"type": "boolean"},
        "entropy_terms": {"type": "object"},
        "invariance": {"type": "array", "items": {"type": "boolean"}},
    },
}
