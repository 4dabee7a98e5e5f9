"""File output: legacy VTK meshes, statistics tables and run manifests."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

__all__ = [
    "write_vtk",
    "lint_vtk",
    "STATS_COLUMNS",
    "stats_rows",
    "write_stats_csv",
    "read_stats_csv",
    "write_manifest",
]

STATS_COLUMNS = ("level", "energy_G", "energy_wF", "max_dev", "min_dev", "dofs",
                 "newton_iters", "global_estimate")
FOOTER_KEYS = ("fine_dof", "WU", "wall_time")


def write_vtk(path, mesh, point_vectors=None, cell_scalars=None, title="lcfem"):
    """Legacy ASCII unstructured grid with quad cells (VTK type 9).

    Parameters
    ----------
    point_vectors : dict, optional
        ``name -> (n_vertices, 3)`` arrays.
    cell_scalars : dict, optional
        ``name -> (n_cells,)`` arrays.
    """
    point_vectors = point_vectors or {}
    cell_scalars = cell_scalars or {}
    nv, nc = mesh.n_vertices, mesh.n_cells
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {nc} {5 * nc}")
    lines += ["4 " + " ".join(map(str, c)) for c in mesh.cells.tolist()]
    lines.append(f"CELL_TYPES {nc}")
    lines += ["9"] * nc
    if point_vectors:
        lines.append(f"POINT_DATA {nv}")
        for name, vals in point_vectors.items():
            vals = np.asarray(vals, dtype=float).reshape(nv, 3)
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(repr(v) for v in row) for row in vals.tolist()]
    if cell_scalars:
        lines.append(f"CELL_DATA {nc}")
        for name, vals in cell_scalars.items():
            vals = np.asarray(vals, dtype=float).reshape(nc)
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(v) for v in vals.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def lint_vtk(path):
    """Structural check of a legacy ASCII unstructured grid.

    Returns a summary dictionary; raises ``ValueError`` on the first
    inconsistency (section sizes, connectivity range, cell types, field
    lengths).
    """
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version"):
        raise ValueError("missing VTK header")
    if tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("not an ASCII unstructured grid")
    words = " ".join(tokens[4:]).split()
    pos = 0

    def take(k):
        nonlocal pos
        out = words[pos:pos + k]
        if len(out) < k:
            raise ValueError("file ends inside a section")
        pos += k
        return out

    summary = {"points": 0, "cells": 0, "point_fields": [], "cell_fields": []}
    section = None
    while pos < len(words):
        key = take(1)[0]
        if key == "POINTS":
            n, _ = take(2)
            summary["points"] = int(n)
            np.asarray(take(3 * int(n)), dtype=float)
        elif key == "CELLS":
            n, size = map(int, take(2))
            conn = np.asarray(take(size), dtype=np.int64)
            if size != 5 * n or np.any(conn[::5] != 4):
                raise ValueError("cells are not all quadrilaterals")
            ids = conn.reshape(n, 5)[:, 1:]
            if ids.min() < 0 or ids.max() >= summary["points"]:
                raise ValueError("connectivity refers to a missing point")
            summary["cells"] = n
        elif key == "CELL_TYPES":
            n = int(take(1)[0])
            if n != summary["cells"] or set(take(n)) != {"9"}:
                raise ValueError("cell type section inconsistent")
        elif key in ("POINT_DATA", "CELL_DATA"):
            n = int(take(1)[0])
            expected = summary["points"] if key == "POINT_DATA" else summary["cells"]
            if n != expected:
                raise ValueError(f"{key} size {n} does not match {expected}")
            section = key
        elif key == "VECTORS":
            name, _ = take(2)
            vals = np.asarray(take(3 * summary["points"]), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"non-finite values in {name}")
            summary["point_fields"].append(name)
        elif key == "SCALARS":
            name, _, ncomp = take(3)
            if take(2) != ["LOOKUP_TABLE", "default"]:
                raise ValueError("missing lookup table line")
            count = summary["cells"] if section == "CELL_DATA" else summary["points"]
            take(int(ncomp) * count)
            summary["cell_fields" if section == "CELL_DATA" else "point_fields"].append(name)
        else:
            raise ValueError(f"unexpected keyword {key!r}")
    return summary


def stats_rows(stats):
    """Per-level rows of :data:`STATS_COLUMNS` from a ``SolveStats``."""
    rows = []
    for rec in stats.levels:
        rows.append({
            "level": rec.level,
            "energy_G": rec.energy.G,
            "energy_wF": rec.energy.wF,
            "max_dev": rec.deviation.max_dev,
            "min_dev": rec.deviation.min_dev,
            "dofs": rec.n_dofs,
            "newton_iters": rec.newton_iters,
            "global_estimate": rec.global_estimate,
        })
    return rows


def _fmt(value, digits):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if digits is None:
        return repr(float(value))
    return f"{float(value):.{digits - 1}e}"


def write_stats_csv(path, stats, work_units=None, digits=None):
    """Write per-level statistics plus ``fine_dof``, ``WU`` and ``wall_time`` footer rows.

    ``digits=None`` writes full precision (round-trips exactly);
    ``digits=6`` gives the compact table format.
    """
    wu = stats.work_units if work_units is None else work_units
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for row in stats_rows(stats):
            w.writerow([_fmt(row[c], digits) for c in STATS_COLUMNS])
        w.writerow(["fine_dof", _fmt(int(stats.fine_dof), digits)])
        w.writerow(["WU", _fmt(wu, digits)])
        w.writerow(["wall_time", _fmt(stats.wall_time, digits)])


def read_stats_csv(path):
    """Parse a file written by :func:`write_stats_csv` into ``(rows, footer)``."""
    rows, footer = [], {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != STATS_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        for rec in reader:
            if not rec:
                continue
            if rec[0] in FOOTER_KEYS:
                footer[rec[0]] = int(rec[1]) if rec[0] == "fine_dof" else float(rec[1])
                continue
            row = {}
            for col, val in zip(STATS_COLUMNS, rec):
                row[col] = int(val) if col in ("level", "dofs", "newton_iters") else float(val)
            rows.append(row)
    return rows, footer


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_manifest(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
