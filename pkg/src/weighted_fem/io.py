"""Artifact writers: VTK legacy ASCII, CSV, JSON, MatrixMarket.

All writers are deterministic: no timestamps, fixed float formatting,
sorted JSON keys.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import scipy.io

from . import __version__

VTK_TRIANGLE = 5


def config_hash(text):
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).hexdigest()


def provenance(config_text, command):
    return {"config_sha256": config_hash(config_text), "version": __version__,
            "command": command, "package": "weighted_fem"}


def provenance_lines(prov):
    return [f"{k}: {prov[k]}" for k in sorted(prov)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path, obj, prov=None):
    """Write ``obj`` with a ``provenance`` entry; NaN and inf become null."""
    data = dict(_jsonable(obj))
    if prov is not None:
        data["provenance"] = prov
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path, text, prov=None):
    """Write CSV ``text`` behind ``#`` provenance comment lines."""
    head = "".join(f"# {line}\n" for line in provenance_lines(prov)) if prov else ""
    Path(path).write_text(head + text)


def vtk_text(mesh, point_data=None, title="weighted_fem field"):
    """Legacy ASCII UNSTRUCTURED_GRID with triangles and scalar point data."""
    title = " ".join(str(title).split())[:255]
    pts = mesh.vertices
    tri = mesh.triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(pts)} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in pts.tolist()]
    out.append(f"CELLS {len(tri)} {4 * len(tri)}")
    out += [f"3 {a} {b} {c}" for a, b, c in tri.tolist()]
    out.append(f"CELL_TYPES {len(tri)}")
    out += [str(VTK_TRIANGLE)] * len(tri)
    if point_data:
        out.append(f"POINT_DATA {len(pts)}")
        for name, vals in point_data.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (len(pts),):
                raise ValueError(f"point data {name!r} has shape {vals.shape}, need ({len(pts)},)")
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(v) for v in vals.tolist()]
    return "\n".join(out) + "\n"


def write_vtk(path, mesh, point_data=None, title="weighted_fem field"):
    Path(path).write_text(vtk_text(mesh, point_data, title))


def read_vtk_points(path):
    """Points, triangles, and scalar fields of a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    i = 4
    n = int(lines[i].split()[1])
    pts = np.array([[float(t) for t in lines[i + 1 + k].split()[:2]] for k in range(n)])
    i += n + 1
    m = int(lines[i].split()[1])
    tri = np.array([[int(t) for t in lines[i + 1 + k].split()[1:]] for k in range(m)])
    i += m + 1 + m + 1
    fields = {}
    if i < len(lines) and lines[i].startswith("POINT_DATA"):
        i += 1
        while i < len(lines):
            name = lines[i].split()[1]
            fields[name] = np.array([float(t) for t in lines[i + 2:i + 2 + n]])
            i += 2 + n
    return pts, tri, fields


def write_matrix_market(path, A, comment=""):
    scipy.io.mmwrite(str(path), A, comment=comment, symmetry="general")
