"""Field and mask dumps in the UCLAB-FIELD v1 format.

Layout: one ASCII header line

    UCLAB-FIELD v1 dim=<n> nx=<..> [ny=<..>] nt=<..> m=<..> dtype=f64

followed by the values of the ``(m, nx[, ny], nt)`` array in row-major order,
either as little-endian binary float64 or as whitespace-separated text (one
time-trace per line).  Masks use the same layout with m=1 and values 0/1;
purely spatial masks are written with nt=1.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import GeometryError
from .grids import Grid, RegionMask, SpaceTimeField

_MAGIC = "UCLAB-FIELD v1"


def _header(dim, node_count, nt, m):
    parts = [_MAGIC, f"dim={dim}", f"nx={node_count[0]}"]
    if dim >= 2:
        parts.append(f"ny={node_count[1]}")
    if dim >= 3:
        parts.append(f"nz={node_count[2]}")
    parts += [f"nt={nt}", f"m={m}", "dtype=f64"]
    return " ".join(parts)


def dump_array(path, values: np.ndarray, dim: int, node_count, nt: int,
               text: bool = False) -> None:
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    header = _header(dim, node_count, nt, m)
    flat = values.reshape(m, -1, nt)
    if text:
        with open(path, "w") as f:
            f.write(header + " mode=text\n")
            for comp in range(m):
                for row in flat[comp]:
                    f.write(" ".join(repr(float(v)) for v in row) + "\n")
    else:
        with open(path, "wb") as f:
            f.write((header + " mode=binary\n").encode("ascii"))
            f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def dump_field(path, field: SpaceTimeField, text: bool = False) -> None:
    g = field.grid
    dump_array(path, field.values, g.dim, g.node_count, g.nt, text=text)


def dump_mask(path, mask, grid: Grid = None, text: bool = False) -> None:
    """Dump a RegionMask (nt=1) or a space-time boolean array (full nt)."""
    if isinstance(mask, RegionMask):
        values = mask.values.astype(float)[None, ..., None]
        dump_array(path, values, mask.grid.dim, mask.grid.node_count, 1, text=text)
    else:
        if grid is None:
            raise GeometryError("grid required when dumping a raw space-time mask")
        values = np.asarray(mask, dtype=float)[None, ...]
        dump_array(path, values, grid.dim, grid.node_count, grid.nt, text=text)


def _parse_header(line: str) -> dict:
    if not line.startswith(_MAGIC):
        raise GeometryError(f"not a {_MAGIC} dump")
    info = {}
    for tok in line[len(_MAGIC):].split():
        key, _, val = tok.partition("=")
        info[key] = val
    for key in ("dim", "nx", "nt", "m"):
        if key not in info:
            raise GeometryError(f"dump header missing {key}")
    return info


def load_array(path):
    """Read a dump; returns (values, info) with values of shape (m, *nodes, nt)."""
    with open(path, "rb") as f:
        line = f.readline().decode("ascii").rstrip("\n")
        info = _parse_header(line)
        dim = int(info["dim"])
        shape = [int(info["m"]), int(info["nx"])]
        if dim >= 2:
            shape.append(int(info["ny"]))
        if dim >= 3:
            shape.append(int(info["nz"]))
        shape.append(int(info["nt"]))
        count = int(np.prod(shape))
        if info.get("mode", "binary") == "text":
            body = f.read().decode("ascii")
            values = np.array(body.split(), dtype=float)
        else:
            values = np.frombuffer(f.read(), dtype="<f8")
    if values.size != count:
        raise GeometryError(
            f"dump {os.path.basename(path)} has {values.size} values, expected {count}")
    return values.reshape(shape).astype(float), info


def load_field(path, grid: Grid) -> SpaceTimeField:
    values, info = load_array(path)
    if values.shape[1:] != grid.shape_spacetime:
        raise GeometryError("dump shape does not match the requested grid")
    return SpaceTimeField(grid, values)
