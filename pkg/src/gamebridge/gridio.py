"""Grid import/export and atomic file writes.

Binary layout (little endian)::

    magic      8 bytes   b"GBGRID01"
    ndim       uint32
    N          uint32    time steps; N + 1 slices follow
    horizon    float64
    per axis   uint32 cells, float64 lo, float64 hi
    per slice  packbits of the C-order cell bits, ceil(n_cells / 8) bytes

The CSV form starts with a ``# spec`` comment line holding the grid spec as
JSON, then a header and one row per cell and slice:
``t_index, i1, ..., in, occupied``.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile

import numpy as np

from .bridge import GridSpec, TimeSlicedGrid

MAGIC = b"GBGRID01"


class GridFormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temporary file in the target directory, then rename it into place."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def spec_to_dict(spec: GridSpec) -> dict:
    return {"bounds": [list(b) for b in spec.bounds], "cells": list(spec.cells),
            "time_steps": spec.time_steps, "horizon": spec.horizon}


def spec_from_dict(d: dict) -> GridSpec:
    return GridSpec(tuple(map(tuple, d["bounds"])), tuple(d["cells"]), d["time_steps"],
                    d.get("horizon", 1.0))


def grid_to_bytes(grid: TimeSlicedGrid) -> bytes:
    spec = grid.spec
    out = [MAGIC, struct.pack("<IId", spec.ndim, spec.time_steps, spec.horizon)]
    for c, (lo, hi) in zip(spec.cells, spec.bounds):
        out.append(struct.pack("<Idd", c, lo, hi))
    for s in grid.bits:
        out.append(np.packbits(s.ravel()).tobytes())
    return b"".join(out)


def grid_from_bytes(data: bytes) -> TimeSlicedGrid:
    if data[:8] != MAGIC:
        raise GridFormatError("not a grid file (bad magic)")
    try:
        ndim, N, horizon = struct.unpack_from("<IId", data, 8)
        off = 8 + struct.calcsize("<IId")
        cells, bounds = [], []
        for _ in range(ndim):
            c, lo, hi = struct.unpack_from("<Idd", data, off)
            off += struct.calcsize("<Idd")
            cells.append(c)
            bounds.append((lo, hi))
    except struct.error as exc:
        raise GridFormatError(f"truncated header: {exc}") from None
    spec = GridSpec(tuple(bounds), tuple(cells), N, horizon)
    row = (spec.n_cells + 7) // 8
    if len(data) - off != row * (N + 1):
        raise GridFormatError(f"expected {row * (N + 1)} payload bytes, found {len(data) - off}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=off).reshape(N + 1, row)
    bits = np.unpackbits(raw, axis=1, count=spec.n_cells).astype(bool)
    return TimeSlicedGrid(spec, bits.reshape(spec.shape))


def save_grid(grid: TimeSlicedGrid, path) -> None:
    atomic_write(path, grid_to_bytes(grid))


def load_grid(path) -> TimeSlicedGrid:
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())


def grid_to_csv(grid: TimeSlicedGrid) -> str:
    spec = grid.spec
    buf = io.StringIO()
    buf.write("# spec " + json.dumps(spec_to_dict(spec)) + "\n")
    buf.write(",".join(["t_index", *(f"i{k + 1}" for k in range(spec.ndim)), "occupied"]) + "\n")
    idx = np.indices(spec.shape).reshape(spec.ndim + 1, -1).T
    table = np.column_stack([idx, grid.bits.ravel().astype(np.int64)])
    np.savetxt(buf, table, fmt="%d", delimiter=",")
    return buf.getvalue()


def grid_from_csv(text: str) -> TimeSlicedGrid:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# spec "):
        raise GridFormatError("missing '# spec' line")
    spec = spec_from_dict(json.loads(lines[0][len("# spec "):]))
    if len(lines) < 2 or len(lines[1].split(",")) != spec.ndim + 2:
        raise GridFormatError("header does not match the grid dimension")
    bits = np.zeros(spec.shape, dtype=bool)
    if len(lines) > 2:
        table = np.loadtxt(io.StringIO("\n".join(lines[2:])), dtype=np.int64, delimiter=",", ndmin=2)
        if table.shape[1] != spec.ndim + 2:
            raise GridFormatError("row width does not match the grid dimension")
        bits[tuple(table[:, :-1].T)] = table[:, -1].astype(bool)
    return TimeSlicedGrid(spec, bits)


def save_grid_csv(grid: TimeSlicedGrid, path) -> None:
    atomic_write(path, grid_to_csv(grid))


def load_grid_csv(path) -> TimeSlicedGrid:
    with open(path) as fh:
        return grid_from_csv(fh.read())


def boundary_cells(section: np.ndarray) -> np.ndarray:
    """Occupied cells with an unoccupied (or out-of-domain) axis neighbour."""
    padded = np.pad(section, 1, constant_values=False)
    inner = np.ones(section.shape, dtype=bool)
    core = tuple(slice(1, -1) for _ in range(section.ndim))
    for ax in range(section.ndim):
        for shift in (1, -1):
            inner &= np.roll(padded, shift, axis=ax)[core]
    return section & ~inner


def boundary_csv(grid: TimeSlicedGrid, slices) -> str:
    spec = grid.spec
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_index", "t", *(f"i{k + 1}" for k in range(spec.ndim)),
                *(f"x{k + 1}" for k in range(spec.ndim))])
    times = spec.times()
    for t in slices:
        if not 0 <= t <= spec.time_steps:
            raise IndexError(f"slice {t} outside 0..{spec.time_steps}")
        for idx in np.argwhere(boundary_cells(grid.bits[t])):
            w.writerow([t, repr(float(times[t])), *idx, *map(repr, map(float, spec.center_of(idx)))])
    return buf.getvalue()
