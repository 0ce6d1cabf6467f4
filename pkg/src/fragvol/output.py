"""Byte-stable CSV/JSON writers.

Every float is printed with 17 significant digits, which round-trips any
double exactly; non-finite values become ``null`` in JSON.
"""
from __future__ import annotations

import csv
import json
import math

import numpy as np

from .solver import RunOptions, frame_stride


def fmt(x) -> str:
    return format(float(x), ".17g")


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        return {None: "null", True: "true", False: "false"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode(str(k), indent, 0)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, 0) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with 17-significant-digit floats."""
    return _encode(obj, indent, 0) + "\n"


class TrajectoryCSV:
    """Run sink writing ``t, cell_or_species_id, regime, value`` rows.

    Continuous cells are numbered from 0, discrete species from 1.  Only
    every ``stride``-th state (and the final one) is written.
    """

    def __init__(self, fh, options: RunOptions | None = None):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.options = options or RunOptions()
        self.writer.writerow(["t", "cell_or_species_id", "regime", "value"])
        self.stride, self.last = 1, 0

    def begin(self, mesh, grid):
        self.stride = frame_stride(grid.steps, self.options)
        self.last = grid.steps

    def __call__(self, state):
        n = state.step_index
        if n % self.stride and n != self.last:
            return
        t = fmt(state.time)
        rows = [(t, i, "C", fmt(v)) for i, v in enumerate(state.u_C)]
        rows += [(t, i, "D", fmt(v)) for i, v in enumerate(state.u_D, start=1)]
        self.writer.writerows(rows)
