"""Spatial mesh on the truncated continuous regime ``(N, R)`` and the time grid.

Cells are left-closed, right-open, ``[x_{i-1/2}, x_{i+1/2})``, except the first
cell which is open at ``N``.  Widths must lie in the quasi-uniformity band
``(h/k, h)``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BandViolation, MeshError, NonpositiveHorizon, NonpositiveWidth

logger = logging.getLogger(__name__)

# slack used when checking sum(widths) == R - N
_SUM_ULPS = 8


@dataclass(frozen=True, eq=False)
class Mesh:
    edges: np.ndarray
    h: float
    k: float = 2.0
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "k", float(self.k))
        mids = 0.5 * (edges[:-1] + edges[1:])
        widths = np.diff(edges)
        mids.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, "midpoints", mids)
        object.__setattr__(self, "widths", widths)
        self.validate()
        if self.h >= 1.0:
            object.__setattr__(self, "diagnostics", self.diagnostics + (f"h={self.h:g} >= 1",))

    @property
    def N(self) -> float:
        return float(self.edges[0])

    @property
    def R(self) -> float:
        return float(self.edges[-1])

    @property
    def cell_count(self) -> int:
        return len(self.edges) - 1

    def validate(self) -> None:
        """Re-check monotonicity, band, midpoints and the width sum."""
        edges = self.edges
        if edges.ndim != 1 or len(edges) < 2:
            raise MeshError("a mesh needs at least two edges")
        if not np.all(np.isfinite(edges)):
            raise MeshError("mesh edges must be finite")
        widths = np.diff(edges)
        if np.any(widths <= 0):
            raise NonpositiveWidth("mesh edges must be strictly increasing")
        if self.k <= 1:
            raise MeshError(f"quasi-uniformity constant k must exceed 1, got {self.k}")
        if self.h <= 0:
            raise MeshError(f"h must be positive, got {self.h}")
        lo, hi = self.h / self.k, self.h
        bad = np.flatnonzero((widths <= lo) | (widths >= hi))
        if bad.size:
            i = int(bad[0])
            raise BandViolation(
                f"cell {i} has width {widths[i]!r} outside ({lo!r}, {hi!r})"
            )
        span = edges[-1] - edges[0]
        if abs(math.fsum(widths) - span) > _SUM_ULPS * np.spacing(span):
            raise MeshError("cell widths do not sum to R - N")

    def locate(self, x):
        """Index of the cell containing ``x``; ``-1`` outside ``(N, R)``.

        Interior edges belong to the cell on their right.
        """
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        outside = (x <= self.edges[0]) | (x >= self.edges[-1])
        idx = np.where(outside, -1, idx)
        return int(idx) if idx.ndim == 0 else idx

    def reconstruct(self, values, x):
        """Evaluate the piecewise-constant field ``values`` at points ``x``."""
        values = np.asarray(values, dtype=float)
        idx = np.atleast_1d(self.locate(x))
        out = np.where(idx >= 0, values[np.clip(idx, 0, None)], np.nan)
        return out if np.ndim(x) else float(out[0])

    def refine(self, factor: int) -> "Mesh":
        """Split every cell into ``factor`` equal parts."""
        factor = int(factor)
        if factor < 1:
            raise MeshError("refinement factor must be a positive integer")
        frac = np.arange(factor) / factor
        inner = self.edges[:-1, None] + self.widths[:, None] * frac[None, :]
        edges = np.append(inner.ravel(), self.edges[-1])
        return Mesh(edges, self.h / factor, self.k)

    def to_dict(self) -> dict:
        return {"edges": [float(e) for e in self.edges], "h": self.h, "k": self.k}

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        return cls(np.array(data["edges"], dtype=float), data["h"], data.get("k", 2.0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.edges, other.edges)
            and self.h == other.h
            and self.k == other.k
        )

    def __repr__(self):
        return f"Mesh(N={self.N:g}, R={self.R:g}, cells={self.cell_count}, h={self.h:g}, k={self.k:g})"


def _edges_from_weights(N: float, R: float, weights: np.ndarray) -> np.ndarray:
    # shared by both builders so a constant profile reproduces the uniform mesh bit for bit
    cum = np.concatenate(([0.0], np.cumsum(weights)))
    edges = N + (R - N) * cum / cum[-1]
    edges[0], edges[-1] = N, R
    return edges


def build_uniform_mesh(N: float, R: float, cells: int) -> Mesh:
    if R <= N:
        raise NonpositiveWidth(f"R={R} must exceed N={N}")
    if int(cells) < 1:
        raise MeshError("cells must be >= 1")
    edges = _edges_from_weights(float(N), float(R), np.ones(int(cells)))
    dx = (R - N) / cells
    return Mesh(edges, dx * (1 + 1e-9), 2.0)


def build_graded_mesh(
    N: float,
    R: float,
    target_h: float,
    grading: float | Callable[[np.ndarray], np.ndarray] | Sequence[float] = 1.0,
    k: float = 2.0,
    cells: int | None = None,
) -> Mesh:
    """Quasi-uniform mesh with a monotone width profile.

    Parameters
    ----------
    grading:
        A float ``r`` gives geometric widths ``w_i ~ r**i``.  A callable is
        evaluated at normalised cell positions ``s in (0, 1)`` and returns
        relative widths.  A sequence gives the relative widths directly (and
        fixes the cell count).
    cells:
        Cell count; when omitted the smallest count whose widest cell fits
        under ``target_h`` is used.

    The relative widths are rescaled so the last edge lands exactly on ``R``.
    Raises :class:`BandViolation` if any width falls outside
    ``(target_h/k, target_h)``.
    """
    if R <= N:
        raise NonpositiveWidth(f"R={R} must exceed N={N}")
    if target_h <= 0:
        raise MeshError("target_h must be positive")

    if isinstance(grading, (int, float)):
        ratio = float(grading)
        if ratio <= 0:
            raise MeshError("geometric grading ratio must be positive")
        profile = lambda n: ratio ** np.arange(n, dtype=float)  # noqa: E731
    elif callable(grading):
        profile = lambda n: np.asarray(grading((np.arange(n) + 0.5) / n), dtype=float)  # noqa: E731
    else:
        fixed = np.asarray(grading, dtype=float)
        cells = len(fixed)
        profile = lambda n: fixed  # noqa: E731

    span = R - N
    if cells is None:
        n = max(1, math.ceil(span / target_h))
        while True:
            w = profile(n)
            if span * w.max() / w.sum() < target_h or n > 10_000_000:
                break
            n += 1
    else:
        n = int(cells)
    weights = profile(n)
    if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
        raise MeshError("grading profile must give positive finite widths")
    diffs = np.diff(weights)
    if not (np.all(diffs >= 0) or np.all(diffs <= 0)):
        raise MeshError("grading profile must be monotone")
    edges = _edges_from_weights(float(N), float(R), weights)
    return Mesh(edges, target_h, k)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    steps: int
    final_time: float
    ratio_band: tuple[float, float] | None = None
    warnings: tuple[str, ...] = ()

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def in_band(self) -> bool | None:
        return None if self.ratio_band is None else not self.warnings


def build_time_grid(
    T: float,
    dt_max: float,
    h: float | None = None,
    band: tuple[float, float] | None = None,
) -> TimeGrid:
    """Uniform time grid with ``dt = T/M <= dt_max``, ``M`` as small as possible."""
    if not T > 0:
        raise NonpositiveHorizon(f"final time must be positive, got {T}")
    if not dt_max > 0:
        raise MeshError(f"dt_max must be positive, got {dt_max}")
    M = max(1, math.ceil(T / dt_max))
    while M > 1 and T / (M - 1) <= dt_max:
        M -= 1
    while T / M > dt_max:
        M += 1
    dt = T / M
    warnings = []
    if band is not None and h is not None:
        k1, k2 = band
        if dt < k1 * h:
            warnings.append(f"dt={dt!r} below k1*h={k1 * h!r}")
        if dt > k2 * h:
            warnings.append(f"dt={dt!r} above k2*h={k2 * h!r}")
        for w in warnings:
            logger.warning(w)
    return TimeGrid(dt, M, float(T), None if band is None else tuple(band), tuple(warnings))
