"""Observation windows, point patterns and window quadrature.

Windows are axis-aligned boxes of any dimension. Patterns are stored as
read-only ``(n, d)`` float arrays; everything downstream treats them as
unordered sets.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PatternFormatError",
    "SimplicityError",
    "Window",
    "PointPattern",
    "QuadratureScheme",
    "window_measure",
    "min_pairwise_distance",
    "build_quadrature",
    "read_pattern",
    "write_pattern",
    "DEFAULT_RESOLUTION",
]

DEFAULT_RESOLUTION = 100


class PatternFormatError(ValueError):
    """Malformed pattern file; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SimplicityError(ValueError):
    """Two points of a pattern coincide."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Window:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) == 0 or len(lo) != len(hi):
            raise ValueError("window bounds must be non-empty and of equal length")
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
                raise ValueError(f"window axis {i}: need finite lower < upper, got [{a}, {b}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int = 2) -> "Window":
        return cls((0.0,) * d, (1.0,) * d)

    @classmethod
    def from_dict(cls, data: dict) -> "Window":
        return cls(tuple(data["lower"]), tuple(data["upper"]))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def measure(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, points) -> np.ndarray:
        """Closed-box membership for an ``(n, d)`` array (or a single point)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lower) & (p <= self.upper), axis=1)

    def contains_window(self, other: "Window") -> bool:
        return all(a <= b for a, b in zip(self.lower, other.lower)) and all(
            a >= b for a, b in zip(self.upper, other.upper)
        )


def window_measure(w: Window) -> float:
    return w.measure


@dataclass(frozen=True, eq=False)
class PointPattern:
    """A finite simple point configuration, optionally tied to a window.

    ``points`` is kept in the order given; the order carries no meaning.
    """

    points: np.ndarray
    window: Window | None = None
    check_window: bool = field(default=True, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            d = self.window.d if self.window is not None else (pts.shape[1] if pts.ndim == 2 else 2)
            pts = np.empty((0, d))
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if self.window is not None:
            if pts.shape[1] != self.window.d:
                raise ValueError(f"points have dimension {pts.shape[1]}, window has {self.window.d}")
            if self.check_window and not np.all(self.window.contains(pts)):
                raise ValueError("pattern has points outside its window")
        if len(pts) > 1 and len(np.unique(pts, axis=0)) < len(pts):
            raise SimplicityError("pattern contains duplicate points")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def permuted(self, order: Sequence[int]) -> "PointPattern":
        return PointPattern(self.points[np.asarray(order)], self.window, check_window=False)

    def to_list(self) -> list[list[float]]:
        return self.points.tolist()


def _as_points(x) -> np.ndarray:
    if isinstance(x, PointPattern):
        return x.points
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2) if arr.ndim < 2 else arr
    return np.atleast_2d(arr)


def min_pairwise_distance(x) -> float | None:
    """Smallest distance over unordered pairs, ``None`` when fewer than two points."""
    pts = _as_points(x)
    if len(pts) < 2:
        return None
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].min())


@dataclass(frozen=True, eq=False)
class QuadratureScheme:
    """Midpoint rule on a uniform grid over a box window."""

    window: Window
    resolution: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def cell_sides(self) -> np.ndarray:
        return self.window.sides / self.resolution

    def integrate(self, values) -> float:
        """Weighted sum of integrand values given at the nodes."""
        v = np.asarray(values, dtype=float)
        return float(math.fsum(v * self.weights)) if v.ndim == 1 else float(np.sum(v * self.weights))

    def integrate_fn(self, f) -> float:
        return self.integrate(f(self.nodes))

    def restricted_weights(self, region: Window) -> np.ndarray:
        """Weights of the cells clipped to ``region`` (exact overlap volumes)."""
        half = self.cell_sides / 2.0
        lo = np.maximum(self.nodes - half, region.lower)
        hi = np.minimum(self.nodes + half, region.upper)
        return np.prod(np.clip(hi - lo, 0.0, None), axis=1)

    def integrate_over(self, values, region: Window) -> float:
        v = np.broadcast_to(np.asarray(values, dtype=float), self.weights.shape)
        return float(math.fsum(v * self.restricted_weights(region)))


def build_quadrature(w: Window, resolution: int = DEFAULT_RESOLUTION) -> QuadratureScheme:
    if int(resolution) != resolution or resolution < 1:
        raise ValueError(f"resolution must be a positive integer, got {resolution!r}")
    resolution = int(resolution)
    axes = [
        lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution for lo, hi in zip(w.lower, w.upper)
    ]
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grid])
    weights = np.full(len(nodes), w.measure / resolution**w.d)
    return QuadratureScheme(w, resolution, _frozen(nodes), _frozen(weights))


# --- pattern CSV -----------------------------------------------------------


def _parse_rows(lines: Iterable[str], d: int | None):
    rows = []
    for lineno, row in enumerate(csv.reader(lines), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            coords = [float(c) for c in row]
        except ValueError:
            if lineno == 1 and not rows:
                continue  # header such as "x,y"
            raise PatternFormatError(f"non-numeric value in {row!r}", lineno) from None
        if d is None:
            d = len(coords)
        if len(coords) != d:
            raise PatternFormatError(f"expected {d} coordinates, got {len(coords)}", lineno)
        if not all(math.isfinite(c) for c in coords):
            raise PatternFormatError("non-finite coordinate", lineno)
        rows.append((lineno, coords))
    return rows, d


def read_pattern(path, window: Window | None = None, strict: bool = True) -> PointPattern:
    """Read a CSV pattern, one point per line with an optional header row.

    Points outside ``window`` raise when ``strict`` is set, otherwise they
    are dropped with a warning.
    """
    text = Path(path).read_text()
    rows, d = _parse_rows(text.splitlines(), window.d if window is not None else None)
    seen: dict[tuple, int] = {}
    for lineno, coords in rows:
        key = tuple(coords)
        if key in seen:
            raise SimplicityError(f"line {lineno}: duplicate of point on line {seen[key]}")
        seen[key] = lineno
    pts = np.array([c for _, c in rows], dtype=float).reshape(-1, d or (window.d if window else 2))
    if window is not None and len(pts):
        inside = window.contains(pts)
        if not inside.all():
            bad = [rows[i][0] for i in np.flatnonzero(~inside)]
            msg = f"{len(bad)} point(s) outside window (lines {bad[:5]})"
            if strict:
                raise PatternFormatError(msg, bad[0])
            warnings.warn(msg + "; dropped", stacklevel=2)
            pts = pts[inside]
    return PointPattern(pts, window)


def write_pattern(path, x: PointPattern, header: bool = True) -> None:
    names = ["x", "y", "z"] if x.d <= 3 else [f"x{i}" for i in range(x.d)]
    lines = [",".join(names[: x.d])] if header else []
    lines += [",".join(repr(float(c)) for c in p) for p in x.points]
    Path(path).write_text("\n".join(lines) + "\n")
