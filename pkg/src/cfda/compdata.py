"""Compositional functional data on a discrete time grid.

A functional composition is a ``D x T`` array whose columns are compositions
(positive, unit sum) evaluated on a shared :class:`TimeGrid`. The centred
log-ratio (clr) transform maps it to a :class:`ClrCurve`, a ``D x T`` array
with zero column sums, where the simplex operations become ordinary vector
arithmetic:

* perturbation ``f (+) g``  <->  ``clr(f) + clr(g)``
* powering ``a (.) f``      <->  ``a * clr(f)``
* inner product             <->  weighted L2 inner product of clr images

Integrals over time use trapezoid quadrature weights stored on the grid.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    AllZeroColumn,
    ClrOverflow,
    GridMismatch,
    NegativeEntry,
    NonPositiveEntry,
    NotZeroSum,
)
from .tables import read_csv, write_csv

EPS_FLOOR = 1e-12
DEFAULT_PSEUDOCOUNT = 0.5
GRID_TOL = 1e-9
CLR_SUM_TOL = 1e-8
EXP_LIMIT = 700.0

CAUSES = ("INF", "END", "CIRC", "NEOP", "LUNG", "RESP", "DIG", "EXT")


def trapezoid_weights(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    h = np.diff(points)
    w = np.empty_like(points)
    w[0] = h[0] / 2
    w[-1] = h[-1] / 2
    w[1:-1] = (h[:-1] + h[1:]) / 2
    return w


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        w = trapezoid_weights(pts) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != pts.shape or not np.all(w > 0):
            raise ValueError("weights must be positive and match the points")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def trapezoid(cls, points) -> "TimeGrid":
        return cls(np.asarray(points, dtype=float))

    @classmethod
    def yearly(cls, first: int = 1959, last: int = 2015) -> "TimeGrid":
        return cls(np.arange(first, last + 1, dtype=float))

    def __len__(self):
        return self.points.size

    def matches(self, other: "TimeGrid", tol: float = GRID_TOL) -> bool:
        return len(self) == len(other) and bool(np.all(np.abs(self.points - other.points) <= tol))

    def refine(self, factor: int) -> "TimeGrid":
        """Grid with ``factor - 1`` equally spaced points inserted in every interval."""
        segs = [np.linspace(a, b, factor, endpoint=False) for a, b in zip(self.points[:-1], self.points[1:])]
        return TimeGrid(np.concatenate(segs + [self.points[-1:]]))


def check_grids(*grids: TimeGrid) -> TimeGrid:
    first = grids[0]
    for g in grids[1:]:
        if not first.matches(g):
            raise GridMismatch("curves live on different time grids")
    return first


@dataclass(frozen=True, eq=False)
class FunctionalComposition:
    """``D`` positive parts on a time grid; every column sums to one."""

    grid: TimeGrid
    parts: np.ndarray
    part_names: tuple = None
    id: str = ""

    def __post_init__(self):
        parts = np.array(self.parts, dtype=float)
        if parts.ndim != 2 or parts.shape[1] != len(self.grid):
            raise ValueError(f"parts must be D x {len(self.grid)}, got {parts.shape}")
        if parts.shape[0] < 2:
            raise ValueError("a composition needs at least two parts")
        if not np.all(np.isfinite(parts)) or np.any(parts < EPS_FLOOR * (1 - 1e-6)):
            raise NonPositiveEntry("composition entries must be finite and >= eps floor")
        if np.max(np.abs(parts.sum(axis=0) - 1.0)) > 1e-12:
            raise ValueError("composition columns must sum to 1; use closure()")
        parts.flags.writeable = False
        names = _part_names(self.part_names, parts.shape[0])
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "part_names", names)

    @property
    def D(self) -> int:
        return self.parts.shape[0]

    @property
    def T(self) -> int:
        return self.parts.shape[1]

    def with_parts(self, parts, id=None) -> "FunctionalComposition":
        """Same grid, names and id with new (already closed) parts."""
        return FunctionalComposition(self.grid, parts, self.part_names, self.id if id is None else id)


@dataclass(frozen=True, eq=False)
class ClrCurve:
    """clr image of a functional composition; columns sum to zero.

    Inputs whose column sums are within ``1e-8`` of zero are accepted and
    recentred, which absorbs round-off from linear algebra routines.
    """

    grid: TimeGrid
    coords: np.ndarray
    part_names: tuple = None
    id: str = ""

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != len(self.grid):
            raise ValueError(f"coords must be D x {len(self.grid)}, got {coords.shape}")
        coords = _recenter(coords)
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "part_names", _part_names(self.part_names, coords.shape[0]))

    @property
    def D(self) -> int:
        return self.coords.shape[0]

    def with_coords(self, coords, id=None) -> "ClrCurve":
        return ClrCurve(self.grid, coords, self.part_names, self.id if id is None else id)


def _part_names(names, D):
    if names is None:
        return tuple(f"p{d + 1}" for d in range(D))
    names = tuple(str(n) for n in names)
    if len(names) != D:
        raise ValueError(f"expected {D} part names, got {len(names)}")
    return names


def _recenter(coords: np.ndarray, tol: float = CLR_SUM_TOL) -> np.ndarray:
    if not np.all(np.isfinite(coords)):
        raise ValueError("clr coordinates must be finite")
    col_mean = coords.mean(axis=0)
    if np.max(np.abs(col_mean * coords.shape[0]), initial=0.0) > tol:
        raise NotZeroSum("clr coordinates must have zero column sums")
    return coords - col_mean


# ---------------------------------------------------------------------------
# array-level kernels


def close_columns(raw, pseudocount: float = DEFAULT_PSEUDOCOUNT) -> np.ndarray:
    """Replace zeros by ``pseudocount``, divide each column by its sum, floor at ``EPS_FLOOR``."""
    x = np.array(raw, dtype=float)
    if x.ndim == 1:
        return close_columns(x[:, None], pseudocount)[:, 0]
    if np.any(x < 0):
        raise NegativeEntry("closure needs nonnegative entries")
    if np.any(x.sum(axis=0) <= 0):
        raise AllZeroColumn("closure of a column with no positive entry")
    if pseudocount:
        x = np.where(x == 0, pseudocount, x)
    x = x / x.sum(axis=0)
    if np.any(x < EPS_FLOOR):
        x = np.maximum(x, EPS_FLOOR)
        x = x / x.sum(axis=0)
    return x


def clr_array(parts) -> np.ndarray:
    logs = np.log(parts)
    return logs - logs.mean(axis=0)


def clr_inv_array(coords) -> np.ndarray:
    u = np.asarray(coords, dtype=float)
    if np.max(np.abs(u), initial=0.0) > EXP_LIMIT:
        raise ClrOverflow(f"clr coordinate beyond +/-{EXP_LIMIT}; exp would overflow")
    e = np.exp(u - u.max(axis=0))
    return close_columns(e, pseudocount=0.0)


def l2_inner(weights, a, b) -> float:
    """Quadrature inner product of two ``D x T`` arrays."""
    return float(np.sum(np.sum(np.asarray(a) * np.asarray(b), axis=0) * weights))


# ---------------------------------------------------------------------------
# public operations


def closure(raw, grid: TimeGrid = None, part_names: Sequence[str] = None, id: str = "",
            pseudocount: float = DEFAULT_PSEUDOCOUNT) -> FunctionalComposition:
    """Close a nonnegative ``D x T`` matrix into a functional composition.

    Zero entries are replaced by ``pseudocount`` before the division (the
    default of 0.5 is meant for death counts). Columns are then divided by
    their sums and floored at ``EPS_FLOOR``.

    Raises
    ------
    NegativeEntry
        If any entry is negative.
    AllZeroColumn
        If a column has no positive entry.
    """
    parts = close_columns(raw, pseudocount)
    if parts.ndim == 1:
        parts = parts[:, None]
    if grid is None:
        grid = TimeGrid.trapezoid(np.arange(parts.shape[1], dtype=float))
    return FunctionalComposition(grid, parts, part_names, id)


def uniform(grid: TimeGrid, D: int, part_names=None, id: str = "") -> FunctionalComposition:
    return FunctionalComposition(grid, np.full((D, len(grid)), 1.0 / D), part_names, id)


def constant(values, grid: TimeGrid, part_names=None, id: str = "") -> FunctionalComposition:
    """A time-constant composition, closed from ``values``."""
    values = np.asarray(values, dtype=float)
    return closure(np.repeat(values[:, None], len(grid), axis=1), grid, part_names, id, pseudocount=0.0)


def geometric_mean_curve(f: FunctionalComposition) -> np.ndarray:
    return np.exp(np.log(f.parts).mean(axis=0))


def clr(f: FunctionalComposition) -> ClrCurve:
    if np.any(f.parts <= 0):
        raise NonPositiveEntry("clr needs strictly positive parts")
    return ClrCurve(f.grid, clr_array(f.parts), f.part_names, f.id)


def clr_inv(u: ClrCurve) -> FunctionalComposition:
    return FunctionalComposition(u.grid, clr_inv_array(u.coords), u.part_names, u.id)


def _check_pair(f, g):
    check_grids(f.grid, g.grid)
    if f.D != g.D:
        raise GridMismatch(f"part count mismatch: {f.D} vs {g.D}")


def perturb(f: FunctionalComposition, g: FunctionalComposition) -> FunctionalComposition:
    _check_pair(f, g)
    return f.with_parts(close_columns(f.parts * g.parts, pseudocount=0.0))


def power(alpha: float, f: FunctionalComposition) -> FunctionalComposition:
    # work in log space: f**alpha underflows for large |alpha|
    return f.with_parts(clr_inv_array(alpha * clr_array(f.parts)))


def inverse(f: FunctionalComposition) -> FunctionalComposition:
    return power(-1.0, f)


def difference(f: FunctionalComposition, g: FunctionalComposition) -> FunctionalComposition:
    """``f (-) g``, i.e. ``f`` perturbed by the inverse of ``g``."""
    return perturb(f, inverse(g))


def inner_product(f: FunctionalComposition, g: FunctionalComposition) -> float:
    """Simplex inner product, computed as the L2 inner product of the clr images."""
    _check_pair(f, g)
    return clr_inner(clr(f), clr(g))


def clr_inner(u: ClrCurve, v: ClrCurve) -> float:
    grid = check_grids(u.grid, v.grid)
    if u.D != v.D:
        raise GridMismatch(f"part count mismatch: {u.D} vs {v.D}")
    return l2_inner(grid.weights, u.coords, v.coords)


def norm(f: FunctionalComposition) -> float:
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


def distance(f: FunctionalComposition, g: FunctionalComposition) -> float:
    return norm(difference(f, g))


# ---------------------------------------------------------------------------
# CSV serialization (long format: id,part,year,value)

COMPOSITION_HEADER = ("id", "part", "year", "value")


def _curve_rows(curves, attr, prefix):
    for c in curves:
        values = getattr(c, attr)
        for d, name in enumerate(c.part_names):
            for i, year in enumerate(c.grid.points):
                yield (c.id, prefix + name, year, values[d, i])


def write_compositions(target, curves: Sequence[FunctionalComposition]):
    return write_csv(target, COMPOSITION_HEADER, _curve_rows(curves, "parts", ""))


def write_clr_curves(target, curves: Sequence[ClrCurve]):
    return write_csv(target, COMPOSITION_HEADER, _curve_rows(curves, "coords", "clr_"))


def _parse_long(source):
    rows = read_csv(source, COMPOSITION_HEADER, allow_empty=False)
    order, table = [], {}
    for r in rows:
        key = r["id"]
        if key not in table:
            order.append(key)
            table[key] = {}
        table[key][(r["part"], float(r["year"]))] = float(r["value"])
    out = []
    for key in order:
        cells = table[key]
        parts = list(dict.fromkeys(p for p, _ in cells))
        years = sorted({y for _, y in cells})
        try:
            values = np.array([[cells[(p, y)] for y in years] for p in parts])
        except KeyError as exc:
            raise GridMismatch(f"curve {key!r} is missing cell {exc.args[0]}") from None
        out.append((key, parts, np.array(years), values))
    return out


def read_compositions(source, renormalize: bool = True) -> list:
    """Read compositions; values are re-closed to absorb 15-digit rounding."""
    curves = []
    for key, parts, years, values in _parse_long(source):
        grid = TimeGrid.trapezoid(years)
        if renormalize:
            values = close_columns(values, pseudocount=0.0)
        curves.append(FunctionalComposition(grid, values, parts, key))
    return curves


def read_clr_curves(source) -> list:
    curves = []
    for key, parts, years, values in _parse_long(source):
        names = [p[4:] if p.startswith("clr_") else p for p in parts]
        curves.append(ClrCurve(TimeGrid.trapezoid(years), values, names, key))
    return curves
