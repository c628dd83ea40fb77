"""Compositional functional PCA.

The sample mean, covariance kernel and eigenfunctions are all computed on
clr images. The covariance kernel is stored as ``D x D`` blocks of ``T x T``
matrices; assembled, it is the ``(D*T) x (D*T)`` matrix ``R`` indexed by
``d * T + i``. The integral eigenproblem is discretized with the grid's
quadrature weights ``W`` and solved through the symmetric matrix
``W^1/2 R W^1/2``.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .compdata import (
    ClrCurve,
    FunctionalComposition,
    TimeGrid,
    check_grids,
    clr_array,
    clr_inv_array,
    l2_inner,
)
from .errors import ConvergenceFailure, DimensionMismatch, EmptySample, GridMismatch, NonPSD
from .tables import read_csv, write_csv

EIGEN_FLOOR = 1e-12
PSD_TOL = 1e-8
DEFAULT_K = 4


@dataclass(frozen=True, eq=False)
class MeanComposition:
    composition: FunctionalComposition
    n: int

    @property
    def grid(self) -> TimeGrid:
        return self.composition.grid

    @property
    def clr(self) -> np.ndarray:
        return clr_array(self.composition.parts)


@dataclass(frozen=True, eq=False)
class CovKernelBlocks:
    grid: TimeGrid
    blocks: np.ndarray  # (D, D, T, T)
    n: int
    part_names: tuple = None
    centered: bool = True

    @property
    def D(self) -> int:
        return self.blocks.shape[0]

    def assembled(self) -> np.ndarray:
        D, _, T, _ = self.blocks.shape
        return self.blocks.transpose(0, 2, 1, 3).reshape(D * T, D * T)

    @classmethod
    def from_matrix(cls, grid, R, D, n, part_names=None):
        T = len(grid)
        blocks = np.asarray(R, dtype=float).reshape(D, T, D, T).transpose(0, 2, 1, 3)
        return cls(grid, np.ascontiguousarray(blocks), n, part_names)

    def trace(self) -> float:
        """Quadrature trace: sum over parts of the integral of r_dd(t, t)."""
        diag = np.einsum("ddtt->t", self.blocks)
        return float(np.sum(diag * self.grid.weights))


@dataclass(frozen=True, eq=False)
class EigenSystem:
    eigenvalues: np.ndarray
    clr_eigenfunctions: list
    simplex_eigenfunctions: list
    fev: np.ndarray
    total_variance: float
    n: int
    K_max: int
    grid: TimeGrid

    def basis(self, K=None) -> np.ndarray:
        """Eigenfunctions stacked as a ``K x D x T`` array."""
        K = len(self.clr_eigenfunctions) if K is None else K
        D = self.clr_eigenfunctions[0].D if self.clr_eigenfunctions else 0
        if K == 0:
            return np.zeros((0, D, len(self.grid)))
        return np.stack([phi.coords for phi in self.clr_eigenfunctions[:K]])


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    values: np.ndarray
    ids: tuple
    components: tuple

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", values)
        ids = tuple(self.ids) if self.ids is not None else tuple(str(i) for i in range(values.shape[0]))
        comps = (tuple(self.components) if self.components is not None
                 else tuple(f"PC{k + 1}" for k in range(values.shape[1])))
        if len(ids) != values.shape[0] or len(comps) != values.shape[1]:
            raise DimensionMismatch("score labels do not match the matrix shape")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "components", comps)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]


def _stack(sample):
    if not sample:
        raise EmptySample("empty sample")
    grid = check_grids(*[f.grid for f in sample])
    D = sample[0].D
    if any(f.D != D for f in sample):
        raise GridMismatch("curves have different numbers of parts")
    return grid, D


def mean(sample: Sequence[FunctionalComposition]) -> MeanComposition:
    """clr-space sample mean, i.e. the closed per-part geometric mean."""
    _stack(sample)
    avg = np.mean([clr_array(f.parts) for f in sample], axis=0)
    first = sample[0]
    comp = FunctionalComposition(first.grid, clr_inv_array(avg - avg.mean(axis=0)), first.part_names, "mean")
    return MeanComposition(comp, len(sample))


def center(sample: Sequence[FunctionalComposition], mu: MeanComposition) -> list:
    _stack(sample)
    check_grids(sample[0].grid, mu.grid)
    m = mu.clr
    return [ClrCurve(f.grid, clr_array(f.parts) - m, f.part_names, f.id) for f in sample]


def covariance(centered: Sequence[ClrCurve]) -> CovKernelBlocks:
    """Blocks ``r_jl(s, t) = (1/n) sum_i c_ij(s) c_il(t)``."""
    if len(centered) < 2:
        raise EmptySample("covariance needs at least two curves")
    grid = check_grids(*[c.grid for c in centered])
    C = np.stack([c.coords for c in centered])  # (n, D, T)
    n, D, T = C.shape
    flat = C.reshape(n, D * T)
    R = flat.T @ flat / n
    return CovKernelBlocks.from_matrix(grid, R, D, n, centered[0].part_names)


def _orient(vec: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(vec)))
    return -vec if vec[i] < 0 else vec


def eigendecompose(cov: CovKernelBlocks, K_max: int = None) -> EigenSystem:
    """Solve the quadrature-discretized covariance eigenproblem.

    Returns at most ``K_max`` components, dropping eigenvalues below
    ``1e-12`` times the largest. Eigenfunctions are orthonormal under the
    grid quadrature and oriented so their largest-magnitude entry is
    positive. FEV is relative to the sum of all retained eigenvalues.
    """
    D, T = cov.D, len(cov.grid)
    limit = min(max(cov.n - 1, 1), D * T)
    if K_max is None:
        K_max = limit
    if not 1 <= K_max <= limit:
        raise DimensionMismatch(f"K_max must be in [1, {limit}], got {K_max}")
    sw = np.sqrt(np.tile(cov.grid.weights, D))
    M = sw[:, None] * cov.assembled() * sw[None, :]
    M = (M + M.T) / 2
    try:
        vals, vecs = linalg.eigh(M)
    except linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    vals, vecs = vals[::-1], vecs[:, ::-1]
    top = max(vals[0], 0.0)
    if vals[-1] < -PSD_TOL * (top if top > 0 else 1.0):
        raise NonPSD(f"covariance has eigenvalue {vals[-1]:.3g}")
    keep = vals > EIGEN_FLOOR * top if top > 0 else np.zeros_like(vals, dtype=bool)
    total = float(vals[keep].sum())
    k = min(K_max, int(keep.sum()))
    lam = vals[:k].copy()
    clr_funcs, simplex_funcs = [], []
    for j in range(k):
        phi = (vecs[:, j] / sw).reshape(D, T)
        phi = phi - phi.mean(axis=0)
        phi = phi / np.sqrt(l2_inner(cov.grid.weights, phi, phi))
        phi = _orient(phi.ravel()).reshape(D, T)
        name = f"PC{j + 1}"
        clr_funcs.append(ClrCurve(cov.grid, phi, cov.part_names, name))
        simplex_funcs.append(FunctionalComposition(cov.grid, clr_inv_array(phi), cov.part_names, name))
    fev = lam / total if total > 0 else np.zeros(k)
    return EigenSystem(lam, clr_funcs, simplex_funcs, fev, total, cov.n, k, cov.grid)


def scores(centered: Sequence[ClrCurve], eig: EigenSystem, K: int = None) -> ScoreMatrix:
    K = eig.K_max if K is None else K
    if not 0 <= K <= eig.K_max:
        raise DimensionMismatch(f"K must be at most {eig.K_max}")
    if not centered:
        raise EmptySample("no curves to score")
    grid = check_grids(eig.grid, *[c.grid for c in centered])
    C = np.stack([c.coords for c in centered])
    Phi = eig.basis(K)
    xi = np.einsum("ndt,kdt,t->nk", C, Phi, grid.weights)
    return ScoreMatrix(xi, [c.id for c in centered], [f"PC{k + 1}" for k in range(K)])


def pca(sample: Sequence[FunctionalComposition], K_max: int = None):
    """Mean, centred curves, eigen-system and scores in one call."""
    mu = mean(sample)
    centered = center(sample, mu)
    eig = eigendecompose(covariance(centered), K_max)
    return mu, centered, eig, scores(centered, eig)


def reconstruct(mu: MeanComposition, eig: EigenSystem, score_row, K: int, id: str = "") -> FunctionalComposition:
    """Truncated expansion ``clr^-1(clr(mean) + sum_k xi_k phi*_k)``."""
    score_row = np.atleast_1d(np.asarray(score_row, dtype=float))
    if K > eig.K_max or K > score_row.size or K < 0:
        raise DimensionMismatch(f"cannot use {K} components (have {eig.K_max} and {score_row.size} scores)")
    u = mu.clr.copy()
    if K:
        u = u + np.tensordot(score_row[:K], eig.basis(K), axes=1)
    return FunctionalComposition(mu.grid, clr_inv_array(u - u.mean(axis=0)), mu.composition.part_names, id)


def component_envelope(mu: MeanComposition, eig: EigenSystem, k: int, c: float = 1.0):
    """Mean shifted by plus and minus ``c * sqrt(lambda_k)`` along component ``k`` (1-based)."""
    if not 1 <= k <= eig.K_max:
        raise DimensionMismatch(f"component {k} not available (K_max={eig.K_max})")
    step = c * np.sqrt(eig.eigenvalues[k - 1]) * eig.clr_eigenfunctions[k - 1].coords
    names = mu.composition.part_names
    plus = FunctionalComposition(mu.grid, clr_inv_array(mu.clr + step), names, f"PC{k}+")
    minus = FunctionalComposition(mu.grid, clr_inv_array(mu.clr - step), names, f"PC{k}-")
    return plus, minus


# ---------------------------------------------------------------------------
# serialization

EIGENVALUE_HEADER = ("component", "eigenvalue", "fev", "cumulative_fev")
EIGENFUNCTION_HEADER = ("component", "part", "year", "value")
SCORE_HEADER = ("id", "component", "score")


def write_eigenvalues(target, eig: EigenSystem):
    cum = np.cumsum(eig.fev)
    rows = [(f"PC{k + 1}", eig.eigenvalues[k], eig.fev[k], cum[k]) for k in range(eig.K_max)]
    return write_csv(target, EIGENVALUE_HEADER, rows)


def write_eigenfunctions(target, eig: EigenSystem, clr_space: bool = True):
    funcs = eig.clr_eigenfunctions if clr_space else eig.simplex_eigenfunctions
    prefix = "clr_" if clr_space else ""

    def rows():
        for k, phi in enumerate(funcs):
            values = phi.coords if clr_space else phi.parts
            for d, name in enumerate(phi.part_names):
                for i, year in enumerate(phi.grid.points):
                    yield (f"PC{k + 1}", prefix + name, year, values[d, i])

    return write_csv(target, EIGENFUNCTION_HEADER, rows())


def write_scores(target, sm: ScoreMatrix):
    rows = ((sm.ids[i], sm.components[k], sm.values[i, k]) for i in range(sm.n) for k in range(sm.K))
    return write_csv(target, SCORE_HEADER, rows)


def read_scores(source) -> ScoreMatrix:
    rows = read_csv(source, SCORE_HEADER, allow_empty=False)
    ids = list(dict.fromkeys(r["id"] for r in rows))
    comps = list(dict.fromkeys(r["component"] for r in rows))
    table = {(r["id"], r["component"]): float(r["score"]) for r in rows}
    try:
        values = np.array([[table[(i, c)] for c in comps] for i in ids])
    except KeyError as exc:
        raise DimensionMismatch(f"score table is missing entry {exc.args[0]}") from None
    return ScoreMatrix(values, ids, comps)


def read_eigenvalues(source):
    rows = read_csv(source, EIGENVALUE_HEADER, allow_empty=False)
    return np.array([float(r["eigenvalue"]) for r in rows]), np.array([float(r["fev"]) for r in rows])


def read_eigenfunctions(source):
    """Returns ``(grid, part_names, K x D x T array)`` from a clr eigenfunction file."""
    rows = read_csv(source, EIGENFUNCTION_HEADER, allow_empty=False)
    comps = list(dict.fromkeys(r["component"] for r in rows))
    parts = list(dict.fromkeys(r["part"] for r in rows))
    years = sorted({float(r["year"]) for r in rows})
    table = {(r["component"], r["part"], float(r["year"])): float(r["value"]) for r in rows}
    try:
        arr = np.array([[[table[(c, p, y)] for y in years] for p in parts] for c in comps])
    except KeyError as exc:
        raise DimensionMismatch(f"eigenfunction table is missing entry {exc.args[0]}") from None
    names = [p[4:] if p.startswith("clr_") else p for p in parts]
    return TimeGrid.trapezoid(years), names, arr
