"""Penalized B-spline smoothing in clr space and completion of missing years.

Smoothing is applied to the clr coordinates of a composition so that the
back-transformed curves stay positive with unit column sums. All ``D``
coordinates of one curve share the same smoothing parameter, which keeps the
fitted clr columns summing to zero (the smoother is linear).
"""

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline

from .compdata import FunctionalComposition, clr_array, clr_inv_array, check_grids
from .errors import GuardViolation, InsufficientCompleteCurves, SingularFit

GCV_LAMBDAS = np.logspace(-6, 4, 21)
MIN_OBSERVED_FRACTION = 0.6
MIN_COMPLETE_CURVES = 5
DEGREE = 3


@dataclass(frozen=True)
class SmoothingConfig:
    """Parameters of the penalized spline fit.

    ``lam`` is either a nonnegative smoothing parameter or the string
    ``"gcv"``, in which case it is picked from :data:`GCV_LAMBDAS` by
    generalized cross-validation.
    """

    basis_dimension: int = 15
    penalty_order: int = 2
    lam: Union[float, str] = "gcv"

    def __post_init__(self):
        if int(self.basis_dimension) < 4:
            raise ValueError("basis_dimension must be at least 4")
        if self.penalty_order not in (1, 2, 3):
            raise ValueError("penalty_order must be 1, 2 or 3")
        if isinstance(self.lam, str):
            if self.lam != "gcv":
                raise ValueError("lam must be a number or 'gcv'")
        elif not self.lam >= 0:
            raise ValueError("lam must be nonnegative")


@dataclass(frozen=True)
class MissingMask:
    """Per-grid-point flags; ``True`` marks an unobserved year."""

    id: str
    missing: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "missing", np.asarray(self.missing, dtype=bool))

    @property
    def observed_fraction(self) -> float:
        return 1.0 - float(self.missing.mean())

    @property
    def any(self) -> bool:
        return bool(self.missing.any())


@dataclass
class SplineFit:
    fitted: np.ndarray
    coef: np.ndarray
    lam: float
    gcv: float
    roughness: float
    edf: float


class PenalizedSpline:
    """Cubic B-spline basis on a grid with an integrated squared-derivative penalty."""

    def __init__(self, points, basis_dimension: int, penalty_order: int = 2):
        x = np.asarray(points, dtype=float)
        a, b = x[0], x[-1]
        inner = np.linspace(a, b, basis_dimension - DEGREE + 1)
        self.knots = np.concatenate([[a] * DEGREE, inner, [b] * DEGREE])
        self.nbasis = basis_dimension
        self.x = x
        self.basis = BSpline.design_matrix(x, self.knots, DEGREE).toarray()
        self.penalty = self._penalty(penalty_order, inner)

    def _penalty(self, m, breaks):
        # exact for piecewise polynomials: Gauss-Legendre on every knot span
        nodes, wts = leggauss(DEGREE + 1)
        spline = BSpline(self.knots, np.eye(self.nbasis), DEGREE).derivative(m)
        P = np.zeros((self.nbasis, self.nbasis))
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            half = (hi - lo) / 2
            xs = lo + half * (nodes + 1)
            Dm = spline(xs)
            P += (Dm * (wts * half)[:, None]).T @ Dm
        return (P + P.T) / 2

    def fit(self, Y, lam: float, observed=None) -> SplineFit:
        """Fit every row of ``Y`` (``D x T``) with one smoothing parameter."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        obs = np.ones(self.x.size, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
        Bo = self.basis[obs]
        gram = Bo.T @ Bo
        A = gram + lam * self.penalty
        ev = np.linalg.eigvalsh(A)
        if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
            raise SingularFit(f"penalized normal equations are singular (lambda={lam:g})")
        coef = np.linalg.solve(A, Bo.T @ Y[:, obs].T)
        fitted = (self.basis @ coef).T
        resid = Y[:, obs] - fitted[:, obs]
        n = int(obs.sum())
        edf = float(np.trace(np.linalg.solve(A, gram)))
        rss = float(np.sum(resid**2))
        gcv = n * rss / (n - edf) ** 2 if n - edf > 1e-8 else np.inf
        roughness = float(np.sum(coef * (self.penalty @ coef)))
        return SplineFit(fitted, coef.T, float(lam), gcv, roughness, edf)

    def fit_gcv(self, Y, lambdas=GCV_LAMBDAS, observed=None) -> SplineFit:
        best = None
        for lam in lambdas:
            res = self.fit(Y, lam, observed)
            # strict improvement keeps the smallest lambda on ties
            if best is None or res.gcv < best.gcv:
                best = res
        return best


def fit_clr(grid_points, coords, cfg: SmoothingConfig, observed=None) -> SplineFit:
    spline = PenalizedSpline(grid_points, cfg.basis_dimension, cfg.penalty_order)
    if cfg.lam == "gcv":
        return spline.fit_gcv(coords, observed=observed)
    return spline.fit(coords, float(cfg.lam), observed)


def smooth_composition(raw: FunctionalComposition, cfg: SmoothingConfig = SmoothingConfig(),
                       observed=None) -> FunctionalComposition:
    """Smooth a composition through its clr coordinates.

    ``observed`` optionally restricts the least-squares term to a subset of
    grid points; the fit is still evaluated on the full grid.
    """
    res = fit_clr(raw.grid.points, clr_array(raw.parts), cfg, observed)
    fitted = res.fitted - res.fitted.mean(axis=0)
    return raw.with_parts(clr_inv_array(fitted))


def impute_missing(sample: Sequence[FunctionalComposition], masks: Sequence[MissingMask],
                   ridge: float = 1e-3) -> list:
    """Fill unobserved years with the best linear predictor from complete curves.

    Works on flattened clr coordinates. The predictor for the missing block
    of curve ``i`` is ``mu_m + S_mo (S_oo + rho I)^-1 (x_o - mu_o)``, where
    ``mu`` and ``S`` are the mean and covariance (divisor ``n``) of the
    complete curves and ``rho = ridge * trace(S_oo) / dim(o)``. Observed
    columns are copied through unchanged.
    """
    sample = list(sample)
    if len(masks) != len(sample):
        raise ValueError("one mask per curve is required")
    if sample:
        check_grids(*[f.grid for f in sample])
    incomplete = [i for i, m in enumerate(masks) if m.any]
    if not incomplete:
        return sample
    for i in incomplete:
        if masks[i].observed_fraction < MIN_OBSERVED_FRACTION:
            raise GuardViolation(
                f"curve {sample[i].id!r}: only {masks[i].observed_fraction:.0%} of years observed"
            )
    complete = [i for i, m in enumerate(masks) if not m.any]
    if len(complete) < MIN_COMPLETE_CURVES:
        raise InsufficientCompleteCurves(
            f"{len(complete)} complete curves; at least {MIN_COMPLETE_CURVES} needed"
        )
    D, T = sample[0].parts.shape
    X = np.stack([clr_array(f.parts).ravel() for f in sample])
    Xc = X[complete]
    mu = Xc.mean(axis=0)
    S = (Xc - mu).T @ (Xc - mu) / len(complete)

    out = list(sample)
    for i in incomplete:
        miss_t = masks[i].missing
        miss = np.tile(miss_t, D)
        o, m = np.flatnonzero(~miss), np.flatnonzero(miss)
        S_oo = S[np.ix_(o, o)]
        rho = ridge * np.trace(S_oo) / o.size
        rhs = X[i, o] - mu[o]
        sol = np.linalg.lstsq(S_oo + rho * np.eye(o.size), rhs, rcond=None)[0]
        filled = X[i].copy()
        filled[m] = mu[m] + S[np.ix_(m, o)] @ sol
        block = filled.reshape(D, T)[:, miss_t]
        block = block - block.mean(axis=0)
        parts = np.array(sample[i].parts)
        parts[:, miss_t] = clr_inv_array(block)
        out[i] = sample[i].with_parts(parts)
    return out
