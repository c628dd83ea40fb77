"""Synthetic data with known structure, used by tests and the bundled fixture."""

import csv
from pathlib import Path

import numpy as np

from .compdata import CAUSES, FunctionalComposition, TimeGrid, clr_inv_array, l2_inner


def orthonormal_clr_functions(grid: TimeGrid, D: int, k: int, rng) -> np.ndarray:
    """``k`` smooth zero-column-sum ``D x T`` arrays, orthonormal under quadrature."""
    t = (grid.points - grid.points[0]) / (grid.points[-1] - grid.points[0])
    out = []
    for j in range(k):
        coef = rng.normal(size=(D, 4))
        basis = np.stack([np.ones_like(t), t, np.sin(np.pi * (j + 1) * t), np.cos(np.pi * (j + 1) * t)])
        f = coef @ basis
        f = f - f.mean(axis=0)
        for g in out:
            f = f - l2_inner(grid.weights, f, g) * g
        out.append(f / np.sqrt(l2_inner(grid.weights, f, f)))
    return np.stack(out)


def planted_kl_sample(n=500, D=8, T=57, variances=(4.0, 1.0), seed=0, dist="normal", grid=None):
    """Curves ``clr^-1(mu + sum_k xi_k phi_k)`` with planted eigenfunctions.

    Scores are centred with the requested variances; ``dist`` is ``"normal"``
    or ``"uniform"``. Returns ``(sample, truth)`` where ``truth`` holds the
    clr mean, the planted eigenfunctions, the scores and the population
    covariance matrix (indexed ``d * T + i``).
    """
    rng = np.random.default_rng(seed)
    grid = grid or TimeGrid.yearly(1959, 1959 + T - 1)
    variances = np.asarray(variances, dtype=float)
    phi = orthonormal_clr_functions(grid, D, len(variances), rng)
    t = np.linspace(0, 1, T)
    mu = np.outer(np.linspace(-1, 1, D), t - 0.5) + 0.3 * np.sin(np.outer(np.arange(D), t))
    mu = mu - mu.mean(axis=0)
    if dist == "uniform":
        xi = rng.uniform(-1, 1, size=(n, len(variances))) * np.sqrt(3 * variances)
    else:
        xi = rng.normal(size=(n, len(variances))) * np.sqrt(variances)
    coords = mu[None] + np.tensordot(xi, phi, axes=1)
    names = CAUSES if D == len(CAUSES) else None
    sample = [FunctionalComposition(grid, clr_inv_array(c), names, f"c{i:03d}") for i, c in enumerate(coords)]
    flat = phi.reshape(len(variances), -1)
    cov = flat.T @ (variances[:, None] * flat)
    return sample, {"grid": grid, "mean_clr": mu, "phi": phi, "scores": xi, "variances": variances, "cov": cov}


# ---------------------------------------------------------------------------
# WHO-shaped death-count fixture

FIXTURE_CODES = {
    7: ("07A", ["A001", "A061", "A080", "A045", "A050", "A090", "A100", "A140"], "A120"),
    8: ("08A", ["A010", "A063", "A083", "A046", "A051", "A090", "A100", "A140"], "A120"),
    9: ("09B", ["B02", "B181", "B27", "B09", "B101", "B31", "B33", "B50"], "B45"),
    10: ("104", ["A09", "E11", "I21", "C18", "C34", "J44", "K70", "X70"], "R99"),
}
FIXTURE_BANDS = ("Deaths13", "Deaths14", "Deaths15", "Deaths16", "Deaths17", "Deaths18", "Deaths19")
BAND_SHARES = np.array([0.06, 0.09, 0.13, 0.17, 0.22, 0.28, 0.05])
FIXTURE_COUNTRIES = ("X01", "X02", "X03", "X04", "X05", "X06")
FIXTURE_GAPS = {"X04": (1997, 1998)}


def revision_for(year: int) -> int:
    if year < 1968:
        return 7
    if year < 1979:
        return 8
    if year < 1998:
        return 9
    return 10


def fixture_compositions(years, seed=2024):
    """True cause shares per (country, sex): two groups of three countries."""
    rng = np.random.default_rng(seed)
    t = (np.asarray(years, float) - years[0]) / (years[-1] - years[0])
    D = len(CAUSES)
    group_shift = [
        np.array([0.3, -0.4, 0.6, -0.2, -0.8, 0.4, 0.3, -0.2]),
        np.array([-0.3, 0.5, -0.5, 0.2, 0.7, -0.4, -0.2, 0.0]),
    ]
    base = np.log(np.array([0.03, 0.03, 0.35, 0.25, 0.08, 0.06, 0.08, 0.12]))
    trend = np.array([-0.8, 0.5, -1.0, 0.5, 0.4, -0.2, 0.1, 0.2])
    out = {}
    for ci, country in enumerate(FIXTURE_COUNTRIES):
        grp = ci % 2
        offset = rng.normal(scale=0.08, size=D)
        wiggle = rng.normal(scale=0.05, size=D)
        for sex, sex_shift in (("male", 0.0), ("female", 0.15)):
            u = (base + group_shift[grp] + offset)[:, None] + np.outer(trend * (1 + 0.4 * grp), t)
            u = u + np.outer(wiggle, np.sin(2 * np.pi * t)) + sex_shift * np.outer(np.linspace(-1, 1, D), t)
            out[(country, sex)] = clr_inv_array(u - u.mean(axis=0))
    return out


def write_who_fixture(path, first=1959, last=2015, seed=2024, total_deaths=6000):
    """Write a WHO-format CSV for six fake countries (columns match ``who_format.toml``)."""
    rng = np.random.default_rng(seed)
    years = list(range(first, last + 1))
    shares = fixture_compositions(years, seed)
    header = ["Country", "Year", "List", "Cause", "Sex"] + list(FIXTURE_BANDS)
    rows = []
    for country in FIXTURE_COUNTRIES:
        gap = FIXTURE_GAPS.get(country)
        for sex, sex_code in (("male", "1"), ("female", "2")):
            comp = shares[(country, sex)]
            for i, year in enumerate(years):
                if gap and gap[0] <= year <= gap[1]:
                    continue
                rev = revision_for(year)
                list_code, codes, other = FIXTURE_CODES[rev]
                all_ages = np.zeros(len(FIXTURE_BANDS), dtype=int)
                for d, code in enumerate(codes):
                    counts = rng.poisson(total_deaths * comp[d, i] * BAND_SHARES)
                    all_ages += counts
                    rows.append([country, year, list_code, code, sex_code] + counts.tolist())
                counts = rng.poisson(0.15 * total_deaths * BAND_SHARES)
                all_ages += counts
                rows.append([country, year, list_code, other, sex_code] + counts.tolist())
                rows.append([country, year, list_code, "AAA", sex_code] + all_ages.tolist())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def fixture_format_toml() -> str:
    """Sidecar for the fixture: WHO columns, no country code translation."""
    bands = {
        "Deaths13": "35-39", "Deaths14": "40-44", "Deaths15": "45-49", "Deaths16": "50-54",
        "Deaths17": "55-59", "Deaths18": "60-64", "Deaths19": "65-69",
    }
    lines = [
        "[columns]", 'country = "Country"', 'year = "Year"', 'sex = "Sex"', 'revision = "List"', 'cause = "Cause"',
        "", "[sex_codes]", 'male = ["1"]', 'female = ["2"]',
        "", "[revisions]", '"07A" = 7', '"08A" = 8', '"09B" = 9', '"104" = 10',
        "", "[age_bands]",
    ] + [f'{k} = "{v}"' for k, v in bands.items()] + [
        "", "[options]", 'skip_causes = ["AAA"]', "blank_as_zero = true", "",
    ]
    return "\n".join(lines)
