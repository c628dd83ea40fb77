"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n ... PASS|FAIL`` line (visible with
``pytest -v`` because printing bypasses output capture) and then asserts.

Criteria 7-10 need the pipeline output for a real WHO mortality extract.
Run ``cfda all`` on that extract (K = 4, women ``G_override = 6``) and point
``CFDA_WHO_OUTPUT`` at the output directory; otherwise they are skipped.
"""

import io
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from cfda import cfpca, clustering, ingest
from cfda import compdata as cd
from cfda.synthetic import fixture_format_toml, planted_kl_sample, write_who_fixture
from oracles import best_partition, jacobi_eigenvalues, kmeans_cost, mp_clr, naive_silhouette

WHO_OUTPUT = os.environ.get("CFDA_WHO_OUTPUT")


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number:>2} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


@pytest.fixture
def who_data(capsys, request):
    if not WHO_OUTPUT:
        with capsys.disabled():
            params = getattr(request.node, "callspec", None)
            number = params.params["number"] if params else request.node.name.rsplit("_", 2)[-2]
            print(f"\nCRITERION {number:>2} SKIP: no WHO extract (set CFDA_WHO_OUTPUT)")
        pytest.skip("set CFDA_WHO_OUTPUT to a cfda output directory for WHO data")
    return Path(WHO_OUTPUT)


def trapezoid(points, a, b):
    """Weighted L2 inner product written out interval by interval."""
    prod = np.sum(a * b, axis=0)
    return float(np.sum(np.diff(points) * (prod[:-1] + prod[1:]) / 2))


def random_case(rng):
    T = int(rng.integers(2, 30))
    D = int(rng.integers(2, 9))
    points = np.cumsum(rng.uniform(0.2, 2.0, T))
    grid = cd.TimeGrid.trapezoid(points)
    def draw():
        return cd.FunctionalComposition(grid, cd.close_columns(rng.uniform(0.05, 1.0, (D, T)), 0.0))
    return grid, draw


# ---------------------------------------------------------------------------
# 1. simplex algebra


def test_criterion_1_simplex_algebra(report):
    rng = np.random.default_rng(20240101)
    worst = {"roundtrip": 0.0, "isometry": 0.0, "linearity": 0.0, "bilinearity": 0.0}
    start = time.perf_counter()
    for _ in range(1000):
        grid, draw = random_case(rng)
        f = draw()
        back = cd.clr_inv(cd.clr(f))
        worst["roundtrip"] = max(worst["roundtrip"], float(np.max(np.abs(back.parts - f.parts))))
    # the roundtrip oracle: high-precision clr on a subset of columns
    for _ in range(50):
        grid, draw = random_case(rng)
        f = draw()
        col = int(rng.integers(len(grid)))
        ref = mp_clr(f.parts[:, col])
        worst["roundtrip"] = max(worst["roundtrip"], float(np.max(np.abs(cd.clr(f).coords[:, col] - ref))))
    for _ in range(1000):
        grid, draw = random_case(rng)
        f, g = draw(), draw()
        ref = trapezoid(grid.points, np.log(f.parts) - np.log(f.parts).mean(axis=0),
                        np.log(g.parts) - np.log(g.parts).mean(axis=0))
        worst["isometry"] = max(worst["isometry"], abs(cd.inner_product(f, g) - ref))
    for _ in range(1000):
        grid, draw = random_case(rng)
        f, g = draw(), draw()
        a, b = rng.uniform(-3, 3, 2)
        lhs = cd.clr(cd.perturb(cd.power(a, f), cd.power(b, g))).coords
        rhs = a * cd.clr(f).coords + b * cd.clr(g).coords
        worst["linearity"] = max(worst["linearity"], float(np.max(np.abs(lhs - rhs))))
    for _ in range(1000):
        grid, draw = random_case(rng)
        f, g, h = draw(), draw(), draw()
        a, b = rng.uniform(-3, 3, 2)
        lhs = cd.inner_product(cd.perturb(cd.power(a, f), cd.power(b, g)), h)
        rhs = a * cd.inner_product(f, h) + b * cd.inner_product(g, h)
        worst["bilinearity"] = max(worst["bilinearity"], abs(lhs - rhs))
    elapsed = time.perf_counter() - start
    ok = (worst["roundtrip"] <= 1e-10 and worst["isometry"] <= 1e-12 and worst["linearity"] <= 1e-10
          and worst["bilinearity"] <= 1e-9 and elapsed < 10)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    assert report(1, ok, detail)


# ---------------------------------------------------------------------------
# 2. rank-1 closed forms


def test_criterion_2_rank1_closed_form(report):
    grid = cd.TimeGrid.trapezoid(np.linspace(0.0, 1.0, 11))
    sample = [cd.constant([2, 1, 1], grid, id="a"), cd.constant([1, 2, 1], grid, id="b")]
    mu, _, eig, sc = cfpca.pca(sample)
    target = np.array([math.sqrt(2), math.sqrt(2), 1.0])
    target /= target.sum()
    lam = (math.log(2) ** 2) / 2
    xi = math.log(2) / math.sqrt(2)
    errs = {
        "mean": float(np.max(np.abs(mu.composition.parts - target[:, None]))),
        "lambda1": abs(eig.eigenvalues[0] - lam),
        "scores": float(np.max(np.abs(np.sort(sc.values[:, 0]) - [-xi, xi]))),
        "reconstruction": max(float(np.max(np.abs(cfpca.reconstruct(mu, eig, sc.values[i], 1).parts - f.parts)))
                              for i, f in enumerate(sample)),
    }
    ok = (errs["mean"] <= 1e-12 and errs["lambda1"] <= 1e-10 and errs["scores"] <= 1e-10
          and errs["reconstruction"] <= 1e-8)
    assert report(2, ok, f"lambda1 {eig.eigenvalues[0]:.8f}, " + ", ".join(f"{k} err {v:.1e}" for k, v in errs.items()))


# ---------------------------------------------------------------------------
# 3. planted Karhunen-Loeve recovery


def test_criterion_3_planted_kl(report):
    start = time.perf_counter()
    sample, truth = planted_kl_sample(n=500, D=8, T=57, variances=(4.0, 1.0), seed=2015, dist="uniform")
    mu, _, eig, sc = cfpca.pca(sample, K_max=8)
    rel = np.abs(eig.eigenvalues[:2] - truth["variances"]) / truth["variances"]
    w = truth["grid"].weights
    align = [abs(cd.l2_inner(w, eig.clr_eigenfunctions[k].coords, truth["phi"][k])) for k in range(2)]
    parseval = 0.0
    for K in (0, 1, 2):
        err = np.mean([cd.distance(f, cfpca.reconstruct(mu, eig, sc.values[i], K)) ** 2
                       for i, f in enumerate(sample)])
        # tail sum over every retained eigenvalue, including those past K_max
        parseval = max(parseval, abs(err - (eig.total_variance - eig.eigenvalues[:K].sum())))
    elapsed = time.perf_counter() - start
    ok = bool(np.all(rel <= 0.10) and min(align) > 0.99 and parseval <= 1e-6 and elapsed < 30)
    detail = (f"lambda {eig.eigenvalues[0]:.3f}/{eig.eigenvalues[1]:.3f} (rel err {rel.max():.3f}), "
              f"alignment {min(align):.5f}, Parseval residual {parseval:.1e}, {elapsed:.1f}s")
    assert report(3, ok, detail)


# ---------------------------------------------------------------------------
# 4. brute-force eigen oracle


def test_criterion_4_jacobi_oracle(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        T, D = int(rng.integers(2, 9)), int(rng.integers(2, 4))
        grid = cd.TimeGrid.trapezoid(np.sort(rng.uniform(0, 10, T)) + np.arange(T))
        n = int(rng.integers(2, 3 * D * T))
        C = rng.normal(size=(n, D, T))
        C -= C.mean(axis=1, keepdims=True)
        C -= C.mean(axis=0)
        flat = C.reshape(n, -1)
        cov = cfpca.CovKernelBlocks.from_matrix(grid, flat.T @ flat / n, D, n)
        eig = cfpca.eigendecompose(cov)
        sw = np.sqrt(np.tile(grid.weights, D))
        ref = sorted(jacobi_eigenvalues(sw[:, None] * cov.assembled() * sw), reverse=True)
        worst = max(worst, float(np.max(np.abs(eig.eigenvalues - ref[: eig.K_max]))))
    assert report(4, worst <= 1e-8, f"max eigenvalue deviation {worst:.1e} over 50 kernels")


# ---------------------------------------------------------------------------
# 5. clustering oracle


def clustered_scores(rng):
    n, G = int(rng.integers(6, 11)), int(rng.integers(2, 4))
    centres = rng.normal(size=(G, 2)) * 3
    labels = np.concatenate([np.arange(G), rng.integers(0, G, n - G)])
    return centres[labels] + 0.5 * rng.normal(size=(n, 2)), G


def test_criterion_5_clustering_oracle(report):
    rng = np.random.default_rng(55)
    sil_err, opt_gap, deterministic = 0.0, 0.0, True
    for case in range(20):
        X, G = clustered_scores(rng)
        graph = clustering.similarity(X)
        res = clustering.majority_vote(graph, G, B=100, master_seed=case)
        again = clustering.majority_vote(graph, G, B=100, master_seed=case)
        deterministic &= (np.array_equal(res.labels, again.labels) and res.vote_share == again.vote_share
                          and np.array_equal(res.centroids, again.centroids) and res.votes == again.votes
                          and np.array_equal(res.per_point_silhouette, again.per_point_silhouette))
        ref_mean, ref = naive_silhouette(X.tolist(), res.labels.tolist())
        sil_err = max(sil_err, float(np.max(np.abs(res.per_point_silhouette - ref))), abs(res.silhouette_mean - ref_mean))
        emb = clustering.spectral_embedding(graph, G)
        best, _ = best_partition(emb.tolist(), G, kmeans_cost)
        opt_gap = max(opt_gap, abs(res.objective - best))
    ok = sil_err <= 1e-12 and opt_gap <= 1e-9 and deterministic
    assert report(5, ok, f"silhouette err {sil_err:.1e}, objective gap {opt_gap:.1e}, deterministic {deterministic}")


# ---------------------------------------------------------------------------
# 6. ingest conservation


def test_criterion_6_conservation(report, tmp_path):
    cmap, adj = ingest.CauseMap.from_csv(), ingest.load_adjustments()
    fmt = ingest.FormatConfig.load(io.StringIO(fixture_format_toml()))
    rows = []
    for seed in (1, 2, 3):
        path = write_who_fixture(tmp_path / f"f{seed}.csv", seed=seed)
        rows += ingest.conservation_report(ingest.parse_records(path, fmt).records, cmap, adj)
    balanced = all(r[3] == r[4] + r[5] and isinstance(r[3], int) for r in rows)
    assert report(6, balanced and bool(rows), f"{len(rows)} country-sex-years, all balanced: {balanced}")


# ---------------------------------------------------------------------------
# 7-10. WHO data (optional)

EIGEN_TARGETS = {
    "men": ([17.06, 10.92, 7.27, 4.62], [0.337, 0.216, 0.144, 0.091], 0.787),
    "women": ([14.87, 7.38, 5.94, 5.66], [0.326, 0.162, 0.13, 0.124], 0.742),
}

SCORE_TARGETS = {
    "men": {
        "AUS": (4.38, -2.08, 0.32, 0.28), "AUT": (-3.83, -1.03, 0.95, 3.90), "BEL": (0.44, 1.43, -3.02, -0.21),
        "CAN": (3.26, -3.80, 0.80, 0.75), "DNK": (3.41, -1.51, 0.23, 3.42), "FIN": (-0.63, 6.34, 3.59, 3.36),
        "FRA": (-5.20, -3.66, -0.10, 0.18), "GRE": (-2.90, 1.77, -2.14, -2.28), "HUN": (-5.80, 4.11, 0.09, 3.32),
        "ICE": (3.01, 3.13, 4.77, -3.32), "IRL": (2.15, 4.72, -2.67, -2.63), "ITA": (-2.49, -3.81, -2.90, 0.64),
        "JPN": (-6.76, -2.10, 2.89, -2.98), "NL": (5.55, -1.00, -2.77, 0.72), "NZL": (6.49, -0.69, 0.82, -2.21),
        "NOR": (2.47, 0.72, 2.93, -1.17), "POL": (-5.27, 3.93, 0.19, -1.58), "SPA": (-5.76, -2.51, -3.61, -2.02),
        "SWE": (1.37, -1.45, 4.52, 0.43), "SWI": (-0.65, -2.19, 0.55, 0.06), "UK": (4.28, 4.84, -5.20, 1.05),
        "USA": (2.50, -5.16, -0.24, 0.27),
    },
    "women": {
        "AUS": (3.08, 1.87, 0.86, -0.42), "AUT": (-2.76, 1.02, -1.31, -3.53), "BEL": (-1.67, 2.06, -0.51, -0.01),
        "CAN": (2.74, 3.76, 0.17, -0.37), "DNK": (4.12, 1.92, -2.26, -3.47), "FIN": (-3.01, -2.79, -3.92, 0.06),
        "FRA": (-6.77, 2.70, -2.35, 0.90), "GRE": (-0.52, -2.37, 2.50, 0.72), "HUN": (-2.96, -3.25, -1.79, -5.40),
        "ICE": (5.40, 0.21, -4.05, 4.43), "IRL": (4.00, -5.82, 1.25, 1.01), "ITA": (-3.72, 1.75, 4.19, -1.47),
        "JPN": (-4.21, -1.69, -0.99, 4.99), "NL": (1.98, 2.59, 0.75, -1.22), "NZL": (5.10, -0.62, 3.00, 0.59),
        "NOR": (2.37, -0.71, -1.49, 1.85), "POL": (-3.63, -4.13, 1.14, -0.74), "SPA": (-5.71, -0.81, 4.00, 1.87),
        "SWE": (1.02, 1.40, -2.02, 0.17), "SWI": (-2.54, 2.31, -1.56, 0.81), "UK": (5.97, -3.21, 0.61, -2.05),
        "USA": (1.73, 3.82, 3.76, 1.29),
    },
}

CLUSTER_TARGETS = {
    "men": [
        {"USA", "CAN", "AUS", "NZL", "DNK", "NL"}, {"ITA", "FRA", "SPA", "AUT", "SWI", "JPN"},
        {"HUN", "POL", "FIN", "GRE"}, {"UK", "IRL", "BEL"}, {"NOR", "SWE", "ICE"},
    ],
    "women": [
        {"USA", "CAN", "AUS", "DNK", "NL"}, {"ITA", "SPA", "JPN"}, {"FRA", "SWI", "BEL"},
        {"HUN", "POL", "AUT", "FIN", "GRE"}, {"UK", "IRL", "NZL"}, {"NOR", "SWE", "ICE"},
    ],
}


@pytest.mark.parametrize("number,sex", [(7, "men"), (8, "women")])
def test_criteria_7_8_eigenstructure(report, who_data, number, sex):
    lam, fev = cfpca.read_eigenvalues(who_data / sex / "eigenvalues.csv")
    target_lam, target_fev, target_cum = EIGEN_TARGETS[sex]
    rel = np.abs(lam[:4] - target_lam) / target_lam
    fev_err = np.abs(fev[:4] - target_fev)
    cum_err = abs(fev[:4].sum() - target_cum)
    ok = bool(np.all(rel <= 0.05) and np.all(fev_err <= 0.02) and cum_err <= 0.02)
    detail = f"{sex}: lambda {np.round(lam[:4], 2).tolist()}, FEV {np.round(fev[:4], 3).tolist()}, cumulative {fev[:4].sum():.3f}"
    assert report(number, ok, detail)


def test_criterion_9_scores(report, who_data):
    worst, ok = {}, True
    for sex, table in SCORE_TARGETS.items():
        sm = cfpca.read_scores(who_data / sex / "scores.csv")
        rows = {i: sm.values[k, :4] for k, i in enumerate(sm.ids)}
        ours = np.array([rows[c] for c in table])
        theirs = np.array(list(table.values()))
        signs = np.where(np.sum(ours * theirs, axis=0) < 0, -1.0, 1.0)
        worst[sex] = float(np.max(np.abs(ours * signs - theirs)))
        ok &= worst[sex] <= 0.3
    assert report(9, ok, ", ".join(f"{s} max |score diff| {v:.2f}" for s, v in worst.items()))


def reassignments(labels_by_country, target_groups):
    """Fewest countries to move so our partition matches the target one."""
    ours = {}
    for country, label in labels_by_country.items():
        ours.setdefault(label, set()).add(country)
    ours = list(ours.values())
    overlap = np.array([[len(a & b) for b in target_groups] for a in ours])
    r, c = linear_sum_assignment(-overlap)
    return sum(len(g) for g in target_groups) - int(overlap[r, c].sum())


def test_criterion_10_clusters(report, who_data):
    moves, ok = {}, True
    for sex, groups in CLUSTER_TARGETS.items():
        ids, labels = clustering.read_cluster_report(who_data / sex / "clusters.csv")
        found = len(set(labels.tolist()))
        moves[sex] = reassignments(dict(zip(ids, labels.tolist())), groups)
        ok &= found == len(groups) and moves[sex] <= 2
    assert report(10, ok, ", ".join(f"{s} {m} reassignments" for s, m in moves.items()))
