"""End-to-end pipeline: ingest -> smooth/impute -> PCA -> clustering -> plots.

Each stage reads the CSV artifacts written by the previous one, so running
the stages one by one produces the same files as :func:`run_all`.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import cfpca, clustering, compdata, ingest, smoothing, svgplot
from .smoothing import SmoothingConfig
from .errors import ConfigError, MissingUpstreamArtifact
from .tables import read_csv, write_csv

log = logging.getLogger(__name__)

SEX_DIRS = {"men": "male", "women": "female"}


@dataclass
class PipelineConfig:
    data: list = field(default_factory=list)
    format: Optional[Path] = None
    cause_map: Optional[Path] = None
    adjustments: Optional[Path] = None
    output: Path = Path("cfda-out")
    years: tuple = (1959, 2015)
    sex: str = "both"
    countries: Optional[tuple] = ingest.STUDY_COUNTRIES
    age_window: tuple = ingest.AGE_WINDOW
    pseudocount: float = compdata.DEFAULT_PSEUDOCOUNT
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    ridge: float = 1e-3
    K: int = cfpca.DEFAULT_K
    sigma: float = 1.0
    B: int = 1000
    g_range: tuple = tuple(range(2, 9))
    G_override: dict = field(default_factory=dict)
    master_seed: int = 0
    silhouette_literal: bool = False
    silhouette_squared: bool = True

    def __post_init__(self):
        self.output = Path(self.output)
        self.data = [Path(p) for p in self.data]
        for attr in ("format", "cause_map", "adjustments"):
            value = getattr(self, attr)
            setattr(self, attr, Path(value) if value else None)
        self.validate()

    def validate(self):
        if int(self.K) < 1:
            raise ConfigError("K must be at least 1")
        if int(self.B) < 1:
            raise ConfigError("B must be at least 1")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.sex not in ("men", "women", "both"):
            raise ConfigError("sex must be men, women or both")
        if not self.g_range or min(self.g_range) < 2:
            raise ConfigError("g_range values must be at least 2")
        if self.years[0] >= self.years[1]:
            raise ConfigError("year window must span at least two years")
        for p in list(self.data) + [self.format, self.cause_map, self.adjustments]:
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")
        for key in self.G_override:
            if key not in SEX_DIRS:
                raise ConfigError(f"G_override key must be men or women, got {key!r}")

    @property
    def sexes(self):
        return ["men", "women"] if self.sex == "both" else [self.sex]

    @property
    def grid(self) -> compdata.TimeGrid:
        return compdata.TimeGrid.yearly(*self.years)

    @classmethod
    def load(cls, path, **overrides) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls(**config_kwargs(doc, path.parent), **overrides)


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_kwargs(doc: dict, base: Path) -> dict:
    """Flatten the TOML layout into :class:`PipelineConfig` keyword arguments."""
    unknown = set(doc) - {"paths", "analysis", "smoothing", "clustering"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kw = {}
    paths = doc.get("paths", {})
    data = paths.get("data", [])
    kw["data"] = [_resolve(base, d) for d in ([data] if isinstance(data, str) else data)]
    for key in ("format", "cause_map", "adjustments"):
        if key in paths:
            kw[key] = _resolve(base, paths[key])
    if "output" in paths:
        kw["output"] = _resolve(base, paths["output"])
    a = doc.get("analysis", {})
    if "years" in a:
        kw["years"] = tuple(int(y) for y in a["years"])
    if "age_window" in a:
        kw["age_window"] = tuple(int(y) for y in a["age_window"])
    if "countries" in a:
        kw["countries"] = tuple(a["countries"]) if a["countries"] else None
    for key in ("sex", "pseudocount", "ridge", "K", "sigma", "B", "master_seed"):
        if key in a:
            kw[key] = a[key]
    if "g_range" in a:
        lo, hi = a["g_range"]
        kw["g_range"] = tuple(range(int(lo), int(hi) + 1))
    s = doc.get("smoothing", {})
    if s:
        lam = s.get("lambda", "gcv")
        kw["smoothing"] = SmoothingConfig(
            int(s.get("basis_dimension", 15)), int(s.get("penalty_order", 2)),
            lam if isinstance(lam, str) else float(lam))
    c = doc.get("clustering", {})
    if "silhouette_literal" in c:
        kw["silhouette_literal"] = bool(c["silhouette_literal"])
    if "squared" in c:
        kw["silhouette_squared"] = bool(c["squared"])
    if "G_override" in c:
        kw["G_override"] = {k: int(v) for k, v in c["G_override"].items()}
    return kw


# ---------------------------------------------------------------------------
# stages


def sex_dir(cfg: PipelineConfig, sex: str) -> Path:
    return cfg.output / sex


def _require(path: Path) -> Path:
    if not path.is_file() or path.stat().st_size == 0:
        raise MissingUpstreamArtifact(path)
    return path


def stage_ingest(cfg: PipelineConfig) -> list:
    if not cfg.data:
        raise ConfigError("no input data files configured")
    fmt = ingest.FormatConfig.load(cfg.format)
    cmap = ingest.CauseMap.from_csv(cfg.cause_map)
    adj = ingest.load_adjustments(cfg.adjustments)
    records, rejects = [], []
    for path in cfg.data:
        res = ingest.parse_records(path, fmt, cfg.years)
        records.extend(res.records)
        rejects.extend(res.rejects)
    written = [cfg.output / "rejects.csv", cfg.output / "conservation.csv"]
    ingest.write_rejects(written[0], rejects)
    ingest.write_conservation(written[1], ingest.conservation_report(records, cmap, adj))
    grid = cfg.grid
    for sex in cfg.sexes:
        built = ingest.build_compositions(records, cmap, adj, grid, SEX_DIRS[sex], cfg.age_window,
                                          cfg.countries, cfg.pseudocount)
        if not built.compositions:
            raise MissingUpstreamArtifact(cfg.data[0], f"no records for {sex} in the configured countries")
        out = sex_dir(cfg, sex)
        compdata.write_compositions(out / "raw_compositions.csv", built.compositions)
        ingest.write_masks(out / "masks.csv", grid, built.masks)
        written += [out / "raw_compositions.csv", out / "masks.csv"]
        for note in built.warnings:
            log.info("%s: %s", sex, note)
    return written


def stage_smooth(cfg: PipelineConfig) -> list:
    written = []
    for sex in cfg.sexes:
        out = sex_dir(cfg, sex)
        raw = compdata.read_compositions(_require(out / "raw_compositions.csv"))
        masks_path = out / "masks.csv"
        table = ingest.read_masks(masks_path) if masks_path.is_file() else {}
        masks = [table.get(f.id, smoothing.MissingMask(f.id, np.zeros(f.T, bool))) for f in raw]
        smoothed = [smoothing.smooth_composition(f, cfg.smoothing, ~m.missing) for f, m in zip(raw, masks)]
        completed = smoothing.impute_missing(smoothed, masks, cfg.ridge)
        compdata.write_compositions(out / "smoothed.csv", completed)
        written.append(out / "smoothed.csv")
    return written


def stage_pca(cfg: PipelineConfig, input_path: Path = None) -> list:
    written = []
    for sex in cfg.sexes:
        out = sex_dir(cfg, sex)
        sample = compdata.read_compositions(_require(Path(input_path) if input_path else out / "smoothed.csv"))
        mu, centered, eig, _ = cfpca.pca(sample)
        K = min(cfg.K, eig.K_max)
        if K < cfg.K:
            log.warning("%s: only %d components available; K reduced from %d", sex, K, cfg.K)
        sm = cfpca.scores(centered, eig, K)
        compdata.write_compositions(out / "mean.csv", [mu.composition])
        cfpca.write_eigenvalues(out / "eigenvalues.csv", eig)
        head = cfpca.EigenSystem(eig.eigenvalues[:K], eig.clr_eigenfunctions[:K], eig.simplex_eigenfunctions[:K],
                                 eig.fev[:K], eig.total_variance, eig.n, K, eig.grid)
        cfpca.write_eigenfunctions(out / "eigenfunctions.csv", head)
        cfpca.write_eigenfunctions(out / "eigenfunctions_simplex.csv", head, clr_space=False)
        cfpca.write_scores(out / "scores.csv", sm)
        envelopes = []
        for k in range(1, K + 1):
            envelopes.extend(cfpca.component_envelope(mu, eig, k))
        compdata.write_compositions(out / "envelopes.csv", envelopes)
        written += [out / n for n in ("mean.csv", "eigenvalues.csv", "eigenfunctions.csv",
                                      "eigenfunctions_simplex.csv", "scores.csv", "envelopes.csv")]
    return written


def stage_cluster(cfg: PipelineConfig, input_path: Path = None) -> list:
    written = []
    for sex in cfg.sexes:
        out = sex_dir(cfg, sex)
        sm = cfpca.read_scores(_require(Path(input_path) if input_path else out / "scores.csv"))
        g_range = [g for g in cfg.g_range if g <= sm.n - 1]
        if not g_range:
            raise ConfigError(f"{sex}: g_range {list(cfg.g_range)} leaves nothing below n - 1 = {sm.n - 1}")
        rows, best, results = clustering.select_g(sm, g_range, cfg.B, cfg.master_seed, cfg.sigma,
                                                  cfg.silhouette_squared, cfg.silhouette_literal)
        G = cfg.G_override.get(sex, best)
        res = results.get(G) or clustering.majority_vote(
            clustering.similarity(sm, cfg.sigma), G, cfg.B, cfg.master_seed,
            cfg.silhouette_squared, cfg.silhouette_literal)
        clustering.write_selection(out / "selection.csv", rows)
        clustering.write_cluster_report(out / "clusters.csv", res)
        cent_rows = ((g + 1, sm.components[k], res.centroids[g, k])
                     for g in range(res.G) for k in range(sm.K))
        write_csv(out / "centroids.csv", ("label", "component", "value"), cent_rows)
        written += [out / "selection.csv", out / "clusters.csv", out / "centroids.csv"]
        mean_path, eig_path = out / "mean.csv", out / "eigenfunctions.csv"
        if mean_path.is_file() and eig_path.is_file():
            mu_comp = compdata.read_compositions(mean_path)[0]
            grid, _, basis = cfpca.read_eigenfunctions(eig_path)
            K = min(sm.K, basis.shape[0])
            base = compdata.clr_array(mu_comp.parts)
            curves = []
            for g in range(res.G):
                u = base + np.tensordot(res.centroids[g, :K], basis[:K], axes=1)
                curves.append(mu_comp.with_parts(compdata.clr_inv_array(u - u.mean(axis=0)), id=f"cluster{g + 1}"))
            compdata.write_compositions(out / "centroid_curves.csv", curves)
            written.append(out / "centroid_curves.csv")
    return written


def stage_plot(cfg: PipelineConfig) -> list:
    written = []
    for sex in cfg.sexes:
        out = sex_dir(cfg, sex)
        plots = out / "plots"
        plots.mkdir(parents=True, exist_ok=True)
        sample = compdata.read_compositions(_require(out / "smoothed.csv"))
        mu = compdata.read_compositions(_require(out / "mean.csv"))[0]
        lam, fev = cfpca.read_eigenvalues(_require(out / "eigenvalues.csv"))
        grid, names, basis = cfpca.read_eigenfunctions(_require(out / "eigenfunctions.csv"))
        sm = cfpca.read_scores(_require(out / "scores.csv"))
        ids, labels = clustering.read_cluster_report(_require(out / "clusters.csv"))
        years = mu.grid.points
        D = mu.D
        title_sex = "Men" if sex == "men" else "Women"

        panels = []
        for d, name in enumerate(mu.part_names):
            series = [svgplot.Series(years, f.parts[d], svgplot.GREY, 0.8) for f in sample]
            series.append(svgplot.Series(years, mu.parts[d], svgplot.PALETTE[d % len(svgplot.PALETTE)], 2.2))
            panels.append(svgplot.Panel(name, series))
        path = plots / "compositions.svg"
        path.write_text(svgplot.panels_svg(panels, 4, f"{title_sex}: compositions and compositional mean"))
        written.append(path)

        base = compdata.clr_array(mu.parts)
        for k in range(basis.shape[0]):
            step = np.sqrt(lam[k]) * basis[k]
            plus = compdata.clr_inv_array(base + step)
            minus = compdata.clr_inv_array(base - step)
            panels = []
            for d, name in enumerate(mu.part_names):
                col = svgplot.PALETTE[d % len(svgplot.PALETTE)]
                panels.append(svgplot.Panel(name, [
                    svgplot.Series(years, mu.parts[d], col, 2.0),
                    svgplot.Series(years, plus[d], col, 1.2, "6 3"),
                    svgplot.Series(years, minus[d], col, 1.2, "2 2"),
                ]))
            path = plots / f"component_{k + 1}.svg"
            title = f"{title_sex}: PC{k + 1} (lambda = {lam[k]:.4g}, FEV = {fev[k]:.3f})"
            legend = [("mean", "#333333", None), ("mean + PC", "#333333", "6 3"), ("mean - PC", "#333333", "2 2")]
            path.write_text(svgplot.panels_svg(panels, 4, title, legend=legend))
            written.append(path)

        cent_path = out / "centroid_curves.csv"
        if cent_path.is_file():
            cents = compdata.read_compositions(cent_path)
            panels = []
            for d, name in enumerate(mu.part_names):
                panels.append(svgplot.Panel(name, [
                    svgplot.Series(years, c.parts[d], svgplot.PALETTE[g % len(svgplot.PALETTE)], 1.8)
                    for g, c in enumerate(cents)]))
            legend = [(f"cluster {g + 1}", svgplot.PALETTE[g % len(svgplot.PALETTE)], None) for g in range(len(cents))]
            path = plots / "centroids.svg"
            path.write_text(svgplot.panels_svg(panels, 4, f"{title_sex}: functional cluster centroids", legend=legend))
            written.append(path)

        label_of = dict(zip(ids, labels))
        groups = [label_of.get(i, 0) for i in sm.ids]
        y = sm.values[:, 1] if sm.K > 1 else np.zeros(sm.n)
        path = plots / "scores.svg"
        path.write_text(svgplot.scatter_svg(sm.values[:, 0], y, groups, sm.ids, f"{title_sex}: scores by cluster"))
        written.append(path)
    return written


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: PipelineConfig, paths) -> Path:
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "master_seed": cfg.master_seed,
        "sexes": cfg.sexes,
        "palette": {"parts": list(svgplot.PALETTE[:8]), "clusters": list(svgplot.PALETTE), "sample": svgplot.GREY},
        "artifacts": [
            {"path": str(Path(p).relative_to(cfg.output)), "sha256": _sha256(Path(p))}
            for p in sorted(set(Path(p) for p in paths))
        ],
    }
    path = cfg.output / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


STAGES = {
    "ingest": stage_ingest,
    "smooth": stage_smooth,
    "pca": stage_pca,
    "cluster": stage_cluster,
    "plot": stage_plot,
}


def run_all(cfg: PipelineConfig) -> Path:
    written = []
    for name, stage in STAGES.items():
        log.info("stage %s", name)
        written += stage(cfg)
    return write_manifest(cfg, written)
