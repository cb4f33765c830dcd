"""Per-city pipeline stages, flat-file artifacts and the run manifest.

Every stage reads its inputs from the city's output directory and writes its
own files there, so any stage can be re-run in isolation. All randomness is
drawn from seeds hashed out of (master seed, stage, city); artifact contents
are a pure function of the input tables and the configuration.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import gbdt, inequality, provision, resample, shapx, thresholds
from .errors import (
    ConfigError,
    InfraqError,
    MeanOutOfRange,
    MissingUpstreamArtifact,
    ModelQualityError,
    collect_warnings,
    warn,
)
from .ingest import FEATURES, TractRecord, feature_matrix, incomes, load_tracts
from .labeling import assign_hazard_labels

STAGES = ("label", "train", "explain", "thresholds", "provision", "inequality")
ANALYSIS_SETS = ("test-correct", "test-all")
LOCAL_ACCURACY_TOL = 1e-6
MANIFEST = "manifest.json"

ARTIFACTS = {
    "label": ("labels.csv",),
    "train": ("split.csv", "tuning.json", "model.json", "evaluation.json"),
    "explain": ("shap.csv", "weights.csv"),
    "thresholds": ("thresholds.csv", "dependence.csv"),
    "provision": ("provision.csv",),
    "inequality": ("inequality.json", "ecdf.csv"),
}
UPSTREAM = {
    "label": (),
    "train": ("labels.csv",),
    "explain": ("labels.csv", "split.csv", "model.json"),
    "thresholds": ("shap.csv",),
    "provision": ("thresholds.csv", "weights.csv"),
    "inequality": ("provision.csv",),
}

_CITY_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class LocalAccuracyViolation(ModelQualityError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Everything a run depends on besides the input tables themselves."""

    cities: dict[str, Path]
    seed: int
    out: Path = Path("out")
    search_space: gbdt.SearchSpace = field(default_factory=gbdt.SearchSpace)
    n_iter: int = 50
    folds: int = 10
    train_ratio: float = 0.8
    frac: float = thresholds.DEFAULT_FRAC
    robust_iters: int = thresholds.DEFAULT_ROBUST_ITERS
    bootstrap: int = 200
    smote: bool = True
    smote_k: int = resample.DEFAULT_K
    raw_units: bool = False
    analysis_set: str = "test-correct"
    workers: int = 1

    _KEYS = (
        "cities", "seed", "out", "search_space", "n_iter", "folds", "train_ratio", "frac",
        "robust_iters", "bootstrap", "smote", "smote_k", "raw_units", "analysis_set", "workers",
    )

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        """Build from a JSON-style mapping; relative paths resolve against ``base_dir``."""
        unknown = sorted(set(raw) - set(cls._KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if raw.get("seed") is None:
            raise ConfigError("a master seed is required")
        base = Path(base_dir) if base_dir is not None else Path.cwd()

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        kwargs = {k: raw[k] for k in cls._KEYS if k in raw}
        kwargs["cities"] = {str(c): resolve(p) for c, p in dict(raw.get("cities", {})).items()}
        if "out" in raw:
            kwargs["out"] = resolve(raw["out"])
        if "search_space" in raw:
            try:
                kwargs["search_space"] = gbdt.SearchSpace.from_dict(raw["search_space"])
            except TypeError as exc:
                raise ConfigError(f"bad search_space: {exc}") from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw, base_dir=path.parent)

    def validate(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not self.cities:
            raise ConfigError("no cities configured")
        for city, path in self.cities.items():
            if not _CITY_NAME.match(city):
                raise ConfigError(f"city name {city!r} must be a plain file-name token")
            if not Path(path).is_file():
                raise ConfigError(f"input table for {city!r} not found: {path}")
        checks = [
            (self.n_iter >= 1, "n_iter must be >= 1"),
            (self.folds >= 2, "folds must be >= 2"),
            (0 < self.train_ratio < 1, "train_ratio must lie in (0, 1)"),
            (0 < self.frac <= 1, "frac must lie in (0, 1]"),
            (self.robust_iters >= 0, "robust_iters must be >= 0"),
            (self.bootstrap >= 1, "bootstrap must be >= 1"),
            (self.smote_k >= 1, "smote_k must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.analysis_set in ANALYSIS_SETS, f"analysis_set must be one of {ANALYSIS_SETS}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        for name, (lo, hi) in asdict(self.search_space).items():
            if lo > hi:
                raise ConfigError(f"search_space.{name}: lower bound exceeds upper bound")

    def snapshot(self) -> dict:
        """JSON form of the settings that affect artifacts.

        Input tables are identified by content hash rather than path, and
        ``out``/``workers`` are left out because they do not change results.
        """
        return {
            "seed": self.seed,
            "cities": {c: sha256_file(p) for c, p in sorted(self.cities.items())},
            "search_space": {k: list(v) for k, v in asdict(self.search_space).items()},
            "n_iter": self.n_iter,
            "folds": self.folds,
            "train_ratio": self.train_ratio,
            "frac": self.frac,
            "robust_iters": self.robust_iters,
            "bootstrap": self.bootstrap,
            "smote": self.smote,
            "smote_k": self.smote_k,
            "raw_units": self.raw_units,
            "analysis_set": self.analysis_set,
        }

    def with_overrides(self, **changes) -> "RunConfig":
        cfg = replace(self, **{k: v for k, v in changes.items() if v is not None})
        cfg.validate()
        return cfg


def derive_seed(master: int, stage: str, city: str) -> int:
    """63-bit seed from sha256 of (master seed, stage, city)."""
    digest = hashlib.sha256(f"{master}\x1f{stage}\x1f{city}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


SEED_STREAMS = ("label", "split", "tune", "balance", "bootstrap")


def city_seeds(master: int, city: str) -> dict[str, int]:
    return {s: derive_seed(master, s, city) for s in SEED_STREAMS}


# --------------------------------------------------------------------------
# flat-file IO


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n",
                    encoding="utf-8")


def _num(v: float | None):
    """JSON-safe float: non-finite values become null."""
    return None if v is None or not math.isfinite(v) else float(v)


# --------------------------------------------------------------------------
# stage context


@dataclass
class StageRecord:
    artifacts: dict[str, str]
    metrics: dict
    warnings: list[str]
    seconds: float

    def to_dict(self) -> dict:
        return {
            "artifacts": self.artifacts,
            "metrics": self.metrics,
            "warnings": self.warnings,
            "seconds": self.seconds,
        }


class CityRun:
    """One city's inputs, seeds and output directory."""

    def __init__(self, cfg: RunConfig, city: str):
        if city not in cfg.cities:
            raise ConfigError(f"city {city!r} is not in the config")
        self.cfg = cfg
        self.city = city
        self.dir = Path(cfg.out) / city
        self.seeds = city_seeds(cfg.seed, city)
        self._records: list[TractRecord] | None = None

    @property
    def records(self) -> list[TractRecord]:
        if self._records is None:
            self._records = load_tracts(self.cfg.cities[self.city], city=self.city)
        return self._records

    def path(self, name: str) -> Path:
        return self.dir / name

    def require(self, stage: str) -> None:
        for name in UPSTREAM[stage]:
            if not self.path(name).is_file():
                raise MissingUpstreamArtifact(
                    f"{self.city}/{stage}: upstream artifact {name} is missing; run the earlier stage"
                )

    def labels(self) -> np.ndarray:
        rows = read_csv(self.path("labels.csv"))
        by_geoid = {r["geoid"]: int(r["label"]) for r in rows}
        return np.array([by_geoid[r.geoid] for r in self.records], dtype=np.int64)

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        rows = read_csv(self.path("split.csv"))
        subset = {r["geoid"]: r["subset"] for r in rows}
        tags = np.array([subset[r.geoid] for r in self.records])
        return np.flatnonzero(tags == "train"), np.flatnonzero(tags == "test")


def run_stage(run: CityRun, stage: str) -> StageRecord:
    """Execute one stage, returning hashes, metrics and warnings.

    Errors are re-raised with the city and stage attached.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    run.require(stage)
    run.dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        with collect_warnings() as caught:
            metrics = _STAGE_FUNCS[stage](run)
    except InfraqError as exc:
        exc.city, exc.stage = run.city, stage
        if not str(exc).startswith(f"{run.city}/{stage}:"):
            exc.args = (f"{run.city}/{stage}: {exc}",)
        raise
    seconds = time.perf_counter() - start
    artifacts = {name: sha256_file(run.path(name)) for name in ARTIFACTS[stage]}
    return StageRecord(artifacts, metrics, list(caught), round(seconds, 6))


# --------------------------------------------------------------------------
# stages


def _stage_label(run: CityRun) -> dict:
    lab = assign_hazard_labels(run.records, seed=run.seeds["label"])
    write_csv(
        run.path("labels.csv"),
        ("geoid", "label", "silhouette"),
        ((g, lab_i, lab.silhouette) for g, lab_i in zip(lab.geoids, lab.labels)),
    )
    return {
        "silhouette": lab.silhouette,
        "n_high": int(lab.labels.sum()),
        "n_low": int(len(lab.labels) - lab.labels.sum()),
    }


def _stage_train(run: CityRun) -> dict:
    cfg = run.cfg
    fm = feature_matrix(run.records)
    X, y = fm.values, run.labels()
    tr, te = gbdt.split_train_test(X, y, ratio=cfg.train_ratio, seed=run.seeds["split"])
    subset = np.full(len(y), "test", dtype=object)
    subset[tr] = "train"
    write_csv(run.path("split.csv"), ("geoid", "subset"), zip(fm.geoids, subset))

    search = gbdt.random_search(
        X[tr], y[tr], cfg.search_space, n_iter=cfg.n_iter, seed=run.seeds["tune"],
        folds=cfg.folds, smote=cfg.smote, smote_k=cfg.smote_k,
    )
    write_json(run.path("tuning.json"), {
        "best": asdict(search.best),
        "best_cv_f1": search.best_score,
        "trials": [{"params": asdict(hp), "cv_f1": s} for hp, s in search.trials],
    })

    Xtr, ytr, n_synth = X[tr], y[tr], 0
    if cfg.smote:
        bal = resample.balance_training(Xtr, ytr, seed=run.seeds["balance"], k=cfg.smote_k)
        Xtr, ytr, n_synth = bal.X, bal.y, int(bal.synthetic.sum())
    model = gbdt.train(Xtr, ytr, search.best, feature_names=fm.feature_names)
    model.save(run.path("model.json"))

    test_f1 = gbdt.f1(y[te], gbdt.classify(model, X[te]))
    evaluation = {
        "test_f1": test_f1,
        "cv_f1": search.best_score,
        "n_train": int(len(tr)),
        "n_test": int(len(te)),
        "n_synthetic": n_synth,
        "train_positive_rate": float(y[tr].mean()),
    }
    write_json(run.path("evaluation.json"), evaluation)
    return {"test_f1": test_f1, "cv_f1": search.best_score, "best": asdict(search.best)}


def _stage_explain(run: CityRun) -> dict:
    fm = feature_matrix(run.records)
    y = run.labels()
    _, te = run.split()
    model = gbdt.TreeEnsemble.load(run.path("model.json"))
    if run.cfg.analysis_set == "test-correct":
        rows = te[shapx.select_analysis_set(model, fm.values[te], y[te])]
    else:
        rows = te
    geoids = [fm.geoids[i] for i in rows]
    sm = shapx.explain(model, fm.values[rows], geoids=geoids, tag=run.cfg.analysis_set)
    err = sm.local_accuracy_error()
    if not err < LOCAL_ACCURACY_TOL:
        raise LocalAccuracyViolation(f"attributions miss the margin by {err:.3g}")

    write_csv(
        run.path("shap.csv"),
        ("geoid",) + fm.feature_names + ("base_value", "margin"),
        ((g, *phi, sm.base_value, m) for g, phi, m in zip(geoids, sm.values, sm.margins)),
    )
    raw = shapx.global_importance(sm)
    wv = provision.softmax_weights(raw, fm.feature_names)
    write_csv(
        run.path("weights.csv"),
        ("feature", "raw_weight", "weight"),
        zip(fm.feature_names, wv.raw, wv.normalized),
    )
    return {
        "n_analysis": int(len(rows)),
        "local_accuracy_max_error": err,
        "weights": dict(zip(fm.feature_names, map(float, wv.normalized))),
    }


def _read_shap(run: CityRun) -> shapx.ShapMatrix:
    rows = read_csv(run.path("shap.csv"))
    values = np.array([[float(r[f]) for f in FEATURES] for r in rows]).reshape(len(rows), len(FEATURES))
    return shapx.ShapMatrix(
        values=values,
        base_value=float(rows[0]["base_value"]) if rows else 0.0,
        margins=np.array([float(r["margin"]) for r in rows]),
        geoids=tuple(r["geoid"] for r in rows),
        feature_names=FEATURES,
    )


def _band_note(entry: thresholds.ThresholdEntry, curve: thresholds.FittedCurve) -> str:
    parts = [entry.note] if entry.note else []
    if entry.pattern in (thresholds.Pattern.CROSSES_UPWARD, thresholds.Pattern.MIXED):
        lo = float(np.interp(entry.threshold, curve.x, curve.band_lo))
        hi = float(np.interp(entry.threshold, curve.x, curve.band_hi))
        parts.append(f"band at threshold [{lo:.6g}, {hi:.6g}]")
    covered = int(np.sum((curve.band_lo <= 0) & (curve.band_hi >= 0)))
    parts.append(f"band contains 0 at {covered}/{len(curve.x)} points")
    return "; ".join(parts)


def _stage_thresholds(run: CityRun) -> dict:
    cfg = run.cfg
    fm = feature_matrix(run.records)
    sm = _read_shap(run)
    index = {g: i for i, g in enumerate(fm.geoids)}
    X = fm.values[[index[g] for g in sm.geoids]]

    entries, dep_rows, patterns = [], [], {}
    for j, feat in enumerate(fm.feature_names):
        series = shapx.dependence_series(sm, X, feat)
        curve = thresholds.lowess_fit(series.x, series.shap, cfg.frac, cfg.robust_iters)
        curve.band_lo, curve.band_hi = thresholds.bootstrap_band(
            series.x, series.shap, cfg.frac, B=cfg.bootstrap,
            seed=[run.seeds["bootstrap"], j], robust_iters=cfg.robust_iters, grid=curve.x,
        )
        column = fm.values[:, j]
        entry = thresholds.classify_and_threshold(
            curve, feature_range=(column.min(), column.max()), feature=feat,
        )
        entries.append(entry)
        patterns[feat] = entry.pattern.value
        for xv, sv in zip(series.x, series.shap):
            dep_rows.append((feat, xv, sv, curve.at(xv),
                             np.interp(xv, curve.x, curve.band_lo),
                             np.interp(xv, curve.x, curve.band_hi)))
        entry.note = _band_note(entry, curve)

    write_csv(
        run.path("thresholds.csv"),
        ("city", "feature", "pattern", "threshold", "n_crossings", "band_coverage_note"),
        ((run.city, e.feature, e.pattern.value, e.threshold, len(e.crossings), e.note)
         for e in entries),
    )
    write_csv(run.path("dependence.csv"),
              ("feature", "x", "shap", "fitted", "band_lo", "band_hi"), dep_rows)
    return {"patterns": patterns, "thresholds": {e.feature: e.threshold for e in entries}}


def read_profile(path: Path) -> thresholds.ThresholdProfile:
    entries = {}
    for r in read_csv(path):
        entries[r["feature"]] = thresholds.ThresholdEntry(
            feature=r["feature"],
            pattern=thresholds.Pattern(r["pattern"]),
            threshold=float(r["threshold"]),
            note=r["band_coverage_note"],
        )
    return thresholds.ThresholdProfile(entries)


def read_weights(path: Path) -> dict[str, float]:
    return {r["feature"]: float(r["weight"]) for r in read_csv(path)}


def _stage_provision(run: CityRun) -> dict:
    fm = feature_matrix(run.records)
    profile = read_profile(run.path("thresholds.csv"))
    weights = read_weights(run.path("weights.csv"))
    quality = provision.quality_provision(fm, profile, weights, raw_units=run.cfg.raw_units)
    quantity = provision.quantity_provision(fm, raw_units=run.cfg.raw_units)
    q_bins = inequality.quintile_bins(quality.scores)
    n_bins = inequality.quintile_bins(quantity.scores)
    write_csv(
        run.path("provision.csv"),
        ("geoid", "quality_provision", "quantity_provision", "raw_deviation",
         "quality_quintile", "quantity_quintile"),
        zip(fm.geoids, quality.scores, quantity.scores, quality.deviations, q_bins, n_bins),
    )
    rho = spearmanr(quality.scores, quantity.scores).statistic
    return {"spearman_quality_quantity": _num(float(rho))}


def _safe_index(scores: np.ndarray, label: str) -> float | None:
    try:
        return inequality.inequality_index(scores)
    except MeanOutOfRange as exc:
        warn(f"{label} inequality index undefined: {exc}")
        return None


def _stage_inequality(run: CityRun) -> dict:
    rows = read_csv(run.path("provision.csv"))
    by_geoid = {r["geoid"]: r for r in rows}
    ordered = [by_geoid[r.geoid] for r in run.records]
    quality = np.array([float(r["quality_provision"]) for r in ordered])
    quantity = np.array([float(r["quantity_provision"]) for r in ordered])
    income = incomes(run.records)

    gi = inequality.group_income_gap(quality, income)
    split = inequality.split_by_income_median(income)
    low, high = quality[split.lower], quality[split.upper]
    gap = inequality.ecdf_area_gap(low, high)
    result = {
        "inequality_index": _safe_index(quality, "quality"),
        "quantity_inequality_index": _safe_index(quantity, "quantity"),
        "group_income": {
            "better_median": gi.better_median,
            "worse_median": gi.worse_median,
            "gap": gi.gap,
        },
        "income_groups": {
            "low_n": int(len(low)),
            "high_n": int(len(high)),
            "income_median": split.median,
            "ecdf_area_gap": gap,
        },
        "dropped_missing_income": split.n_dropped,
    }
    write_json(run.path("inequality.json"), result)

    ecdf_rows = []
    for group, values in (("low_income", low), ("high_income", high)):
        e = inequality.ecdf(values)
        ecdf_rows.extend((group, xv, fv) for xv, fv in zip(e.x, e.F))
    write_csv(run.path("ecdf.csv"), ("group", "x", "F"), ecdf_rows)
    return {
        "inequality_index": result["inequality_index"],
        "income_gap": gi.gap,
        "ecdf_area_gap": gap,
    }


_STAGE_FUNCS = {
    "label": _stage_label,
    "train": _stage_train,
    "explain": _stage_explain,
    "thresholds": _stage_thresholds,
    "provision": _stage_provision,
    "inequality": _stage_inequality,
}


# --------------------------------------------------------------------------
# manifest and orchestration


def _empty_manifest(cfg: RunConfig) -> dict:
    return {"format": "infraq-manifest/1", "config": cfg.snapshot(), "cities": {}}


def load_manifest(cfg: RunConfig) -> dict:
    path = Path(cfg.out) / MANIFEST
    snapshot = cfg.snapshot()
    if path.is_file():
        manifest = json.loads(path.read_text(encoding="utf-8"))
        if manifest.get("config") == snapshot:
            return manifest
    return _empty_manifest(cfg)


def save_manifest(cfg: RunConfig, manifest: dict) -> Path:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    manifest["cities"] = dict(sorted(manifest["cities"].items()))
    path = Path(cfg.out) / MANIFEST
    write_json(path, manifest)
    return path


def _city_entry(manifest: dict, run: CityRun) -> dict:
    entry = manifest["cities"].setdefault(run.city, {"seeds": run.seeds, "stages": {}})
    entry["seeds"] = run.seeds
    return entry


def run_stages(cfg: RunConfig, stages, cities=None) -> dict:
    """Run the given stages, in order, for each selected city; update the manifest."""
    cities = sorted(cfg.cities) if cities is None else list(cities)
    manifest = load_manifest(cfg)
    for city in cities:
        run = CityRun(cfg, city)
        entry = _city_entry(manifest, run)
        for stage in stages:
            entry["stages"][stage] = run_stage(run, stage).to_dict()
            # later stages are stale once an upstream stage is rewritten
            for later in STAGES[STAGES.index(stage) + 1:]:
                if later not in stages:
                    entry["stages"].pop(later, None)
        entry["stages"] = {s: entry["stages"][s] for s in STAGES if s in entry["stages"]}
    save_manifest(cfg, manifest)
    return manifest


def _run_city(cfg: RunConfig, city: str) -> tuple[str, dict[str, int], dict]:
    run = CityRun(cfg, city)
    return city, run.seeds, {s: run_stage(run, s).to_dict() for s in STAGES}


def run_all(cfg: RunConfig) -> dict:
    """Full pipeline for every city; cities run on ``cfg.workers`` threads.

    Results are gathered in sorted city order, so output does not depend on
    the worker count or on completion order.
    """
    cities = sorted(cfg.cities)
    manifest = _empty_manifest(cfg)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(lambda c: _run_city(cfg, c), cities))
    for city, seeds, stages in results:
        manifest["cities"][city] = {"seeds": seeds, "stages": stages}
    save_manifest(cfg, manifest)
    return manifest


def artifact_hashes(manifest: dict) -> dict[str, str]:
    """Flat {city/file: sha256} view of a manifest."""
    out = {}
    for city, entry in manifest["cities"].items():
        for stage in entry["stages"].values():
            for name, digest in stage["artifacts"].items():
                out[f"{city}/{name}"] = digest
    return dict(sorted(out.items()))


def strip_timings(manifest: dict) -> dict:
    clean = json.loads(json.dumps(manifest))
    for entry in clean["cities"].values():
        for stage in entry["stages"].values():
            stage.pop("seconds", None)
    return clean
