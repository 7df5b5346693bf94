"""Simulated-annotation experiments: MAL versus random sampling under label budgets.

A run walks the grid feature x reducer x fold x repeat. Each grid cell
reduces the training split, clusters it once and then, for every budget,
strategy and task, trains an SVM on the queried labels and scores MCC on
the held-out fold. Records are appended to disk as cells finish, so an
interrupted run resumes where it stopped.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .audio import LogMelFrames, functionals_600, zscore_fit_apply
from .cpc import CpcModel, cpc_feature_matrix
from .dimred import PIPELINES, AeConfig, ReducerSettings, TsneConfig, reduce_features
from .errors import InputError
from .evaluation import GridSpec, default_grid, grid_search, make_folds, mcc_score, svm_predict, svm_train
from .featmat import FeatureMatrix, read_features_csv
from .mal import POLICIES, affinity, assign_labels, auto_metric, default_k, k_medoids, query_plan, random_plan
from .synthetic import quadrant_blobs

TASKS = ("valence", "arousal")
STRATEGIES = ("mal", "random")
DEFAULT_BUDGETS = (1, 2, 5, 10, 20, 50, 100)
REPORT_FIELDS = ("task", "feature", "reducer", "metric", "budget", "fold", "repeat", "strategy", "policy",
                 "mcc", "n_labeled", "seed", "config_hash")
KEY_FIELDS = ("task", "feature", "reducer", "budget", "fold", "repeat", "strategy")
MIN_SAMPLES = 30


# -- datasets ------------------------------------------------------------------


@dataclass
class LabelMap:
    """Emotion name -> (valence, arousal) quadrant."""

    table: dict[str, tuple[str, str]]

    def __post_init__(self):
        for emotion, (v, a) in self.table.items():
            if v not in ("pos", "neg") or a not in ("high", "low"):
                raise InputError(f"labelmap entry {emotion!r} must map to pos|neg and high|low")

    @classmethod
    def from_json(cls, source) -> "LabelMap":
        raw = _read_json(source)
        table = {}
        for emotion, entry in raw.items():
            if emotion.startswith("_"):
                continue  # comments
            if not isinstance(entry, Mapping) or set(entry) != {"valence", "arousal"}:
                raise InputError(f"labelmap entry {emotion!r} needs exactly 'valence' and 'arousal'")
            table[emotion] = (entry["valence"], entry["arousal"])
        return cls(table)

    @classmethod
    def default(cls) -> "LabelMap":
        return cls.from_json(resources.files("cpcmal").joinpath("data/labelmap_default.json").read_text())

    def resolve(self, emotion: str) -> tuple[int, int]:
        if emotion not in self.table:
            raise InputError(f"emotion {emotion!r} is not in the labelmap")
        v, a = self.table[emotion]
        return (1 if v == "pos" else -1), (1 if a == "high" else -1)


@dataclass
class Dataset:
    """Utterance-level features plus binary valence/arousal labels.

    ``features`` holds the candidate AL feature spaces by name;
    ``classifier`` is what the SVM is trained on.
    """

    id: str
    ids: list[str]
    features: dict[str, np.ndarray]
    classifier: np.ndarray
    valence: np.ndarray
    arousal: np.ndarray
    groups: np.ndarray | None = None  # generating blob, when known
    notes: str = ""

    def __post_init__(self):
        n = len(self.ids)
        for name, m in list(self.features.items()) + [("classifier", self.classifier)]:
            if m.ndim != 2 or m.shape[0] != n:
                raise InputError(f"feature set {name!r} has shape {m.shape}, expected {n} rows")
        for name in TASKS:
            y = getattr(self, name)
            if y.shape != (n,) or not np.all(np.isin(y, (-1, 1))):
                raise InputError(f"{name} labels must be +-1, one per utterance")

    @property
    def n(self) -> int:
        return len(self.ids)

    def labels(self, task: str) -> np.ndarray:
        if task not in TASKS:
            raise InputError(f"unknown task {task!r}; choose from {TASKS}")
        return getattr(self, task)


def synth_dataset(n_blobs: int = 4, per_blob: int = 375, dim: int = 40, separation: float = 5.0,
                  label_noise: float = 0.0, halo_fraction: float = 0.0, halo_scale: float = 3.0,
                  seed: int = 0) -> Dataset:
    """Quadrant-labeled Gaussian blobs; the same matrix serves AL and the classifier."""
    blobs = quadrant_blobs(n_blobs, per_blob, dim, separation, label_noise, halo_fraction, halo_scale, seed)
    ids = [f"s{i:05d}" for i in range(blobs.features.shape[0])]
    notes = (f"quadrant blobs: n_blobs={n_blobs} per_blob={per_blob} dim={dim} separation={separation} "
             f"label_noise={label_noise} halo_fraction={halo_fraction} halo_scale={halo_scale} seed={seed}")
    return Dataset("synthetic", ids, {"raw": blobs.features}, blobs.features, blobs.valence, blobs.arousal,
                   blobs.blobs, notes)


def frames_dataset(utterances: Sequence, valence, arousal, model: CpcModel | None = None,
                   ids: Sequence[str] | None = None, groups=None, dataset_id: str = "frames") -> Dataset:
    """Dataset from per-utterance (T, 40) frame matrices.

    AL feature sets: ``raw`` is the time-mean frame, ``cpc`` (given a model)
    the mean encoder output. The classifier always sees ``functionals_600``.
    """
    frames = [u if isinstance(u, LogMelFrames) else LogMelFrames(np.asarray(u, dtype=np.float64)) for u in utterances]
    ids = list(ids) if ids is not None else [f"u{i:05d}" for i in range(len(frames))]
    features = {"raw": np.vstack([f.frames[: f.n_valid].mean(axis=0) for f in frames])}
    if model is not None:
        features["cpc"] = cpc_feature_matrix(model, frames).values
    classifier = np.vstack([functionals_600(f).vector for f in frames])
    return Dataset(dataset_id, ids, features, classifier, np.asarray(valence), np.asarray(arousal),
                   None if groups is None else np.asarray(groups))


def write_labels_csv(path, ids: Sequence[str], emotions: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "emotion"])
        w.writerows(zip(ids, emotions))


def read_labels_csv(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["id", "emotion"]:
        raise InputError(f"{path}: header must be 'id,emotion'")
    out: dict[str, str] = {}
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise InputError(f"{path}:{line}: expected 2 fields, got {len(row)}")
        if row[0] in out:
            raise InputError(f"{path}:{line}: duplicate id {row[0]!r}")
        out[row[0]] = row[1]
    return out


def load_csv_dataset(features_csv, labels_csv, labelmap=None, classifier_csv=None,
                     feature_name: str = "raw") -> Dataset:
    """Features, ``id,emotion`` labels and a labelmap (path, dict or LabelMap).

    Without ``classifier_csv`` the SVM trains on the same features used for AL.
    """
    fm = read_features_csv(features_csv)
    emotions = read_labels_csv(labels_csv)
    lm = labelmap if isinstance(labelmap, LabelMap) else (
        LabelMap.default() if labelmap is None else LabelMap.from_json(labelmap))
    if len(emotions) != len(fm.ids):
        missing = [i for i in fm.ids if i not in emotions]
        if missing:
            raise InputError(f"utterance {missing[0]!r} has no label ({len(emotions)} labels for {len(fm.ids)} rows)")
        raise InputError(f"{len(emotions)} labels for {len(fm.ids)} feature rows")
    for i in fm.ids:
        if i not in emotions:
            raise InputError(f"utterance {i!r} has no label")
    quads = np.array([lm.resolve(emotions[i]) for i in fm.ids]).reshape(-1, 2)
    clf = fm.values
    if classifier_csv is not None:
        cm = read_features_csv(classifier_csv)
        pos = {i: r for r, i in enumerate(cm.ids)}
        missing = [i for i in fm.ids if i not in pos]
        if missing or len(cm.ids) != len(fm.ids):
            raise InputError(f"classifier features do not cover utterance {missing[0] if missing else '?'!r}")
        clf = cm.values[[pos[i] for i in fm.ids]]
    return Dataset(Path(features_csv).stem, list(fm.ids), {feature_name: fm.values}, clf,
                   quads[:, 0].copy(), quads[:, 1].copy(), None, f"loaded from {features_csv} and {labels_csv}")


# -- configuration -------------------------------------------------------------


def budget_to_count(n_train: int, budget_percent: float) -> int:
    """max(1, round(N * budget / 100)), rounding halves up."""
    if not 0 < budget_percent <= 100:
        raise InputError(f"budget must lie in (0, 100], got {budget_percent}")
    return max(1, int(math.floor(n_train * budget_percent / 100.0 + 0.5)))


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    features: list = field(default_factory=lambda: ["raw"])
    reducers: list = field(default_factory=lambda: ["none"])
    metric: str = "auto"
    budgets: list = field(default_factory=lambda: list(DEFAULT_BUDGETS))
    folds: int = 5
    repeats: int = 5
    policy: str = "medoid_labels"
    tasks: list = field(default_factory=lambda: list(TASKS))
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    seed: int = 0
    zscore_al: bool = True
    zscore_classifier: bool = True
    grid: dict | None = None  # {"C": [...], "gamma": [...]}; default grid when absent
    grid_scope: str = "labeled"  # "labeled": tune on each queried set; "corpus": once per task
    ae: dict = field(default_factory=dict)  # AeConfig overrides
    tsne: dict = field(default_factory=dict)  # TsneConfig overrides
    name: str = "experiment"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.budgets or any(not isinstance(b, (int, float)) or not 0 < b <= 100 for b in self.budgets):
            raise InputError("budgets: every budget must lie in (0, 100]")
        for r in self.reducers:
            if r not in PIPELINES:
                raise InputError(f"reducers: unknown pipeline {r!r}; choose from {sorted(PIPELINES)}")
        if self.metric not in ("auto", "euclidean", "cosine"):
            raise InputError(f"metric: {self.metric!r} is not auto, euclidean or cosine")
        if self.policy not in POLICIES:
            raise InputError(f"policy: {self.policy!r} is not one of {POLICIES}")
        if not self.tasks or any(t not in TASKS for t in self.tasks):
            raise InputError(f"tasks: choose from {TASKS}")
        if not self.strategies or any(s not in STRATEGIES for s in self.strategies):
            raise InputError(f"strategies: choose from {STRATEGIES}")
        if not self.features:
            raise InputError("features: at least one feature set is required")
        if not isinstance(self.folds, int) or self.folds < 2:
            raise InputError("folds: need an integer >= 2")
        if not isinstance(self.repeats, int) or self.repeats < 1:
            raise InputError("repeats: need an integer >= 1")
        if not isinstance(self.dataset, Mapping) or self.dataset.get("kind") not in ("synthetic", "csv"):
            raise InputError("dataset: 'kind' must be 'synthetic' or 'csv'")
        if self.grid_scope not in ("labeled", "corpus"):
            raise InputError(f"grid_scope: {self.grid_scope!r} is not labeled or corpus")
        if self.grid is not None and (set(self.grid) - {"C", "gamma"} or not self.grid):
            raise InputError("grid: only 'C' and 'gamma' lists are allowed")
        for key, cls in (("ae", AeConfig), ("tsne", TsneConfig)):
            unknown = set(getattr(self, key)) - set(cls.__dataclass_fields__)
            if unknown:
                raise InputError(f"{key}: unknown key {sorted(unknown)[0]!r}")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        if not isinstance(raw, Mapping):
            raise InputError("config must be a JSON object")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown config key {sorted(unknown)[0]!r}")
        return cls(**raw)

    @classmethod
    def from_json(cls, source) -> "ExperimentConfig":
        cfg = cls.from_dict(_read_json(source))
        base = Path(source).parent if isinstance(source, (str, Path)) and Path(source).exists() else None
        if base is not None and cfg.dataset.get("kind") == "csv":
            # resolve dataset paths relative to the config file
            ds = dict(cfg.dataset)
            for key in ("features", "labels", "labelmap", "classifier"):
                if isinstance(ds.get(key), str) and not Path(ds[key]).is_absolute():
                    ds[key] = str(base / ds[key])
            cfg.dataset = ds
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _read_json(source) -> dict:
    if isinstance(source, Mapping):
        return dict(source)
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read {source}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON: {exc}") from None


def build_dataset(spec: Mapping) -> Dataset:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "synthetic":
        allowed = set(synth_dataset.__code__.co_varnames[: synth_dataset.__code__.co_argcount])
        unknown = set(spec) - allowed
        if unknown:
            raise InputError(f"dataset: unknown key {sorted(unknown)[0]!r}")
        return synth_dataset(**spec)
    if kind == "csv":
        unknown = set(spec) - {"features", "labels", "labelmap", "classifier", "feature_name"}
        if unknown:
            raise InputError(f"dataset: unknown key {sorted(unknown)[0]!r}")
        if "features" not in spec or "labels" not in spec:
            raise InputError("dataset: csv datasets need 'features' and 'labels'")
        return load_csv_dataset(spec["features"], spec["labels"], spec.get("labelmap"), spec.get("classifier"),
                                spec.get("feature_name", "raw"))
    raise InputError(f"dataset: unknown kind {kind!r}")


# -- running -------------------------------------------------------------------


def _tag(*parts) -> list[int]:
    # stable integer words for SeedSequence entropy
    return [zlib.crc32(str(p).encode()) for p in parts]


def cell_seed(master: int, *coords) -> int:
    """A 63-bit seed determined only by the master seed and the cell coordinates."""
    ss = np.random.SeedSequence([int(master)] + _tag(*coords))
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))


@dataclass
class ExperimentReport:
    records: list[dict]
    failures: list[dict]
    config_hash: str
    report_path: Path | None = None
    manifest_path: Path | None = None

    def to_rows(self) -> list[list[str]]:
        return [[_fmt(r[k]) for k in REPORT_FIELDS] for r in self.records]


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _sort_key(r: Mapping):
    return (str(r["task"]), str(r["feature"]), str(r["reducer"]), float(r["budget"]), int(r["fold"]),
            int(r["repeat"]), str(r["strategy"]))


@dataclass
class _Shared:
    """Per-run state that every cell needs; computed once."""

    config: ExperimentConfig
    dataset: Dataset
    classifier: np.ndarray
    folds: np.ndarray
    grid: GridSpec
    params: dict  # task -> (C, gamma), corpus scope only
    config_hash: str


_SHARED: _Shared | None = None


def _prepare(config: ExperimentConfig, dataset: Dataset) -> _Shared:
    missing = [f for f in config.features if f not in dataset.features]
    if missing:
        raise InputError(f"features: dataset {dataset.id!r} has no feature set {missing[0]!r}")
    if dataset.n < MIN_SAMPLES:
        raise InputError(f"dataset has {dataset.n} utterances; at least {MIN_SAMPLES} are needed")
    clf = dataset.classifier.astype(np.float64)
    if config.zscore_classifier:
        clf = zscore_fit_apply(clf)[0]  # corpus-level standardization
    folds = make_folds(dataset.n, config.folds, cell_seed(config.seed, "folds"))
    grid = GridSpec(**config.grid) if config.grid else default_grid(clf)
    params = {}
    if config.grid_scope == "corpus":
        for task in config.tasks:
            params[task] = grid_search(clf, dataset.labels(task), grid, seed=cell_seed(config.seed, "grid", task))
    return _Shared(config, dataset, clf, folds, grid, params, config.hash())


# identical labeled sets (shared random baselines, full budgets) train once per process
_MEMO: dict[tuple, float] = {}


def _fit_score(shared: _Shared, task: str, fold: int, rows: np.ndarray, labels: np.ndarray,
               test: np.ndarray) -> float:
    digest = hashlib.sha1(rows.astype("<i8").tobytes() + labels.astype("<i8").tobytes()).hexdigest()
    key = (task, fold, digest)
    if key not in _MEMO:
        x = shared.classifier[rows]
        if shared.config.grid_scope == "corpus":
            C, gamma = shared.params[task]
        else:
            C, gamma = grid_search(x, labels, shared.grid, seed=cell_seed(shared.config.seed, "grid", task, digest))
        model = svm_train(x, labels, C, gamma)
        _MEMO[key] = float(mcc_score(shared.dataset.labels(task)[test], svm_predict(model, shared.classifier[test])))
    return _MEMO[key]


def _reducer_settings(cfg: ExperimentConfig) -> ReducerSettings:
    return ReducerSettings(zscore=cfg.zscore_al, ae=AeConfig(**cfg.ae), tsne=TsneConfig(**cfg.tsne))


def _run_cell(shared: _Shared, feature: str, reducer: str, fold: int, repeat: int) -> list[dict]:
    cfg, ds = shared.config, shared.dataset
    train = np.flatnonzero(shared.folds != fold)
    test = np.flatnonzero(shared.folds == fold)
    mal_seed = cell_seed(cfg.seed, "mal", feature, reducer, fold, repeat)
    clusters = None
    metric = "-"
    if "mal" in cfg.strategies:
        x = reduce_features(ds.features[feature][train], reducer, seed=mal_seed, settings=_reducer_settings(cfg))
        metric = auto_metric(x.shape[1]) if cfg.metric == "auto" else cfg.metric
        clusters = k_medoids(affinity(x, metric), default_k(train.size), seed=mal_seed)
    records = []
    for budget in cfg.budgets:
        n = budget_to_count(train.size, budget)
        # shared by every feature and reducer so baselines pair exactly
        sample_seed = cell_seed(cfg.seed, "sample", fold, repeat, budget)
        plans = {}
        if "mal" in cfg.strategies:
            plans["mal"] = (query_plan(clusters, n, cfg.policy, seed=sample_seed), clusters, cfg.policy, mal_seed)
        if "random" in cfg.strategies:
            plans["random"] = (random_plan(train.size, n, seed=sample_seed), None, "none", sample_seed)
        for task in cfg.tasks:
            y = ds.labels(task)
            for strategy, (plan, cl, policy, seed) in plans.items():
                idx, labels = assign_labels(plan, cl, y[train])
                score = _fit_score(shared, task, fold, train[idx], labels, test)
                records.append({
                    "task": task, "feature": feature, "reducer": reducer,
                    "metric": metric if strategy == "mal" else "-", "budget": budget, "fold": fold,
                    "repeat": repeat, "strategy": strategy, "policy": policy, "mcc": float(score),
                    "n_labeled": int(idx.size), "seed": seed, "config_hash": shared.config_hash,
                })
    return records


def _worker_init(shared: _Shared) -> None:
    global _SHARED
    _SHARED = shared
    _MEMO.clear()


def _worker_cell(coords):
    try:
        return coords, _run_cell(_SHARED, *coords), None
    except Exception as exc:  # isolate the cell, keep the grid going
        return coords, [], f"{type(exc).__name__}: {exc}"


def _cells(cfg: ExperimentConfig):
    for feature in cfg.features:
        for reducer in cfg.reducers:
            for fold in range(cfg.folds):
                for repeat in range(cfg.repeats):
                    yield (feature, reducer, fold, repeat)


def _read_partial(path: Path, config_hash: str) -> list[dict]:
    if not path.exists():
        return []
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if row.get("config_hash") != config_hash:
                continue
            try:
                out.append(_parse_record(row))
            except (KeyError, ValueError):
                continue  # torn final line from an interrupted write
    return out


def _parse_record(row: Mapping) -> dict:
    budget = float(row["budget"])
    return {
        "task": row["task"], "feature": row["feature"], "reducer": row["reducer"], "metric": row["metric"],
        "budget": int(budget) if str(row["budget"]).lstrip("-").isdigit() else budget,
        "fold": int(row["fold"]), "repeat": int(row["repeat"]), "strategy": row["strategy"],
        "policy": row["policy"], "mcc": float(row["mcc"]), "n_labeled": int(row["n_labeled"]),
        "seed": int(row["seed"]), "config_hash": row["config_hash"],
    }


def read_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
            raise InputError(f"{path}: unexpected report header")
        return [_parse_record(r) for r in reader]


def write_report(path, records: Iterable[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in sorted(records, key=_sort_key):
            w.writerow([_fmt(r[k]) for k in REPORT_FIELDS])


def run_experiment(config: ExperimentConfig | Mapping, out_dir=None, dataset: Dataset | None = None,
                   workers: int | None = None) -> ExperimentReport:
    """Run (or resume) every cell of the grid.

    With ``out_dir`` set, records stream to ``report.partial.csv`` as cells
    finish; completed cells found there are skipped on the next call. The
    final ``report.csv`` is sorted, so it does not depend on execution order
    or worker count. ``workers`` defaults to ``$CPCMAL_WORKERS`` or 1.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    started = time.time()
    ds = dataset if dataset is not None else build_dataset(cfg.dataset)
    shared = _prepare(cfg, ds)
    out = Path(out_dir) if out_dir is not None else None
    done: dict[tuple, list[dict]] = {}
    partial = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        partial = out / "report.partial.csv"
        for r in _read_partial(partial, shared.config_hash):
            done.setdefault((r["feature"], r["reducer"], r["fold"], r["repeat"]), []).append(r)
        expected = len(cfg.budgets) * len(cfg.tasks) * len(cfg.strategies)
        done = {k: v for k, v in done.items() if len(v) == expected}
        # rewrite so that torn or partial cells vanish before appending
        with open(partial, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_FIELDS)
            for recs in done.values():
                w.writerows([_fmt(r[k]) for k in REPORT_FIELDS] for r in recs)
    todo = [c for c in _cells(cfg) if c not in done]
    records = [r for recs in done.values() for r in recs]
    failures = []

    def collect(coords, recs, err):
        if err is not None:
            failures.append({"feature": coords[0], "reducer": coords[1], "fold": coords[2],
                             "repeat": coords[3], "error": err})
            return
        records.extend(recs)
        if partial is not None:
            with open(partial, "a", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerows([_fmt(r[k]) for k in REPORT_FIELDS] for r in recs)

    n_workers = workers if workers is not None else int(os.environ.get("CPCMAL_WORKERS", "1") or 1)
    if n_workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(n_workers, initializer=_worker_init, initargs=(shared,)) as pool:
            for result in pool.map(_worker_cell, todo):
                collect(*result)
    else:
        _worker_init(shared)
        for coords in todo:
            collect(*_worker_cell(coords))
    records.sort(key=_sort_key)
    report = ExperimentReport(records, failures, shared.config_hash)
    if out is not None:
        report.report_path = out / "report.csv"
        write_report(report.report_path, records)
        report.manifest_path = out / "manifest.json"
        manifest = {
            "config": cfg.to_dict(), "config_hash": shared.config_hash, "version": __version__,
            "dataset": {"id": ds.id, "n": ds.n, "notes": ds.notes},
            "svm_grid": {"C": list(shared.grid.C), "gamma": list(shared.grid.gamma), "scope": cfg.grid_scope,
                         "corpus_params": {t: {"C": c, "gamma": g} for t, (c, g) in shared.params.items()}},
            "n_records": len(records), "failures": failures,
            "started": _iso(started), "finished": _iso(time.time()),
        }
        report.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if not failures:
            partial.unlink()
    return report


def _iso(t: float) -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


# -- aggregation -----------------------------------------------------------------


def paired_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, int]:
    """Paired t statistic for mean(a - b), two-sided p value and degrees of freedom."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.size
    if n < 2:
        return math.nan, math.nan, max(n - 1, 0)
    mean, sd = float(d.mean()), float(d.std(ddof=1))
    if sd == 0.0:
        return (0.0, 1.0, n - 1) if mean == 0.0 else (math.copysign(math.inf, mean), 0.0, n - 1)
    t = mean / (sd / math.sqrt(n))
    return t, float(2 * stats.t.sf(abs(t), n - 1)), n - 1


@dataclass
class AggregateTable:
    summary: list[dict]  # group keys + n, mean, stderr
    contrasts: list[dict]  # group keys (minus the contrast column) + paired-t results


def aggregate(records: Sequence[Mapping], by: Sequence[str] = ("feature", "reducer", "budget", "strategy"),
              contrast: str = "strategy", levels: tuple[str, str] = ("mal", "random"),
              pair_on: Sequence[str] | None = None) -> AggregateTable:
    """Group means with standard errors, plus paired t tests between two levels.

    Records are paired across ``levels`` of ``contrast`` on the ``pair_on``
    columns within each group; by default these are all grid keys not used
    for grouping. A pairing key present on one side only is an input error.
    """
    if not records:
        raise InputError("cannot aggregate an empty report")
    if pair_on is None:
        pair_on = [k for k in KEY_FIELDS if k not in by and k != contrast and k in records[0]]
    for k in list(by) + list(pair_on):
        if k not in records[0]:
            raise InputError(f"unknown report column {k!r}")
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault(tuple(r[k] for k in by), []).append(float(r["mcc"]))
    summary = []
    for key in sorted(groups, key=lambda k: tuple(str(x) if not isinstance(x, (int, float)) else x for x in k)):
        v = np.asarray(groups[key])
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        summary.append({**dict(zip(by, key)), "n": int(v.size), "mean": float(v.mean()), "stderr": se})
    contrasts = []
    if contrast in records[0]:
        outer = [k for k in by if k != contrast]
        sides: dict[tuple, dict[str, dict[tuple, float]]] = {}
        for r in records:
            if r[contrast] not in levels:
                continue
            pk = tuple(r[k] for k in pair_on)
            side = sides.setdefault(tuple(r[k] for k in outer), {lv: {} for lv in levels})[r[contrast]]
            if pk in side:
                raise InputError(f"pairing key {dict(zip(pair_on, pk))} is not unique within a group")
            side[pk] = float(r["mcc"])
        for key in sorted(sides, key=lambda k: tuple(str(x) if not isinstance(x, (int, float)) else x for x in k)):
            a, b = sides[key][levels[0]], sides[key][levels[1]]
            if not a or not b:
                continue
            if set(a) != set(b):
                odd = sorted(set(a) ^ set(b))[0]
                raise InputError(f"unpaired record {dict(zip(pair_on, odd))} in group {dict(zip(outer, key))}")
            pks = sorted(a)
            xa, xb = [a[p] for p in pks], [b[p] for p in pks]
            t, p, df = paired_t(xa, xb)
            contrasts.append({**dict(zip(outer, key)), "n": len(pks), f"mean_{levels[0]}": float(np.mean(xa)),
                              f"mean_{levels[1]}": float(np.mean(xb)), "mean_diff": float(np.mean(xa) - np.mean(xb)),
                              "t": t, "p": p, "df": df})
    return AggregateTable(summary, contrasts)


def write_table(path, rows: Sequence[Mapping]) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: _fmt(v) for k, v in r.items()} for r in rows)


def bundled_config(name: str = "quadrant_blobs") -> ExperimentConfig:
    """An experiment config shipped with the package."""
    path = resources.files("cpcmal").joinpath(f"data/{name}.json")
    if not path.is_file():
        raise InputError(f"no bundled config named {name!r}")
    return ExperimentConfig.from_dict(json.loads(path.read_text()))
