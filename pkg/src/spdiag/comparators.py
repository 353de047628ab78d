"""Conventional error estimators and their test-to-training distances.

Resubstitution, LOO-CV, repeated random k-fold CV, k-means spatial CV and
group-level (field) CV. Every test prediction's distance to the nearest
training observation of its fold is kept, so each estimator can be placed on
the prediction-distance axis next to an error profile.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from sklearn.cluster import KMeans

from .dataset import Dataset, DistanceSummary
from .diagnostics import MISCLASSIFICATION, RMSE, error_measure
from .errors import ConfigError, FitError
from .models import ModelSpec, fit

log = logging.getLogger(__name__)

CV_KINDS = ("resubstitution", "loo", "random_kfold", "kmeans_spatial", "field_level")
_MAX_RESAMPLE = 10


@dataclass
class CvScheme:
    """Resampling scheme.

    ``repetitions`` defaults to 50 for the fold-based kinds and to 1 for
    resubstitution and LOO, whose partitions never change.
    """

    kind: str
    k: int = 10
    repetitions: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CV_KINDS:
            raise ConfigError(f"unknown CV kind {self.kind!r}; expected one of {CV_KINDS}")
        if self.repetitions is None:
            self.repetitions = 1 if self.kind in ("resubstitution", "loo") else 50
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.is_fold_based and self.k < 2:
            raise ConfigError("k must be at least 2 for fold-based CV")

    @property
    def is_fold_based(self) -> bool:
        return self.kind in ("random_kfold", "kmeans_spatial", "field_level")

    @property
    def label(self) -> str:
        if self.is_fold_based:
            return f"{self.kind}_{self.k}"
        return self.kind

    def check_dataset(self, ds: Dataset):
        if self.kind == "field_level" and ds.groups is None:
            raise ConfigError("field_level CV needs group ids")
        if self.kind == "field_level" and len(np.unique(ds.groups)) < self.k:
            raise ConfigError(f"field_level CV needs at least k={self.k} groups")
        if self.is_fold_based and self.kind != "field_level" and ds.n < self.k:
            raise ConfigError(f"{ds.n} observations cannot fill k={self.k} folds")

    @classmethod
    def from_dict(cls, obj) -> "CvScheme":
        if isinstance(obj, str):
            return cls(obj)
        unknown = set(obj) - {"kind", "k", "repetitions", "seed"}
        if unknown:
            raise ConfigError(f"unknown CV scheme keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class CvResult:
    scheme: CvScheme
    model: str
    measure: str
    estimate: float
    per_repetition: np.ndarray
    distances: np.ndarray  # every test prediction, pooled over repetitions
    predictions: np.ndarray | None = field(default=None, repr=False)  # same order as distances
    n_resampled: int = 0
    distance_summary: DistanceSummary | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.distance_summary is None:
            self.distance_summary = DistanceSummary.from_distances(self.distances)

    @property
    def mean_distance(self) -> float:
        return float(self.distances.mean())

    def to_dict(self) -> dict:
        return {
            "scheme": {"kind": self.scheme.kind, "k": self.scheme.k,
                       "repetitions": self.scheme.repetitions, "seed": self.scheme.seed},
            "model": self.model,
            "measure": self.measure,
            "estimate": self.estimate,
            "per_repetition": [float(v) for v in self.per_repetition],
            "mean_distance": self.mean_distance,
            "n_resampled": self.n_resampled,
            "distance_summary": self.distance_summary.to_dict(),
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    def distances_to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["distance"])
            w.writerows([repr(float(v))] for v in self.distances)


def random_folds(n: int, k: int, rng) -> np.ndarray:
    """Fold id per observation; fold sizes differ by at most one."""
    folds = np.empty(n, dtype=int)
    for f, part in enumerate(np.array_split(rng.permutation(n), k)):
        folds[part] = f
    return folds


def kmeans_folds(coords, k: int, seed: int) -> np.ndarray:
    """Spatial folds from k-means clustering of raw coordinates."""
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed)
    return km.fit_predict(np.asarray(coords, dtype=float))


def group_folds(groups, k: int, rng) -> np.ndarray:
    """Assign whole groups to folds."""
    uniq, inv = np.unique(groups, return_inverse=True)
    return random_folds(len(uniq), k, rng)[inv]


def _folds_for(ds: Dataset, scheme: CvScheme, rng, rep: int, attempt: int) -> np.ndarray:
    if scheme.kind == "loo":
        return np.arange(ds.n)
    if scheme.kind == "random_kfold":
        return random_folds(ds.n, scheme.k, rng)
    if scheme.kind == "kmeans_spatial":
        seed = int(np.random.SeedSequence([scheme.seed, rep, attempt]).generate_state(1)[0])
        return kmeans_folds(ds.coords, scheme.k, seed)
    if scheme.kind == "field_level":
        return group_folds(ds.groups, scheme.k, rng)
    raise ConfigError(f"no folds for {scheme.kind!r}")  # pragma: no cover


def _class_complete(ds: Dataset, folds) -> bool:
    if ds.response_kind != "classification":
        return True
    need = set(ds.labels)
    return all(set(ds.y[folds != f].tolist()) >= need for f in np.unique(folds))


def fold_distances(coords, folds) -> np.ndarray:
    """Distance from each observation to the nearest training point of its fold."""
    coords = np.asarray(coords, dtype=float)
    out = np.empty(len(coords))
    for f in np.unique(folds):
        test = folds == f
        d, _ = cKDTree(coords[~test]).query(coords[test])
        out[test] = d
    return out


def _one_repetition(ds, spec, scheme, rep, measure):
    rng = np.random.default_rng([scheme.seed, rep])
    if scheme.kind == "resubstitution":
        model = fit(spec, ds, int(rng.integers(2**31 - 1)), labels=ds.labels or None)
        pred = model.predict(ds.coords, ds.X)
        return error_measure(ds.y, pred, measure), np.zeros(ds.n), pred, 0

    resampled = 0
    for attempt in range(_MAX_RESAMPLE + 1):
        folds = _folds_for(ds, scheme, rng, rep, attempt)
        if _class_complete(ds, folds):
            break
        resampled += 1
        log.warning("%s repetition %d: a fold lacks a class in training; resampling", scheme.label, rep)
    else:
        raise FitError(f"{scheme.label}: no class-complete partition after {_MAX_RESAMPLE} resamples")

    pred = np.empty(ds.n, dtype=ds.y.dtype)
    dist = np.empty(ds.n)
    for f in np.unique(folds):
        test = folds == f
        train = ds.subset(np.flatnonzero(~test))
        model = fit(spec, train, int(rng.integers(2**31 - 1)), labels=ds.labels or None)
        pred[test] = model.predict(ds.coords[test], ds.X[test])
        dist[test] = model.target_distance(ds.coords[test])
    return error_measure(ds.y, pred, measure), dist, pred, resampled


def run_cv(ds: Dataset, spec: ModelSpec, scheme: CvScheme, measure: str | None = None) -> CvResult:
    """Error estimate of ``spec`` under ``scheme``, averaged over repetitions."""
    scheme.check_dataset(ds)
    spec.check_dataset(ds)
    measure = measure or (RMSE if ds.response_kind == "regression" else MISCLASSIFICATION)
    values, dists, preds, resampled = [], [], [], 0
    for rep in range(scheme.repetitions):
        v, d, p, r = _one_repetition(ds, spec, scheme, rep, measure)
        values.append(v)
        dists.append(d)
        preds.append(p)
        resampled += r
    values = np.array(values)
    return CvResult(scheme, spec.label, measure, float(values.mean()), values,
                    np.concatenate(dists), np.concatenate(preds), resampled)


def cv_distances(ds: Dataset, scheme: CvScheme) -> np.ndarray:
    """Test-to-training distances of a scheme without fitting any model."""
    scheme.check_dataset(ds)
    if scheme.kind == "resubstitution":
        return np.zeros(ds.n * scheme.repetitions)
    out = []
    for rep in range(scheme.repetitions):
        rng = np.random.default_rng([scheme.seed, rep])
        for attempt in range(_MAX_RESAMPLE + 1):
            folds = _folds_for(ds, scheme, rng, rep, attempt)
            if _class_complete(ds, folds):
                break
        else:
            raise FitError(f"{scheme.label}: no class-complete partition after {_MAX_RESAMPLE} resamples")
        out.append(fold_distances(ds.coords, folds))
    return np.concatenate(out)


def cv_distance_report(result: CvResult | np.ndarray, bin_width: float | None = None) -> DistanceSummary:
    d = result.distances if isinstance(result, CvResult) else np.asarray(result, dtype=float)
    return DistanceSummary.from_distances(d, bin_width)


def comparison_table(results: list[CvResult]) -> list[dict]:
    return [{"estimator": r.scheme.label, "model": r.model, "measure": r.measure,
             "error": r.estimate, "mean_distance": r.mean_distance} for r in results]


def format_table(rows: list[dict]) -> str:
    head = f"{'estimator':<20} {'model':<10} {'error':>10} {'mean dist':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['estimator']:<20} {r['model']:<10} {r['error']:>10.4f} {r['mean_distance']:>10.1f}")
    return "\n".join(lines)
