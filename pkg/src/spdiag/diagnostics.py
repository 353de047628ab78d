"""Buffered spatial leave-one-out engine and spatial prediction error profiles.

Each iteration draws a target observation and an exclusion radius, drops
everything within that radius from the training data, refits the model and
records the prediction together with the actual separation distance. Binning
the records by distance gives the error profile.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, buffer_exclude
from .errors import ConfigError, EstimationError, ExhaustedBufferError, FitError, KrigingError
from .models import ModelSpec, fit

log = logging.getLogger(__name__)

RMSE = "rmse"
MISCLASSIFICATION = "misclassification"


@dataclass
class DiagnosticsConfig:
    r_min: float = -1.0
    r_max: float = 1500.0
    n_reps: int = 2000
    n_bins: int = 25
    seed: int = 0
    error_measure: str | None = None  # defaults from the response kind
    n_perm: int = 5
    min_bin_records: int = 20
    smooth_window: int = 3
    bin_max: float | None = None  # upper breakpoint; defaults to r_max
    n_workers: int | None = None
    audit: bool = False

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ConfigError("r_min must be smaller than r_max")
        if self.n_reps < 1:
            raise ConfigError("n_reps must be at least 1")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be at least 2")
        if self.n_perm < 1:
            raise ConfigError("n_perm must be at least 1")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigError("smooth_window must be a positive odd number")
        if self.error_measure not in (None, RMSE, MISCLASSIFICATION):
            raise ConfigError(f"unknown error measure {self.error_measure!r}")

    def measure_for(self, ds: Dataset) -> str:
        if self.error_measure:
            return self.error_measure
        return RMSE if ds.response_kind == "regression" else MISCLASSIFICATION

    def breakpoints(self) -> np.ndarray:
        hi = self.bin_max if self.bin_max is not None else self.r_max
        return quadratic_breakpoints(0.0, hi, self.n_bins)

    @classmethod
    def from_dict(cls, obj: dict) -> "DiagnosticsConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown diagnostics keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class ProfileRecord:
    iteration: int
    i: int
    r: float
    d: float
    y: float | str
    y_hat: float | str
    n_train: int
    permuted: dict[str, np.ndarray] = field(default_factory=dict)
    d_model: float | None = None  # audit: nearest location the fitted model saw


@dataclass
class LooRun:
    """Records of one spatial-LOO run plus bookkeeping."""

    records: list[ProfileRecord]
    n_skipped: int
    n_reps: int
    measure: str
    model: str = ""


@dataclass
class Profile:
    """Binned error (or importance) profile.

    ``bins`` holds the index of each reported bin in the breakpoint layout.
    """

    d_hat: np.ndarray
    value: np.ndarray
    n_records: np.ndarray
    mean_train_size: np.ndarray
    bins: np.ndarray
    breakpoints: np.ndarray
    measure: str
    smoothed: np.ndarray | None = None
    label: str = ""

    def __len__(self):
        return len(self.d_hat)

    def rows(self):
        sm = self.smoothed if self.smoothed is not None else self.value
        for k in range(len(self)):
            yield {
                "d_hat": float(self.d_hat[k]),
                "raw": float(self.value[k]),
                "smoothed": float(sm[k]),
                "n_records": int(self.n_records[k]),
                "mean_train_size": float(self.mean_train_size[k]),
            }

    def to_dict(self) -> dict:
        return {"label": self.label, "measure": self.measure,
                "breakpoints": [float(b) for b in self.breakpoints], "bins": list(self.rows())}

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["d_hat", "raw", "smoothed", "n_records", "mean_train_size"])
            w.writeheader()
            for row in self.rows():
                w.writerow(row)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def error_measure(y, y_hat, kind: str) -> float:
    """RMSE or misclassification rate over paired observations and predictions."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.size == 0:
        raise EstimationError("no pairs to evaluate")
    if y.shape != y_hat.shape:
        raise ValueError("observations and predictions differ in length")
    if kind == RMSE:
        if y.dtype.kind not in "fiu" or y_hat.dtype.kind not in "fiu":
            raise TypeError("RMSE needs numeric responses")
        r = y.astype(float) - y_hat.astype(float)
        return float(np.sqrt(np.mean(r * r)))
    if kind == MISCLASSIFICATION:
        if (y.dtype.kind in "f") or (y_hat.dtype.kind in "f"):
            raise TypeError("misclassification rate needs class labels")
        return float(np.mean(y != y_hat))
    raise ConfigError(f"unknown error measure {kind!r}")


def quadratic_breakpoints(d_min: float, d_max: float, n_bins: int) -> np.ndarray:
    """Breakpoints ``d_min + (d_max - d_min) * (j / n_bins)**2`` for j = 0..n_bins."""
    if not d_min < d_max:
        raise ValueError("d_min must be smaller than d_max")
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    j = np.arange(n_bins + 1, dtype=float)
    return d_min + (d_max - d_min) * (j / n_bins) ** 2


def assign_bins(d, breakpoints) -> np.ndarray:
    """Bin index per distance; -1 outside ``[b_0, b_last]``. The last bin is closed."""
    d = np.asarray(d, dtype=float)
    b = np.asarray(breakpoints, dtype=float)
    idx = np.searchsorted(b, d, side="right") - 1
    idx[d == b[-1]] = len(b) - 2
    idx[(d < b[0]) | (d > b[-1])] = -1
    return idx


def _stack(records, attr):
    vals = [getattr(r, attr) for r in records]
    return np.asarray(vals)


def bin_records(records: Sequence[ProfileRecord], breakpoints, measure: str, min_records: int = 20,
                label: str = "") -> Profile:
    """Bin records by separation distance and evaluate ``measure`` per bin.

    The reported distance of a bin is the median of its record distances.
    Bins with fewer than ``min_records`` records are dropped.
    """
    if not len(records):
        raise EstimationError("no records to bin")
    d = _stack(records, "d").astype(float)
    y = _stack(records, "y")
    yh = _stack(records, "y_hat")
    nt = _stack(records, "n_train").astype(float)
    idx = assign_bins(d, breakpoints)
    out = {"d_hat": [], "value": [], "n": [], "nt": [], "bins": []}
    for j in range(len(breakpoints) - 1):
        m = idx == j
        c = int(m.sum())
        if c == 0 or c < min_records:
            continue
        out["d_hat"].append(float(np.median(d[m])))
        out["value"].append(error_measure(y[m], yh[m], measure))
        out["n"].append(c)
        out["nt"].append(float(nt[m].mean()))
        out["bins"].append(j)
    if not out["bins"]:
        raise EstimationError("every distance bin is empty or under-occupied")
    return Profile(
        d_hat=np.array(out["d_hat"]),
        value=np.array(out["value"]),
        n_records=np.array(out["n"], dtype=int),
        mean_train_size=np.array(out["nt"]),
        bins=np.array(out["bins"], dtype=int),
        breakpoints=np.asarray(breakpoints, dtype=float),
        measure=measure,
        label=label,
    )


def triangular_weights(window: int) -> np.ndarray:
    h = window // 2
    return (h + 1 - np.abs(np.arange(-h, h + 1))).astype(float)


def smooth_values(values, window: int = 3, weights=None) -> np.ndarray:
    """Centred weighted moving average, renormalised over truncated edge windows."""
    v = np.asarray(values, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd number")
    w = triangular_weights(window) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != window:
        raise ValueError("weights must have one entry per window position")
    h = window // 2
    out = np.empty_like(v)
    for k in range(len(v)):
        lo, hi = max(0, k - h), min(len(v), k + h + 1)
        ww = w[lo - k + h: hi - k + h]
        out[k] = np.dot(ww, v[lo:hi]) / ww.sum()
    return out


def smooth_profile(p: Profile, window: int = 3, weights=None) -> Profile:
    if window > max(len(p), 1) and window != 1:
        raise ValueError("smoothing window exceeds the number of bins")
    p.smoothed = smooth_values(p.value, window, weights)
    return p


def spep(run: LooRun | Sequence[ProfileRecord], cfg: DiagnosticsConfig, measure: str | None = None,
         label: str = "") -> Profile:
    """Binned and smoothed spatial prediction error profile."""
    records = run.records if isinstance(run, LooRun) else run
    measure = measure or (run.measure if isinstance(run, LooRun) else RMSE)
    prof = bin_records(records, cfg.breakpoints(), measure, cfg.min_bin_records, label)
    window = min(cfg.smooth_window, len(prof) if len(prof) % 2 else len(prof) - 1) or 1
    return smooth_profile(prof, window)


def iteration_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


def _one_iteration(k, ds, spec, cfg, channels, labels):
    """One record, None when the buffer empties the training set, or the fit error message."""
    rng = iteration_rng(cfg.seed, k)
    i = int(rng.integers(ds.n))
    r = float(rng.uniform(cfg.r_min, cfg.r_max))
    fit_seed = int(rng.integers(2**31 - 1))
    try:
        idx, d = buffer_exclude(ds, i, r)
    except ExhaustedBufferError:
        return None
    train = ds.subset(idx)
    try:
        model = fit(spec, train, fit_seed, labels=labels)
    except (FitError, KrigingError, EstimationError) as exc:
        log.debug("iteration %d skipped: %s", k, exc)
        return str(exc)

    coords = ds.coords[i:i + 1]
    X = ds.X[i:i + 1]
    blocks = [X]
    names = []
    for c, ch in enumerate(channels):
        prng = np.random.default_rng([cfg.seed, k, 1000 + c])
        blocks.append(ch.permuted_rows(X[0], ds, cfg.n_perm, prng))
        names.append(ch.name)
    Xb = np.vstack(blocks)
    cb = np.repeat(coords, len(Xb), axis=0)
    overrides = {name: Xb[:, j] for j, name in enumerate(ds.feature_names)} if channels else None
    preds = model.predict_with_features(cb, Xb, overrides)
    permuted = {}
    for c, name in enumerate(names):
        permuted[name] = np.asarray(preds[1 + c * cfg.n_perm: 1 + (c + 1) * cfg.n_perm])
    y_hat = preds[0]
    y_hat = y_hat.item() if hasattr(y_hat, "item") else y_hat
    y = ds.y[i].item() if hasattr(ds.y[i], "item") else ds.y[i]
    d_model = float(model.target_distance(coords)[0]) if cfg.audit else None
    return ProfileRecord(k, i, r, d, y, y_hat, train.n, permuted, d_model)


def _run_chunk(args):
    ks, ds, spec, cfg, channels, labels = args
    return [(k, _one_iteration(k, ds, spec, cfg, channels, labels)) for k in ks]


def worker_count(cfg: DiagnosticsConfig) -> int:
    if cfg.n_workers:
        return max(1, int(cfg.n_workers))
    env = os.environ.get("SPDIAG_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_spatial_loo(ds: Dataset, spec: ModelSpec, cfg: DiagnosticsConfig, channels=()) -> LooRun:
    """Run ``cfg.n_reps`` buffered spatial-LOO iterations.

    ``channels`` are permutation channels (see :mod:`spdiag.importance`);
    each contributes ``cfg.n_perm`` permuted predictions per record, all from
    the iteration's single fitted model. Results do not depend on the worker
    count: every iteration draws from its own seed-derived generator.
    """
    spec.check_dataset(ds)
    channels = list(channels)
    labels = ds.labels or None
    n_workers = worker_count(cfg)
    ks = list(range(cfg.n_reps))
    if n_workers == 1:
        results = [(k, _one_iteration(k, ds, spec, cfg, channels, labels)) for k in ks]
    else:
        chunks = [ks[j::n_workers * 4] for j in range(n_workers * 4)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = [item for part in pool.map(_run_chunk, [(c, ds, spec, cfg, channels, labels) for c in chunks])
                       for item in part]
    results.sort(key=lambda kv: kv[0])
    records = [rec for _, rec in results if isinstance(rec, ProfileRecord)]
    failures = [rec for _, rec in results if isinstance(rec, str)]
    skipped = len(results) - len(records)
    if len(failures) > 0.5 * cfg.n_reps:
        raise FitError(f"{len(failures)} of {cfg.n_reps} fits failed, e.g. {failures[0]}")
    if skipped > 0.5 * cfg.n_reps:
        raise ConfigError(
            f"{skipped} of {cfg.n_reps} iterations skipped; r_max={cfg.r_max:g} is too large for the domain"
        )
    if skipped:
        log.info("%s: %d iteration(s) skipped", spec.label, skipped)
    return LooRun(records, skipped, cfg.n_reps, cfg.measure_for(ds), spec.label)


def training_size_curve(ds: Dataset, radii) -> np.ndarray:
    """Mean training-set size after buffer exclusion, averaged over all targets, per radius."""
    out = []
    for r in np.atleast_1d(radii):
        if r < 0:
            out.append(ds.n - 1.0)
            continue
        counts = ds.tree.query_ball_point(ds.coords, r, return_length=True)
        out.append(float(np.mean(ds.n - counts)))
    return np.asarray(out)


def records_to_csv(records: Sequence[ProfileRecord], path):
    """One row per iteration and permutation state; the clean prediction has channel ''."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "i", "r", "d", "n_train", "y", "channel", "perm", "prediction"])
        for rec in records:
            w.writerow([rec.iteration, rec.i, repr(rec.r), repr(rec.d), rec.n_train, rec.y, "", -1, rec.y_hat])
            for name, vals in rec.permuted.items():
                for m, v in enumerate(vals):
                    w.writerow([rec.iteration, rec.i, repr(rec.r), repr(rec.d), rec.n_train, rec.y, name, m,
                                v.item() if hasattr(v, "item") else v])
