"""Permutation importance along the spatial-LOO record stream.

Replacement values are drawn from the whole dataset, since a LOO test set
holds a single observation. Correlated feature blocks can be permuted in
principal-component space: transform the target's block, swap one score for
that of a random pool row, transform back, predict.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .diagnostics import (
    DiagnosticsConfig,
    Profile,
    ProfileRecord,
    assign_bins,
    error_measure,
    smooth_values,
    MISCLASSIFICATION,
    RMSE,
)
from .errors import ConfigError, EstimationError, SchemaError

log = logging.getLogger(__name__)


@dataclass
class FeatureGroup:
    """Standardised PCA of a block of correlated features.

    ``loadings`` has orthonormal columns ordered by explained variance.
    """

    name: str
    members: tuple[str, ...]
    center: np.ndarray
    scale: np.ndarray
    loadings: np.ndarray
    explained_variance: np.ndarray
    dropped: tuple[str, ...] = ()

    @property
    def explained_ratio(self) -> np.ndarray:
        tot = self.explained_variance.sum()
        return self.explained_variance / tot if tot > 0 else self.explained_variance

    def transform(self, Xg) -> np.ndarray:
        return ((np.asarray(Xg, dtype=float) - self.center) / self.scale) @ self.loadings

    def inverse_transform(self, scores) -> np.ndarray:
        return (np.asarray(scores, dtype=float) @ self.loadings.T) * self.scale + self.center

    def component_name(self, k: int) -> str:
        return f"{self.name}{k + 1}"


def fit_pc_groups(ds: Dataset, groups: dict[str, Sequence[str]]) -> list[FeatureGroup]:
    """Fit one standardised PCA per group on the full dataset."""
    seen: set[str] = set()
    out = []
    for name, members in groups.items():
        members = tuple(members)
        if len(members) < 2:
            raise ConfigError(f"group {name!r} needs at least 2 members")
        overlap = seen.intersection(members)
        if overlap:
            raise ConfigError(f"groups overlap on {sorted(overlap)}")
        seen.update(members)
        cols = [ds.feature_index(m) for m in members]
        Xg = ds.X[:, cols]
        sd = Xg.std(axis=0, ddof=1)
        keep = sd > 0
        dropped = tuple(m for m, k in zip(members, keep) if not k)
        if dropped:
            log.warning("group %s: dropping zero-variance feature(s) %s", name, list(dropped))
        members = tuple(m for m, k in zip(members, keep) if k)
        if not members:
            raise ConfigError(f"group {name!r} has no varying features")
        Xg = Xg[:, keep]
        center = Xg.mean(axis=0)
        scale = sd[keep]
        Z = (Xg - center) / scale
        cov = Z.T @ Z / (len(Z) - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        evecs = evecs[:, order]
        # deterministic sign: largest-magnitude loading positive
        flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(evecs.shape[1])])
        flip[flip == 0] = 1.0
        evecs = evecs * flip
        out.append(FeatureGroup(name, members, center, scale, evecs, evals, dropped))
    return out


class FeatureChannel:
    """Permute a single raw feature."""

    def __init__(self, name: str):
        self.name = name

    def permuted_rows(self, x_row, pool: Dataset, n_perm: int, rng) -> np.ndarray:
        j = pool.feature_index(self.name)
        rows = np.repeat(np.asarray(x_row, dtype=float)[None, :], n_perm, axis=0)
        draw = rng.integers(pool.n, size=n_perm)
        rows[:, j] = pool.X[draw, j]
        return rows


class PCChannel:
    """Permute one principal-component score of a feature group."""

    def __init__(self, group: FeatureGroup, component: int):
        if not 0 <= component < group.loadings.shape[1]:
            raise ConfigError(f"group {group.name!r} has no component {component + 1}")
        self.group = group
        self.component = component
        self.name = group.component_name(component)

    def permuted_rows(self, x_row, pool: Dataset, n_perm: int, rng) -> np.ndarray:
        g = self.group
        cols = [pool.feature_index(m) for m in g.members]
        x_row = np.asarray(x_row, dtype=float)
        rows = np.repeat(x_row[None, :], n_perm, axis=0)
        scores = np.repeat(g.transform(x_row[cols])[None, :], n_perm, axis=0)
        draw = rng.integers(pool.n, size=n_perm)
        scores[:, self.component] = g.transform(pool.X[np.ix_(draw, cols)])[:, self.component]
        rows[:, cols] = g.inverse_transform(scores)
        return rows


def make_channels(ds: Dataset, features: Sequence[str] = (), groups: Sequence[FeatureGroup] = (),
                  n_components: int = 2) -> list:
    chans: list = []
    for f in features:
        if f not in ds.feature_names:
            raise SchemaError(f"unknown feature {f!r}")
        chans.append(FeatureChannel(f))
    for g in groups:
        for k in range(min(n_components, g.loadings.shape[1])):
            chans.append(PCChannel(g, k))
    names = [c.name for c in chans]
    if len(set(names)) != len(names):
        raise ConfigError("permutation channel names must be unique")
    return chans


def permuted_predictions(model, coords, x_row, channel, pool: Dataset, n_perm: int, rng) -> np.ndarray:
    """``n_perm`` predictions for one target with ``channel`` permuted from ``pool``."""
    if isinstance(channel, str):
        channel = FeatureChannel(channel)
    rows = channel.permuted_rows(x_row, pool, n_perm, rng)
    cb = np.repeat(np.asarray(coords, dtype=float).reshape(1, 2), n_perm, axis=0)
    overrides = {name: rows[:, j] for j, name in enumerate(pool.feature_names)}
    return model.predict_with_features(cb, rows, overrides)


@dataclass
class SVIP:
    """Per-channel importance profiles sharing the clean profile's bins."""

    clean: Profile
    profiles: dict[str, Profile] = field(default_factory=dict)
    se: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self, path, model: str = ""):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            head = ["feature_or_group", "d_hat", "importance_raw", "importance_smoothed", "n_records", "se"]
            if model:
                head.insert(0, "model")
            w.writerow(head)
            for name, p in self.profiles.items():
                sm = p.smoothed if p.smoothed is not None else p.value
                for k in range(len(p)):
                    row = [name, float(p.d_hat[k]), float(p.value[k]), float(sm[k]),
                           int(p.n_records[k]), float(self.se[name][k])]
                    if model:
                        row.insert(0, model)
                    w.writerow(row)

    def to_dict(self) -> dict:
        return {name: {"d_hat": p.d_hat.tolist(), "importance_raw": p.value.tolist(),
                       "importance_smoothed": (p.smoothed if p.smoothed is not None else p.value).tolist(),
                       "n_records": p.n_records.tolist(), "se": self.se[name].tolist()}
                for name, p in self.profiles.items()}


def _loss_arrays(y, y_hat, perm, measure):
    """Per-record clean loss and per-record mean permuted loss."""
    if measure == RMSE:
        y = y.astype(float)
        clean = (y_hat.astype(float) - y) ** 2
        loss = (perm.astype(float) - y[:, None]) ** 2
    else:
        clean = (y_hat != y).astype(float)
        loss = (perm != y[:, None]).astype(float)
    # offset from the clean loss, so a permutation-blind model scores exactly zero
    return clean, clean + (loss - clean[:, None]).mean(axis=1)


def _finish(mean_loss, measure):
    return np.sqrt(mean_loss) if measure == RMSE else mean_loss


def build_svip(records: Sequence[ProfileRecord], breakpoints, measure: str, channels: Sequence[str] | None = None,
               min_records: int = 20, smooth_window: int = 3, n_boot: int = 200, seed: int = 0) -> SVIP:
    """Importance per bin: error with the channel permuted minus clean error.

    Permuted predictions are pooled over replicates within a bin. Standard
    errors come from a bootstrap over the bin's records.
    """
    if not len(records):
        raise EstimationError("no records")
    if channels is None:
        channels = list(records[0].permuted)
    for name in channels:
        if any(name not in r.permuted for r in records):
            raise ConfigError(f"records carry no permutation channel {name!r}")
    d = np.array([r.d for r in records], dtype=float)
    y = np.array([r.y for r in records])
    yh = np.array([r.y_hat for r in records])
    nt = np.array([r.n_train for r in records], dtype=float)
    idx = assign_bins(d, breakpoints)
    bins = [j for j in range(len(breakpoints) - 1) if (idx == j).sum() >= max(min_records, 1)]
    if not bins:
        raise EstimationError("every distance bin is empty or under-occupied")
    masks = [idx == j for j in bins]
    common = dict(
        d_hat=np.array([np.median(d[m]) for m in masks]),
        n_records=np.array([m.sum() for m in masks], dtype=int),
        mean_train_size=np.array([nt[m].mean() for m in masks]),
        bins=np.array(bins, dtype=int),
        breakpoints=np.asarray(breakpoints, dtype=float),
    )
    clean_vals = np.array([error_measure(y[m], yh[m], measure) for m in masks])
    clean = Profile(value=clean_vals, measure=measure, label="clean", **common)
    window = _window(smooth_window, len(bins))
    clean.smoothed = smooth_values(clean_vals, window)

    rng = np.random.default_rng(seed)
    out = SVIP(clean=clean)
    for name in channels:
        perm = np.array([np.asarray(r.permuted[name]) for r in records])
        lc, lp = _loss_arrays(y, yh, perm, measure)
        vals, ses = [], []
        for m in masks:
            c, pmean = lc[m], lp[m]
            vals.append(float(_finish(pmean.mean(), measure) - _finish(c.mean(), measure)))
            bi = rng.integers(len(c), size=(n_boot, len(c)))
            boot = _finish(pmean[bi].mean(axis=1), measure) - _finish(c[bi].mean(axis=1), measure)
            ses.append(float(boot.std(ddof=1)) if n_boot > 1 else 0.0)
        prof = Profile(value=np.array(vals), measure=f"{measure} increase", label=name, **common)
        prof.smoothed = smooth_values(prof.value, window)
        out.profiles[name] = prof
        out.se[name] = np.array(ses)
    return out


def _window(requested, n_bins):
    w = min(requested, n_bins if n_bins % 2 else n_bins - 1)
    return max(w, 1)


def svip(run, cfg: DiagnosticsConfig, channels: Sequence[str] | None = None) -> SVIP:
    return build_svip(run.records, cfg.breakpoints(), run.measure, channels, cfg.min_bin_records,
                      cfg.smooth_window, seed=cfg.seed)


__all__ = [
    "FeatureGroup", "FeatureChannel", "PCChannel", "SVIP", "build_svip", "fit_pc_groups",
    "make_channels", "permuted_predictions", "svip", "MISCLASSIFICATION", "RMSE",
]
