"""Uniform fit/predict interface over the built-in spatial prediction models.

Every fitted model predicts from target coordinates plus a feature matrix in
the dataset's schema order. Distance-aware models (NN, OK, KED, GWR, OK_RF,
NN_LDA) take geometry from the coordinates; MLR, RF and LDA only see the
feature channel. :meth:`FittedModel.predict_with_features` keeps the two in
sync when coordinate features are overridden.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .dataset import Dataset, nn_distances
from .errors import ConfigError, FitError, SchemaError
from .forest import RandomForest
from .geostat import (
    KrigingSystem,
    Variogram,
    empirical_variogram,
    empirical_variogram_robust,
    fit_spherical_irls,
)

log = logging.getLogger(__name__)

REGRESSION_KINDS = ("NN", "OK", "KED", "MLR", "GWR", "RF", "OK_RF")
CLASSIFICATION_KINDS = ("NN", "RF", "LDA", "NN_LDA")
MODEL_KINDS = ("NN", "OK", "KED", "MLR", "GWR", "RF", "OK_RF", "LDA", "NN_LDA")

_DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "NN": {},
    "OK": {"n_lags": 15, "max_lag": None, "estimator": "cressie"},
    "KED": {"n_lags": 15, "max_lag": None, "estimator": "cressie"},
    "MLR": {},
    "GWR": {"n_bandwidths": 25, "bw_min": None, "bw_max": None},
    "RF": {"n_trees": 500, "mtry": None, "nodesize": None},
    "OK_RF": {"d_max": 500.0, "n_trees": 500, "mtry": None, "nodesize": None,
              "n_lags": 15, "max_lag": None, "estimator": "cressie"},
    "LDA": {},
    "NN_LDA": {"switch_distance": 100.0},
}


@dataclass(frozen=True)
class ModelSpec:
    """A model kind plus hyperparameters and the features it may use.

    ``features=None`` picks the kind's default: none for NN/OK, the
    non-coordinate features for GWR, all schema features otherwise.
    """

    kind: str
    params: dict = field(default_factory=dict)
    features: tuple[str, ...] | None = None
    name: str | None = None

    def __post_init__(self):
        kind = self.kind.upper().replace("-", "_")
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        unknown = set(self.params) - set(_DEFAULT_PARAMS[kind])
        if unknown:
            raise ConfigError(f"{kind}: unknown hyperparameter(s) {sorted(unknown)}")
        merged = {**_DEFAULT_PARAMS[kind], **self.params}
        object.__setattr__(self, "params", merged)
        if self.features is not None:
            object.__setattr__(self, "features", tuple(self.features))
        if merged.get("n_trees") is not None and merged["n_trees"] < 1:
            raise ConfigError("n_trees must be at least 1")
        for key in ("d_max", "switch_distance"):
            if key in merged and not merged[key] > 0:
                raise ConfigError(f"{key} must be positive")

    @property
    def label(self) -> str:
        return self.name or self.kind.replace("_", "-")

    def resolve_features(self, ds: Dataset) -> tuple[str, ...]:
        if self.features is not None:
            for f in self.features:
                ds.feature_index(f)
            return self.features
        if self.kind in ("NN", "OK"):
            return ()
        if self.kind == "GWR":
            return tuple(f for f in ds.feature_names if f not in ds.coord_names)
        return ds.feature_names

    def check_dataset(self, ds: Dataset):
        allowed = REGRESSION_KINDS if ds.response_kind == "regression" else CLASSIFICATION_KINDS
        if self.kind not in allowed:
            raise ConfigError(f"{self.kind} does not support {ds.response_kind} responses")
        self.resolve_features(ds)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelSpec":
        obj = dict(obj)
        kind = obj.pop("kind")
        features = obj.pop("features", None)
        name = obj.pop("name", None)
        params = obj.pop("params", {})
        params = {**params, **obj}
        return cls(kind=kind, params=params, features=features, name=name)


class FittedModel:
    """Base class; subclasses implement :meth:`_predict`."""

    distance_aware = False

    def __init__(self, spec: ModelSpec, train: Dataset, seed: int):
        self.spec = spec
        self.seed = seed
        self.schema = train.feature_names
        self.coord_names = train.coord_names
        self.features = spec.resolve_features(train)
        self.cols = np.array([train.feature_index(f) for f in self.features], dtype=int)
        self.train_coords = train.coords
        self._tree = None

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.train_coords)
        return self._tree

    def target_distance(self, coords) -> np.ndarray:
        """Distance from each target to the nearest retained training location."""
        d, _ = self.tree.query(np.asarray(coords, dtype=float).reshape(-1, 2), k=1)
        return d

    def _check(self, coords, X):
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape != (len(coords), len(self.schema)):
            raise SchemaError(
                f"expected features of shape ({len(coords)}, {len(self.schema)}), got {X.shape}"
            )
        return coords, X

    def predict(self, coords, X) -> np.ndarray:
        coords, X = self._check(coords, X)
        return self._predict(coords, X)

    def predict_one(self, location, features):
        return self.predict(np.asarray(location, dtype=float), np.asarray(features, dtype=float))[0]

    def apply_overrides(self, coords, X, overrides: dict | None):
        """Substitute feature values; overridden coordinate features also move the target."""
        coords, X = self._check(coords, X)
        if not overrides:
            return coords, X
        X = X.copy()
        coords = coords.copy()
        for name, value in overrides.items():
            if name not in self.schema:
                raise SchemaError(f"unknown override feature {name!r}")
            j = self.schema.index(name)
            X[:, j] = value
            if name in self.coord_names:
                coords[:, self.coord_names.index(name)] = X[:, j]
        return coords, X

    def predict_with_features(self, coords, X, overrides: dict | None = None) -> np.ndarray:
        coords, X = self.apply_overrides(coords, X, overrides)
        return self._predict(coords, X)

    def _predict(self, coords, X):
        raise NotImplementedError

    def summary(self) -> dict:
        return {"kind": self.spec.kind, "label": self.spec.label, "features": list(self.features),
                "n_train": len(self.train_coords), "seed": self.seed}


class NNModel(FittedModel):
    """Response (or label) of the single nearest training location."""

    distance_aware = True

    def __init__(self, spec, train, seed):
        super().__init__(spec, train, seed)
        self.y = train.y

    def _predict(self, coords, X):
        _, idx = self.tree.query(coords, k=1)
        return self.y[idx]


def _drift_scaler(D):
    mu = D.mean(axis=0)
    sd = D.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


class KrigingModel(FittedModel):
    """Global OK (no drift features) or KED (drift = selected features).

    The variogram is refitted on every call to :func:`fit`; for KED it is fitted
    to OLS residuals of the drift, in a single pass.
    """

    distance_aware = True

    def __init__(self, spec, train, seed, drift: bool):
        super().__init__(spec, train, seed)
        p = spec.params
        if not drift:
            self.cols = np.array([], dtype=int)
            self.features = ()
        z = train.y.astype(float)
        if len(self.cols):
            D = train.X[:, self.cols]
            self._mu, self._sd = _drift_scaler(D)
            Ds = (D - self._mu) / self._sd
            F = np.column_stack([np.ones(len(z)), Ds])
            beta, *_ = np.linalg.lstsq(F, z, rcond=None)
            resid = z - F @ beta
        else:
            Ds = None
            resid = z - z.mean()
        est = empirical_variogram_robust if p["estimator"] == "cressie" else empirical_variogram
        emp = est(resid, train.coords, p["max_lag"], p["n_lags"])
        self.variogram: Variogram = fit_spherical_irls(emp)
        self.system = KrigingSystem(train.coords, z, self.variogram, Ds)

    def _drift(self, X):
        if not len(self.cols):
            return None
        return (X[:, self.cols] - self._mu) / self._sd

    def _predict(self, coords, X):
        # solve each distinct target once so identical inputs give identical outputs
        D = self._drift(X)
        key = coords if D is None else np.column_stack([coords, D])
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        pred = self.system.predict(uniq[:, :2], None if D is None else uniq[:, 2:])
        return pred[inv.ravel()]

    def predict_variance(self, coords, X):
        coords, X = self._check(coords, X)
        return self.system.predict(coords, self._drift(X), return_variance=True)[1]

    def summary(self):
        return {**super().summary(), "variogram": self.variogram.to_dict(),
                "trend_coefficients": self.system.beta.tolist()}


class MLRModel(FittedModel):
    def __init__(self, spec, train, seed):
        super().__init__(spec, train, seed)
        A = np.column_stack([np.ones(train.n), train.X[:, self.cols]])
        coef, _, rank, _ = np.linalg.lstsq(A, train.y.astype(float), rcond=None)
        if rank < A.shape[1]:
            log.warning("MLR design matrix is rank deficient (rank %d of %d)", rank, A.shape[1])
        self.intercept = float(coef[0])
        self.coef = coef[1:]
        fitted = A @ coef
        resid = train.y - fitted
        ss_tot = float(np.sum((train.y - train.y.mean()) ** 2))
        self.r_squared = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0

    def _predict(self, coords, X):
        return self.intercept + X[:, self.cols] @ self.coef

    def summary(self):
        return {**super().summary(), "intercept": self.intercept,
                "coefficients": dict(zip(self.features, self.coef.tolist())),
                "r_squared": self.r_squared}


def gaussian_kernel(d, bandwidth):
    return np.exp(-0.5 * (np.asarray(d) / bandwidth) ** 2)


def _solve_batch(A, b):
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(b)
        for k in range(len(A)):
            out[k] = np.linalg.lstsq(A[k], b[k], rcond=None)[0]
        return out


class GWRModel(FittedModel):
    """Gaussian-kernel GWR with one global bandwidth chosen by LOO-CV RMSE.

    Coordinates only define the kernel weights; the local regressions use
    the non-coordinate features plus an intercept.
    """

    distance_aware = True

    def __init__(self, spec, train, seed, bandwidth: float | None = None):
        super().__init__(spec, train, seed)
        p = spec.params
        self.X_loc = np.column_stack([np.ones(train.n), train.X[:, self.cols]])
        self.y = train.y.astype(float)
        D = cdist(train.coords, train.coords)
        if bandwidth is None:
            lo = p["bw_min"] or float(np.median(nn_distances(train)))
            hi = p["bw_max"] or float(D.max())
            if not (np.isfinite(lo) and lo > 0):
                lo = hi / 100.0
            grid = np.geomspace(lo, max(hi, lo * (1 + 1e-9)), int(p["n_bandwidths"]))
            self.cv_scores = np.array([self._loo_rmse(D, b) for b in grid])
            self.bandwidth_grid = grid
            bandwidth = float(grid[int(np.nanargmin(self.cv_scores))])
        self.bandwidth = float(bandwidth)

    def _local_fit(self, W):
        Xl = self.X_loc
        A = np.einsum("ij,jk,jl->ikl", W, Xl, Xl)
        b = np.einsum("ij,jk,j->ik", W, Xl, self.y)
        return _solve_batch(A, b)

    def _loo_rmse(self, D, bw):
        W = gaussian_kernel(D, bw)
        np.fill_diagonal(W, 0.0)
        W /= np.maximum(W.max(axis=1, keepdims=True), 1e-300)
        beta = self._local_fit(W)
        pred = np.einsum("ik,ik->i", self.X_loc, beta)
        return float(np.sqrt(np.mean((pred - self.y) ** 2)))

    def local_coefficients(self, coords) -> np.ndarray:
        d = cdist(np.asarray(coords, dtype=float).reshape(-1, 2), self.train_coords)
        # log-weights relative to the nearest point keep far targets representable
        lw = -0.5 * (d / self.bandwidth) ** 2
        W = np.exp(lw - lw.max(axis=1, keepdims=True))
        return self._local_fit(W)

    def _predict(self, coords, X):
        beta = self.local_coefficients(coords)
        Xt = np.column_stack([np.ones(len(X)), X[:, self.cols]])
        return np.einsum("ik,ik->i", Xt, beta)

    def summary(self):
        return {**super().summary(), "bandwidth": self.bandwidth}


class RFModel(FittedModel):
    def __init__(self, spec, train, seed):
        super().__init__(spec, train, seed)
        p = spec.params
        self.forest = RandomForest(
            n_trees=p["n_trees"], mtry=p["mtry"], nodesize=p["nodesize"],
            classification=train.response_kind == "classification", seed=seed,
        ).fit(train.X[:, self.cols], train.y)

    def _predict(self, coords, X):
        return self.forest.predict(X[:, self.cols])

    def summary(self):
        return {**super().summary(), "n_trees": self.forest.n_trees, "mtry": self.forest.mtry_,
                "nodesize": self.forest.nodesize_}


class OKRFModel(FittedModel):
    """Distance-weighted blend: OK near the data, RF beyond ``d_max``.

    The weight on RF is ``min(d / d_max, 1)`` with ``d`` the target's distance
    to the nearest training location. The RF part uses the same seed a
    stand-alone RF would, so both agree exactly beyond ``d_max``.
    """

    distance_aware = True

    def __init__(self, spec, train, seed):
        super().__init__(spec, train, seed)
        p = spec.params
        self.d_max = float(p["d_max"])
        ok_spec = ModelSpec("OK", {k: p[k] for k in ("n_lags", "max_lag", "estimator")})
        rf_spec = ModelSpec("RF", {k: p[k] for k in ("n_trees", "mtry", "nodesize")}, features=self.features)
        self.ok = KrigingModel(ok_spec, train, seed, drift=False)
        self.rf = RFModel(rf_spec, train, seed)

    def weight(self, coords):
        return np.minimum(self.target_distance(coords) / self.d_max, 1.0)

    def _predict(self, coords, X):
        rho = self.weight(coords)
        return rho * self.rf._predict(coords, X) + (1.0 - rho) * self.ok._predict(coords, X)

    def summary(self):
        return {**super().summary(), "d_max": self.d_max, "ok": self.ok.summary(), "rf": self.rf.summary()}


class LDAModel(FittedModel):
    """Linear discriminant analysis with pooled covariance and empirical priors."""

    def __init__(self, spec, train, seed, labels=None):
        super().__init__(spec, train, seed)
        y = train.y
        present = np.unique(y)
        if labels is not None:
            missing = sorted(set(labels) - set(present.tolist()))
            if missing:
                raise FitError(f"class(es) {missing} absent from the training data")
        self.classes_ = present
        Xs = train.X[:, self.cols]
        n, p = Xs.shape
        k = len(present)
        if n <= k:
            raise FitError("LDA needs more observations than classes")
        means = np.array([Xs[y == c].mean(axis=0) for c in present])
        centered = Xs - means[np.searchsorted(present, y)]
        S = centered.T @ centered / (n - k)
        ev = np.linalg.eigvalsh(S)
        if ev.min() <= 1e-10 * max(ev.max(), 1e-300):
            eps = 1e-8 * np.trace(S) / p
            log.warning("LDA covariance near-singular; adding ridge %.3g", eps)
            S = S + eps * np.eye(p)
        self.means = means
        self.cov = S
        self.priors = np.array([(y == c).mean() for c in present])
        Si_m = np.linalg.solve(S, means.T)  # (p, k)
        self._coef = Si_m
        self._const = -0.5 * np.einsum("kp,pk->k", means, Si_m) + np.log(self.priors)

    def decision_function(self, X):
        return X[:, self.cols] @ self._coef + self._const

    def _predict(self, coords, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def summary(self):
        return {**super().summary(), "classes": self.classes_.tolist(), "priors": self.priors.tolist()}


class NNLDAModel(FittedModel):
    """Nearest-neighbour label within ``switch_distance`` of the data, LDA beyond."""

    distance_aware = True

    def __init__(self, spec, train, seed, labels=None):
        super().__init__(spec, train, seed)
        self.switch = float(spec.params["switch_distance"])
        lda_spec = ModelSpec("LDA", features=self.features)
        self.lda = LDAModel(lda_spec, train, seed, labels)
        self.y = train.y

    def _predict(self, coords, X):
        d, idx = self.tree.query(coords, k=1)
        out = self.lda._predict(coords, X)
        near = d <= self.switch
        out = out.copy()
        out[near] = self.y[idx[near]]
        return out

    def summary(self):
        return {**super().summary(), "switch_distance": self.switch}


def fit(spec: ModelSpec, train: Dataset, seed: int = 0, labels=None) -> FittedModel:
    """Train ``spec`` on ``train``.

    ``labels`` is the full label set of the parent dataset; LDA-based models
    refuse to train when one of them is missing from ``train``.
    """
    spec.check_dataset(train)
    kind = spec.kind
    if kind == "NN":
        return NNModel(spec, train, seed)
    if kind == "OK":
        return KrigingModel(spec, train, seed, drift=False)
    if kind == "KED":
        return KrigingModel(spec, train, seed, drift=True)
    if kind == "MLR":
        return MLRModel(spec, train, seed)
    if kind == "GWR":
        return GWRModel(spec, train, seed)
    if kind == "RF":
        return RFModel(spec, train, seed)
    if kind == "OK_RF":
        return OKRFModel(spec, train, seed)
    if kind == "LDA":
        return LDAModel(spec, train, seed, labels)
    if kind == "NN_LDA":
        return NNLDAModel(spec, train, seed, labels)
    raise ConfigError(f"unknown model kind {kind!r}")  # pragma: no cover


def predict(model: FittedModel, coords, X):
    return model.predict(coords, X)


def predict_with_features(model: FittedModel, coords, X, overrides=None):
    return model.predict_with_features(coords, X, overrides)


def meuse_models() -> list[ModelSpec]:
    """The seven regionalization models of the Meuse comparison."""
    return [ModelSpec(k) for k in ("NN", "OK", "KED", "MLR", "GWR", "RF", "OK_RF")]
