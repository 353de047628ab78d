"""Semivariograms and global kriging with a measurement-error nugget.

The spherical model separates microscale variability into a measurement-error
variance ``me_var``. Kriging treats it as noise on the observations only, so
predictions at training locations smooth rather than reproduce the data.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist, pdist

from .errors import EstimationError, KrigingError

log = logging.getLogger(__name__)

# bias correction constants of Cressie & Hawkins' robust estimator
_CH_A = 0.457
_CH_B = 0.494


@dataclass(frozen=True)
class Variogram:
    me_var: float
    psill: float
    range: float
    model_kind: str = "spherical"
    converged: bool = True

    def __post_init__(self):
        if self.me_var < 0 or self.psill < 0:
            raise ValueError("variances must be nonnegative")
        if not self.range > 0:
            raise ValueError("range must be positive")
        if self.model_kind != "spherical":
            raise ValueError(f"unsupported variogram model {self.model_kind!r}")

    @property
    def sill(self) -> float:
        return self.me_var + self.psill

    @property
    def nugget_to_sill(self) -> float:
        return self.me_var / self.sill if self.sill > 0 else 0.0

    def __call__(self, h):
        return spherical_gamma(self, h)

    def covariance(self, h):
        """Covariance of the correlated component, without ``me_var``."""
        return _sph_cov(np.asarray(h, dtype=float), self.psill, self.range)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj) -> "Variogram":
        return cls(**obj)


def _sph_cov(h, psill, a):
    s = np.clip(h / a, 0.0, 1.0)
    return psill * (1.0 - 1.5 * s + 0.5 * s**3)


def _sph_gamma(h, me_var, psill, a):
    h = np.asarray(h, dtype=float)
    s = np.clip(h / a, 0.0, 1.0)
    return np.where(h > 0, me_var + psill * (1.5 * s - 0.5 * s**3), 0.0)


def spherical_gamma(v: Variogram, h):
    """Spherical semivariance; a scalar in gives a float back."""
    g = _sph_gamma(h, v.me_var, v.psill, v.range)
    return float(g) if np.ndim(g) == 0 else g


@dataclass(frozen=True)
class EmpiricalVariogram:
    lags: np.ndarray  # mean pair distance per reported bin
    counts: np.ndarray
    gamma: np.ndarray
    max_lag: float
    estimator: str = "cressie"

    def __len__(self):
        return len(self.lags)


def default_max_lag(coords) -> float:
    """One third of the bounding-box diagonal."""
    coords = np.asarray(coords, dtype=float)
    span = coords.max(axis=0) - coords.min(axis=0)
    return float(np.hypot(*span) / 3.0)


def _binned_pairs(values, coords, max_lag, n_lags):
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if len(values) < 2:
        raise EstimationError("need at least 2 observations for a variogram")
    if max_lag is None:
        max_lag = default_max_lag(coords)
    if not max_lag > 0:
        raise EstimationError("max_lag must be positive")
    d = pdist(coords)
    dz = pdist(values[:, None])
    width = max_lag / n_lags
    b = np.floor(d / width).astype(np.int64)
    keep = (b < n_lags) & (d > 0)
    return d[keep], dz[keep], b[keep], max_lag


def _summarise(d, stat, b, n_lags):
    counts = np.bincount(b, minlength=n_lags)
    sum_d = np.bincount(b, weights=d, minlength=n_lags)
    sum_s = np.bincount(b, weights=stat, minlength=n_lags)
    ok = counts > 0
    return counts[ok], sum_d[ok] / counts[ok], sum_s[ok] / counts[ok]


def empirical_variogram_robust(values, coords, max_lag: float | None = None, n_lags: int = 15) -> EmpiricalVariogram:
    """Cressie-Hawkins robust estimate on equal-width lag bins.

    ``2 gamma(h) = mean(|z_i - z_j|^0.5)^4 / (0.457 + 0.494 / N(h))``.
    Lags are reported at the mean pair distance; empty bins are omitted.
    """
    d, dz, b, max_lag = _binned_pairs(values, coords, max_lag, n_lags)
    if len(d) == 0:
        raise EstimationError("no point pairs within max_lag")
    N, h, m = _summarise(d, np.sqrt(np.abs(dz)), b, n_lags)
    gamma = 0.5 * m**4 / (_CH_A + _CH_B / N)
    return EmpiricalVariogram(h, N, gamma, max_lag, "cressie")


def empirical_variogram(values, coords, max_lag: float | None = None, n_lags: int = 15) -> EmpiricalVariogram:
    """Classical method-of-moments estimate, ``gamma(h) = mean((z_i - z_j)^2) / 2``."""
    d, dz, b, max_lag = _binned_pairs(values, coords, max_lag, n_lags)
    if len(d) == 0:
        raise EstimationError("no point pairs within max_lag")
    N, h, m = _summarise(d, dz**2, b, n_lags)
    return EmpiricalVariogram(h, N, 0.5 * m, max_lag, "matheron")


def initial_variogram(emp: EmpiricalVariogram) -> Variogram:
    g = emp.gamma
    me = 0.5 * g[0]
    ps = max(float(np.mean(g[-3:])) - me, 0.0)
    return Variogram(me, ps, 0.5 * emp.max_lag)


def fit_spherical_irls(
    emp: EmpiricalVariogram,
    init: Variogram | None = None,
    max_iter: int = 100,
    rtol: float = 1e-6,
) -> Variogram:
    """Weighted least-squares spherical fit with weights ``N_j / gamma(h_j)^2``.

    Weights are recomputed from the current model on every pass. Stops when
    the largest relative parameter change drops below ``rtol``; otherwise the
    last estimate is returned with ``converged=False``.
    """
    if len(emp) < 3:
        raise EstimationError("need at least 3 lags with pairs to fit a variogram")
    h, N, g = emp.lags, emp.counts.astype(float), emp.gamma
    if init is None:
        init = initial_variogram(emp)
    scale = max(float(g.max()), 1e-300)
    theta = np.array([init.me_var / scale, init.psill / scale, init.range])
    lower = [0.0, 0.0, 1e-6 * emp.max_lag]
    upper = [np.inf, np.inf, 10.0 * emp.max_lag]
    theta = np.clip(theta, lower, [1e300, 1e300, upper[2]])
    gs = g / scale
    if np.all(gs == 0):
        return Variogram(0.0, 0.0, float(init.range))

    def resid(t, w):
        return w * (gs - _sph_gamma(h, *t))

    converged = False
    for _ in range(max_iter):
        model = _sph_gamma(h, *theta)
        w = np.sqrt(N) / np.maximum(model, 1e-12)
        sol = least_squares(resid, theta, args=(w,), bounds=(lower, upper), method="trf")
        new = sol.x
        change = np.max(np.abs(new - theta) / np.maximum(np.abs(theta), 1e-12))
        theta = new
        if change < rtol:
            converged = True
            break
    if not converged:
        log.debug("variogram IRLS did not converge in %d iterations", max_iter)
    me, ps, a = theta
    return Variogram(float(max(me, 0.0) * scale), float(max(ps, 0.0) * scale), float(a), converged=converged)


def fit_variogram(values, coords, max_lag=None, n_lags: int = 15, estimator: str = "cressie") -> Variogram:
    """Empirical variogram plus IRLS fit with the default lag layout."""
    est = empirical_variogram_robust if estimator == "cressie" else empirical_variogram
    return fit_spherical_irls(est(values, coords, max_lag, n_lags))


class KrigingSystem:
    """Global universal-kriging system, factorised once and reused.

    Parameters
    ----------
    coords : (n, 2) training locations.
    z : (n,) responses.
    variogram : fitted :class:`Variogram`.
    trend : (n, q) drift design matrix *without* the intercept column, or
        ``None`` for ordinary kriging.
    """

    def __init__(self, coords, z, variogram: Variogram, trend=None):
        self.coords = np.asarray(coords, dtype=float)
        self.z = np.asarray(z, dtype=float)
        self.variogram = variogram
        n = len(self.z)
        trend = np.empty((n, 0)) if trend is None else np.asarray(trend, dtype=float).reshape(n, -1)
        self.F = np.column_stack([np.ones(n), trend])
        self.n_drift = trend.shape[1]

        K = variogram.covariance(cdist(self.coords, self.coords))
        K[np.diag_indices(n)] += variogram.me_var
        if variogram.me_var == 0:
            dup = np.argwhere(np.triu(cdist(self.coords, self.coords) == 0, k=1))
            if len(dup):
                i, j = dup[0]
                raise KrigingError(
                    f"observations {i} and {j} share a location and me_var is 0; system is singular"
                )
        try:
            self._chol = cho_factor(K, lower=True)
        except np.linalg.LinAlgError:
            raise KrigingError("kriging covariance matrix is not positive definite") from None
        KiF = cho_solve(self._chol, self.F)
        FKF = self.F.T @ KiF
        try:
            self._FKF_inv = np.linalg.inv(FKF)
        except np.linalg.LinAlgError:
            raise KrigingError("trend design is rank deficient") from None
        if np.linalg.cond(FKF) > 1e14:
            raise KrigingError("trend design is rank deficient")
        self._KiF = KiF
        self.beta = self._FKF_inv @ (KiF.T @ self.z)
        self._Ki_resid = cho_solve(self._chol, self.z - self.F @ self.beta)

    @classmethod
    def ordinary(cls, coords, z, variogram):
        return cls(coords, z, variogram, None)

    def _target_terms(self, targets, drift):
        targets = np.asarray(targets, dtype=float).reshape(-1, 2)
        m = len(targets)
        if self.n_drift:
            if drift is None:
                raise KrigingError("drift values are required for kriging with external drift")
            drift = np.asarray(drift, dtype=float).reshape(m, self.n_drift)
        else:
            drift = np.empty((m, 0))
        f0 = np.column_stack([np.ones(m), drift])
        k = self.variogram.covariance(cdist(targets, self.coords))
        return f0, k

    def predict(self, targets, drift=None, return_variance: bool = False):
        """Kriging predictions (and variances) at ``targets``."""
        f0, k = self._target_terms(targets, drift)
        pred = f0 @ self.beta + k @ self._Ki_resid
        if not return_variance:
            return pred
        Kik = cho_solve(self._chol, k.T)  # (n, m)
        u = f0.T - self.F.T @ Kik  # (q, m)
        var = self.variogram.psill - np.einsum("ij,ij->j", k.T, Kik) + np.einsum("ij,ik,kj->j", u, self._FKF_inv, u)
        return pred, np.maximum(var, 0.0)

    def weights(self, targets, drift=None) -> np.ndarray:
        """Kriging weights, one row per target."""
        f0, k = self._target_terms(targets, drift)
        Kik = cho_solve(self._chol, k.T)
        u = f0.T - self.F.T @ Kik
        lam = Kik + self._KiF @ (self._FKF_inv @ u)
        return lam.T

    def gls_mean(self) -> float:
        return float(self.beta[0])
