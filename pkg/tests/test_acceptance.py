"""Acceptance criteria, each at its pinned tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) and then
asserts. Monte-Carlo runs on Meuse are shared through session fixtures.
"""

import time

import numpy as np
import pytest
from scipy.spatial.distance import cdist
from scipy.stats import chi2_contingency

from conftest import record_criterion
from spdiag.comparators import CvScheme, cv_distances, fold_distances, group_folds, random_folds, run_cv
from spdiag.dataset import (
    SynthConfig,
    load_meuse_grid,
    nn_distance_stats,
    nn_distances,
    prediction_distances,
    synth_dataset,
)
from spdiag.diagnostics import DiagnosticsConfig, assign_bins, run_spatial_loo, spep, training_size_curve
from spdiag.geostat import KrigingSystem, Variogram, empirical_variogram, fit_spherical_irls
from spdiag.importance import build_svip, fit_pc_groups, make_channels
from spdiag.models import ModelSpec, fit

# pinned tolerances
NN_MEAN, NN_MIN, NN_MEDIAN, NN_TOL = 112.0, 44.0, 107.0, 1.0
GRID_MEAN, GRID_Q1, GRID_Q3, GRID_TOL = 96.0, 53.0, 120.0, 2.0
R2_TARGET, R2_TOL = 0.726, 0.002
VG_RANGE, VG_RESID_RANGE, VG_RANGE_RTOL = 897.0, 926.0, 0.10
VG_RATIO, VG_RATIO_TOL = 0.27, 0.05
OK_SHORT_BAND = (0.08, 0.18)
OK_LONG_BAND = (0.28, 0.42)
CV_LOO, CV_LOO_TOL = 112.0, 2.0
CV_RANDOM, CV_RANDOM_TOL = 116.0, 5.0
CV_KMEANS, CV_KMEANS_RTOL = 298.0, 0.15
SIZE_140_AT, SIZE_140_TOL = 415.0, 30.0
SIZE_100_AT, SIZE_100_TOL = 1000.0, 75.0
N_SE = 2.0
RAMP_FRACTION = 0.25  # shortest-bin OK-RF importance relative to its level at >= 500 m
RF_KED_RATIO = 1.5
HOMOGENEITY_P = 0.01
PC_ROUNDTRIP_TOL = 1e-10
ORACLE_TOL = 1e-8

N_OK = 5000
N_OTHER = 2000
SVIP_FEATURES = ["sqrt.dist", "elev"]


def _cfg(n_reps, seed=2024):
    return DiagnosticsConfig(r_min=-1.0, r_max=1500.0, n_reps=n_reps, n_bins=25, seed=seed)


@pytest.fixture(scope="session")
def meuse_runs(meuse):
    """Seed-matched spatial-LOO runs with permutation channels, computed once."""
    cache = {}

    def get(kind):
        if kind not in cache:
            n = N_OK if kind == "OK" else N_OTHER
            cfg = _cfg(n)
            chans = make_channels(meuse, SVIP_FEATURES)
            cache[kind] = (run_spatial_loo(meuse, ModelSpec(kind), cfg, chans), cfg)
        return cache[kind]

    return get


def _fmt(x):
    return f"{x:.4g}"


# 1 ---------------------------------------------------------------------------
def test_criterion_01_dataset_statistics(meuse):
    t0 = time.perf_counter()
    s = nn_distance_stats(meuse)
    checks = {
        "nn_mean": abs(s.mean - NN_MEAN) <= NN_TOL,
        "nn_min": round(s.min) == NN_MIN,
        "nn_median": abs(s.median - NN_MEDIAN) <= NN_TOL,
    }
    detail = f"NN mean={_fmt(s.mean)} min={_fmt(s.min)} median={_fmt(s.median)}"
    try:
        grid = load_meuse_grid()
    except FileNotFoundError:
        grid = None
    if grid is None:
        checks["grid"] = False
        detail += "; prediction grid unavailable (set SPDIAG_MEUSE_GRID), grid sub-check cannot run"
    else:
        g = prediction_distances(meuse, grid)
        q1, q3 = np.quantile(g, [0.25, 0.75])
        checks["grid"] = (abs(g.mean() - GRID_MEAN) <= GRID_TOL and abs(q1 - GRID_Q1) <= GRID_TOL
                          and abs(q3 - GRID_Q3) <= GRID_TOL)
        detail += f"; grid mean={_fmt(g.mean())} q1={_fmt(q1)} q3={_fmt(q3)}"
    elapsed = time.perf_counter() - t0
    checks["runtime"] = elapsed < 1.0
    detail += f"; {elapsed:.2f}s; failed={[k for k, v in checks.items() if not v]}"
    ok = all(checks.values())
    record_criterion(1, ok, detail)
    assert ok, detail


# 2 ---------------------------------------------------------------------------
def test_criterion_02_mlr_r_squared(meuse):
    t0 = time.perf_counter()
    m = fit(ModelSpec("MLR"), meuse)
    r2 = m.r_squared
    elapsed = time.perf_counter() - t0
    ok = abs(r2 - R2_TARGET) <= R2_TOL and elapsed < 1.0
    detail = f"R2={r2:.5f} target {R2_TARGET}+-{R2_TOL}; {elapsed:.2f}s"
    record_criterion(2, ok, detail)
    assert ok, detail


# 3 ---------------------------------------------------------------------------
def test_criterion_03_variogram(meuse):
    t0 = time.perf_counter()
    z = meuse.y
    raw = fit_spherical_irls(empirical_variogram(z, meuse.coords))
    F = np.column_stack([np.ones(meuse.n), meuse.X])
    beta, *_ = np.linalg.lstsq(F, z, rcond=None)
    res = fit_spherical_irls(empirical_variogram(z - F @ beta, meuse.coords))
    elapsed = time.perf_counter() - t0
    checks = {
        "raw_range": abs(raw.range / VG_RANGE - 1) <= VG_RANGE_RTOL,
        "raw_ratio": abs(raw.nugget_to_sill - VG_RATIO) <= VG_RATIO_TOL,
        "resid_range": abs(res.range / VG_RESID_RANGE - 1) <= VG_RANGE_RTOL,
        "resid_ratio": abs(res.nugget_to_sill - VG_RATIO) <= VG_RATIO_TOL,
        "runtime": elapsed < 5.0,
    }
    detail = (f"raw range={raw.range:.0f} ratio={raw.nugget_to_sill:.3f} "
              f"(sqrt nugget={np.sqrt(raw.me_var):.3f}, sqrt sill={np.sqrt(raw.sill):.3f}); "
              f"residual range={res.range:.0f} ratio={res.nugget_to_sill:.3f}; {elapsed:.2f}s; "
              f"failed={[k for k, v in checks.items() if not v]}")
    ok = all(checks.values())
    record_criterion(3, ok, detail)
    assert ok, detail


# 4 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_04_ok_profile_shape(meuse, meuse_runs):
    run, cfg = meuse_runs("OK")
    prof = spep(run, cfg)
    vg_range = fit(ModelSpec("OK"), meuse).variogram.range
    short = prof.value[0]
    beyond = prof.value[prof.d_hat > vg_range]
    checks = {
        "short": OK_SHORT_BAND[0] <= short <= OK_SHORT_BAND[1],
        "beyond_range": beyond.size > 0 and bool(np.all((beyond >= OK_LONG_BAND[0]) & (beyond <= OK_LONG_BAND[1]))),
    }
    detail = (f"N={cfg.n_reps}; shortest bin d={prof.d_hat[0]:.0f} RMSE={short:.3f}; "
              f"bins beyond range {vg_range:.0f}: {np.round(beyond, 3).tolist()}")
    ok = all(checks.values())
    record_criterion(4, ok, detail)
    assert ok, detail


# 5 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_05_hybrid_identities(meuse, meuse_runs, fields):
    okrf, _ = meuse_runs("OK_RF")
    rf, _ = meuse_runs("RF")
    by_k = {r.iteration: r for r in rf.records}
    far = [(r, by_k[r.iteration]) for r in okrf.records if r.d >= 500 and r.iteration in by_k]
    far_equal = all(a.i == b.i and a.y_hat == b.y_hat for a, b in far)

    # at d = 0 the blend is pure OK: predict at the training locations
    m = fit(ModelSpec("OK_RF"), meuse, seed=5)
    ok_model = fit(ModelSpec("OK"), meuse, seed=5)
    at_zero = np.array_equal(m.predict(meuse.coords, meuse.X), ok_model.predict(meuse.coords, meuse.X))

    cfg = DiagnosticsConfig(r_min=-1.0, r_max=1000.0, n_reps=1500, seed=11)
    nnlda = run_spatial_loo(fields, ModelSpec("NN_LDA"), cfg)
    lda = run_spatial_loo(fields, ModelSpec("LDA"), cfg)
    lk = {r.iteration: r for r in lda.records}
    beyond = [(r, lk[r.iteration]) for r in nnlda.records if r.d > 100 and r.iteration in lk]
    lda_equal = all(a.y_hat == b.y_hat for a, b in beyond)

    n_records = len(okrf.records) + len(nnlda.records)
    checks = {"okrf_far": far_equal and len(far) > 0, "okrf_zero": at_zero,
              "nnlda_far": lda_equal and len(beyond) > 0, "records": n_records >= 1000}
    detail = (f"OK-RF==RF on {len(far)} records with d>=500; OK-RF==OK at d=0: {at_zero}; "
              f"NN-LDA==LDA on {len(beyond)} records with d>100; {n_records} records total")
    ok = all(checks.values())
    record_criterion(5, ok, detail)
    assert ok, detail


# 6 ---------------------------------------------------------------------------
def test_criterion_06_cv_distance_report(meuse):
    t0 = time.perf_counter()
    loo = cv_distances(meuse, CvScheme("loo")).mean()
    rnd = cv_distances(meuse, CvScheme("random_kfold", k=10, repetitions=50, seed=1)).mean()
    km = cv_distances(meuse, CvScheme("kmeans_spatial", k=10, repetitions=50, seed=1)).mean()
    elapsed = time.perf_counter() - t0
    checks = {
        "loo": abs(loo - CV_LOO) <= CV_LOO_TOL,
        "random": abs(rnd - CV_RANDOM) <= CV_RANDOM_TOL,
        "kmeans": abs(km / CV_KMEANS - 1) <= CV_KMEANS_RTOL,
        "runtime": elapsed < 60.0,
    }
    detail = f"LOO={loo:.1f} random10={rnd:.1f} kmeans10={km:.1f}; {elapsed:.1f}s"
    ok = all(checks.values())
    record_criterion(6, ok, detail)
    assert ok, detail


# 7 ---------------------------------------------------------------------------
def test_criterion_07_training_size_decay(meuse):
    radii = np.arange(0.0, 2000.0, 1.0)
    sizes = training_size_curve(meuse, radii)
    r140 = radii[np.argmax(sizes < 140)]
    r100 = radii[np.argmax(sizes < 100)]
    # "only for r > threshold": the curve must stay at or above the level before it
    mono = bool(np.all(np.diff(sizes) <= 0))
    checks = {
        "r140": abs(r140 - SIZE_140_AT) <= SIZE_140_TOL,
        "r100": abs(r100 - SIZE_100_AT) <= SIZE_100_TOL,
        "monotone": mono,
    }
    detail = f"size<140 from r={r140:.0f}, size<100 from r={r100:.0f}"
    ok = all(checks.values())
    record_criterion(7, ok, detail)
    assert ok, detail


# 8 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_08_importance_profiles(meuse_runs):
    notes, checks = [], {}
    for kind in ("OK", "NN"):
        run, cfg = meuse_runs(kind)
        sv = build_svip(run.records, cfg.breakpoints(), run.measure, SVIP_FEATURES, seed=cfg.seed)
        for f in SVIP_FEATURES:
            p, se = sv.profiles[f], sv.se[f]
            checks[f"{kind}_{f}_zero"] = bool(np.all(np.abs(p.value) <= N_SE * se))
            notes.append(f"{kind} {f} max|imp|={np.abs(p.value).max():.3g}")

    rf_run, cfg = meuse_runs("RF")
    okrf_run, _ = meuse_runs("OK_RF")
    rf = build_svip(rf_run.records, cfg.breakpoints(), rf_run.measure, SVIP_FEATURES, seed=cfg.seed)
    okrf = build_svip(okrf_run.records, cfg.breakpoints(), okrf_run.measure, SVIP_FEATURES, seed=cfg.seed)
    for f in SVIP_FEATURES:
        a, b = okrf.profiles[f], rf.profiles[f]
        sa, sb = okrf.se[f], rf.se[f]
        common = np.intersect1d(a.bins, b.bins)
        ia, ib = np.searchsorted(a.bins, common), np.searchsorted(b.bins, common)
        far = a.d_hat[ia] >= 500
        diff = np.abs(a.value[ia] - b.value[ib])[far]
        se = np.hypot(sa[ia], sb[ib])[far]
        checks[f"OKRF_{f}_matches_RF"] = bool(far.any() and np.all(diff <= N_SE * se))
        level = a.value[a.d_hat >= 500].mean()
        checks[f"OKRF_{f}_ramp"] = bool(a.value[0] <= RAMP_FRACTION * level)
        notes.append(f"OK-RF {f}: shortest bin {a.value[0]:.3g} vs >=500 m level {level:.3g}, "
                     f"max |OK-RF - RF| beyond 500 m {diff.max() if diff.size else float('nan'):.3g}")
    ok = all(checks.values())
    detail = "; ".join(notes) + f"; failed={[k for k, v in checks.items() if not v]}"
    record_criterion(8, ok, detail)
    assert ok, detail


# 9 ---------------------------------------------------------------------------
def _band_rmse(run, lo, hi, cfg):
    prof = spep(run, cfg)
    sel = [k for k in range(len(prof)) if lo <= prof.d_hat[k] < hi]
    bins = set(prof.bins[sel].tolist())
    d = np.array([r.d for r in run.records])
    idx = assign_bins(d, cfg.breakpoints())
    keep = np.isin(idx, list(bins))
    y = np.array([r.y for r in run.records])[keep]
    yh = np.array([r.y_hat for r in run.records])[keep]
    return float(np.sqrt(np.mean((y - yh) ** 2))), int(keep.sum())


@pytest.mark.slow
def test_criterion_09_ked_beats_rf(meuse_runs):
    ked, cfg = meuse_runs("KED")
    rf, _ = meuse_runs("RF")
    k_near, n1 = _band_rmse(ked, 0, 100, cfg)
    r_near, _ = _band_rmse(rf, 0, 100, cfg)
    k_far, n2 = _band_rmse(ked, 500, np.inf, cfg)
    r_far, _ = _band_rmse(rf, 500, np.inf, cfg)
    checks = {"near": k_near < r_near, "far": k_far < r_far, "ratio_near": r_near / k_near > RF_KED_RATIO}
    detail = (f"d<100 ({n1} records): KED {k_near:.3f} RF {r_near:.3f} ratio {r_near / k_near:.2f}; "
              f"d>500 ({n2} records): KED {k_far:.3f} RF {r_far:.3f} ratio {r_far / k_far:.2f}; "
              f"failed={[k for k, v in checks.items() if not v]}")
    ok = all(checks.values())
    record_criterion(9, ok, detail)
    assert ok, detail


# 10 --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_10_classification_properties(fields):
    cfg = DiagnosticsConfig(r_min=-1.0, r_max=1000.0, n_reps=3000, seed=5)
    nnlda = run_spatial_loo(fields, ModelSpec("NN_LDA"), cfg)
    near = [r for r in nnlda.records if r.d <= 100]
    near_err = float(np.mean([r.y != r.y_hat for r in near])) if near else np.nan

    lda = run_spatial_loo(fields, ModelSpec("LDA"), cfg)
    prof = spep(lda, cfg)
    d = np.array([r.d for r in lda.records])
    wrong = np.array([r.y != r.y_hat for r in lda.records])
    idx = assign_bins(d, cfg.breakpoints())
    field_scale = 3 * 30.0 * np.sqrt(2)
    use = [b for b, dh in zip(prof.bins, prof.d_hat) if dh > field_scale]
    table = np.array([[np.sum(wrong[idx == b]), np.sum(~wrong[idx == b])] for b in use])
    p_flat = chi2_contingency(table)[1] if len(use) >= 2 and table[:, 0].sum() > 0 else 1.0

    groups = fit_pc_groups(fields, {"early": [f"early{j}" for j in range(1, 5)],
                                    "mid": [f"mid{j}" for j in range(1, 4)],
                                    "late": [f"late{j}" for j in range(1, 7)]})
    rt = 0.0
    for g in groups:
        cols = [fields.feature_index(m) for m in g.members]
        Xg = fields.X[:, cols]
        rt = max(rt, float(np.abs(g.inverse_transform(g.transform(Xg)) - Xg).max()))

    # distance report vs brute force on the fixture
    rng = np.random.default_rng(3)
    brute_ok = True
    for folds in (group_folds(fields.groups, 10, rng), random_folds(fields.n, 10, rng)):
        fast = fold_distances(fields.coords, folds)
        D = cdist(fields.coords, fields.coords)
        brute = np.array([D[i, folds != folds[i]].min() for i in range(fields.n)])
        brute_ok &= bool(np.array_equal(fast, brute))
    checks = {"nnlda_near_zero": len(near) > 0 and near_err == 0.0, "lda_flat": p_flat >= HOMOGENEITY_P,
              "pc_roundtrip": rt <= PC_ROUNDTRIP_TOL, "distance_oracle": brute_ok}
    detail = (f"NN-LDA error {near_err:.3g} on {len(near)} records d<=100; LDA homogeneity p={p_flat:.3g} "
              f"over {len(use)} bins beyond {field_scale:.0f} m; PC round-trip {rt:.2e}; "
              f"fold distances == brute force: {brute_ok}")
    ok = all(checks.values())
    record_criterion(10, ok, detail)
    assert ok, detail


# 11 --------------------------------------------------------------------------
def _dense_kriging(coords, z, v: Variogram, drift, target, target_drift):
    """Textbook bordered system, solved with a dense LU."""
    n = len(z)
    F = np.column_stack([np.ones(n)] + ([drift] if drift is not None else []))
    q = F.shape[1]
    C = v.covariance(cdist(coords, coords)) + v.me_var * np.eye(n)
    A = np.zeros((n + q, n + q))
    A[:n, :n] = C
    A[:n, n:] = F
    A[n:, :n] = F.T
    f0 = np.concatenate([[1.0], [target_drift] if drift is not None else []])
    b = np.concatenate([v.covariance(cdist(target[None, :], coords))[0], f0])
    sol = np.linalg.solve(A, b)
    return float(sol[:n] @ z)


def test_criterion_11_oracle_equivalences(meuse):
    rng = np.random.default_rng(0)
    worst_k = 0.0
    for n in (3, 4, 5):
        for _ in range(20):
            coords = rng.uniform(0, 500, size=(n, 2))
            z = rng.normal(size=n)
            drift = rng.normal(size=n)
            v = Variogram(me_var=float(rng.uniform(0, 0.3)), psill=float(rng.uniform(0.5, 2)),
                          range=float(rng.uniform(100, 800)))
            t = rng.uniform(0, 500, size=2)
            td = float(rng.normal())
            ok_pred = KrigingSystem(coords, z, v).predict(t[None, :])[0]
            worst_k = max(worst_k, abs(ok_pred - _dense_kriging(coords, z, v, None, t, td)))
            if n > 2:
                ked_pred = KrigingSystem(coords, z, v, drift[:, None]).predict(t[None, :], [[td]])[0]
                worst_k = max(worst_k, abs(ked_pred - _dense_kriging(coords, z, v, drift, t, td)))

    ds = synth_dataset(SynthConfig(n=12, coefs=(1.0, -2.0), psill=0.5, me_var=0.2), seed=9)
    res = run_cv(ds, ModelSpec("MLR"), CvScheme("loo"))
    F = np.column_stack([np.ones(ds.n), ds.X])
    H = F @ np.linalg.solve(F.T @ F, F.T)
    e = ds.y - H @ ds.y
    loo_pred = ds.y - e / (1 - np.diag(H))
    worst_m = float(np.abs(res.predictions - loo_pred).max())

    D = cdist(meuse.coords, meuse.coords)
    np.fill_diagonal(D, np.inf)
    nn_exact = np.array_equal(nn_distances(meuse), D.min(axis=1))
    targets = rng.uniform(meuse.coords.min(0), meuse.coords.max(0), size=(500, 2))
    pd_exact = np.array_equal(prediction_distances(meuse, targets), cdist(targets, meuse.coords).min(axis=1))
    checks = {"kriging": worst_k <= ORACLE_TOL, "loo_mlr": worst_m <= ORACLE_TOL,
              "nn_distances": nn_exact, "prediction_distances": pd_exact}
    detail = (f"kriging max diff {worst_k:.2e}; LOO-MLR max diff {worst_m:.2e}; "
              f"NN distances exact: {nn_exact}; prediction distances exact: {pd_exact}")
    ok = all(checks.values())
    record_criterion(11, ok, detail)
    assert ok, detail
