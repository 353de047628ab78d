import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdiag.errors import EstimationError, KrigingError
from spdiag.geostat import (
    EmpiricalVariogram,
    KrigingSystem,
    Variogram,
    default_max_lag,
    empirical_variogram,
    empirical_variogram_robust,
    fit_spherical_irls,
    fit_variogram,
    spherical_gamma,
)


class TestVariogram:
    def test_spherical_value(self):
        v = Variogram(me_var=0.1, psill=0.9, range=100.0)
        # 0.1 + 0.9 * (1.5 * 0.5 - 0.5 * 0.125)
        assert spherical_gamma(v, 50.0) == pytest.approx(0.71875, abs=1e-15)

    def test_zero_lag_and_sill(self):
        v = Variogram(0.2, 1.0, 300.0)
        assert v(0.0) == 0.0
        assert v(300.0) == pytest.approx(1.2)
        assert v(5000.0) == pytest.approx(1.2)
        assert v.nugget_to_sill == pytest.approx(0.2 / 1.2)

    def test_covariance_complements_gamma(self):
        v = Variogram(0.0, 2.0, 100.0)
        h = np.linspace(1, 150, 20)
        np.testing.assert_allclose(v.covariance(h) + v(h), 2.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            Variogram(-1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            Variogram(0.0, 1.0, 0.0)

    def test_json_round_trip(self):
        v = Variogram(0.1, 0.5, 800.0, converged=False)
        import json

        assert Variogram.from_dict(json.loads(v.to_json())) == v


class TestEmpirical:
    def test_cressie_two_points(self):
        # one pair, |dz| = 2: 2 gamma = (sqrt 2)^4 / (0.457 + 0.494)
        emp = empirical_variogram_robust([0.0, 2.0], [[0, 0], [1, 0]], max_lag=10, n_lags=5)
        assert emp.counts.tolist() == [1]
        assert emp.gamma[0] == pytest.approx(4 / 0.951 / 2, rel=1e-14)
        assert emp.lags[0] == 1.0

    def test_classical_two_points(self):
        emp = empirical_variogram([0.0, 2.0], [[0, 0], [1, 0]], max_lag=10, n_lags=5)
        assert emp.gamma[0] == 2.0

    def test_lag_bins(self):
        coords = [[0, 0], [1, 0], [3, 0]]
        emp = empirical_variogram([0.0, 1.0, 3.0], coords, max_lag=4, n_lags=4)
        # pairs at 1, 2, 3 fall in bins 1, 2, 3; bin 0 empty and omitted
        assert emp.lags.tolist() == [1.0, 2.0, 3.0]
        assert emp.gamma.tolist() == [0.5, 2.0, 4.5]

    def test_default_max_lag(self):
        assert default_max_lag([[0, 0], [300, 400]]) == pytest.approx(500 / 3)

    def test_too_few(self):
        with pytest.raises(EstimationError):
            empirical_variogram([1.0], [[0, 0]])


class TestFit:
    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.0, 0.5), st.floats(0.2, 2.0), st.floats(150.0, 900.0))
    def test_round_trip_exact_gamma(self, me, ps, a):
        h = np.linspace(30, 1400, 15)
        true = Variogram(me, ps, a)
        emp = EmpiricalVariogram(h, np.full(15, 100), true(h), 1400.0)
        fit = fit_spherical_irls(emp)
        assert fit.range == pytest.approx(a, rel=0.01)
        assert fit.sill == pytest.approx(me + ps, rel=0.01)
        assert fit.me_var == pytest.approx(me, abs=0.01 * (me + ps))

    def test_recovers_synthetic_field(self):
        from spdiag.dataset import SynthConfig, synth_dataset

        ds = synth_dataset(SynthConfig(n=500, coefs=(), psill=1.0, range=300.0, me_var=0.2,
                                       extent=(1500.0, 1500.0)), seed=4)
        v = fit_variogram(ds.y, ds.coords, max_lag=700, n_lags=15)
        assert 200 < v.range < 450
        assert 0.7 < v.sill < 1.7

    def test_constant_field(self):
        emp = EmpiricalVariogram(np.array([1.0, 2, 3]), np.array([5, 5, 5]), np.zeros(3), 3.0)
        v = fit_spherical_irls(emp)
        assert v.sill == 0.0

    def test_needs_three_lags(self):
        emp = EmpiricalVariogram(np.array([1.0, 2]), np.array([5, 5]), np.ones(2), 3.0)
        with pytest.raises(EstimationError):
            fit_spherical_irls(emp)


class TestKriging:
    coords = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [120.0, 90.0]])
    z = np.array([1.0, 2.0, 0.5, 1.5])

    def test_exact_interpolation_without_noise(self):
        ks = KrigingSystem.ordinary(self.coords, self.z, Variogram(0.0, 1.0, 300.0))
        np.testing.assert_allclose(ks.predict(self.coords), self.z, atol=1e-10)

    def test_smoothing_with_noise(self):
        ks = KrigingSystem.ordinary(self.coords, self.z, Variogram(0.5, 1.0, 300.0))
        pred = ks.predict(self.coords)
        assert np.all(np.abs(pred - self.z) > 1e-3)
        assert np.all(np.abs(pred - ks.gls_mean()) <= np.abs(self.z - ks.gls_mean()) + 1e-12)

    def test_weights_sum_to_one_and_reproduce(self):
        ks = KrigingSystem.ordinary(self.coords, self.z, Variogram(0.1, 1.0, 300.0))
        t = np.array([[50.0, 40.0], [500.0, 500.0]])
        w = ks.weights(t)
        np.testing.assert_allclose(w.sum(axis=1), 1.0)
        np.testing.assert_allclose(w @ self.z, ks.predict(t))

    def test_far_target_gets_gls_mean(self):
        ks = KrigingSystem.ordinary(self.coords, self.z, Variogram(0.1, 1.0, 300.0))
        pred, var = ks.predict([[5000.0, 5000.0]], return_variance=True)
        assert pred[0] == pytest.approx(ks.gls_mean())
        assert var[0] > 1.0  # psill plus uncertainty of the mean

    def test_variance_zero_at_data_without_noise(self):
        ks = KrigingSystem.ordinary(self.coords, self.z, Variogram(0.0, 1.0, 300.0))
        _, var = ks.predict(self.coords, return_variance=True)
        np.testing.assert_allclose(var, 0.0, atol=1e-10)

    def test_drift_weights_unbiased(self):
        drift = np.array([[1.0], [3.0], [0.0], [2.0]])
        ks = KrigingSystem(self.coords, self.z, Variogram(0.1, 1.0, 300.0), drift)
        t, td = np.array([[60.0, 60.0]]), np.array([[1.7]])
        w = ks.weights(t, td)
        assert w.sum() == pytest.approx(1.0)
        assert w @ drift[:, 0] == pytest.approx(1.7)
        with pytest.raises(KrigingError):
            ks.predict(t)

    def test_duplicate_without_noise(self):
        coords = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(KrigingError, match="0 and 1"):
            KrigingSystem.ordinary(coords, [1.0, 2.0, 3.0], Variogram(0.0, 1.0, 10.0))
        ks = KrigingSystem.ordinary(coords, [1.0, 2.0, 3.0], Variogram(0.1, 1.0, 10.0))
        assert np.isfinite(ks.predict([[0.5, 0.5]])).all()

    def test_rank_deficient_trend(self):
        with pytest.raises(KrigingError):
            KrigingSystem(self.coords, self.z, Variogram(0.1, 1.0, 300.0), np.ones((4, 1)))
