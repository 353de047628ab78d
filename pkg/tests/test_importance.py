import numpy as np
import pytest

from spdiag.diagnostics import RMSE, DiagnosticsConfig, ProfileRecord, run_spatial_loo
from spdiag.errors import ConfigError, SchemaError
from spdiag.importance import (
    FeatureChannel,
    PCChannel,
    build_svip,
    fit_pc_groups,
    make_channels,
    permuted_predictions,
    svip,
)
from spdiag.models import ModelSpec, fit

EARLY = ["early1", "early2", "early3", "early4"]


class TestPCGroups:
    def test_round_trip(self, fields):
        (g,) = fit_pc_groups(fields, {"early": EARLY})
        cols = [fields.feature_index(m) for m in EARLY]
        Xg = fields.X[:, cols]
        np.testing.assert_allclose(g.inverse_transform(g.transform(Xg)), Xg, atol=1e-10)

    def test_orthonormal_and_ordered(self, fields):
        (g,) = fit_pc_groups(fields, {"late": [f"late{k}" for k in range(1, 7)]})
        np.testing.assert_allclose(g.loadings.T @ g.loadings, np.eye(6), atol=1e-12)
        assert np.all(np.diff(g.explained_variance) <= 0)
        assert g.explained_ratio.sum() == pytest.approx(1.0)
        # standardised data: eigenvalues sum to the number of members
        assert g.explained_variance.sum() == pytest.approx(6.0)

    def test_scores_uncorrelated(self, fields):
        (g,) = fit_pc_groups(fields, {"early": EARLY})
        S = g.transform(fields.X[:, [fields.feature_index(m) for m in EARLY]])
        C = np.cov(S, rowvar=False)
        np.testing.assert_allclose(C - np.diag(np.diag(C)), 0, atol=1e-10)

    def test_validation(self, fields):
        with pytest.raises(ConfigError):
            fit_pc_groups(fields, {"a": ["early1"]})
        with pytest.raises(ConfigError):
            fit_pc_groups(fields, {"a": ["early1", "early2"], "b": ["early2", "early3"]})
        with pytest.raises(SchemaError):
            fit_pc_groups(fields, {"a": ["early1", "nope"]})


class TestChannels:
    def test_feature_channel_touches_one_column(self, meuse, rng):
        ch = FeatureChannel("elev")
        rows = ch.permuted_rows(meuse.X[0], meuse, 50, rng)
        j = meuse.feature_index("elev")
        other = np.delete(np.arange(meuse.p), j)
        np.testing.assert_array_equal(rows[:, other], np.repeat(meuse.X[:1, other], 50, axis=0))
        assert set(rows[:, j]) <= set(meuse.X[:, j])

    def test_pc_channel_leaves_other_features(self, fields, rng):
        (g,) = fit_pc_groups(fields, {"early": EARLY})
        ch = PCChannel(g, 0)
        x = fields.X[3]
        rows = ch.permuted_rows(x, fields, 20, rng)
        cols = [fields.feature_index(m) for m in EARLY]
        other = np.setdiff1d(np.arange(fields.p), cols)
        np.testing.assert_array_equal(rows[:, other], np.repeat(x[None, other], 20, axis=0))
        # only the chosen score moves
        S = g.transform(rows[:, cols])
        s0 = g.transform(x[cols])
        np.testing.assert_allclose(S[:, 1:], np.repeat(s0[None, 1:], 20, axis=0), atol=1e-10)

    def test_make_channels(self, fields):
        groups = fit_pc_groups(fields, {"early": EARLY})
        chans = make_channels(fields, ["mid1"], groups, n_components=2)
        assert [c.name for c in chans] == ["mid1", "early1", "early2"]
        with pytest.raises(SchemaError):
            make_channels(fields, ["zinc"])
        with pytest.raises(ConfigError):
            PCChannel(groups[0], 4)

    def test_coordinate_permutation_moves_nn_target(self, meuse, rng):
        model = fit(ModelSpec("NN"), meuse)
        preds = permuted_predictions(model, meuse.coords[0], meuse.X[0], "x", meuse, 30, rng)
        assert len(np.unique(preds)) > 1


class TestSvip:
    def test_manual_bin(self):
        # two records in one bin, one channel, two permutations each
        recs = [ProfileRecord(0, 0, 1.0, 1.0, 0.0, 1.0, 9, {"a": np.array([2.0, 0.0])}),
                ProfileRecord(1, 1, 2.0, 2.0, 0.0, -1.0, 9, {"a": np.array([3.0, 1.0])})]
        out = build_svip(recs, [0, 10], RMSE, min_records=1, n_boot=10)
        # clean mse 1, permuted mse (2 + 5) / 2 = 3.5
        assert out.profiles["a"].value[0] == pytest.approx(np.sqrt(3.5) - 1.0)
        assert out.clean.value[0] == pytest.approx(1.0)

    def test_missing_channel(self):
        recs = [ProfileRecord(0, 0, 1.0, 1.0, 0.0, 1.0, 9, {"a": np.array([2.0])})]
        with pytest.raises(ConfigError):
            build_svip(recs, [0, 10], RMSE, channels=["b"], min_records=1)

    def test_nn_ignores_features(self, meuse, tmp_path):
        cfg = DiagnosticsConfig(r_max=600, n_reps=120, n_bins=4, min_bin_records=5, n_perm=3, seed=2)
        chans = make_channels(meuse, ["sqrt.dist", "elev"])
        run = run_spatial_loo(meuse, ModelSpec("NN"), cfg, chans)
        out = svip(run, cfg)
        for name in ("sqrt.dist", "elev"):
            np.testing.assert_array_equal(out.profiles[name].value, 0.0)
            np.testing.assert_array_equal(out.se[name], 0.0)
        out.to_csv(tmp_path / "svip.csv", model="NN")
        head = (tmp_path / "svip.csv").read_text().splitlines()[0]
        assert head == "model,feature_or_group,d_hat,importance_raw,importance_smoothed,n_records,se"

    def test_mlr_importance_positive(self, meuse):
        cfg = DiagnosticsConfig(r_max=600, n_reps=150, n_bins=3, min_bin_records=10, n_perm=5, seed=1)
        run = run_spatial_loo(meuse, ModelSpec("MLR"), cfg, make_channels(meuse, ["sqrt.dist"]))
        out = svip(run, cfg)
        assert np.all(out.profiles["sqrt.dist"].value > 0)
        assert np.all(out.se["sqrt.dist"] > 0)
