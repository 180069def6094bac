"""Ridge regression, smoothing, and cross-validation tests.

``gd_ridge_oracle`` solves the same ridge objective by plain gradient
descent run to convergence; it shares no code with the closed-form path.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvdp.aggregate import FeatureVector
from mvdp.regress import (
    CvReport,
    DimensionMismatch,
    InsufficientData,
    RegressorModel,
    SingularSystem,
    SmoothingConfig,
    cross_validate,
    fit_regressor,
    fit_ridge,
    predict,
    predict_rows,
    smooth,
    smooth_sequence,
)


def gd_ridge_oracle(x, y, lam, unregularized_cols=(), tol=1e-12, max_iter=200_000):
    """Gradient descent to convergence on 0.5|XW - Y|^2 + 0.5 lam |W~|^2."""
    reg = np.full(x.shape[1], lam)
    reg[list(unregularized_cols)] = 0.0
    gram = x.T @ x + np.diag(reg)
    lr = 1.0 / np.linalg.eigvalsh(gram).max()
    w = np.zeros((x.shape[1], y.shape[1]))
    xty = x.T @ y
    for _ in range(max_iter):
        grad = gram @ w - xty
        w -= lr * grad
        if np.abs(grad).max() < tol * max(1.0, np.abs(xty).max()):
            break
    return w


class TestFitRidge:
    def test_identity_design_lambda_zero(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=(6, 4))
        np.testing.assert_allclose(fit_ridge(np.eye(6), y, 0.0), y, atol=1e-12)

    def test_identity_design_with_ridge(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=(5, 3))
        lam = 0.7
        np.testing.assert_allclose(fit_ridge(np.eye(5), y, lam), y / (1 + lam),
                                   atol=1e-12)

    def test_matches_gradient_descent_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(3):
            x = rng.normal(size=(200, 50))
            y = rng.normal(size=(200, 6))
            lam = 10.0 ** rng.uniform(-2, 1)
            w = fit_ridge(x, y, lam)
            w_gd = gd_ridge_oracle(x, y, lam)
            err = np.abs(w - w_gd).max() / max(np.abs(w_gd).max(), 1e-12)
            assert err < 1e-6

    def test_unregularized_bias_matches_oracle(self):
        rng = np.random.default_rng(3)
        x = np.hstack([rng.normal(size=(80, 10)), np.ones((80, 1))])
        y = rng.normal(size=(80, 2)) + 5.0
        w = fit_ridge(x, y, 2.0, unregularized_cols=(10,))
        w_gd = gd_ridge_oracle(x, y, 2.0, unregularized_cols=(10,))
        np.testing.assert_allclose(w, w_gd, atol=1e-8)

    def test_singular_system_raises(self):
        x = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
        y = np.ones((3, 1))
        with pytest.raises(SingularSystem):
            fit_ridge(x, y, 0.0)

    def test_normal_equation_residual_is_zero(self):
        # ridge optimality: X'(XW - Y) + lam * I~ W = 0
        rng = np.random.default_rng(4)
        x = np.hstack([rng.normal(size=(60, 12)), np.ones((60, 1))])
        y = rng.normal(size=(60, 5))
        lam = 0.3
        w = fit_ridge(x, y, lam, unregularized_cols=(12,))
        reg = np.full(13, lam)
        reg[12] = 0.0
        grad = x.T @ (x @ w - y) + reg[:, None] * w
        assert np.abs(grad).max() <= 1e-8 * max(1.0, np.abs(x.T @ y).max())

    def test_training_residual_monotone_in_lambda(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(50, 20))
        y = rng.normal(size=(50, 3))
        residuals = []
        for lam in (0.0, 0.01, 0.1, 1.0, 10.0, 100.0):
            w = fit_ridge(x, y, lam)
            residuals.append(np.linalg.norm(x @ w - y))
        assert all(a <= b + 1e-12 for a, b in zip(residuals, residuals[1:]))


class TestPredict:
    def make_model(self, n_labels=3, n_joints=2, seed=0):
        rng = np.random.default_rng(seed)
        d = 24 * n_labels + n_labels + 1
        return RegressorModel(rng.normal(size=(d, 3 * n_joints)), 0.1,
                              rng.normal(size=24 * n_labels),
                              np.abs(rng.normal(size=24 * n_labels)) + 0.1,
                              n_labels, n_joints)

    def test_bias_only_model_returns_mean_pose(self):
        model = self.make_model()
        w = np.zeros_like(model.weights)
        mean_pose = np.array([[0.1, 0.2, 0.3], [-0.4, 0.5, -0.6]])
        w[-1] = mean_pose.ravel()
        model = RegressorModel(w, 0.0, model.feat_mean, model.feat_scale, 3, 2)
        for seed in range(3):
            rng = np.random.default_rng(seed)
            fv = FeatureVector(rng.normal(size=72), rng.random(3) > 0.5)
            np.testing.assert_allclose(predict(model, fv), mean_pose, atol=1e-12)

    def test_near_interpolation_on_solvable_system(self):
        # N <= D with lambda -> 0 interpolates an exactly solvable set.
        rng = np.random.default_rng(6)
        values = rng.normal(size=(6, 72))
        presence = np.ones((6, 3), dtype=bool)
        targets = rng.normal(size=(6, 2, 3))
        model = fit_regressor(values, presence, targets, lam=1e-10, n_labels=3)
        preds = predict_rows(model, values, presence)
        assert np.abs(preds - targets).max() <= 1e-6

    def test_all_flags_false_gives_finite_bias_response(self):
        model = self.make_model(seed=2)
        fv = FeatureVector(np.zeros(72), np.zeros(3, dtype=bool))
        pred = predict(model, fv)
        assert np.isfinite(pred).all()
        # zero features standardize to -mean/scale, flags contribute nothing
        expected = predict(model, FeatureVector(np.zeros(72),
                                                np.zeros(3, dtype=bool)))
        np.testing.assert_array_equal(pred, expected)

    def test_affine_in_features(self):
        model = self.make_model(seed=3)
        rng = np.random.default_rng(7)
        f1 = rng.normal(size=72)
        f2 = rng.normal(size=72)
        flags = rng.random(3) > 0.3
        alpha = 0.37
        mixed = predict(model, FeatureVector(alpha * f1 + (1 - alpha) * f2, flags))
        combo = (alpha * predict(model, FeatureVector(f1, flags))
                 + (1 - alpha) * predict(model, FeatureVector(f2, flags)))
        np.testing.assert_allclose(mixed, combo, atol=1e-9)

    def test_wrong_length_raises(self):
        model = self.make_model()
        with pytest.raises(DimensionMismatch):
            predict(model, FeatureVector(np.zeros(10), np.zeros(3, dtype=bool)))

    def test_zero_variance_feature_maps_to_zero(self):
        values = np.ones((5, 72))
        values[:, 1:] = np.random.default_rng(8).normal(size=(5, 71))
        presence = np.ones((5, 3), dtype=bool)
        targets = np.zeros((5, 2, 3))
        model = fit_regressor(values, presence, targets, 0.1, n_labels=3)
        assert model.feat_scale[0] == 0.0
        fv = FeatureVector(values[0] + np.eye(72)[0] * 100, presence[0])
        assert np.isfinite(predict(model, fv)).all()


class TestSmoothing:
    def test_weight_validation(self):
        with pytest.raises(ValueError):
            SmoothingConfig(np.array([0.5, 0.4]))
        with pytest.raises(ValueError):
            SmoothingConfig(np.array([1.5, -0.5]))
        SmoothingConfig(np.array([0.5, 0.3, 0.2]))  # sums to 1

    def test_exponential_weights_sum_to_one(self):
        for window in (0, 2, 4, 8):
            for decay in (0.4, 0.7, 1.0):
                cfg = SmoothingConfig.exponential(window, decay)
                assert abs(cfg.weights.sum() - 1.0) <= 1e-12
                assert cfg.window == window

    def test_identity_window(self):
        pose = np.random.default_rng(0).normal(size=(4, 3))
        out = smooth([pose], SmoothingConfig.identity())
        np.testing.assert_array_equal(out, pose)

    def test_constant_sequence_fixed_point(self):
        pose = np.random.default_rng(1).normal(size=(4, 3))
        cfg = SmoothingConfig(np.array([0.5, 0.25, 0.25]))
        out = smooth([pose, pose.copy(), pose.copy()], cfg)
        np.testing.assert_allclose(out, pose, atol=1e-12)

    def test_two_frame_average(self):
        a = np.full((2, 3), 2.0)
        b = np.zeros((2, 3))
        out = smooth([a, b], SmoothingConfig(np.array([0.5, 0.5])))
        np.testing.assert_array_equal(out, np.full((2, 3), 1.0))

    def test_short_history_renormalizes(self):
        cfg = SmoothingConfig.exponential(4, 0.5)
        pose = np.ones((2, 3))
        out = smooth([pose], cfg)
        np.testing.assert_allclose(out, pose, atol=1e-12)

    @settings(max_examples=30, deadline=None, derandomize=True)
    @given(st.integers(min_value=0, max_value=2 ** 31))
    def test_output_in_convex_hull(self, seed):
        rng = np.random.default_rng(seed)
        history = [rng.normal(size=(3, 3)) for _ in range(4)]
        w = rng.random(4) + 1e-3
        cfg = SmoothingConfig(w / w.sum())
        out = smooth(history, cfg)
        stack = np.stack(history)
        assert np.all(out >= stack.min(axis=0) - 1e-12)
        assert np.all(out <= stack.max(axis=0) + 1e-12)

    def test_smooth_sequence_matches_manual(self):
        rng = np.random.default_rng(2)
        poses = rng.normal(size=(6, 2, 3))
        cfg = SmoothingConfig(np.array([0.6, 0.4]))
        out = smooth_sequence(poses, cfg)
        np.testing.assert_allclose(out[0], poses[0], atol=1e-12)
        for t in range(1, 6):
            np.testing.assert_allclose(out[t],
                                       0.6 * poses[t] + 0.4 * poses[t - 1],
                                       atol=1e-12)


def synthetic_problem(rng, n=90, n_labels=2, n_joints=2, noise=0.0,
                      sequences=None):
    d = 24 * n_labels
    values = rng.normal(size=(n, d))
    presence = np.ones((n, n_labels), dtype=bool)
    w_true = rng.normal(size=(d, 3 * n_joints)) * 0.2
    targets = (values @ w_true).reshape(n, n_joints, 3)
    targets = targets + noise * rng.normal(size=targets.shape)
    seq_ids = None
    if sequences:
        seq_ids = np.repeat(np.arange(sequences), n // sequences)
    return values, presence, targets, seq_ids


class TestCrossValidate:
    def test_single_point_grid_selected(self):
        rng = np.random.default_rng(0)
        values, presence, targets, _ = synthetic_problem(rng)
        report = cross_validate(values, presence, targets, None,
                                lam_grid=[0.25],
                                smoothing_grid=[SmoothingConfig.identity()],
                                folds=3, n_labels=2)
        assert report.ridge_lambda == 0.25
        assert report.smoothing.window == 0

    def test_noise_shifts_lambda_upward(self):
        grid = np.logspace(-4, 2, 7)
        clean_lams, noisy_lams = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            values, presence, targets, _ = synthetic_problem(rng, n=60)
            clean_lams.append(cross_validate(
                values, presence, targets, None, lam_grid=grid,
                folds=3, n_labels=2).ridge_lambda)
            noisy = targets + 0.8 * rng.normal(size=targets.shape)
            noisy_lams.append(cross_validate(
                values, presence, noisy, None, lam_grid=grid,
                folds=3, n_labels=2).ridge_lambda)
        assert np.mean(np.log10(noisy_lams)) > np.mean(np.log10(clean_lams))

    def test_reported_error_matches_independent_scorer(self):
        rng = np.random.default_rng(1)
        values, presence, targets, _ = synthetic_problem(rng, n=45, noise=0.1)
        grid = [0.01, 1.0]
        report = cross_validate(values, presence, targets, None, lam_grid=grid,
                                folds=3, n_labels=2)
        for lam, window, decay, err in report.table:
            # independent double-entry scoring with the same fold rule
            fold_ids = np.arange(45) % 3
            errs = []
            for fold in range(3):
                val = fold_ids == fold
                model = fit_regressor(values[~val], presence[~val],
                                      targets[~val], lam, n_labels=2)
                preds = predict_rows(model, values[val], presence[val])
                errs.append(float(np.linalg.norm(preds - targets[val],
                                                 axis=-1).mean()))
            assert abs(err - np.mean(errs)) <= 1e-12

    def test_sequence_folds_never_split_sequences(self):
        rng = np.random.default_rng(2)
        values, presence, targets, seq_ids = synthetic_problem(
            rng, n=80, noise=0.3, sequences=8)
        report = cross_validate(values, presence, targets, seq_ids,
                                lam_grid=[0.1], folds=4, n_labels=2)
        assert isinstance(report, CvReport)
        assert report.smoothing.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_insufficient_data_raises(self):
        rng = np.random.default_rng(3)
        values, presence, targets, _ = synthetic_problem(rng, n=3)
        with pytest.raises(InsufficientData):
            cross_validate(values[:2], presence[:2], targets[:2], None,
                           folds=4, n_labels=2)
