"""Closed-form ridge regression of joint positions plus temporal smoothing.

One weight matrix maps the standardized feature vector (plus per-class
presence flags and a bias) to all 3J joint coordinates at once; solving the
normal equations with a single symmetric factorization is exactly the
per-joint closed form, shared across outputs. The bias row is left
unregularized. Features are z-scored per dimension from the training data
(meters and square-meters columns otherwise share one lambda), with
zero-variance features mapped to zero.

Smoothing is the convex weighted average over the last K+1 estimates.
Hyperparameters (lambda, smoothing weights) come from k-fold cross
validation; smoothing folds split by sequence, never mid-sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .aggregate import FeatureVector


class SingularSystem(np.linalg.LinAlgError):
    """Normal equations are rank deficient and lambda is 0."""


class DimensionMismatch(ValueError):
    """Feature vector length disagrees with the model."""


class InsufficientData(ValueError):
    """Too few samples for the requested fold count."""


def fit_ridge(x: np.ndarray, y: np.ndarray, lam: float,
              unregularized_cols: tuple[int, ...] = ()) -> np.ndarray:
    """W = (X'X + lam*I)^-1 X'Y via a Cholesky solve; I is zeroed on
    ``unregularized_cols`` (the bias convention)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad design shapes {x.shape}, {y.shape}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    gram = x.T @ x
    reg = np.full(x.shape[1], lam)
    reg[list(unregularized_cols)] = 0.0
    gram[np.diag_indices_from(gram)] += reg
    try:
        cho = linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return linalg.cho_solve(cho, x.T @ y, check_finite=False)


@dataclass(frozen=True)
class RegressorModel:
    """Linear pose predictor over [standardized features, presence flags, 1]."""

    weights: np.ndarray        # (24P + P + 1, 3J)
    ridge_lambda: float
    feat_mean: np.ndarray      # (24P,)
    feat_scale: np.ndarray     # (24P,), 0 marks a zero-variance feature
    n_labels: int
    n_joints: int
    smoothing: np.ndarray = None  # (K+1,) convex weights, newest first

    def __post_init__(self):
        if self.smoothing is None:
            object.__setattr__(self, "smoothing", np.array([1.0]))
        d = 24 * self.n_labels + self.n_labels + 1
        if self.weights.shape != (d, 3 * self.n_joints):
            raise ValueError(f"weights shape {self.weights.shape}, expected "
                             f"({d}, {3 * self.n_joints})")


def standardize(values: np.ndarray, mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (values - mean) / scale
    return np.where(scale > 0.0, z, 0.0)


def design_matrix(values: np.ndarray, presence: np.ndarray,
                  mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Rows: [z-scored features, presence flags, bias 1]."""
    z = standardize(values, mean, scale)
    flags = presence.astype(np.float64)
    ones = np.ones((len(z), 1))
    return np.hstack([z, flags, ones])


def fit_regressor(values: np.ndarray, presence: np.ndarray, targets: np.ndarray,
                  lam: float, n_labels: int = 43,
                  smoothing: np.ndarray | None = None) -> RegressorModel:
    """Fit on raw feature rows (N, 24P), flags (N, P), targets (N, J, 3)."""
    values = np.asarray(values, dtype=np.float64)
    presence = np.asarray(presence)
    n, j = targets.shape[0], targets.shape[1]
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    scale = np.where(std > 1e-12, std, 0.0)
    x = design_matrix(values, presence, mean, scale)
    w = fit_ridge(x, targets.reshape(n, 3 * j), lam,
                  unregularized_cols=(x.shape[1] - 1,))
    return RegressorModel(w, lam, mean, scale, n_labels, j, smoothing)


def predict(model: RegressorModel, features: FeatureVector) -> np.ndarray:
    """Joint positions (J, 3) in the feature vector's reference frame."""
    if len(features.values) != 24 * model.n_labels:
        raise DimensionMismatch(
            f"feature length {len(features.values)}, model expects "
            f"{24 * model.n_labels}")
    row = design_matrix(features.values[None], features.presence[None],
                        model.feat_mean, model.feat_scale)
    return (row @ model.weights).reshape(model.n_joints, 3)


def predict_rows(model: RegressorModel, values: np.ndarray,
                 presence: np.ndarray) -> np.ndarray:
    """Batch prediction: (N, 24P), (N, P) -> (N, J, 3)."""
    rows = design_matrix(values, presence, model.feat_mean, model.feat_scale)
    return (rows @ model.weights).reshape(-1, model.n_joints, 3)


@dataclass(frozen=True)
class SmoothingConfig:
    """Convex weights over the last K+1 pose estimates, newest first."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or len(w) == 0 or np.any(w < 0):
            raise ValueError("weights must be a nonnegative vector")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @property
    def window(self) -> int:
        return len(self.weights) - 1

    @staticmethod
    def exponential(window: int, decay: float) -> "SmoothingConfig":
        w = decay ** np.arange(window + 1, dtype=np.float64)
        return SmoothingConfig(w / w.sum())

    @staticmethod
    def identity() -> "SmoothingConfig":
        return SmoothingConfig(np.array([1.0]))


def smooth(history: list[np.ndarray], cfg: SmoothingConfig) -> np.ndarray:
    """Weighted average of the most recent estimates; ``history[0]`` is the
    current frame. Shorter histories renormalize over what exists."""
    if not history:
        raise ValueError("history must hold at least the current estimate")
    k = min(len(history), len(cfg.weights))
    w = cfg.weights[:k]
    w = w / w.sum()
    out = np.zeros_like(np.asarray(history[0], dtype=np.float64))
    for weight, pose in zip(w, history[:k]):
        out += weight * pose
    return out


def smooth_sequence(poses: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """Apply ``smooth`` along a whole (T, J, 3) prediction sequence."""
    out = np.empty_like(np.asarray(poses, dtype=np.float64))
    history: list[np.ndarray] = []
    for t in range(len(poses)):
        history.insert(0, poses[t])
        if len(history) > len(cfg.weights):
            history.pop()
        out[t] = smooth(history, cfg)
    return out


def _mean_joint_error(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.linalg.norm(pred - target, axis=-1).mean())


@dataclass(frozen=True)
class CvReport:
    ridge_lambda: float
    smoothing: SmoothingConfig
    table: tuple  # ((lambda, smoothing window, decay, error), ...)


def default_lambda_grid() -> np.ndarray:
    return np.logspace(-4, 3, 8)


def default_smoothing_grid() -> list[SmoothingConfig]:
    grid = [SmoothingConfig.identity()]
    for window in (2, 4, 8):
        for decay in (0.5, 0.75, 1.0):
            grid.append(SmoothingConfig.exponential(window, decay))
    return grid


def cross_validate(values: np.ndarray, presence: np.ndarray, targets: np.ndarray,
                   sequence_ids: np.ndarray | None,
                   lam_grid=None, smoothing_grid=None, folds: int = 4,
                   n_labels: int = 43) -> CvReport:
    """Joint k-fold selection of (lambda, smoothing weights).

    Folds split by sequence when sequence ids are given (frames of one
    sequence never straddle folds, and smoothing runs inside true
    sequences); otherwise by sample blocks, with smoothing fixed to
    identity. Ties prefer larger lambda, then smaller windows.
    """
    lam_grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid)
    if smoothing_grid is None:
        smoothing_grid = (default_smoothing_grid() if sequence_ids is not None
                          else [SmoothingConfig.identity()])
    n = len(values)
    if sequence_ids is not None:
        groups = np.unique(sequence_ids)
        if len(groups) < folds:
            raise InsufficientData(f"{len(groups)} sequences for {folds} folds")
        fold_of_group = {g: i % folds for i, g in enumerate(groups)}
        fold_ids = np.array([fold_of_group[g] for g in sequence_ids])
    else:
        if n < folds:
            raise InsufficientData(f"{n} samples for {folds} folds")
        fold_ids = np.arange(n) % folds

    j = targets.shape[1]
    errors = {(li, si): [] for li in range(len(lam_grid))
              for si in range(len(smoothing_grid))}
    for fold in range(folds):
        val = fold_ids == fold
        train = ~val
        for li, lam in enumerate(lam_grid):
            model = fit_regressor(values[train], presence[train], targets[train],
                                  float(lam), n_labels)
            preds = predict_rows(model, values[val], presence[val])
            tgt = targets[val]
            for si, cfg in enumerate(smoothing_grid):
                if cfg.window == 0 or sequence_ids is None:
                    smoothed = preds
                else:
                    smoothed = np.empty_like(preds)
                    for g in np.unique(sequence_ids[val]):
                        seq = sequence_ids[val] == g
                        smoothed[seq] = smooth_sequence(preds[seq], cfg)
                errors[(li, si)].append(_mean_joint_error(smoothed, tgt))

    table = []
    for (li, si), errs in errors.items():
        cfg = smoothing_grid[si]
        decay = cfg.weights[1] / cfg.weights[0] if cfg.window else 1.0
        table.append((float(lam_grid[li]), cfg.window, float(decay),
                      float(np.mean(errs))))
    # minimize error; ties break toward larger lambda, then smaller window
    best = min(errors, key=lambda key: (np.mean(errors[key]),
                                        -lam_grid[key[0]],
                                        smoothing_grid[key[1]].window))
    return CvReport(float(lam_grid[best[0]]), smoothing_grid[best[1]],
                    tuple(sorted(table)))
