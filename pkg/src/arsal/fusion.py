"""Benchmark constructions of an AR saliency map from a base predictor.

* Type I predicts on the superimposed image only.
* Type II mixes predictions on the AR and background images by the mixing value.
* Type III regresses the ground truth per pixel on all three predictions.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVR
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_grid, check_same_shape
from .core import MixingLevel, SaliencyDensity, atomic_write_text, normalize
from .salmodels import as_predictor

MAX_TRAIN_PIXELS = 100_000


def _unit_range(grid: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; constant maps are kept (clipped) rather than zeroed."""
    lo, hi = grid.min(), grid.max()
    if hi > lo:
        return (grid - lo) / (hi - lo)
    return np.clip(grid, 0.0, 1.0)


def _grid_of(x) -> np.ndarray:
    return check_grid(x.grid if isinstance(x, SaliencyDensity) else x)


def type1(model, image_s) -> SaliencyDensity:
    return normalize(as_predictor(model).predict(image_s), "min-max")


def type2_mix(s_ar, s_bg, alpha) -> np.ndarray:
    """alpha * s_ar + (1 - alpha) * s_bg on already-predicted maps."""
    a = float(alpha.alpha if isinstance(alpha, MixingLevel) else alpha)
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"mixing value must lie in [0, 1], got {a}")
    s_ar, s_bg = _grid_of(s_ar), _grid_of(s_bg)
    check_same_shape(s_ar, s_bg, names=("S(AR)", "S(BG)"))
    return a * _unit_range(s_ar) + (1.0 - a) * _unit_range(s_bg)


def type2(model, ar_padded, bg_view, alpha, normalize_output: bool = True) -> SaliencyDensity:
    predictor = as_predictor(model)
    mixed = type2_mix(predictor.predict(ar_padded), predictor.predict(bg_view), alpha)
    if not normalize_output:
        return SaliencyDensity(mixed)
    return normalize(mixed, "min-max")


def pixel_features(s_ar, s_bg, s_s) -> np.ndarray:
    """Stack three predicted maps into an (n_pixels, 3) feature matrix."""
    grids = [_grid_of(m) for m in (s_ar, s_bg, s_s)]
    check_same_shape(*grids, names=("S(AR)", "S(BG)", "S(S)"))
    return np.stack([g.ravel() for g in grids], axis=1)


class FusionRegressor(RegressorMixin, BaseEstimator):
    """Linear per-pixel regressor over (S(AR), S(BG), S(S)) features.

    ``method="svr"`` fits an epsilon-insensitive linear support vector
    regression; ``method="ridge"`` solves the closed-form ridge problem.
    Training pixels are subsampled to at most ``max_pixels``. The solver
    stops after ``max_iter`` passes; ``converged_`` records whether it met
    its tolerance first.
    """

    def __init__(
        self,
        method: str = "svr",
        epsilon: float = 0.01,
        C: float = 1.0,
        ridge_lambda: float = 1e-3,
        max_pixels: int = MAX_TRAIN_PIXELS,
        max_iter: int = 2000,
        random_state: int = 0,
    ):
        self.method = method
        self.epsilon = epsilon
        self.C = C
        self.ridge_lambda = ridge_lambda
        self.max_pixels = max_pixels
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 features per pixel, got {X.shape[1]}")
        if len(y) > self.max_pixels:
            rng = np.random.default_rng(self.random_state)
            idx = np.sort(rng.choice(len(y), size=self.max_pixels, replace=False))
            X, y = X[idx], y[idx]
        self.n_train_pixels_ = len(y)
        self.degenerate_ = bool(np.all(X.max(axis=0) == X.min(axis=0)))
        self.converged_ = True
        if self.degenerate_:
            self.coef_ = np.full(3, 1.0 / 3.0)
            self.intercept_ = 0.0
            return self
        if self.method == "svr":
            svr = LinearSVR(
                epsilon=self.epsilon,
                C=self.C,
                loss="epsilon_insensitive",
                fit_intercept=True,
                intercept_scaling=10.0,
                dual=True,
                max_iter=self.max_iter,
                tol=1e-5,
                random_state=self.random_state,
            )
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                svr.fit(X, y)
            self.converged_ = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
            self.coef_ = np.asarray(svr.coef_, dtype=np.float64).ravel()
            self.intercept_ = float(np.ravel(svr.intercept_)[0])
        elif self.method == "ridge":
            self.coef_, self.intercept_ = ridge_solve(X, y, self.ridge_lambda)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "weights": [float(w) for w in self.coef_],
            "bias": float(self.intercept_),
            "config": self.get_params(),
            "degenerate": self.degenerate_,
            "n_train_pixels": int(self.n_train_pixels_),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FusionRegressor":
        reg = cls(**data.get("config", {}))
        reg.coef_ = np.asarray(data["weights"], dtype=np.float64)
        reg.intercept_ = float(data["bias"])
        reg.degenerate_ = bool(data.get("degenerate", False))
        reg.n_train_pixels_ = int(data.get("n_train_pixels", 0))
        return reg

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "FusionRegressor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def ridge_solve(X: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Ridge regression with an unpenalized intercept (closed form)."""
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    w = np.linalg.solve(A, Xc.T @ yc)
    return w, float(y_mean - x_mean @ w)


def type3_train(features, targets, cfg: dict | None = None) -> FusionRegressor:
    """Fit the per-pixel regressor.

    ``features`` is either an (n, 3) matrix or a sequence of map triples
    ``(S(AR), S(BG), S(S))``; ``targets`` matches as a vector or a sequence
    of ground-truth maps (densities are min-max scaled first).
    """
    if isinstance(features, np.ndarray) and features.ndim == 2:
        X = features
        y = np.asarray(targets, dtype=np.float64).ravel()
    else:
        X = np.concatenate([pixel_features(*triple) for triple in features])
        y = np.concatenate([_unit_range(_grid_of(t)).ravel() for t in targets])
    return FusionRegressor(**(cfg or {})).fit(X, y)


def type3_predict(reg: FusionRegressor, s_ar, s_bg, s_s) -> SaliencyDensity:
    """Regressed map, clamped at zero then min-max scaled."""
    shape = _grid_of(s_s).shape
    pred = reg.predict(pixel_features(s_ar, s_bg, s_s)).reshape(shape)
    pred = np.maximum(pred, 0.0)
    out = normalize(pred, "min-max")
    if "constant" in out.flags:
        return SaliencyDensity(out.grid, "min-max", out.flags | {"degenerate"})
    return out


@dataclass(frozen=True)
class FusionInputs:
    """The three images and mixing value describing one AR scenario."""

    ar_padded: object
    bg_view: object
    superimposed: object
    alpha: float


class ARSaliencyFusion(BaseEstimator):
    """Estimator wrapper over the three benchmark types.

    ``fit`` only does work for ``fusion_type=3``; it takes a sequence of
    :class:`FusionInputs` and matching ground-truth maps.
    """

    def __init__(self, model="SR", fusion_type: int = 1, regressor_params: dict | None = None):
        self.model = model
        self.fusion_type = fusion_type
        self.regressor_params = regressor_params

    def _maps(self, item: FusionInputs):
        p = as_predictor(self.model)
        return p.predict(item.ar_padded), p.predict(item.bg_view), p.predict(item.superimposed)

    def fit(self, X: Sequence[FusionInputs], y=None):
        if self.fusion_type not in (1, 2, 3):
            raise ValueError(f"fusion_type must be 1, 2 or 3, got {self.fusion_type}")
        if self.fusion_type == 3:
            if y is None:
                raise ValueError("type 3 fusion needs ground-truth maps")
            self.regressor_ = type3_train([self._maps(item) for item in X], y, self.regressor_params)
        return self

    def predict_one(self, item: FusionInputs) -> SaliencyDensity:
        if self.fusion_type == 1:
            return type1(self.model, item.superimposed)
        if self.fusion_type == 2:
            return type2(self.model, item.ar_padded, item.bg_view, item.alpha)
        check_is_fitted(self, "regressor_")
        return type3_predict(self.regressor_, *self._maps(item))

    def predict(self, X: Sequence[FusionInputs]) -> list[SaliencyDensity]:
        return [self.predict_one(item) for item in X]
