"""Saliency evaluation metrics: AUC (Judd), shuffled AUC, CC, NSS, SIM, KL
and information gain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._validation import check_fixation_map, check_grid, check_same_shape
from .core import FixationMap

EPS = 1e-7
METRIC_NAMES = ("AUC", "sAUC", "CC", "NSS", "SIM", "KL", "IG")


def _sum_to_one(g: np.ndarray, name: str) -> np.ndarray:
    if g.min() < 0:
        raise ValueError(f"{name} must be nonnegative to be treated as a distribution")
    total = g.sum()
    if total <= 0:
        raise ValueError(f"{name} has zero mass")
    return g / total


def cc(a, b) -> float:
    """Pearson correlation of two maps; 0 when either map is constant."""
    a = check_grid(a, "a")
    b = check_grid(b, "b")
    check_same_shape(a, b, names=("a", "b"))
    if np.array_equal(a, b):
        return 0.0 if a.max() == a.min() else 1.0
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float((da * da).sum()))
    sb = math.sqrt(float((db * db).sum()))
    if sa == 0.0 or sb == 0.0:
        return 0.0
    r = float((da * db).sum()) / (sa * sb)
    return max(-1.0, min(1.0, r))


def nss(pred, fm) -> float:
    """Mean z-scored prediction at fixations, weighted by fixation count."""
    p = check_grid(pred, "pred")
    fm = check_fixation_map(fm, p.shape)
    if fm.count == 0:
        raise ValueError("NSS needs at least one fixation")
    std = p.std()
    if std == 0.0:
        return 0.0
    z = (p - p.mean()) / std
    counts = fm.grid
    return float((z * counts).sum() / counts.sum())


def sim(a, b) -> float:
    """Histogram intersection of the two maps as unit-mass distributions."""
    a = _sum_to_one(check_grid(a, "a"), "a")
    b = _sum_to_one(check_grid(b, "b"), "b")
    check_same_shape(a, b, names=("a", "b"))
    return float(np.minimum(a, b).sum())


def kl(pred, gt) -> float:
    """KL(gt || pred) over unit-mass maps, ``EPS`` regularizing pred."""
    p = _sum_to_one(check_grid(pred, "pred"), "pred")
    g = _sum_to_one(check_grid(gt, "gt"), "gt")
    check_same_shape(p, g, names=("pred", "gt"))
    mask = g > 0
    return float((g[mask] * np.log(g[mask] / (p[mask] + EPS))).sum())


def _roc_area(pos_values: np.ndarray, pos_weights: np.ndarray, neg_values: np.ndarray) -> float:
    """Area under the ROC curve swept at the distinct positive values.

    TPR is weighted by ``pos_weights``; the curve is anchored at (0, 0) and
    (1, 1) and integrated with the trapezoid rule.
    """
    thresholds = np.unique(pos_values)[::-1]
    pos_sorted = np.sort(pos_values)
    order = np.argsort(pos_values)
    w_sorted = pos_weights[order]
    w_cum = np.concatenate([[0.0], np.cumsum(w_sorted)])
    w_total = w_cum[-1]
    neg_sorted = np.sort(neg_values)
    n_neg = len(neg_sorted)
    # counts of entries >= threshold via searchsorted on the ascending arrays
    tp_idx = np.searchsorted(pos_sorted, thresholds, side="left")
    tpr = (w_total - w_cum[tp_idx]) / w_total
    fpr = (n_neg - np.searchsorted(neg_sorted, thresholds, side="left")) / n_neg
    x = np.concatenate([[0.0], fpr, [1.0]])
    y = np.concatenate([[0.0], tpr, [1.0]])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def auc_judd(pred, fm) -> float:
    """Judd AUC: positives are fixations (with multiplicity), negatives are
    the non-fixated pixels."""
    p = check_grid(pred, "pred")
    fm = check_fixation_map(fm, p.shape)
    if fm.count == 0:
        raise ValueError("AUC needs at least one fixation")
    fixated = fm.grid > 0
    if fixated.all():
        raise ValueError("AUC undefined: every pixel is fixated")
    return _roc_area(p[fixated], fm.grid[fixated].astype(np.float64), p[~fixated])


def sample_negatives(
    negatives, count: int, shape: tuple[int, int], seed: int = 0
) -> np.ndarray:
    """Draw ``count`` (x, y) locations from a pool of other images' fixations.

    ``negatives`` is a FixationMap, a sequence of FixationMaps, or an (n, 2)
    array of (x, y) pixels. Draws are without replacement when the pool is
    large enough.
    """
    if isinstance(negatives, FixationMap):
        pool = list(negatives.fixation_list)
    elif isinstance(negatives, np.ndarray) and negatives.ndim == 2 and negatives.shape[1] == 2:
        pool = [tuple(map(int, row)) for row in negatives]
    else:
        pool = []
        for m in negatives:
            pool.extend(check_fixation_map(m, shape).fixation_list)
    if not pool:
        raise ValueError("negative fixation pool is empty")
    pool_arr = np.asarray(sorted(pool), dtype=np.int64)
    rng = np.random.default_rng(seed)
    replace = len(pool_arr) < count
    idx = rng.choice(len(pool_arr), size=count, replace=replace)
    return pool_arr[idx]


def sauc(pred, fm, negatives, seed: int = 0) -> float:
    """Shuffled AUC: like :func:`auc_judd` but negatives are other images'
    fixation locations, as many as there are positive fixations."""
    p = check_grid(pred, "pred")
    fm = check_fixation_map(fm, p.shape)
    if fm.count == 0:
        raise ValueError("sAUC needs at least one fixation")
    pos = np.asarray(fm.fixation_list, dtype=np.int64)
    neg = sample_negatives(negatives, len(pos), p.shape, seed)
    return _roc_area(p[pos[:, 1], pos[:, 0]], np.ones(len(pos)), p[neg[:, 1], neg[:, 0]])


def center_prior(shape: tuple[int, int], sigma: float | None = None) -> np.ndarray:
    """Isotropic Gaussian at the image centre, sigma = W / 4 by default."""
    h, w = shape
    sigma = w / 4.0 if sigma is None else sigma
    ys = np.arange(h) - (h - 1) / 2.0
    xs = np.arange(w) - (w - 1) / 2.0
    g = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def ig(pred, baseline, fm) -> float:
    """Information gain of pred over baseline, in bits per fixation."""
    p = _sum_to_one(check_grid(pred, "pred"), "pred")
    if baseline is None:
        baseline = center_prior(p.shape)
    b = _sum_to_one(check_grid(baseline, "baseline"), "baseline")
    check_same_shape(p, b, names=("pred", "baseline"))
    fm = check_fixation_map(fm, p.shape)
    if fm.count == 0:
        raise ValueError("IG needs at least one fixation")
    gain = np.log2(p + EPS) - np.log2(b + EPS)
    counts = fm.grid
    return float((gain * counts).sum() / counts.sum())


@dataclass
class MetricReport:
    scenario_id: str
    model_id: str
    values: dict = field(default_factory=dict)
    fold_id: int | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        tol = 1e-9
        bounds = {"CC": (-1, 1), "AUC": (0, 1), "sAUC": (0, 1), "SIM": (0, 1)}
        for name, (lo, hi) in bounds.items():
            v = self.values.get(name)
            if v is not None and not math.isnan(v) and not (lo - tol <= v <= hi + tol):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def row(self) -> dict:
        out = {"scenario_id": self.scenario_id, "model_id": self.model_id, "fold_id": self.fold_id}
        for name in METRIC_NAMES:
            out[name] = self.values.get(name, float("nan"))
        return out


def evaluate_all(
    pred,
    gt_density,
    fm,
    negatives=None,
    baseline=None,
    scenario_id: str = "",
    model_id: str = "",
    fold_id: int | None = None,
    seed: int = 0,
) -> MetricReport:
    """All seven metrics for one prediction. Degenerate inputs produce NaN
    values with a reason in ``flags`` instead of raising."""
    calls = {
        "AUC": lambda: auc_judd(pred, fm),
        "sAUC": lambda: sauc(pred, fm, negatives, seed=seed),
        "CC": lambda: cc(pred, gt_density),
        "NSS": lambda: nss(pred, fm),
        "SIM": lambda: sim(pred, gt_density),
        "KL": lambda: kl(pred, gt_density),
        "IG": lambda: ig(pred, baseline, fm),
    }
    values, flags = {}, {}
    for name, fn in calls.items():
        if name == "sAUC" and negatives is None:
            values[name] = float("nan")
            flags[name] = "no negative pool"
            continue
        try:
            values[name] = fn()
        except ValueError as exc:
            values[name] = float("nan")
            flags[name] = str(exc)
    return MetricReport(scenario_id, model_id, values, fold_id, flags)


def summarize(reports: Sequence[MetricReport]) -> Mapping[str, dict]:
    """Mean and population std of each metric, ignoring NaN entries."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([r.values.get(name, np.nan) for r in reports], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        out[name] = {
            "mean": float(vals.mean()) if len(vals) else float("nan"),
            "std": float(vals.std()) if len(vals) else float("nan"),
            "n": int(len(vals)),
        }
    return out
