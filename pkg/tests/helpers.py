"""Shared constructions and brute-force oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np

EPS = 1e-7


# -- pop-out fixtures ---------------------------------------------------------
# Each returns (rgb image, boolean target mask).


def bright_patch(size: int = 64, top: int = 20, left: int = 36, side: int = 4):
    img = np.zeros((size, size, 3))
    img[top : top + side, left : left + side] = 1.0
    mask = np.zeros((size, size), bool)
    mask[top : top + side, left : left + side] = True
    return img, mask


def red_on_green(size: int = 64, top: int = 36, left: int = 18, side: int = 8):
    img = np.zeros((size, size, 3))
    img[:, :, 1] = 1.0
    img[top : top + side, left : left + side] = (1.0, 0.0, 0.0)
    mask = np.zeros((size, size), bool)
    mask[top : top + side, left : left + side] = True
    return img, mask


def odd_bar(size: int = 64, cell: int = 16, odd=(1, 2), length: int = 10):
    """Grid of horizontal bars with one vertical bar."""
    img = np.zeros((size, size, 3))
    mask = np.zeros((size, size), bool)
    half = length // 2
    for r in range(size // cell):
        for c in range(size // cell):
            cy, cx = r * cell + cell // 2, c * cell + cell // 2
            if (r, c) == odd:
                img[cy - half : cy + half, cx - 1 : cx + 1] = 1.0
                mask[r * cell : (r + 1) * cell, c * cell : (c + 1) * cell] = True
            else:
                img[cy - 1 : cy + 1, cx - half : cx + half] = 1.0
    return img, mask


def argmax_in(grid, mask) -> bool:
    y, x = np.unravel_index(int(np.argmax(grid)), np.shape(grid))
    return bool(mask[y, x])


# -- metric oracles -------------------------------------------------------------
# Plain loops over pixels, written without reference to the package code.


def _cells(g):
    h, w = len(g), len(g[0])
    return [(i, j) for i in range(h) for j in range(w)]


def _to_unit(g):
    total = 0.0
    for i, j in _cells(g):
        total += g[i][j]
    return [[g[i][j] / total for j in range(len(g[0]))] for i in range(len(g))]


def cc_oracle(a, b) -> float:
    cells = _cells(a)
    n = len(cells)
    ma = sum(a[i][j] for i, j in cells) / n
    mb = sum(b[i][j] for i, j in cells) / n
    sab = saa = sbb = 0.0
    for i, j in cells:
        sab += (a[i][j] - ma) * (b[i][j] - mb)
        saa += (a[i][j] - ma) ** 2
        sbb += (b[i][j] - mb) ** 2
    if saa == 0 or sbb == 0:
        return 0.0
    return sab / math.sqrt(saa * sbb)


def nss_oracle(pred, points) -> float:
    cells = _cells(pred)
    n = len(cells)
    m = sum(pred[i][j] for i, j in cells) / n
    sd = math.sqrt(sum((pred[i][j] - m) ** 2 for i, j in cells) / n)
    if sd == 0:
        return 0.0
    return sum((pred[y][x] - m) / sd for x, y in points) / len(points)


def sim_oracle(a, b) -> float:
    a, b = _to_unit(a), _to_unit(b)
    return sum(min(a[i][j], b[i][j]) for i, j in _cells(a))


def kl_oracle(pred, gt) -> float:
    p, g = _to_unit(pred), _to_unit(gt)
    total = 0.0
    for i, j in _cells(g):
        if g[i][j] > 0:
            total += g[i][j] * math.log(g[i][j] / (p[i][j] + EPS))
    return total


def _roc_by_thresholds(pos, neg) -> float:
    """Trapezoid area of the ROC swept at every distinct positive value."""
    pts = [(0.0, 0.0)]
    for thr in sorted(set(pos), reverse=True):
        tpr = sum(1 for v in pos if v >= thr) / len(pos)
        fpr = sum(1 for v in neg if v >= thr) / len(neg)
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def auc_judd_oracle(pred, points) -> float:
    fixated = set(points)
    pos = [pred[y][x] for x, y in points]
    neg = [pred[i][j] for i, j in _cells(pred) if (j, i) not in fixated]
    return _roc_by_thresholds(pos, neg)


def sauc_oracle(pred, points, neg_points) -> float:
    pos = [pred[y][x] for x, y in points]
    neg = [pred[y][x] for x, y in neg_points]
    return _roc_by_thresholds(pos, neg)


def ig_oracle(pred, baseline, points) -> float:
    p, b = _to_unit(pred), _to_unit(baseline)
    total = 0.0
    for x, y in points:
        total += math.log2(p[y][x] + EPS) - math.log2(b[y][x] + EPS)
    return total / len(points)


def random_metric_instance(rng, size: int = 16):
    """Random prediction (with ties), ground truth, fixations, negatives and
    baseline on a size x size grid."""
    pred = rng.random((size, size))
    if rng.random() < 0.5:
        pred = np.round(pred, 1)  # introduce ties
    pred[rng.integers(size), rng.integers(size)] += 0.05
    gt = rng.random((size, size)) ** 3
    n_fix = int(rng.integers(1, 12))
    points = [(int(rng.integers(size)), int(rng.integers(size))) for _ in range(n_fix)]
    neg_points = [(int(rng.integers(size)), int(rng.integers(size))) for _ in range(n_fix)]
    baseline = rng.random((size, size)) + 0.01
    return pred, gt, points, neg_points, baseline


# -- gaze traces ----------------------------------------------------------------


def spread_targets(rng, n: int, min_sep: float = 12.0, lat_span: float = 30.0, lon_span: float = 60.0):
    """n dwell targets, consecutive ones at least ``min_sep`` degrees apart."""
    out = []
    while len(out) < n:
        t = (float(rng.uniform(-lat_span, lat_span)), float(rng.uniform(-lon_span, lon_span)))
        if not out or math.hypot(t[0] - out[-1][0], t[1] - out[-1][1]) >= min_sep:
            out.append(t)
    return out


def synthetic_manifest(pairs_per_category: int = 150, levels=(0.25, 0.5, 0.75)):
    from arsal.core import AR_CATEGORIES, ScenarioRecord

    out = []
    for cat in AR_CATEGORIES:
        for i in range(pairs_per_category):
            pid = f"{cat}-{i:03d}"
            for a in levels:
                out.append(ScenarioRecord(f"{pid}@{a}", cat, a, pair_id=pid))
    return out
