"""Dataset analysis and the cross-validated benchmark protocol."""

from __future__ import annotations

import csv
import io
import json
import threading
import warnings
import zlib
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from ._validation import check_grid
from .core import AR_CATEGORIES, FixationMap, SaliencyDensity, ScenarioRecord, ViewportSpec, atomic_write_text, normalize
from .fusion import FusionInputs, type2_mix, type3_predict, type3_train
from .gazeproc import density_from_fixations
from .metrics import METRIC_NAMES, cc, evaluate_all, sim, summarize
from .salmodels import as_predictor

# -- subject consistency ------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyPoint:
    n: int
    mean_cc: float
    std_cc: float
    samples: int


def _blurred_counts(fm, sigma_px: float) -> np.ndarray:
    grid = check_grid(fm.grid if isinstance(fm, FixationMap) else fm)
    return ndimage.gaussian_filter(grid, sigma_px, mode="constant", truncate=4.0)


def subject_consistency_curve(
    per_subject_fixations: Mapping[str, Sequence],
    group_sizes: Iterable[int],
    trials: int = 100,
    seed: int = 0,
    spec: ViewportSpec | None = None,
    sigma_px: float | None = None,
) -> list[ConsistencyPoint]:
    """CC between random subject subgroups and the all-subject density.

    ``per_subject_fixations`` maps scenario ids to one FixationMap (or count
    grid) per subject. Subgroups of each size are drawn without replacement.
    With ``spec`` the densities use the ground-truth Gaussian of the gaze
    pipeline; otherwise a Gaussian of ``sigma_px`` (default width / 32).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    per_scenario = {}
    for sid in sorted(per_subject_fixations):
        maps = list(per_subject_fixations[sid])
        if len(maps) < 2:
            raise ValueError(f"scenario {sid!r} has {len(maps)} subject(s); at least 2 are needed")
        if spec is not None:
            blurred = [_unnormalized_gt(m, spec) for m in maps]
        else:
            shape = np.shape(maps[0].grid if isinstance(maps[0], FixationMap) else maps[0])
            sigma = sigma_px if sigma_px is not None else max(1.0, shape[1] / 32.0)
            blurred = [_blurred_counts(m, sigma) for m in maps]
        per_scenario[sid] = np.stack(blurred)
    curve = []
    for n in group_sizes:
        values = []
        for sid, stack in per_scenario.items():
            n_subj = len(stack)
            if n > n_subj or n < 1:
                warnings.warn(f"group size {n} skipped for scenario {sid!r} ({n_subj} subjects)", RuntimeWarning, stacklevel=2)
                continue
            overall = _unit_mass(stack.sum(axis=0))
            for _ in range(trials):
                idx = np.sort(rng.choice(n_subj, size=n, replace=False))
                values.append(cc(_unit_mass(stack[idx].sum(axis=0)), overall))
        if values:
            arr = np.asarray(values)
            curve.append(ConsistencyPoint(int(n), float(arr.mean()), float(arr.std()), len(arr)))
    return curve


def _unnormalized_gt(fm, spec: ViewportSpec) -> np.ndarray:
    fm = fm if isinstance(fm, FixationMap) else FixationMap.from_grid(np.asarray(fm))
    d = density_from_fixations(fm, spec)
    return d.grid * fm.count


def _unit_mass(grid: np.ndarray) -> np.ndarray:
    return normalize(grid, "sum-to-one").grid


def write_curve(path, curve: Sequence[ConsistencyPoint]) -> None:
    """Whitespace-separated columns (n, mean, std, samples), plottable as is."""
    lines = ["# n mean_cc std_cc samples"]
    lines += [f"{p.n} {p.mean_cc!r} {p.std_cc!r} {p.samples}" for p in curve]
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- cross-mixing correlation ---------------------------------------------------

LEVEL_PAIRS = (("m1", "m2"), ("m2", "m3"), ("m1", "m3"))


@dataclass
class CrossMixingResult:
    rows: list  # (pair_id, category, pair_label, cc, sim)
    summary: dict  # group -> pair_label -> metric -> {mean, std, n}

    def mean_cc(self, pair_label: str, group: str = "overall") -> float:
        return self.summary[group][pair_label]["CC"]["mean"]


def cross_mixing_correlation(
    maps_by_level: Mapping[str, Mapping[float, object]],
    categories: Mapping[str, str] | None = None,
) -> CrossMixingResult:
    """Pairwise CC and SIM between the three mixing levels of each pair.

    ``maps_by_level`` maps a pair id to {alpha: density}; the three alphas
    are ranked ascending into m1, m2, m3. Results are averaged per AR
    category and overall.
    """
    rows = []
    for pid in sorted(maps_by_level):
        levels = maps_by_level[pid]
        if len(levels) != 3:
            raise ValueError(f"pair {pid!r} has {len(levels)} mixing levels; expected 3")
        ranked = dict(zip(("m1", "m2", "m3"), (check_grid(levels[a]) for a in sorted(levels))))
        category = (categories or {}).get(pid, "uncategorized")
        for a, b in LEVEL_PAIRS:
            rows.append((pid, category, f"{a}&{b}", cc(ranked[a], ranked[b]), sim(ranked[a], ranked[b])))
    groups = defaultdict(list)
    for row in rows:
        groups[row[1]].append(row)
        groups["overall"].append(row)
    summary = {}
    for group in sorted(groups):
        summary[group] = {}
        for a, b in LEVEL_PAIRS:
            label = f"{a}&{b}"
            sel = [r for r in groups[group] if r[2] == label]
            summary[group][label] = {
                name: {
                    "mean": float(np.mean([r[k] for r in sel])),
                    "std": float(np.std([r[k] for r in sel])),
                    "n": len(sel),
                }
                for name, k in (("CC", 3), ("SIM", 4))
            }
    return CrossMixingResult(rows, summary)


# -- cross-validation splits ------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    fold_id: int
    pair_ids: tuple
    scenario_ids: tuple
    category_counts: dict = field(hash=False)


def make_cv_splits(scenarios: Sequence[ScenarioRecord], k: int = 5, seed: int = 0) -> list[Fold]:
    """Group-aware, category-balanced k-fold split.

    All mixing variants of one AR/BG pair share a fold. Pairs of each
    category are shuffled and dealt round-robin, the dealing position
    carrying over from one category to the next, so per-fold category
    counts and per-fold totals each differ by at most one.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    pair_category: dict[str, str] = {}
    pair_scenarios: dict[str, list[str]] = defaultdict(list)
    seen = set()
    for rec in scenarios:
        if rec.scenario_id in seen:
            raise ValueError(f"duplicate scenario_id {rec.scenario_id!r}")
        seen.add(rec.scenario_id)
        prev = pair_category.setdefault(rec.pair_id, rec.ar_category)
        if prev != rec.ar_category:
            raise ValueError(f"pair {rec.pair_id!r} appears under categories {prev!r} and {rec.ar_category!r}")
        pair_scenarios[rec.pair_id].append(rec.scenario_id)
    if k > len(pair_category):
        raise ValueError(f"k={k} exceeds the number of scenario pairs ({len(pair_category)})")
    rng = np.random.default_rng(seed)
    assignment: dict[int, list[str]] = {f: [] for f in range(k)}
    pointer = 0
    for category in sorted(set(pair_category.values())):
        pids = sorted(p for p, c in pair_category.items() if c == category)
        for i in rng.permutation(len(pids)):
            assignment[pointer % k].append(pids[i])
            pointer += 1
    folds = []
    for f in range(k):
        pids = tuple(sorted(assignment[f]))
        counts = defaultdict(int)
        for p in pids:
            counts[pair_category[p]] += 1
        sids = tuple(sorted(s for p in pids for s in pair_scenarios[p]))
        folds.append(Fold(f, pids, sids, dict(sorted(counts.items()))))
    return folds


def write_splits(path, folds: Sequence[Fold], scenarios: Sequence[ScenarioRecord]) -> None:
    by_id = {r.scenario_id: r for r in scenarios}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "pair_id", "category", "alpha", "fold"])
    for fold in folds:
        for sid in fold.scenario_ids:
            r = by_id[sid]
            w.writerow([sid, r.pair_id, r.ar_category, repr(r.alpha), fold.fold_id])
    atomic_write_text(path, buf.getvalue())


# -- leakage audit ----------------------------------------------------------------


class AuditLog:
    """Append-only record of which scenarios trained each learned component.

    Appends are serialized with a lock; with ``path`` each entry is also
    appended to a JSON-lines file.
    """

    def __init__(self, path=None):
        self._entries: list[dict] = []
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None

    def record(self, component: str, fold_id: int, train_ids: Iterable[str], test_ids: Iterable[str], n_pixels: int = 0):
        entry = {
            "component": component,
            "fold_id": int(fold_id),
            "train_scenario_ids": sorted(train_ids),
            "test_scenario_ids": sorted(test_ids),
            "n_train_pixels": int(n_pixels),
        }
        with self._lock:
            self._entries.append(entry)
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")

    @property
    def entries(self) -> tuple:
        with self._lock:
            return tuple(self._entries)


@dataclass(frozen=True)
class LeakageReport:
    intersections: dict  # (component, fold_id) -> sorted shared scenario ids

    @property
    def ok(self) -> bool:
        return not any(self.intersections.values())


def audit_leakage(log: AuditLog | Sequence[dict]) -> LeakageReport:
    """Intersect training and test scenario ids for every logged component."""
    entries = log.entries if isinstance(log, AuditLog) else log
    out = {}
    for e in entries:
        shared = sorted(set(e["train_scenario_ids"]) & set(e["test_scenario_ids"]))
        out[(e["component"], e["fold_id"])] = shared
    return LeakageReport(out)


def audit_folds(folds: Sequence[Fold]) -> LeakageReport:
    """Leakage report for plain k-fold use: train on all other folds."""
    log = AuditLog()
    for f in folds:
        train = [s for g in folds if g.fold_id != f.fold_id for s in g.scenario_ids]
        log.record("split", f.fold_id, train, f.scenario_ids)
    return audit_leakage(log)


# -- benchmark -------------------------------------------------------------------


@dataclass
class BenchmarkScenario:
    record: ScenarioRecord
    inputs: FusionInputs
    density: SaliencyDensity
    fixations: FixationMap


def _scenario_seed(seed: int, scenario_id: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(scenario_id.encode("utf-8"))) % (2**32)


def _predict_all(model_id: str, items: Sequence[BenchmarkScenario], jobs: int):
    predictor = as_predictor(model_id)

    def run(item):
        x = item.inputs
        return (predictor.predict(x.ar_padded), predictor.predict(x.bg_view), predictor.predict(x.superimposed))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            maps = list(pool.map(run, items))
    else:
        maps = [run(i) for i in items]
    return {item.record.scenario_id: m for item, m in zip(items, maps)}


@dataclass
class BenchmarkResult:
    rows: list
    aggregate: dict
    audit: AuditLog


def run_benchmark(
    items: Sequence[BenchmarkScenario],
    models: Sequence[str],
    types: Sequence[int] = (1, 2, 3),
    folds: Sequence[Fold] | None = None,
    k: int = 5,
    seed: int = 0,
    jobs: int = 1,
    regressor_params: dict | None = None,
    extra_models: Mapping[str, Callable] | None = None,
    audit: AuditLog | None = None,
) -> BenchmarkResult:
    """k-fold benchmark of fusion types over classical models.

    Learned parts (Type III regressors and any ``extra_models`` factories,
    which receive the training items and return a callable item ->
    density) are fit on the other folds only. sAUC negatives come from the
    other scenarios of the same fold and mixing level.
    """
    items = sorted(items, key=lambda it: it.record.scenario_id)
    by_id = {it.record.scenario_id: it for it in items}
    if folds is None:
        folds = make_cv_splits([it.record for it in items], k=k, seed=seed)
    audit = audit or AuditLog()
    maps = {m: _predict_all(m, items, jobs) for m in models}
    fold_of = {sid: f.fold_id for f in folds for sid in f.scenario_ids}
    missing = set(by_id) - set(fold_of)
    if missing:
        raise ValueError(f"scenarios not covered by the folds: {sorted(missing)[:5]}")

    rows = []
    for fold in folds:
        test_ids = list(fold.scenario_ids)
        train_ids = sorted(s for s in by_id if fold_of[s] != fold.fold_id)
        predictors: dict[tuple[str, str], Callable] = {}
        for m in models:
            for t in types:
                if t == 3:
                    reg = type3_train(
                        [maps[m][s] for s in train_ids], [by_id[s].density for s in train_ids], regressor_params
                    )
                    audit.record(f"type3:{m}", fold.fold_id, train_ids, test_ids, reg.n_train_pixels_)
                    predictors[(m, "III")] = lambda it, m=m, reg=reg: type3_predict(reg, *maps[m][it.record.scenario_id])
                elif t == 2:
                    predictors[(m, "II")] = lambda it, m=m: _type2_from_maps(maps[m][it.record.scenario_id], it.inputs.alpha)
                elif t == 1:
                    predictors[(m, "I")] = lambda it, m=m: normalize(maps[m][it.record.scenario_id][2], "min-max")
                else:
                    raise ValueError(f"unknown fusion type {t}")
        for name, factory in sorted((extra_models or {}).items()):
            predictors[(name, "learned")] = factory([by_id[s] for s in train_ids])
            audit.record(name, fold.fold_id, train_ids, test_ids)

        for sid in test_ids:
            item = by_id[sid]
            pool = [
                by_id[o].fixations
                for o in test_ids
                if o != sid and by_id[o].record.alpha == item.record.alpha and by_id[o].fixations.count > 0
            ]
            for (model_id, type_id), fn in predictors.items():
                pred = fn(item)
                report = evaluate_all(
                    pred.grid if isinstance(pred, SaliencyDensity) else pred,
                    item.density,
                    item.fixations,
                    negatives=pool or None,
                    scenario_id=sid,
                    model_id=model_id,
                    fold_id=fold.fold_id,
                    seed=_scenario_seed(seed, sid),
                )
                row = {
                    "scenario_id": sid,
                    "pair_id": item.record.pair_id,
                    "category": item.record.ar_category,
                    "alpha": item.record.alpha,
                    "model": model_id,
                    "type": type_id,
                    "fold": fold.fold_id,
                }
                row.update({n: report.values.get(n, float("nan")) for n in METRIC_NAMES})
                rows.append(row)
    rows.sort(key=lambda r: (r["model"], r["type"], r["scenario_id"]))
    return BenchmarkResult(rows, aggregate_rows(rows), audit)


def _type2_from_maps(triple, alpha) -> SaliencyDensity:
    return normalize(type2_mix(triple[0], triple[1], alpha), "min-max")


class _Report:
    def __init__(self, values):
        self.values = values


def aggregate_rows(rows: Sequence[dict]) -> dict:
    """Mean/std per (model, type): overall, per category, per mixing level."""
    out: dict = {}
    groups = defaultdict(list)
    for r in rows:
        groups[(r["model"], r["type"])].append(r)
    for (model, type_id), sel in sorted(groups.items()):
        key = f"{model}/{type_id}"
        entry = {"overall": summarize([_Report(r) for r in sel]), "by_category": {}, "by_alpha": {}}
        for cat in sorted({r["category"] for r in sel}):
            entry["by_category"][cat] = summarize([_Report(r) for r in sel if r["category"] == cat])
        for a in sorted({r["alpha"] for r in sel}):
            entry["by_alpha"][repr(a)] = summarize([_Report(r) for r in sel if r["alpha"] == a])
        out[key] = entry
    return out


RESULT_COLUMNS = ("scenario_id", "pair_id", "category", "alpha", "model", "type", "fold") + METRIC_NAMES


def results_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(result: BenchmarkResult, csv_path, json_path=None, header: dict | None = None) -> None:
    atomic_write_text(csv_path, results_csv(result.rows))
    if json_path is not None:
        payload = {"aggregate": result.aggregate, "leakage_free": audit_leakage(result.audit).ok}
        if header:
            payload["reproducibility"] = header
        atomic_write_text(json_path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=True))


def categories_in(scenarios: Iterable[ScenarioRecord]) -> tuple:
    present = {s.ar_category for s in scenarios}
    return tuple(c for c in AR_CATEGORIES if c in present)
