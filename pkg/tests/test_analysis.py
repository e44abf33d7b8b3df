import json
import threading
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arsal.analysis import (
    AuditLog,
    BenchmarkScenario,
    audit_folds,
    audit_leakage,
    cross_mixing_correlation,
    make_cv_splits,
    results_csv,
    run_benchmark,
    subject_consistency_curve,
    write_curve,
    write_splits,
)
from arsal.compositor import composite
from arsal.core import AR_CATEGORIES, FixationMap, ScenarioRecord, ViewportImage, ViewportSpec
from arsal.fusion import FusionInputs
from arsal.gazeproc import density_from_fixations
from helpers import bright_patch, synthetic_manifest


def _subject_maps(rng, n_subjects=5, shape=(20, 24), per=4):
    return [
        FixationMap.from_points(
            [(int(rng.integers(shape[1])), int(rng.integers(shape[0]))) for _ in range(per)], shape
        )
        for _ in range(n_subjects)
    ]


def test_consistency_full_group_is_exactly_one(rng):
    data = {"a": _subject_maps(rng), "b": _subject_maps(rng)}
    curve = subject_consistency_curve(data, [1, 2, 5], trials=10)
    assert [p.n for p in curve] == [1, 2, 5]
    assert curve[-1].mean_cc == 1.0 and curve[-1].std_cc == 0.0
    assert curve[0].mean_cc < curve[1].mean_cc < 1.0


def test_consistency_identical_subjects(rng):
    (m,) = _subject_maps(rng, 1)
    (p,) = subject_consistency_curve({"s": [m, m]}, [1], trials=5)
    assert p.mean_cc == 1.0


def test_consistency_skips_oversized_groups(rng):
    with pytest.warns(RuntimeWarning):
        curve = subject_consistency_curve({"s": _subject_maps(rng, 3)}, [2, 7], trials=3)
    assert [p.n for p in curve] == [2]
    with pytest.raises(ValueError):
        subject_consistency_curve({"s": _subject_maps(rng, 1)}, [1])


def test_consistency_with_viewport_gaussian(rng, tmp_path):
    spec = ViewportSpec(width_px=24, height_px=20, fov_h_deg=110.0)
    curve = subject_consistency_curve({"s": _subject_maps(rng)}, [1, 5], trials=4, spec=spec)
    assert curve[-1].mean_cc == 1.0
    write_curve(tmp_path / "c.dat", curve)
    lines = (tmp_path / "c.dat").read_text().splitlines()
    assert lines[0].startswith("#") and lines[2].split()[:2] == ["5", "1.0"]


def test_cross_mixing_identical_maps(rng):
    m = rng.random((8, 8))
    res = cross_mixing_correlation({"p": {0.25: m, 0.5: m, 0.75: m}}, {"p": "graphic"})
    for label in ("m1&m2", "m2&m3", "m1&m3"):
        assert res.mean_cc(label) == 1.0
        assert res.summary["overall"][label]["SIM"]["mean"] == pytest.approx(1.0)
    assert set(res.summary) == {"graphic", "overall"}


def test_cross_mixing_average_construction(rng):
    maps, cats = {}, {}
    for i, cat in enumerate(AR_CATEGORIES * 2):
        m1 = np.zeros((8, 8))
        m3 = np.zeros((8, 8))
        m1[:4] = rng.random((4, 8))
        m3[4:] = rng.random((4, 8))
        maps[f"p{i}"] = {0.75: m3, 0.25: m1, 0.5: (m1 + m3) / 2}
        cats[f"p{i}"] = cat
    res = cross_mixing_correlation(maps, cats)
    assert set(res.summary) == set(AR_CATEGORIES) | {"overall"}
    for group in res.summary:
        assert res.mean_cc("m1&m3", group) < res.mean_cc("m1&m2", group)
        assert res.mean_cc("m1&m3", group) < res.mean_cc("m2&m3", group)
    with pytest.raises(ValueError):
        cross_mixing_correlation({"p": {0.25: m1, 0.5: m1}})


def test_split_arithmetic():
    recs = synthetic_manifest()
    folds = make_cv_splits(recs, k=5, seed=0)
    for f in folds:
        assert len(f.pair_ids) == 90 and len(f.scenario_ids) == 270
        assert f.category_counts == {c: 30 for c in AR_CATEGORIES}
    assert audit_folds(folds).ok
    assert make_cv_splits(recs, k=5, seed=0) == folds
    assert make_cv_splits(recs, k=5, seed=1) != folds


def test_split_rejects_bad_input():
    recs = synthetic_manifest(2)
    with pytest.raises(ValueError):
        make_cv_splits(recs, k=7)
    with pytest.raises(ValueError):
        make_cv_splits(recs + recs[:1], k=2)
    with pytest.raises(ValueError):
        make_cv_splits(recs, k=1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=3, max_size=3), st.integers(2, 6), st.integers(0, 1000))
def test_split_balance_property(per_cat, k, seed):
    recs = []
    for cat, n in zip(AR_CATEGORIES, per_cat):
        for i in range(n):
            for a in (0.25, 0.75):
                recs.append(ScenarioRecord(f"{cat}{i}@{a}", cat, a, pair_id=f"{cat}{i}"))
    if sum(per_cat) < k:
        with pytest.raises(ValueError):
            make_cv_splits(recs, k=k, seed=seed)
        return
    folds = make_cv_splits(recs, k=k, seed=seed)
    sizes = [len(f.pair_ids) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    for cat in AR_CATEGORIES:
        counts = [f.category_counts.get(cat, 0) for f in folds]
        assert max(counts) - min(counts) <= 1
    seen = Counter(p for f in folds for p in f.pair_ids)
    assert all(v == 1 for v in seen.values()) and len(seen) == sum(per_cat)
    assert audit_folds(folds).ok


def test_write_splits(tmp_path):
    recs = synthetic_manifest(2)
    write_splits(tmp_path / "s.csv", make_cv_splits(recs, k=2), recs)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "scenario_id,pair_id,category,alpha,fold" and len(lines) == 1 + len(recs)


def test_audit_log_threads_and_file(tmp_path):
    log = AuditLog(tmp_path / "audit.jsonl")

    def worker(i):
        for j in range(20):
            log.record("c", i, [f"t{i}"], [f"x{j}"])

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(log.entries) == 80
    lines = (tmp_path / "audit.jsonl").read_text().splitlines()
    assert len(lines) == 80 and all(json.loads(line)["component"] == "c" for line in lines)
    assert audit_leakage(log).ok
    log.record("bad", 9, ["a", "b"], ["b"])
    report = audit_leakage(log)
    assert not report.ok and report.intersections[("bad", 9)] == ["b"]


def _bench_items():
    rng = np.random.default_rng(3)
    spec = ViewportSpec(width_px=32, height_px=32, fov_h_deg=90.0)
    img, mask = bright_patch(32, 8, 20, 6)
    items = []
    for i, cat in enumerate(AR_CATEGORIES * 2):
        for a in (0.25, 0.75):
            ar = ViewportImage(np.roll(img, i, axis=1), np.roll(mask, i, axis=1).astype(float))
            bg = ViewportImage(rng.random((32, 32, 3)) * 0.5)
            s = composite(ar, bg, a)
            pts = [(20 + i, 10), (22 + i, 12), (int(rng.integers(32)), int(rng.integers(32)))]
            fm = FixationMap.from_points(pts, spec.shape)
            rec = ScenarioRecord(f"p{i}@{a}", cat, a, pair_id=f"p{i}")
            items.append(BenchmarkScenario(rec, FusionInputs(ar, bg, s, a), density_from_fixations(fm, spec), fm))
    return items


def test_benchmark_protocol():
    items = _bench_items()
    folds = make_cv_splits([it.record for it in items], k=3, seed=0)
    res = run_benchmark(items, ["SR"], folds=folds, regressor_params={"method": "ridge"})
    assert len(res.rows) == 3 * len(items)
    assert audit_leakage(res.audit).ok
    assert {r["type"] for r in res.rows} == {"I", "II", "III"}
    fold_of = {s: f.fold_id for f in folds for s in f.scenario_ids}
    assert all(fold_of[r["scenario_id"]] == r["fold"] for r in res.rows)
    for e in res.audit.entries:
        assert all(fold_of[s] != e["fold_id"] for s in e["train_scenario_ids"])
    # fold evaluation order does not matter
    again = run_benchmark(items, ["SR"], folds=list(reversed(folds)), regressor_params={"method": "ridge"})
    assert results_csv(again.rows) == results_csv(res.rows)
    assert again.aggregate == res.aggregate
    entry = res.aggregate["SR/I"]
    assert set(entry["by_category"]) == set(AR_CATEGORIES)
    assert set(entry["by_alpha"]) == {"0.25", "0.75"}


def test_benchmark_learned_model_hook():
    items = _bench_items()
    seen = []

    def factory(train_items):
        seen.append({it.record.scenario_id for it in train_items})
        return lambda it: np.ones(it.density.shape)

    res = run_benchmark(items, [], types=(), k=3, extra_models={"flat": factory})
    assert len(seen) == 3 and audit_leakage(res.audit).ok
    assert all(r["type"] == "learned" and r["CC"] == 0.0 for r in res.rows)
