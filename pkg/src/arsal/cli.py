"""Command-line entry point: ``arsal <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input or arguments, 2 file-system errors.
Every artifact gets a JSON sidecar carrying a reproducibility header
(config hash, seed, package version).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AuditLog,
    BenchmarkScenario,
    audit_folds,
    audit_leakage,
    cross_mixing_correlation,
    make_cv_splits,
    run_benchmark,
    subject_consistency_curve,
    write_curve,
    write_results,
    write_splits,
)
from .compositor import composite, extract_viewport, pad_ar
from .core import (
    FixationMap,
    SaliencyDensity,
    ScenarioRecord,
    ViewportSpec,
    atomic_write_text,
    export_png,
    load_density,
    load_equirect,
    load_fixation_map,
    load_image,
    save_grid,
    save_image,
    sidecar_path,
)
from .fusion import FusionInputs, FusionRegressor, type1, type2, type3_predict, type3_train
from .gazeproc import (
    FixationParams,
    density_from_fixations,
    fixation_map_from_fixations,
    process_trace,
    read_fixations,
    read_gaze_log,
    write_fixations,
)
from .metrics import METRIC_NAMES, evaluate_all, summarize
from .salmodels import MODEL_IDS, as_predictor

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the validation code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# -- shared context --------------------------------------------------------------


@dataclass
class Context:
    config: dict
    seed: int
    spec: ViewportSpec
    jobs: int
    command: str

    def header(self) -> dict:
        canonical = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return {
            "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
            "seed": self.seed,
            "version": __version__,
            "command": self.command,
        }


def _read_json(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def _context(args) -> Context:
    config = _read_json(args.config) if getattr(args, "config", None) else {}
    seed = args.seed if getattr(args, "seed", None) is not None else int(config.get("seed", 0))
    config = dict(config, seed=seed)
    spec_src = _read_json(args.spec) if getattr(args, "spec", None) else config.get("viewport", {})
    spec = ViewportSpec.from_dict(spec_src)
    config["viewport"] = spec.to_dict()
    jobs = args.jobs if getattr(args, "jobs", None) else int(config.get("jobs", os.cpu_count() or 1))
    return Context(config, seed, spec, max(1, jobs), args.command)


def _sidecar(path, ctx: Context, **extra) -> None:
    payload = {"reproducibility": ctx.header(), **extra}
    atomic_write_text(sidecar_path(path), json.dumps(payload, indent=2, sort_keys=True))


def _save_map(path, density: SaliencyDensity, ctx: Context, **extra) -> None:
    save_grid(path, density, extra={"reproducibility": ctx.header(), **extra})


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _csv_list(text: str, cast=str) -> list:
    return [cast(x.strip()) for x in text.split(",") if x.strip()]


# -- manifests and scenario files ------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    scenario_id: str
    ar_path: Path
    bg_path: Path
    category: str
    alpha: float
    pair_id: str

    def record(self) -> ScenarioRecord:
        return ScenarioRecord(
            self.scenario_id, self.category, self.alpha, pair_id=self.pair_id,
            ar_path=str(self.ar_path), bg_path=str(self.bg_path),
        )


def read_manifest(path) -> list[ManifestRow]:
    """Scenario manifest CSV; relative image paths resolve against its folder."""
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = ("scenario_id", "ar_path", "bg_path", "category", "alpha")
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"manifest {path} lacks columns {missing}")
        for line in reader:
            ar, bg = Path(line["ar_path"]), Path(line["bg_path"])
            row = ManifestRow(
                line["scenario_id"],
                ar if ar.is_absolute() else base / ar,
                bg if bg.is_absolute() else base / bg,
                line["category"],
                float(line["alpha"]),
                line.get("pair_id") or f"{line['ar_path']}|{line['bg_path']}",
            )
            row.record()  # validates category and alpha
            rows.append(row)
    ids = [r.scenario_id for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"manifest {path} repeats scenario ids")
    return rows


def _composite_paths(directory, sid: str) -> dict:
    d = Path(directory)
    return {"s": d / f"{sid}.png", "ar": d / f"{sid}.ar.png", "bg": d / f"{sid}.bg.png"}


def _fusion_inputs(directory, row: ManifestRow) -> FusionInputs:
    p = _composite_paths(directory, row.scenario_id)
    return FusionInputs(load_image(p["ar"]), load_image(p["bg"]), load_image(p["s"]), row.alpha)


def _gt_paths(directory, sid: str) -> dict:
    d = Path(directory)
    return {"density": d / f"{sid}.density.f32", "fixmap": d / f"{sid}.fixmap.f32"}


# -- subcommands --------------------------------------------------------------------


def cmd_composite(args, ctx: Context) -> None:
    if args.manifest:
        if not args.out_dir:
            raise ValueError("--out-dir is required with --manifest")
        for row in read_manifest(args.manifest):
            _composite_one(row.ar_path, row.bg_path, row.alpha, ctx, _composite_paths(args.out_dir, row.scenario_id), row.scenario_id)
        return
    missing = [f for f, v in (("--ar", args.ar), ("--bg", args.bg), ("--alpha", args.alpha), ("--out", args.out)) if v is None]
    if missing:
        raise ValueError(f"missing required flag(s) {', '.join(missing)} (or use --manifest)")
    out = Path(args.out)
    paths = {"s": out, "ar": out.with_suffix(".ar.png"), "bg": out.with_suffix(".bg.png")}
    _composite_one(Path(args.ar), Path(args.bg), args.alpha, ctx, paths, out.stem)


def _composite_one(ar_path, bg_path, alpha, ctx: Context, paths: dict, sid: str) -> None:
    ar = pad_ar(load_image(ar_path), ctx.spec)
    bg = extract_viewport(load_equirect(bg_path), ctx.spec)
    s = composite(ar, bg, alpha)
    for key, img in (("ar", ar), ("bg", bg), ("s", s)):
        save_image(paths[key], img)
        _sidecar(paths[key], ctx, scenario_id=sid, alpha=alpha, role=key, viewport=ctx.spec.to_dict())


def _fixation_params(args, ctx: Context) -> FixationParams:
    src = _read_json(args.params) if getattr(args, "params", None) else ctx.config.get("fixation", {})
    params = FixationParams.from_dict(src)
    ctx.config["fixation"] = params.to_dict()
    return params


def cmd_gaze_process(args, ctx: Context) -> None:
    params = _fixation_params(args, ctx)
    traces = read_gaze_log(args.in_path)
    rows = []
    for subject, scenario in sorted(traces, key=lambda k: (k[1], k[0])):
        for f in process_trace(traces[(subject, scenario)], params):
            rows.append((subject, scenario, f))
    write_fixations(args.out_fixations, rows)
    _sidecar(args.out_fixations, ctx, fixation_params=params.to_dict(), n_fixations=len(rows))
    if args.out_density:
        _write_ground_truth(read_fixations(args.out_fixations), args.out_density, ctx, args.png)


def _write_ground_truth(by_scenario: dict, out_dir, ctx: Context, png: bool = False) -> None:
    for sid in sorted(by_scenario):
        fixations = [f for subj in sorted(by_scenario[sid]) for f in by_scenario[sid][subj]]
        fm, coverage = fixation_map_from_fixations(fixations, ctx.spec)
        density = density_from_fixations(fm, ctx.spec)
        paths = _gt_paths(out_dir, sid)
        extra = {"scenario_id": sid, "inside": coverage.inside, "outside": coverage.outside}
        _save_map(paths["fixmap"], fm, ctx, **extra)
        _save_map(paths["density"], density, ctx, **extra)
        if png:
            export_png(Path(out_dir) / f"{sid}.density.png", density)


def cmd_gt_maps(args, ctx: Context) -> None:
    _write_ground_truth(read_fixations(args.fixations), args.out, ctx, args.png)


def _input_images(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.png"))
    if not p.exists():
        raise FileNotFoundError(f"no such file or directory: {p}")
    return [p]


def cmd_predict(args, ctx: Context) -> None:
    predictor = as_predictor(args.model)
    images = _input_images(args.in_path)
    if not images:
        raise ValueError(f"no PNG images found in {args.in_path}")

    def run(path):
        return path, predictor.predict(load_image(path))

    results = _parallel(run, images, ctx.jobs)
    for path, density in results:
        out = Path(args.out) / f"{path.name[:-4]}.f32"
        _save_map(out, density, ctx, model=args.model, source=path.name)


def _parallel(fn, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_fuse(args, ctx: Context) -> None:
    rows = read_manifest(args.scenario_manifest)
    predictor = as_predictor(args.model)
    reg = None
    if args.type == 3:
        if args.regressor:
            reg = FusionRegressor.load(args.regressor)
        else:
            if not args.gt:
                raise ValueError("--type 3 needs --regressor or --gt to train one")
            train_rows = read_manifest(args.train_manifest) if args.train_manifest else rows
            triples = [_maps(predictor, _fusion_inputs(args.composites, r)) for r in train_rows]
            targets = [load_density(_gt_paths(args.gt, r.scenario_id)["density"]) for r in train_rows]
            reg = type3_train(triples, targets, {"random_state": ctx.seed})
            if args.save_regressor:
                reg.save(args.save_regressor)
                _sidecar(args.save_regressor, ctx, trained_on=sorted(r.scenario_id for r in train_rows))

    def run(row):
        item = _fusion_inputs(args.composites, row)
        if args.type == 1:
            return row, type1(predictor, item.superimposed)
        if args.type == 2:
            return row, type2(predictor, item.ar_padded, item.bg_view, item.alpha)
        return row, type3_predict(reg, *_maps(predictor, item))

    for row, density in _parallel(run, rows, ctx.jobs):
        _save_map(Path(args.out) / f"{row.scenario_id}.f32", density, ctx, model=args.model, fusion_type=args.type)


def _maps(predictor, item: FusionInputs):
    return predictor.predict(item.ar_padded), predictor.predict(item.bg_view), predictor.predict(item.superimposed)


def _load_gt(gt_dir, rows):
    dens, fms = {}, {}
    for r in rows:
        p = _gt_paths(gt_dir, r.scenario_id)
        dens[r.scenario_id] = load_density(p["density"])
        fms[r.scenario_id] = load_fixation_map(p["fixmap"])
    return dens, fms


def cmd_evaluate(args, ctx: Context) -> None:
    rows = read_manifest(args.manifest)
    dens, fms = _load_gt(args.gt, rows)
    reports = []
    for r in rows:
        pred, _ = _load_pred(Path(args.pred) / f"{r.scenario_id}.f32")
        pool = [
            fms[o.scenario_id]
            for o in rows
            if o.scenario_id != r.scenario_id
            and (args.negatives == "all" or o.alpha == r.alpha)
            and fms[o.scenario_id].count > 0
        ]
        reports.append(
            evaluate_all(
                pred, dens[r.scenario_id], fms[r.scenario_id], negatives=pool or None,
                scenario_id=r.scenario_id, model_id=args.model_id, seed=ctx.seed,
            )
        )
    reports.sort(key=lambda rep: rep.scenario_id)
    out_rows = [
        [rep.scenario_id, rep.model_id] + [repr(float(rep.values.get(n, float("nan")))) for n in METRIC_NAMES]
        for rep in reports
    ]
    _write_csv(args.out, ("scenario_id", "model_id") + METRIC_NAMES, out_rows)
    _sidecar(args.out, ctx, flags={rep.scenario_id: rep.flags for rep in reports if rep.flags})
    if args.out_json:
        atomic_write_text(args.out_json, json.dumps({"summary": summarize(reports), "reproducibility": ctx.header()}, indent=2, sort_keys=True))


def _load_pred(path):
    from .core import load_grid

    grid, meta = load_grid(path)
    return grid.astype(np.float64), meta


# -- analysis -------------------------------------------------------------------------


def cmd_consistency(args, ctx: Context) -> None:
    by_scenario = read_fixations(args.fixations)
    per_subject = {}
    for sid, subjects in by_scenario.items():
        per_subject[sid] = [fixation_map_from_fixations(subjects[s], ctx.spec)[0] for s in sorted(subjects)]
    sizes = _csv_list(args.sizes, int) if args.sizes else list(range(1, max(len(v) for v in per_subject.values()) + 1))
    curve = subject_consistency_curve(per_subject, sizes, trials=args.trials, seed=ctx.seed, spec=ctx.spec)
    _write_csv(args.out, ("n", "mean_cc", "std_cc", "samples"), [(p.n, repr(p.mean_cc), repr(p.std_cc), p.samples) for p in curve])
    _sidecar(args.out, ctx, trials=args.trials)
    if args.out_curve:
        write_curve(args.out_curve, curve)


def cmd_cross_mixing(args, ctx: Context) -> None:
    rows = read_manifest(args.manifest)
    maps: dict = {}
    cats = {}
    for r in rows:
        maps.setdefault(r.pair_id, {})[r.alpha] = load_density(_gt_paths(args.gt, r.scenario_id)["density"]).grid
        cats[r.pair_id] = r.category
    result = cross_mixing_correlation(maps, cats)
    _write_csv(args.out, ("pair_id", "category", "levels", "CC", "SIM"), [(a, b, c, repr(d), repr(e)) for a, b, c, d, e in result.rows])
    _sidecar(args.out, ctx)
    if args.out_json:
        atomic_write_text(args.out_json, json.dumps({"summary": result.summary, "reproducibility": ctx.header()}, indent=2, sort_keys=True))


def cmd_cv_split(args, ctx: Context) -> None:
    records = [r.record() for r in read_manifest(args.manifest)]
    folds = make_cv_splits(records, k=args.k, seed=ctx.seed)
    write_splits(args.out, folds, records)
    report = audit_folds(folds)
    _sidecar(
        args.out, ctx, k=args.k,
        leakage_free=report.ok,
        category_counts={str(f.fold_id): f.category_counts for f in folds},
    )
    if not report.ok:
        raise ValueError("fold leakage detected")


def cmd_benchmark(args, ctx: Context) -> None:
    rows = read_manifest(args.manifest)
    dens, fms = _load_gt(args.gt, rows)
    items = [
        BenchmarkScenario(r.record(), _fusion_inputs(args.composites, r), dens[r.scenario_id], fms[r.scenario_id])
        for r in rows
    ]
    models = _csv_list(args.models)
    for m in models:
        as_predictor(m)
    audit = AuditLog(args.audit_log) if args.audit_log else AuditLog()
    result = run_benchmark(
        items, models, types=_csv_list(args.types, int), k=args.k, seed=ctx.seed, jobs=ctx.jobs,
        regressor_params={"random_state": ctx.seed}, audit=audit,
    )
    write_results(result, args.out, args.out_json, header=ctx.header())
    _sidecar(args.out, ctx, models=models, k=args.k)
    if not audit_leakage(result.audit).ok:
        raise ValueError("test-fold leakage detected in the benchmark audit")


# -- VQ networks ------------------------------------------------------------------------


def _loss_weights(ctx: Context):
    from .vqsal import VQLossWeights

    w = VQLossWeights.from_dict(ctx.config.get("loss_weights", {}))
    ctx.config["loss_weights"] = w.to_dict()
    return w


def _work_images(paths, size: int) -> np.ndarray:
    from .vqsal.estimators import _work_batch

    return _work_batch([load_image(p) for p in paths], size)


def _training_images(args) -> list[Path]:
    if args.images:
        return _input_images(args.images)
    if args.manifest and args.composites:
        return [_composite_paths(args.composites, r.scenario_id)[k] for r in read_manifest(args.manifest) for k in ("ar", "bg", "s")]
    raise ValueError("give --images, or --manifest with --composites")


def cmd_train_vq(args, ctx: Context) -> None:
    from .vqsal import VQConfig, VQNet, save_checkpoint, train_vq

    x = _work_images(_training_images(args), args.work_size)
    cfg = VQConfig(in_channels=3, channels=(16, 32), n_z=args.n_z, K=args.K, seed=ctx.seed)
    net = VQNet(cfg)
    res = train_vq(net, x, steps=args.steps, lr=args.lr, seed=ctx.seed, weights=_loss_weights(ctx))
    save_checkpoint(net, args.out, extra={"work_size": args.work_size, "losses": res.losses, "reproducibility": ctx.header()})


def _sal_data(args, work_size: int):
    rows = read_manifest(args.manifest)
    from .vqsal.estimators import _work_density

    dens, _ = _load_gt(args.gt, rows)
    return rows, _work_density([dens[r.scenario_id] for r in rows], work_size)


def cmd_train_sal(args, ctx: Context) -> None:
    from .vqsal import load_checkpoint, save_checkpoint, train_saliency
    from .vqsal.checkpoint import read_header

    work = int(read_header(args.checkpoint)["extra"].get("work_size", 32))
    net = load_checkpoint(args.checkpoint)
    if net.mode != "saliency":
        net.to_saliency()
    if not args.freeze:
        net.encoder.set_trainable(True)
        net.codebook.set_trainable(True)
    rows, gt = _sal_data(args, work)
    x = _work_images([_composite_paths(args.composites, r.scenario_id)["s"] for r in rows], work)
    res = train_saliency(net, x, gt, steps=args.steps, lr=args.lr, seed=ctx.seed, weights=_loss_weights(ctx))
    save_checkpoint(net, args.out, extra={"work_size": work, "losses": res.losses, "frozen": args.freeze, "reproducibility": ctx.header()})


def cmd_train_ar(args, ctx: Context) -> None:
    from .vqsal import ARFusionNet, load_checkpoint, save_checkpoint, train_ar
    from .vqsal.checkpoint import read_header

    work = int(read_header(args.checkpoint)["extra"].get("work_size", 32))
    base = load_checkpoint(args.checkpoint)
    net = base if isinstance(base, ARFusionNet) else ARFusionNet(base, seed=ctx.seed)
    if not args.freeze:
        net.encoder.set_trainable(True)
        net.codebook.set_trainable(True)
    rows, gt = _sal_data(args, work)
    stacks = {k: _work_images([_composite_paths(args.composites, r.scenario_id)[k] for r in rows], work) for k in ("ar", "bg", "s")}
    res = train_ar(net, stacks["ar"], stacks["bg"], stacks["s"], gt, steps=args.steps, lr=args.lr, seed=ctx.seed, weights=_loss_weights(ctx))
    save_checkpoint(net, args.out, extra={"work_size": work, "losses": res.losses, "frozen": args.freeze, "reproducibility": ctx.header()})


def cmd_infer_ar(args, ctx: Context) -> None:
    from .vqsal import ARFusionNet, load_checkpoint
    from .vqsal.checkpoint import read_header
    from .vqsal.estimators import _to_density
    from .vqsal.training import to_nchw

    work = int(read_header(args.checkpoint)["extra"].get("work_size", 32))
    net = load_checkpoint(args.checkpoint)
    if not isinstance(net, ARFusionNet):
        raise ValueError(f"{args.checkpoint} is not an AR fusion checkpoint")
    for r in read_manifest(args.manifest):
        paths = _composite_paths(args.composites, r.scenario_id)
        batch = [to_nchw(_work_images([paths[k]], work)) for k in ("ar", "bg", "s")]
        shape = load_image(paths["s"]).shape
        density = _to_density(net.forward(*batch).value[0], shape)
        _save_map(Path(args.out) / f"{r.scenario_id}.f32", density, ctx, model="VQSal-AR")


def cmd_make_fixtures(args, ctx: Context) -> None:
    from .fixtures import write_fixtures

    write_fixtures(args.out, seed=ctx.seed)


# -- parser ---------------------------------------------------------------------------


def _common(p, spec: bool = False, jobs: bool = False) -> None:
    p.add_argument("--config", help="JSON config (viewport, fixation, loss_weights, seed)")
    p.add_argument("--seed", type=int, help="root seed; overrides the config")
    if spec:
        p.add_argument("--spec", help="viewport spec JSON; overrides the config")
    if jobs:
        p.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arsal", description="AR saliency pipeline.")
    parser.add_argument("--version", action="version", version=f"arsal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("composite", help="superimpose AR content on a background viewport")
    _common(p, spec=True)
    p.add_argument("--ar", help="AR image (RGBA alpha is the transparency matrix)")
    p.add_argument("--bg", help="equirectangular background")
    p.add_argument("--alpha", type=float, help="mixing value in (0, 1]")
    p.add_argument("--out", help="output PNG")
    p.add_argument("--manifest", help="scenario manifest CSV for batch mode")
    p.add_argument("--out-dir", help="output folder for batch mode")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("gaze-process", help="detect fixations in a gaze log")
    _common(p, spec=True)
    p.add_argument("--in", dest="in_path", required=True, help="gaze log CSV")
    p.add_argument("--params", help="fixation parameter JSON")
    p.add_argument("--out-fixations", required=True, help="fixation CSV")
    p.add_argument("--out-density", help="also write ground-truth maps here")
    p.add_argument("--png", action="store_true", help="also write PNG previews")
    p.set_defaults(func=cmd_gaze_process)

    p = sub.add_parser("gt-maps", help="fixation maps and densities from a fixation CSV")
    _common(p, spec=True)
    p.add_argument("--fixations", required=True)
    p.add_argument("--out", required=True, help="output folder")
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_gt_maps)

    p = sub.add_parser("predict", help="classical saliency prediction")
    _common(p, jobs=True)
    p.add_argument("--model", required=True, choices=MODEL_IDS)
    p.add_argument("--in", dest="in_path", required=True, help="image or folder of PNGs")
    p.add_argument("--out", required=True, help="output folder")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fuse", help="type I/II/III AR saliency from a base model")
    _common(p, jobs=True)
    p.add_argument("--type", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--model", required=True, choices=MODEL_IDS)
    p.add_argument("--scenario-manifest", required=True)
    p.add_argument("--composites", required=True, help="folder written by composite --manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--regressor", help="type III regressor JSON")
    p.add_argument("--gt", help="ground-truth folder, to train a type III regressor")
    p.add_argument("--train-manifest", help="scenarios to train on (default: the scenario manifest)")
    p.add_argument("--save-regressor", help="where to write a newly trained regressor")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="seven-metric evaluation of predicted maps")
    _common(p)
    p.add_argument("--pred", required=True, help="folder of <scenario_id>.f32 maps")
    p.add_argument("--gt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="result CSV")
    p.add_argument("--out-json")
    p.add_argument("--model-id", default="model")
    p.add_argument("--negatives", choices=("same-alpha", "all"), default="same-alpha", help="sAUC negative pool")
    p.set_defaults(func=cmd_evaluate)

    for name, func, flags, text in (
        ("train-vq", cmd_train_vq, "vq", "pretrain the VQ autoencoder on images"),
        ("train-sal", cmd_train_sal, "sal", "finetune the VQ network for saliency"),
        ("train-ar", cmd_train_ar, "sal", "train the three-decoder AR fusion network"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--out", required=True, help="checkpoint folder")
        p.add_argument("--steps", type=int, default=200)
        p.add_argument("--lr", type=float, default=0.01)
        p.add_argument("--manifest")
        p.add_argument("--composites")
        if flags == "vq":
            p.add_argument("--images", help="folder of PNGs")
            p.add_argument("--work-size", type=int, default=32)
            p.add_argument("--K", type=int, default=64)
            p.add_argument("--n-z", type=int, default=16)
        else:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--gt", required=True)
            p.add_argument("--freeze", action=argparse.BooleanOptionalAction, default=True, help="keep encoder and codebook fixed")
        p.set_defaults(func=func)

    p = sub.add_parser("infer-ar", help="predict with a trained AR fusion network")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--composites", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer_ar)

    analyze = sub.add_parser("analyze", help="dataset analysis and benchmark")
    asub = analyze.add_subparsers(dest="analysis", required=True, parser_class=_Parser)

    p = asub.add_parser("consistency", help="subject consistency curve")
    _common(p, spec=True)
    p.add_argument("--fixations", required=True)
    p.add_argument("--sizes", help="comma-separated group sizes (default 1..max)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", required=True, help="curve CSV")
    p.add_argument("--out-curve", help="whitespace-separated curve for plotting")
    p.set_defaults(func=cmd_consistency)

    p = asub.add_parser("cross-mixing", help="CC/SIM between mixing levels")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_cross_mixing)

    for parent in (asub, sub):
        p = parent.add_parser("cv-split", help="category-balanced grouped k-fold split")
        _common(p)
        p.add_argument("--manifest", required=True)
        p.add_argument("--k", type=int, default=5)
        p.add_argument("--out", required=True, help="split CSV")
        p.set_defaults(func=cmd_cv_split)

    p = asub.add_parser("benchmark", help="k-fold fusion benchmark")
    _common(p, jobs=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--composites", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--models", default="IT,SR,PFT")
    p.add_argument("--types", default="1,2,3")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True, help="per-scenario result CSV")
    p.add_argument("--out-json", help="aggregate JSON")
    p.add_argument("--audit-log", help="append-only JSON-lines provenance log")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("make-fixtures", help="write the synthetic three-scenario bundle")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args, _context(args))
    except (OSError, PermissionError) as exc:
        print(f"arsal {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"arsal {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
