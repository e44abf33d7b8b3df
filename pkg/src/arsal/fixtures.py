"""Small synthetic scenario bundle for smoke runs and tests.

Three AR/BG pairs, one per AR category, each shown at one mixing level,
plus a gaze log with planted fixations and a matching config file.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import AR_CATEGORIES, SARD_MIXING_LEVELS, ViewportImage, ViewportSpec, atomic_write_text, save_image
from .gazeproc import GAZE_LOG_COLUMNS

FIXTURE_SPEC = ViewportSpec(width_px=72, height_px=80, fov_h_deg=110.0)
MANIFEST_COLUMNS = ("scenario_id", "ar_path", "bg_path", "category", "alpha", "pair_id")
SAMPLE_RATE_HZ = 90.0


def _ar_image(category: str, rng) -> ViewportImage:
    h, w = 36, 40
    rgb = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    if category == "graphic":
        yy, xx = np.mgrid[:h, :w]
        disc = (yy - 12) ** 2 + (xx - 12) ** 2 <= 64
        rgb[disc] = (0.9, 0.1, 0.1)
        alpha[disc] = 1.0
        rgb[20:32, 24:36] = (0.1, 0.2, 0.9)
        alpha[20:32, 24:36] = 1.0
    elif category == "natural":
        tex = ndimage.gaussian_filter(rng.random((h, w, 3)), (3, 3, 0))
        tex = (tex - tex.min()) / (tex.max() - tex.min())
        rgb[:] = tex
        alpha[:] = 1.0
    else:
        rgb[:] = 0.95
        alpha[:] = 1.0
        for row in range(6, h - 4, 5):
            length = int(rng.integers(14, w - 6))
            rgb[row : row + 2, 4 : 4 + length] = 0.1
        rgb[2:5, 4:20] = (0.2, 0.4, 0.8)
    return ViewportImage(rgb, alpha)


def _bg_equirect(rng, height: int = 64) -> np.ndarray:
    base = ndimage.gaussian_filter(rng.random((height, 2 * height, 3)), (4, 4, 0), mode="wrap")
    base = (base - base.min()) / (base.max() - base.min())
    # a bright blob slightly off-centre gives the background its own salient spot
    yy, xx = np.mgrid[:height, : 2 * height]
    blob = np.exp(-((yy - height * 0.45) ** 2 + (xx - height * 1.25) ** 2) / 18.0)
    return np.clip(0.6 * base + 0.5 * blob[:, :, None], 0.0, 1.0)


def planted_trace(targets, rng, hold_ms: float = 250.0, jitter_deg: float = 0.05, saccade_samples: int = 6):
    """Samples (timestamp_ms, lat, long) dwelling at each target in turn.

    Dwells carry small uniform jitter; targets are joined by fast linear
    saccades.
    """
    dt = 1000.0 / SAMPLE_RATE_HZ
    hold = int(round(hold_ms / dt)) + 1
    out = []
    t = 0.0
    prev = None
    for lat, lon in targets:
        if prev is not None:
            for k in range(1, saccade_samples + 1):
                f = k / (saccade_samples + 1)
                out.append((t, float(prev[0] + f * (lat - prev[0])), float(prev[1] + f * (lon - prev[1]))))
                t += dt
        for _ in range(hold):
            j = rng.uniform(-jitter_deg, jitter_deg, 2)
            out.append((t, float(lat + j[0]), float(lon + j[1])))
            t += dt
        prev = (lat, lon)
    return out


def write_fixtures(directory, seed: int = 0, subjects: int = 4) -> Path:
    """Write the bundle; returns the manifest path."""
    directory = Path(directory)
    rng = np.random.default_rng(seed)
    rows, gaze = [], []
    for i, (category, alpha) in enumerate(zip(AR_CATEGORIES, SARD_MIXING_LEVELS)):
        sid = f"s{i:02d}_{category}"
        ar_rel, bg_rel = f"ar/{category}.png", f"bg/bg{i:02d}.png"
        save_image(directory / ar_rel, _ar_image(category, rng))
        save_image(directory / bg_rel, ViewportImage(_bg_equirect(rng)))
        rows.append((sid, ar_rel, bg_rel, category, repr(alpha), f"pair{i:02d}"))
        for s in range(subjects):
            n_fix = int(rng.integers(3, 6))
            targets = [(float(rng.uniform(-15, 15)), float(rng.uniform(-20, 20))) for _ in range(n_fix)]
            for t, lat, lon in planted_trace(targets, rng):
                gaze.append((f"subj{s:02d}", sid, repr(t), repr(lat), repr(lon), repr(0.0)))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    w.writerows(rows)
    manifest = directory / "manifest.csv"
    atomic_write_text(manifest, buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GAZE_LOG_COLUMNS)
    w.writerows(gaze)
    atomic_write_text(directory / "gaze.csv", buf.getvalue())

    config = {
        "seed": seed,
        "viewport": FIXTURE_SPEC.to_dict(),
        "fixation": {"window_samples": 7, "mad_threshold_deg_per_s": 50.0, "min_duration_ms": 100.0, "sample_rate_hz": 90.0},
        "loss_weights": {"beta": 0.25, "lambda": 0.2},
    }
    atomic_write_text(directory / "config.json", json.dumps(config, indent=2, sort_keys=True))
    return manifest
