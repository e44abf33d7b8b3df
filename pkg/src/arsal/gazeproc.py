"""Gaze log processing: orientation samples to fixations to saliency maps."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .compositor import project_to_viewport
from .core import FixationMap, SaliencyDensity, ViewportSpec, normalize

logger = logging.getLogger(__name__)

GAZE_LOG_COLUMNS = ("subject_id", "scenario_id", "timestamp_ms", "pitch_deg", "yaw_deg", "roll_deg")
FIXATION_COLUMNS = ("subject_id", "scenario_id", "lat_deg", "long_deg", "onset_ms", "duration_ms")

# Below this central angle the law of cosines loses precision.
_SMALL_ANGLE_RAD = 1e-3


@dataclass(frozen=True)
class GazeSample:
    timestamp_ms: float
    pitch_deg: float
    yaw_deg: float
    roll_deg: float = 0.0


@dataclass(frozen=True)
class GazePointLL:
    timestamp_ms: float
    lat_deg: float
    long_deg: float

    def __post_init__(self):
        if not (-90.0 <= self.lat_deg <= 90.0):
            raise ValueError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not (-180.0 < self.long_deg <= 180.0):
            raise ValueError(f"longitude {self.long_deg} outside (-180, 180]")


@dataclass(frozen=True)
class Fixation:
    lat_deg: float
    long_deg: float
    onset_ms: float
    duration_ms: float


@dataclass(frozen=True)
class FixationParams:
    """Fixation detector settings.

    ``mad_mode`` selects the windowed dispersion statistic compared with the
    threshold (deg/s):

    * ``"velocity"``: mean absolute deviation of the angular velocities from
      rest (zero), i.e. the mean speed over the window;
    * ``"velocity-dispersion"``: mean absolute deviation of the velocities
      from their window mean;
    * ``"position"``: mean angular distance of the window's gaze points from
      their spherical centroid, divided by the window duration.
    """

    window_samples: int = 7
    mad_threshold_deg_per_s: float = 50.0
    min_duration_ms: float = 100.0
    sample_rate_hz: float = 90.0
    mad_mode: str = "velocity"

    def __post_init__(self):
        if self.window_samples <= 0 or self.window_samples % 2 == 0:
            raise ValueError("window_samples must be a positive odd count")
        for name in ("mad_threshold_deg_per_s", "min_duration_ms", "sample_rate_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mad_mode not in ("velocity", "velocity-dispersion", "position"):
            raise ValueError(f"unknown mad_mode {self.mad_mode!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "FixationParams":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})

    def to_dict(self) -> dict:
        return asdict(self)


def wrap_longitude(long_deg: float) -> float:
    """Map any longitude onto (-180, 180]."""
    return -((-long_deg + 180.0) % 360.0 - 180.0)


def euler_to_latlong(s: GazeSample) -> GazePointLL:
    """Pitch is latitude and yaw is longitude; roll does not move the gaze ray."""
    values = (s.timestamp_ms, s.pitch_deg, s.yaw_deg, s.roll_deg)
    if any(math.isnan(v) or math.isinf(v) for v in values):
        raise ValueError(f"non-finite gaze sample {s}")
    if not (-90.0 <= s.pitch_deg <= 90.0):
        raise ValueError(f"pitch {s.pitch_deg} outside [-90, 90]")
    return GazePointLL(s.timestamp_ms, float(s.pitch_deg), wrap_longitude(float(s.yaw_deg)))


def great_circle_deg(lat1, lon1, lat2, lon2):
    """Central angle in degrees; law of cosines with a haversine fallback
    for small separations."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlon = np.radians(np.asarray(lon2, float) - np.asarray(lon1, float))
    cos_c = np.sin(p1) * np.sin(p2) + np.cos(p1) * np.cos(p2) * np.cos(dlon)
    angle = np.arccos(np.clip(cos_c, -1.0, 1.0))
    hav = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlon / 2.0) ** 2
    small = 2.0 * np.arcsin(np.sqrt(np.clip(hav, 0.0, 1.0)))
    return np.degrees(np.where(angle < _SMALL_ANGLE_RAD, small, angle))


def _trace_arrays(trace: Sequence[GazePointLL]):
    t = np.array([p.timestamp_ms for p in trace], dtype=np.float64)
    lat = np.array([p.lat_deg for p in trace], dtype=np.float64)
    lon = np.array([p.long_deg for p in trace], dtype=np.float64)
    return t, lat, lon


def angular_velocity(trace: Sequence[GazePointLL]) -> np.ndarray:
    """Angular speed (deg/s) between consecutive samples; length n - 1."""
    if len(trace) < 2:
        raise ValueError("angular velocity needs at least two samples")
    t, lat, lon = _trace_arrays(trace)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("timestamps must be strictly increasing (duplicate or reversed sample)")
    dist = great_circle_deg(lat[:-1], lon[:-1], lat[1:], lon[1:])
    return dist / (dt / 1000.0)


def spherical_centroid(lat_deg, long_deg) -> tuple[float, float]:
    lat = np.radians(np.asarray(lat_deg, float))
    lon = np.radians(np.asarray(long_deg, float))
    v = np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)
    m = v.mean(axis=0)
    norm = np.linalg.norm(m)
    if norm == 0:
        raise ValueError("centroid undefined for antipodal gaze points")
    m = m / norm
    c_lat = math.degrees(math.asin(max(-1.0, min(1.0, m[2]))))
    c_lon = wrap_longitude(math.degrees(math.atan2(m[1], m[0])))
    return c_lat, c_lon


def _window_statistic(values_fn, n_items: int, window: int) -> np.ndarray:
    """Evaluate a window statistic at every full window; label centre items.

    Items within half a window of either end copy the nearest valid label.
    """
    half = window // 2
    stats = np.array([values_fn(k, k + window) for k in range(n_items - window + 1)])
    labels = np.empty(n_items)
    labels[half : n_items - half] = stats
    labels[:half] = stats[0]
    labels[n_items - half :] = stats[-1]
    return labels


def _sample_labels(trace, params: FixationParams) -> np.ndarray:
    t, lat, lon = _trace_arrays(trace)
    w = params.window_samples
    v = angular_velocity(trace)
    if params.mad_mode == "position":
        def stat(a, b):
            c_lat, c_lon = spherical_centroid(lat[a:b], lon[a:b])
            spread = great_circle_deg(lat[a:b], lon[a:b], c_lat, c_lon).mean()
            return spread / ((t[b - 1] - t[a]) / 1000.0)

        return _window_statistic(stat, len(trace), w) < params.mad_threshold_deg_per_s

    if params.mad_mode == "velocity":
        def stat(a, b):
            return np.abs(v[a:b]).mean()
    else:
        def stat(a, b):
            seg = v[a:b]
            return np.abs(seg - seg.mean()).mean()

    thr = params.mad_threshold_deg_per_s
    # an interval is stable when some full window containing it passes and
    # its own speed is under threshold: dwell edges survive, saccades don't
    covered = np.zeros(len(v), dtype=bool)
    for k in range(len(v) - w + 1):
        if stat(k, k + w) < thr:
            covered[k : k + w] = True
    vel_ok = covered & (v < thr)
    # a sample is stable when every velocity interval touching it is stable
    ok = np.ones(len(trace), dtype=bool)
    ok[:-1] &= vel_ok
    ok[1:] &= vel_ok
    return ok


def detect_fixations(trace: Sequence[GazePointLL], params: FixationParams | None = None) -> list[Fixation]:
    """Windowed-MAD fixation detection.

    Samples whose window statistic falls below the threshold are fixation
    candidates; consecutive candidates merge into one event, events shorter
    than ``min_duration_ms`` are dropped, and each event is summarized by the
    spherical centroid of its samples. Traces too short to fill one window
    yield no fixations and a warning.
    """
    params = params or FixationParams()
    trace = list(trace)
    needed = params.window_samples + (0 if params.mad_mode == "position" else 1)
    if len(trace) < needed:
        warnings.warn(
            f"trace of {len(trace)} samples is shorter than the {params.window_samples}-sample window",
            RuntimeWarning,
            stacklevel=2,
        )
        return []
    t, lat, lon = _trace_arrays(trace)
    ok = _sample_labels(trace, params)
    fixations = []
    i, n = 0, len(trace)
    while i < n:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and ok[j + 1]:
            j += 1
        duration = t[j] - t[i]
        if duration >= params.min_duration_ms:
            c_lat, c_lon = spherical_centroid(lat[i : j + 1], lon[i : j + 1])
            fixations.append(Fixation(c_lat, c_lon, float(t[i]), float(duration)))
        i = j + 1
    return fixations


def latlong_to_viewport_px(p, spec: ViewportSpec):
    """Continuous viewport position ``(x, y)`` of a gaze point, or ``None``
    when it falls outside the viewport."""
    lat = p.lat_deg if hasattr(p, "lat_deg") else p[0]
    lon = p.long_deg if hasattr(p, "long_deg") else p[1]
    x, y, visible = project_to_viewport(lat, lon, spec)
    if not bool(visible):
        return None
    return float(x), float(y)


@dataclass(frozen=True)
class ViewportCoverage:
    inside: int
    outside: int

    @property
    def fraction_inside(self) -> float:
        total = self.inside + self.outside
        return self.inside / total if total else 0.0


def fixation_map_from_fixations(
    fixations: Iterable, spec: ViewportSpec
) -> tuple[FixationMap, ViewportCoverage]:
    """Rasterize fixations into viewport pixel counts.

    Fixations outside the viewport are left out of the map and counted in
    the returned coverage statistic.
    """
    points = []
    outside = 0
    for f in fixations:
        px = latlong_to_viewport_px(f, spec)
        if px is None:
            outside += 1
            continue
        x = min(int(math.floor(px[0])), spec.width_px - 1)
        y = min(int(math.floor(px[1])), spec.height_px - 1)
        points.append((max(x, 0), max(y, 0)))
    fm = FixationMap.from_points(points, spec.shape)
    return fm, ViewportCoverage(len(points), outside)


def gaussian_sigma_px(spec: ViewportSpec, sigma_deg: float = 3.34) -> float:
    return sigma_deg * spec.width_px / spec.fov_h_deg


def gaussian_kernel(sigma_px: float, truncate: float = 4.0) -> np.ndarray:
    """Unnormalized isotropic Gaussian, zero beyond ``truncate`` sigmas."""
    r = int(math.ceil(truncate * sigma_px))
    ax = np.arange(-r, r + 1, dtype=np.float64)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    d2 = xx**2 + yy**2
    k = np.exp(-d2 / (2.0 * sigma_px**2))
    k[d2 > (truncate * sigma_px) ** 2] = 0.0
    return k


def density_from_fixations(fm: FixationMap, spec: ViewportSpec, sigma_deg: float = 3.34) -> SaliencyDensity:
    """Ground-truth density: a Gaussian of ``sigma_deg`` visual angle at each
    fixation, summed and normalized to unit mass."""
    if fm.shape != spec.shape:
        raise ValueError(f"fixation map {fm.shape} does not match viewport {spec.shape}")
    H, W = fm.shape
    if fm.count == 0:
        return SaliencyDensity(np.zeros((H, W)), "raw", {"empty"})
    sigma = gaussian_sigma_px(spec, sigma_deg)
    kernel = gaussian_kernel(sigma)
    r = kernel.shape[0] // 2
    acc = np.zeros((H, W))
    ys, xs = np.nonzero(fm.grid)
    for y, x in zip(ys, xs):
        y0, y1 = max(0, y - r), min(H, y + r + 1)
        x0, x1 = max(0, x - r), min(W, x + r + 1)
        acc[y0:y1, x0:x1] += fm.grid[y, x] * kernel[
            y0 - (y - r) : y1 - (y - r), x0 - (x - r) : x1 - (x - r)
        ]
    return normalize(acc, "sum-to-one")


# -- CSV interfaces -----------------------------------------------------------


def read_gaze_log(path) -> dict[tuple[str, str], list[GazeSample]]:
    """Group a gaze log CSV by (subject_id, scenario_id), in file order."""
    traces: dict[tuple[str, str], list[GazeSample]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in GAZE_LOG_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"gaze log {path} lacks columns {missing}")
        for row in reader:
            key = (row["subject_id"], row["scenario_id"])
            traces.setdefault(key, []).append(
                GazeSample(
                    float(row["timestamp_ms"]),
                    float(row["pitch_deg"]),
                    float(row["yaw_deg"]),
                    float(row["roll_deg"]),
                )
            )
    return traces


def write_fixations(path, rows: Iterable[tuple[str, str, Fixation]]) -> str:
    """Serialize (subject_id, scenario_id, Fixation) rows; returns the CSV text."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIXATION_COLUMNS)
    for subject, scenario, f in rows:
        writer.writerow([subject, scenario] + [repr(float(v)) for v in (f.lat_deg, f.long_deg, f.onset_ms, f.duration_ms)])
    text = buf.getvalue()
    if path is not None:
        from .core import atomic_write_text

        atomic_write_text(path, text)
    return text


def read_fixations(path) -> dict[str, dict[str, list[Fixation]]]:
    """Fixation CSV grouped as scenario_id -> subject_id -> fixations."""
    out: dict[str, dict[str, list[Fixation]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in FIXATION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"fixation file {path} lacks columns {missing}")
        for row in reader:
            f = Fixation(float(row["lat_deg"]), float(row["long_deg"]), float(row["onset_ms"]), float(row["duration_ms"]))
            out.setdefault(row["scenario_id"], {}).setdefault(row["subject_id"], []).append(f)
    return out


def process_trace(samples: Sequence[GazeSample], params: FixationParams | None = None) -> list[Fixation]:
    """Raw orientation samples straight to fixations."""
    return detect_fixations([euler_to_latlong(s) for s in samples], params)
