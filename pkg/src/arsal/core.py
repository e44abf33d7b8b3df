"""Shared value types, normalization and grid persistence."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

NORMALIZATION_STATES = ("raw", "sum-to-one", "z-scored", "min-max")
SARD_MIXING_LEVELS = (0.25, 0.5, 0.75)
AR_CATEGORIES = ("graphic", "natural", "webpage")

# Default apparatus: 1440 x 1600 px per eye, 110 deg horizontal FOV.
DEFAULT_WIDTH_PX = 1440
DEFAULT_HEIGHT_PX = 1600
DEFAULT_FOV_H_DEG = 110.0


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ViewportImage:
    """RGB image in linear [0, 1] with a per-pixel transparency matrix.

    ``alpha`` is 1 where the image carries content and 0 where it is
    transparent. When omitted it defaults to fully opaque.
    """

    rgb: np.ndarray
    alpha: np.ndarray | None = None

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[:, :, None], 3, axis=2)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"rgb must be H x W x 3, got shape {rgb.shape}")
        if rgb.shape[0] == 0 or rgb.shape[1] == 0:
            raise ValueError("image width and height must be positive")
        if not np.all(np.isfinite(rgb)) or rgb.min() < 0.0 or rgb.max() > 1.0:
            raise ValueError("rgb values must be finite and within [0, 1]")
        alpha = self.alpha
        if alpha is None:
            alpha = np.ones(rgb.shape[:2])
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != rgb.shape[:2]:
            raise ValueError(
                f"alpha shape {alpha.shape} does not match image {rgb.shape[:2]}"
            )
        if not np.all(np.isfinite(alpha)) or alpha.min() < 0.0 or alpha.max() > 1.0:
            raise ValueError("alpha values must be finite and within [0, 1]")
        object.__setattr__(self, "rgb", _frozen(rgb))
        object.__setattr__(self, "alpha", _frozen(alpha))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]

    def gray(self) -> np.ndarray:
        """Channel mean, the intensity used by every saliency model."""
        return self.rgb.mean(axis=2)


@dataclass(frozen=True)
class MixingLevel:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a <= 1.0) or math.isnan(a):
            raise ValueError(f"mixing value must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", a)

    @property
    def is_sard_level(self) -> bool:
        return any(abs(self.alpha - lvl) < 1e-12 for lvl in SARD_MIXING_LEVELS)

    def __float__(self) -> float:
        return self.alpha


@dataclass(frozen=True)
class ViewportSpec:
    """Pixel size, field of view and viewing direction of a viewport.

    When ``fov_v_deg`` is omitted it is derived from ``fov_h_deg`` assuming
    square pixels, so the tangent-plane extent scales with the aspect ratio.
    """

    width_px: int = DEFAULT_WIDTH_PX
    height_px: int = DEFAULT_HEIGHT_PX
    fov_h_deg: float = DEFAULT_FOV_H_DEG
    fov_v_deg: float | None = None
    center_lat_deg: float = 0.0
    center_long_deg: float = 0.0

    def __post_init__(self):
        if int(self.width_px) <= 0 or int(self.height_px) <= 0:
            raise ValueError("viewport width and height must be positive")
        object.__setattr__(self, "width_px", int(self.width_px))
        object.__setattr__(self, "height_px", int(self.height_px))
        if not (0.0 < self.fov_h_deg <= 180.0):
            raise ValueError(f"fov_h_deg must lie in (0, 180], got {self.fov_h_deg}")
        fov_v = self.fov_v_deg
        if fov_v is None:
            half = math.radians(self.fov_h_deg) / 2.0
            fov_v = math.degrees(
                2.0 * math.atan(math.tan(half) * self.height_px / self.width_px)
            )
        if not (0.0 < fov_v <= 180.0):
            raise ValueError(f"fov_v_deg must lie in (0, 180], got {fov_v}")
        object.__setattr__(self, "fov_v_deg", float(fov_v))
        if not (-90.0 <= self.center_lat_deg <= 90.0):
            raise ValueError("center_lat_deg must lie in [-90, 90]")

    @property
    def pixels_per_degree(self) -> float:
        return self.width_px / self.fov_h_deg

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    def to_dict(self) -> dict:
        return {
            "width_px": self.width_px,
            "height_px": self.height_px,
            "fov_h_deg": self.fov_h_deg,
            "fov_v_deg": self.fov_v_deg,
            "center_lat_deg": self.center_lat_deg,
            "center_long_deg": self.center_long_deg,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ViewportSpec":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass(frozen=True)
class SaliencyDensity:
    """Continuous saliency grid tagged with its normalization state.

    ``flags`` carries non-fatal conditions such as ``"constant"`` or
    ``"empty"`` so batch pipelines can report rather than abort.
    """

    grid: np.ndarray
    normalization_state: str = "raw"
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError(f"saliency grid must be a nonempty 2-D array, got {grid.shape}")
        if not np.all(np.isfinite(grid)):
            raise ValueError("saliency grid contains non-finite values")
        if self.normalization_state not in NORMALIZATION_STATES:
            raise ValueError(f"unknown normalization state {self.normalization_state!r}")
        if self.normalization_state == "sum-to-one" and "empty" not in self.flags:
            if grid.min() < 0 or abs(grid.sum() - 1.0) >= 1e-9:
                raise ValueError("sum-to-one grid must be nonnegative with unit mass")
        object.__setattr__(self, "grid", _frozen(grid))
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]


@dataclass(frozen=True)
class FixationMap:
    """Per-pixel fixation counts plus the list of fixated pixel coordinates."""

    grid: np.ndarray
    fixation_list: tuple = ()

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError("fixation grid must be a nonempty 2-D array")
        if np.any(grid < 0) or np.any(grid != np.round(grid)):
            raise ValueError("fixation grid must hold nonnegative integer counts")
        grid = grid.astype(np.int64)
        points = tuple((int(x), int(y)) for x, y in self.fixation_list)
        h, w = grid.shape
        for x, y in points:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"fixation ({x}, {y}) outside {w} x {h} grid")
        if int(grid.sum()) != len(points):
            raise ValueError(
                f"grid holds {int(grid.sum())} fixations but list has {len(points)}"
            )
        object.__setattr__(self, "grid", _frozen(grid))
        object.__setattr__(self, "fixation_list", points)

    @classmethod
    def from_points(cls, points: Iterable[tuple[int, int]], shape: tuple[int, int]):
        grid = np.zeros(shape, dtype=np.int64)
        points = [(int(x), int(y)) for x, y in points]
        h, w = grid.shape
        for x, y in points:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"fixation ({x}, {y}) outside {w} x {h} grid")
            grid[y, x] += 1
        return cls(grid, tuple(points))

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "FixationMap":
        grid = np.asarray(grid)
        ys, xs = np.nonzero(grid)
        points = []
        for y, x in zip(ys, xs):
            points.extend([(int(x), int(y))] * int(round(grid[y, x])))
        return cls(grid, tuple(points))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def count(self) -> int:
        return len(self.fixation_list)


@dataclass
class ScenarioRecord:
    """One superimposed stimulus: an AR/BG pair shown at one mixing level.

    ``scenario_id`` is unique per stimulus; ``pair_id`` groups the three
    mixing variants of the same AR/BG pair.
    """

    scenario_id: str
    ar_category: str
    mixing: MixingLevel
    pair_id: str | None = None
    ar_path: str | None = None
    bg_path: str | None = None
    ar_image: ViewportImage | None = None
    bg_equirect_image: np.ndarray | None = None
    superimposed: ViewportImage | None = None

    def __post_init__(self):
        if self.ar_category not in AR_CATEGORIES:
            raise ValueError(
                f"ar_category must be one of {AR_CATEGORIES}, got {self.ar_category!r}"
            )
        if not isinstance(self.mixing, MixingLevel):
            self.mixing = MixingLevel(self.mixing)
        if self.pair_id is None:
            self.pair_id = f"{self.ar_path}|{self.bg_path}"

    @property
    def alpha(self) -> float:
        return self.mixing.alpha


def _check_density(density) -> SaliencyDensity:
    if isinstance(density, SaliencyDensity):
        return density
    return SaliencyDensity(np.asarray(density, dtype=np.float64))


def normalize(density, mode: str) -> SaliencyDensity:
    """Return ``density`` rescaled under ``mode``.

    Modes are ``"sum-to-one"``, ``"z-scored"`` (population std) and
    ``"min-max"``. Degenerate inputs never raise: a constant grid becomes all
    zeros under z-scoring and min-max and is flagged ``"constant"``; a grid
    with zero mass is returned as zeros flagged ``"empty"`` under sum-to-one.
    """
    d = _check_density(density)
    g = d.grid
    flags = set(d.flags) - {"constant", "empty"}
    if mode == "sum-to-one":
        if g.min() < 0:
            raise ValueError("sum-to-one normalization needs a nonnegative grid")
        total = g.sum()
        if total <= 0:
            return SaliencyDensity(np.zeros_like(g), "sum-to-one", flags | {"empty"})
        out = g / total
    elif mode == "z-scored":
        mean = g.mean()
        std = g.std()
        if std == 0 or g.max() == g.min():
            return SaliencyDensity(np.zeros_like(g), "z-scored", flags | {"constant"})
        out = (g - mean) / std
    elif mode == "min-max":
        lo, hi = g.min(), g.max()
        if hi == lo:
            return SaliencyDensity(np.zeros_like(g), "min-max", flags | {"constant"})
        out = (g - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return SaliencyDensity(out, mode, flags)


# -- persistence ------------------------------------------------------------


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_grid(path, grid, normalization_state: str = "raw", extra: Mapping | None = None):
    """Write ``grid`` as a little-endian float32 raster with a JSON sidecar.

    Accepts a plain array, a :class:`SaliencyDensity` or a :class:`FixationMap`.
    Values are stored at float32 precision.
    """
    if isinstance(grid, SaliencyDensity):
        normalization_state = grid.normalization_state
        array = grid.grid
        flags = sorted(grid.flags)
    elif isinstance(grid, FixationMap):
        array = grid.grid
        normalization_state = "raw"
        flags = ["fixation-counts"]
    else:
        array = np.asarray(grid)
        flags = []
    if array.ndim != 2:
        raise ValueError("only 2-D grids can be saved")
    if normalization_state not in NORMALIZATION_STATES:
        raise ValueError(f"unknown normalization state {normalization_state!r}")
    raster = np.ascontiguousarray(array, dtype="<f4")
    meta = {
        "width": int(array.shape[1]),
        "height": int(array.shape[0]),
        "normalization_state": normalization_state,
    }
    if flags:
        meta["flags"] = flags
    if extra:
        meta.update(extra)
    atomic_write_bytes(path, raster.tobytes(order="C"))
    atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True))


def load_grid(path) -> tuple[np.ndarray, dict]:
    """Read a raster written by :func:`save_grid`; returns (float32 grid, sidecar)."""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    width, height = int(meta["width"]), int(meta["height"])
    raw = path.read_bytes()
    if len(raw) != 4 * width * height:
        raise ValueError(
            f"{path}: expected {4 * width * height} bytes for {width} x {height}, got {len(raw)}"
        )
    grid = np.frombuffer(raw, dtype="<f4").reshape(height, width).copy()
    return grid, meta


def load_density(path) -> SaliencyDensity:
    grid, meta = load_grid(path)
    state = meta.get("normalization_state", "raw")
    flags = frozenset(meta.get("flags", ())) - {"fixation-counts"}
    g = grid.astype(np.float64)
    if state == "sum-to-one" and "empty" not in flags:
        # float32 storage perturbs the unit mass by ~1e-8
        g = g / g.sum()
    return SaliencyDensity(g, state, flags)


def load_fixation_map(path) -> FixationMap:
    grid, _ = load_grid(path)
    return FixationMap.from_grid(np.rint(grid).astype(np.int64))


def export_png(path, grid) -> None:
    """8-bit grayscale PNG of ``grid`` after min-max scaling."""
    if isinstance(grid, (SaliencyDensity, FixationMap)):
        grid = grid.grid
    scaled = normalize(np.asarray(grid, dtype=np.float64), "min-max").grid
    save_image(path, scaled)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, image) -> None:
    """Save a ViewportImage (RGBA when partly transparent) or a 2-D/3-D array."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(image, ViewportImage):
        if np.all(image.alpha == 1.0):
            pil = Image.fromarray(to_uint8(image.rgb), mode="RGB")
        else:
            rgba = np.concatenate([image.rgb, image.alpha[:, :, None]], axis=2)
            pil = Image.fromarray(to_uint8(rgba), mode="RGBA")
    else:
        arr = np.asarray(image, dtype=np.float64)
        pil = Image.fromarray(to_uint8(arr), mode="L" if arr.ndim == 2 else "RGB")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        pil.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_image(path) -> ViewportImage:
    """Load an 8-bit image as linear [0, 1] values; RGBA alpha becomes the
    transparency matrix."""
    with Image.open(path) as pil:
        if pil.mode in ("RGBA", "LA", "PA") or "transparency" in pil.info:
            arr = np.asarray(pil.convert("RGBA"), dtype=np.float64) / 255.0
            return ViewportImage(arr[:, :, :3], arr[:, :, 3])
        arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    return ViewportImage(arr)


def load_equirect(path) -> np.ndarray:
    with Image.open(path) as pil:
        return np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0


def as_grid(value) -> np.ndarray:
    if isinstance(value, (SaliencyDensity, FixationMap)):
        return value.grid
    return np.asarray(value, dtype=np.float64)

