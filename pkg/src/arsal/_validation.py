"""Input coercion helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import FixationMap, SaliencyDensity, ViewportImage


def check_image(image) -> ViewportImage:
    """Coerce an array (H x W or H x W x 3/4 in [0, 1]) to a ViewportImage."""
    if isinstance(image, ViewportImage):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 4:
        return ViewportImage(arr[:, :, :3], arr[:, :, 3])
    return ViewportImage(arr)


def check_images(images) -> list[ViewportImage]:
    if isinstance(images, (ViewportImage, np.ndarray)) and not (
        isinstance(images, np.ndarray) and images.ndim == 4
    ):
        return [check_image(images)]
    return [check_image(im) for im in images]


def check_grid(grid, name: str = "grid") -> np.ndarray:
    if isinstance(grid, (SaliencyDensity, FixationMap)):
        grid = grid.grid
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_fixation_map(fm, shape=None) -> FixationMap:
    if not isinstance(fm, FixationMap):
        fm = FixationMap.from_grid(np.asarray(fm))
    if shape is not None and fm.shape != tuple(shape):
        raise ValueError(f"fixation map shape {fm.shape} does not match {tuple(shape)}")
    return fm


def check_same_shape(*grids, names=None) -> None:
    shapes = [np.shape(g) for g in grids]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ValueError(f"shape mismatch between {label}: {shapes}")


def resize(grid: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a 2-D grid; low-pass filters first when shrinking."""
    grid = np.asarray(grid, dtype=np.float64)
    out_h, out_w = int(shape[0]), int(shape[1])
    if grid.shape == (out_h, out_w):
        return grid.copy()
    factors = (grid.shape[0] / out_h, grid.shape[1] / out_w)
    sigma = [max(0.0, (f - 1.0) / 2.0) for f in factors]
    if any(s > 0 for s in sigma):
        grid = ndimage.gaussian_filter(grid, sigma, mode="nearest")
    # sample at pixel centres so that up- and down-scaling stay aligned
    ys = (np.arange(out_h) + 0.5) * grid.shape[0] / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * grid.shape[1] / out_w - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest")
