"""Superimposed viewport construction: viewport extraction, AR padding and
linear alpha blending of AR content over a background."""

from __future__ import annotations

import numpy as np

from ._validation import check_image
from .core import MixingLevel, ViewportImage, ViewportSpec


def _unit_vectors(lat_deg, long_deg) -> np.ndarray:
    lat = np.radians(lat_deg)
    lon = np.radians(long_deg)
    return np.stack(
        [np.cos(lat) * np.sin(lon), np.sin(lat), np.cos(lat) * np.cos(lon)], axis=-1
    )


def _viewport_basis(spec: ViewportSpec):
    """Forward, right and up unit vectors of the viewport tangent plane."""
    lat0 = np.radians(spec.center_lat_deg)
    lon0 = np.radians(spec.center_long_deg)
    forward = _unit_vectors(spec.center_lat_deg, spec.center_long_deg)
    right = np.array([np.cos(lon0), 0.0, -np.sin(lon0)])
    up = np.array(
        [-np.sin(lat0) * np.sin(lon0), np.cos(lat0), -np.sin(lat0) * np.cos(lon0)]
    )
    return forward, right, up


def project_to_viewport(lat_deg, long_deg, spec: ViewportSpec):
    """Gnomonic projection of sphere points onto continuous viewport coords.

    Returns ``(x, y, visible)`` arrays. ``x`` spans [0, W] left to right and
    ``y`` spans [0, H] top to bottom; the viewport centre maps to (W/2, H/2).
    Points behind the tangent plane or beyond the field of view are reported
    as not visible (coordinates are NaN behind the plane).
    """
    p = _unit_vectors(np.asarray(lat_deg, float), np.asarray(long_deg, float))
    forward, right, up = _viewport_basis(spec)
    depth = p @ forward
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(depth > 0, (p @ right) / depth, np.nan)
        ty = np.where(depth > 0, (p @ up) / depth, np.nan)
    half_w = np.tan(np.radians(spec.fov_h_deg) / 2.0)
    half_h = np.tan(np.radians(spec.fov_v_deg) / 2.0)
    x = spec.width_px / 2.0 * (1.0 + tx / half_w)
    y = spec.height_px / 2.0 * (1.0 - ty / half_h)
    eps = 1e-9
    with np.errstate(invalid="ignore"):
        visible = (
            (depth > 0)
            & (x >= -eps)
            & (x <= spec.width_px + eps)
            & (y >= -eps)
            & (y <= spec.height_px + eps)
        )
    return x, y, visible


def viewport_to_sphere(x, y, spec: ViewportSpec):
    """Inverse gnomonic projection of continuous viewport coordinates."""
    half_w = np.tan(np.radians(spec.fov_h_deg) / 2.0)
    half_h = np.tan(np.radians(spec.fov_v_deg) / 2.0)
    tx = (2.0 * np.asarray(x, float) / spec.width_px - 1.0) * half_w
    ty = (1.0 - 2.0 * np.asarray(y, float) / spec.height_px) * half_h
    forward, right, up = _viewport_basis(spec)
    d = forward + tx[..., None] * right + ty[..., None] * up
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    lat = np.degrees(np.arcsin(np.clip(d[..., 1], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(d[..., 0], d[..., 2]))
    return lat, lon


def _sample_equirect(equirect: np.ndarray, lat, lon) -> np.ndarray:
    """Bilinear lookup with horizontal wrap and clamped poles."""
    hq, wq = equirect.shape[:2]
    u = (lon + 180.0) / 360.0 * wq - 0.5
    v = (90.0 - lat) / 180.0 * hq - 0.5
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]
    u1 = (u0 + 1) % wq
    u0 = u0 % wq
    v1 = np.clip(v0 + 1, 0, hq - 1)
    v0 = np.clip(v0, 0, hq - 1)
    top = equirect[v0, u0] * (1.0 - fu) + equirect[v0, u1] * fu
    bottom = equirect[v1, u0] * (1.0 - fu) + equirect[v1, u1] * fu
    return top * (1.0 - fv) + bottom * fv


def extract_viewport(bg_equirect, spec: ViewportSpec) -> ViewportImage:
    """Rectilinear view of an equirectangular panorama.

    ``bg_equirect`` is an H x 2H x 3 array (or image) in [0, 1]. Each output
    pixel centre is back-projected onto the sphere and sampled bilinearly.
    """
    if isinstance(bg_equirect, ViewportImage):
        bg_equirect = bg_equirect.rgb
    eq = np.asarray(bg_equirect, dtype=np.float64)
    if eq.ndim == 2:
        eq = np.repeat(eq[:, :, None], 3, axis=2)
    if eq.ndim != 3 or eq.shape[2] != 3:
        raise ValueError(f"equirectangular image must be H x W x 3, got {eq.shape}")
    hq, wq = eq.shape[:2]
    if abs(wq - 2 * hq) > 1:
        raise ValueError(
            f"equirectangular image must have width == 2 x height (+/-1 px), got {wq} x {hq}"
        )
    xs = np.arange(spec.width_px) + 0.5
    ys = np.arange(spec.height_px) + 0.5
    xx, yy = np.meshgrid(xs, ys)
    lat, lon = viewport_to_sphere(xx, yy, spec)
    rgb = np.clip(_sample_equirect(eq, lat, lon), 0.0, 1.0)
    return ViewportImage(rgb)


def pad_ar(
    ar,
    spec: ViewportSpec,
    placement: str = "centered",
    offset: tuple[int, int] = (0, 0),
) -> ViewportImage:
    """Place AR content on a transparent canvas of the viewport size.

    The canvas is zero in both colour and transparency. Odd margins are split
    with the smaller half on the top/left. ``offset`` (dx, dy) shifts the
    content from its centred position.
    """
    ar = check_image(ar)
    if placement != "centered":
        raise ValueError(f"unsupported placement {placement!r}")
    H, W = spec.height_px, spec.width_px
    h, w = ar.shape
    if h > H or w > W:
        raise ValueError(f"AR image {w} x {h} is larger than the viewport {W} x {H}")
    top = (H - h) // 2 + int(offset[1])
    left = (W - w) // 2 + int(offset[0])
    if top < 0 or left < 0 or top + h > H or left + w > W:
        raise ValueError(f"offset {offset} moves the AR image outside the viewport")
    rgb = np.zeros((H, W, 3))
    alpha = np.zeros((H, W))
    rgb[top : top + h, left : left + w] = ar.rgb
    alpha[top : top + h, left : left + w] = ar.alpha
    return ViewportImage(rgb, alpha)


def composite(ar_padded, bg_viewport, alpha) -> ViewportImage:
    """Blend: out = a * m * ar + (1 - a * m) * bg with m the AR transparency
    matrix and a the global mixing value. The result is fully opaque."""
    ar_padded = check_image(ar_padded)
    bg_viewport = check_image(bg_viewport)
    if ar_padded.shape != bg_viewport.shape:
        raise ValueError(
            f"AR {ar_padded.shape} and background {bg_viewport.shape} sizes differ"
        )
    a = alpha.alpha if isinstance(alpha, MixingLevel) else MixingLevel(alpha).alpha
    weight = (a * ar_padded.alpha)[:, :, None]
    rgb = weight * ar_padded.rgb + (1.0 - weight) * bg_viewport.rgb
    # convex blend; clip only removes last-ulp excursions
    return ViewportImage(np.clip(rgb, 0.0, 1.0))


def superimpose(ar, bg_equirect, alpha, spec: ViewportSpec, offset=(0, 0)) -> ViewportImage:
    """Full construction of a perceptual viewport image."""
    return composite(pad_ar(ar, spec, offset=offset), extract_viewport(bg_equirect, spec), alpha)
