"""Bottom-up saliency models: Itti-Koch, spectral residual and phase spectrum.

Each model is a scikit-learn style transformer: ``fit`` is a no-op and
``transform`` maps a list of images to a list of saliency maps in [0, 1].
Parameters live in ``get_params()`` so benchmark configs can record them.
"""

from __future__ import annotations

from typing import Callable, Protocol, runtime_checkable

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_image, check_images, resize
from .core import SaliencyDensity, normalize

MODEL_IDS = ("IT", "SR", "PFT")


@runtime_checkable
class SaliencyPredictor(Protocol):
    """Anything with a ``name`` and ``predict(image) -> SaliencyDensity``."""

    name: str

    def predict(self, image) -> SaliencyDensity: ...


class _SaliencyModel(BaseEstimator, TransformerMixin):
    name = ""

    def fit(self, X=None, y=None):
        return self

    def predict(self, image) -> SaliencyDensity:
        return self._predict(check_image(image))

    def transform(self, X):
        return [self.predict(im) for im in check_images(X)]

    def __sklearn_is_fitted__(self):
        return True

    def _predict(self, image) -> SaliencyDensity:
        raise NotImplementedError


def _flat(shape) -> SaliencyDensity:
    return SaliencyDensity(np.zeros(shape), "min-max", {"constant"})


def _finish(small_map: np.ndarray, blur_sigma: float, shape) -> SaliencyDensity:
    sal = ndimage.gaussian_filter(small_map, blur_sigma, mode="nearest")
    if sal.max() - sal.min() <= 1e-12 * max(abs(sal.max()), 1e-300):
        return _flat(shape)
    return normalize(resize(sal, shape), "min-max")


def _working_gray(image, width: int) -> np.ndarray:
    gray = image.gray()
    h, w = gray.shape
    out_w = min(width, w)
    out_h = max(1, int(round(h * out_w / w)))
    return resize(gray, (out_h, out_w))


class SpectralResidual(_SaliencyModel):
    """Spectral residual saliency.

    The log-amplitude spectrum minus its 3x3 local average is recombined with
    the original phase; the squared inverse transform is blurred.
    """

    name = "SR"

    def __init__(self, width: int = 64, blur_sigma: float = 2.5, avg_size: int = 3, amplitude_floor: float = 1e-2):
        self.width = width
        self.blur_sigma = blur_sigma
        self.avg_size = avg_size
        self.amplitude_floor = amplitude_floor

    def _predict(self, image):
        small = _working_gray(image, self.width)
        if small.max() - small.min() <= 1e-12:
            return _flat(image.shape)
        spectrum = np.fft.fft2(small)
        amp = np.abs(spectrum)
        # relative floor keeps spectral zeros from dominating the residual and
        # leaves the result invariant to global brightness scaling
        log_amp = np.log(amp + self.amplitude_floor * amp.mean())
        phase = np.angle(spectrum)
        residual = log_amp - ndimage.uniform_filter(log_amp, self.avg_size, mode="wrap")
        sal = np.abs(np.fft.ifft2(np.exp(residual + 1j * phase))) ** 2
        return _finish(sal, self.blur_sigma, image.shape)


class PhaseSpectrum(_SaliencyModel):
    """Phase-only Fourier saliency: unit amplitude, original phase."""

    name = "PFT"

    def __init__(self, width: int = 64, blur_sigma: float = 2.5):
        self.width = width
        self.blur_sigma = blur_sigma

    def _predict(self, image):
        small = _working_gray(image, self.width)
        if small.max() - small.min() <= 1e-12:
            return _flat(image.shape)
        phase = np.angle(np.fft.fft2(small))
        sal = np.abs(np.fft.ifft2(np.exp(1j * phase))) ** 2
        return _finish(sal, self.blur_sigma, image.shape)


# -- Itti-Koch ----------------------------------------------------------------

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _pyr_down(img: np.ndarray) -> np.ndarray:
    blurred = ndimage.convolve1d(img, _BINOMIAL, axis=0, mode="reflect")
    blurred = ndimage.convolve1d(blurred, _BINOMIAL, axis=1, mode="reflect")
    return blurred[::2, ::2]


def gaussian_pyramid(img: np.ndarray, levels: int = 9) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(1, levels):
        prev = pyr[-1]
        if min(prev.shape) < 2:
            pyr.append(prev.copy())
        else:
            pyr.append(_pyr_down(prev))
    return pyr


def gabor_kernel(theta_deg: float, wavelength: float = 4.0, sigma: float = 2.0, size: int = 9) -> np.ndarray:
    """Zero-mean odd (sine-phase) Gabor kernel oriented at ``theta_deg``.

    ``theta_deg`` is the orientation of the preferred edge/bar, measured
    counter-clockwise from the horizontal image axis.
    """
    half = size // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    ys = -ys  # image rows grow downward
    th = np.radians(theta_deg)
    # coordinate across the preferred orientation
    across = -xs * np.sin(th) + ys * np.cos(th)
    along = xs * np.cos(th) + ys * np.sin(th)
    env = np.exp(-(across**2 + along**2) / (2.0 * sigma**2))
    k = env * np.sin(2.0 * np.pi * across / wavelength)
    return k - k.mean()


def _local_maxima_mean(m: np.ndarray, size: int = 3) -> float:
    """Mean of local maxima other than the global maximum (0 if none)."""
    peaks = (m == ndimage.maximum_filter(m, size=size, mode="constant", cval=-np.inf)) & (m > 0)
    vals = m[peaks]
    if len(vals) == 0:
        return 0.0
    top = m.max()
    others = vals[vals < top]
    # a tied global maximum counts as a competing peak
    n_top = int(np.sum(vals == top))
    if n_top > 1:
        others = np.concatenate([others, np.full(n_top - 1, top)])
    return float(others.mean()) if len(others) else 0.0


def itti_normalize(m: np.ndarray) -> np.ndarray:
    """Promote maps with one dominant peak, suppress maps with many."""
    lo, hi = m.min(), m.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(m)
    scaled = (m - lo) / (hi - lo)
    return scaled * (1.0 - _local_maxima_mean(scaled)) ** 2


class IttiKoch(_SaliencyModel):
    """Centre-surround saliency over intensity, colour opponency and
    orientation channels of a 9-level Gaussian pyramid."""

    name = "IT"

    def __init__(
        self,
        min_side: int = 256,
        levels: int = 9,
        centers: tuple = (2, 3, 4),
        deltas: tuple = (3, 4),
        orientations: tuple = (0.0, 45.0, 90.0, 135.0),
        map_level: int = 4,
    ):
        self.min_side = min_side
        self.levels = levels
        self.centers = centers
        self.deltas = deltas
        self.orientations = orientations
        self.map_level = map_level

    def _center_surround(self, pyr):
        maps = []
        for c in self.centers:
            for d in self.deltas:
                s = c + d
                if s >= len(pyr):
                    continue
                surround = resize(pyr[s], pyr[c].shape)
                maps.append(np.abs(pyr[c] - surround))
        return maps

    def _conspicuity(self, feature_maps, shape):
        total = np.zeros(shape)
        for m in feature_maps:
            total += resize(itti_normalize(m), shape)
        return total

    def feature_channels(self, image):
        """Intensity, colour and orientation conspicuity maps at the map level."""
        img = check_image(image)
        rgb = img.rgb
        h, w = img.shape
        if min(h, w) < self.min_side:
            scale = self.min_side / min(h, w)
            shape = (int(round(h * scale)), int(round(w * scale)))
            rgb = np.stack([resize(rgb[:, :, k], shape) for k in range(3)], axis=2)
        r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
        intensity = (r + g + b) / 3.0
        # hue is only meaningful where there is enough light
        denom = np.where(intensity > 0.1 * max(intensity.max(), 1e-12), intensity, np.inf)
        rn, gn, bn = r / denom, g / denom, b / denom
        R = rn - (gn + bn) / 2.0
        G = gn - (rn + bn) / 2.0
        B = bn - (rn + gn) / 2.0
        Y = (rn + gn) / 2.0 - np.abs(rn - gn) / 2.0 - bn

        i_pyr = gaussian_pyramid(intensity, self.levels)
        level = min(self.map_level, len(i_pyr) - 1)
        out_shape = i_pyr[level].shape

        intensity_maps = self._center_surround(i_pyr)
        rg_pyr = gaussian_pyramid(R - G, self.levels)
        by_pyr = gaussian_pyramid(B - Y, self.levels)
        color_maps = self._center_surround(rg_pyr) + self._center_surround(by_pyr)

        orient_consp = np.zeros(out_shape)
        for theta in self.orientations:
            k = gabor_kernel(theta)
            o_pyr = [np.abs(ndimage.convolve(lvl, k, mode="reflect")) for lvl in i_pyr]
            orient_consp += itti_normalize(self._conspicuity(self._center_surround(o_pyr), out_shape))

        return {
            "intensity": self._conspicuity(intensity_maps, out_shape),
            "color": self._conspicuity(color_maps, out_shape),
            "orientation": orient_consp,
        }

    def _predict(self, image):
        channels = self.feature_channels(image)
        combined = sum(itti_normalize(m) for m in channels.values()) / len(channels)
        if combined.max() - combined.min() <= 1e-12:
            return _flat(image.shape)
        return normalize(resize(combined, image.shape), "min-max")


_REGISTRY: dict[str, Callable[[], _SaliencyModel]] = {
    "IT": IttiKoch,
    "SR": SpectralResidual,
    "PFT": PhaseSpectrum,
}


def register_model(model_id: str, factory: Callable[[], SaliencyPredictor]) -> None:
    """Add a predictor factory under ``model_id``."""
    _REGISTRY[model_id] = factory


def get_model(model_id: str) -> SaliencyPredictor:
    try:
        return _REGISTRY[model_id]()
    except KeyError:
        raise ValueError(f"unknown model id {model_id!r}; known: {sorted(_REGISTRY)}") from None


def as_predictor(model) -> SaliencyPredictor:
    if isinstance(model, str):
        return get_model(model)
    if isinstance(model, SaliencyPredictor):
        return model
    if callable(model):
        return _FunctionPredictor(model)
    raise TypeError(f"cannot use {model!r} as a saliency predictor")


class _FunctionPredictor:
    def __init__(self, fn):
        self.fn = fn
        self.name = getattr(fn, "__name__", "custom")

    def predict(self, image) -> SaliencyDensity:
        out = self.fn(image)
        return out if isinstance(out, SaliencyDensity) else SaliencyDensity(np.asarray(out, float))


def spectral_residual(img) -> SaliencyDensity:
    return SpectralResidual().predict(img)


def pft(img) -> SaliencyDensity:
    return PhaseSpectrum().predict(img)


def itti(img) -> SaliencyDensity:
    return IttiKoch().predict(img)
