"""Loss stack for the VQ saliency networks.

Every function takes and returns autodiff tensors so the same code serves
training, gradient checks and plain evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS = 1e-7
_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_PYR_KERNEL = np.outer(_BINOMIAL, _BINOMIAL)[None, None]


@dataclass(frozen=True)
class VQLossWeights:
    beta: float = 0.25
    lam: float = 0.2

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")

    def to_dict(self) -> dict:
        return {"beta": self.beta, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "VQLossWeights":
        return cls(beta=float(d.get("beta", 0.25)), lam=float(d.get("lambda", d.get("lam", 0.2))))


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def mse(a, b) -> Tensor:
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _check_same(a, b, "mse")
    return ad.mean(ad.square(ad.sub(a, b)))


def pyramid_down(x: Tensor) -> Tensor:
    """Binomial blur with edge replication, then keep every second pixel."""
    n, c, h, w = x.shape
    flat = ad.reshape(x, (n * c, 1, h, w))
    down = ad.conv2d(ad.pad_edge(flat, 2), Tensor(_PYR_KERNEL), stride=2)
    return ad.reshape(down, (n, c) + down.shape[2:])


def gradient_magnitude(x: Tensor) -> Tensor:
    """Forward-difference gradient magnitude on the (H-1) x (W-1) valid grid."""
    h, w = x.shape[2], x.shape[3]
    base = ad.crop(x, slice(0, h - 1), slice(0, w - 1))
    gx = ad.sub(ad.crop(x, slice(0, h - 1), slice(1, w)), base)
    gy = ad.sub(ad.crop(x, slice(1, h), slice(0, w - 1)), base)
    return ad.sqrt(ad.add(ad.add(ad.square(gx), ad.square(gy)), 1e-8))


def perceptual_loss(a, b, scales: int = 3, feature_extractor: Callable | None = None) -> Tensor:
    """Multi-scale stand-in for a learned perceptual distance.

    Sums the MSE between matching binomial-pyramid levels (up to ``scales``,
    stopping once a side reaches 1 pixel) and the MSE between gradient
    magnitudes at full resolution. ``feature_extractor`` maps an NCHW tensor
    to features whose MSE is added on top.
    """
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _check_same(a, b, "perceptual_loss")
    total = mse(a, b)
    la, lb = a, b
    for _ in range(1, scales):
        if min(la.shape[2], la.shape[3]) < 2:
            break
        la, lb = pyramid_down(la), pyramid_down(lb)
        total = ad.add(total, mse(la, lb))
    if a.shape[2] >= 2 and a.shape[3] >= 2:
        total = ad.add(total, mse(gradient_magnitude(a), gradient_magnitude(b)))
    if feature_extractor is not None:
        total = ad.add(total, mse(feature_extractor(a), feature_extractor(b)))
    return total


def reconstruction_loss(x, x_hat, feature_extractor: Callable | None = None) -> Tensor:
    """Pixel MSE plus the perceptual proxy."""
    return ad.add(mse(x, x_hat), perceptual_loss(x, x_hat, feature_extractor=feature_extractor))


@dataclass
class LossResult:
    total: Tensor
    components: dict

    @property
    def value(self) -> float:
        return float(self.total.value)


def vq_loss(x, x_hat, q, w: VQLossWeights = VQLossWeights(), feature_extractor: Callable | None = None) -> LossResult:
    """Reconstruction + codebook + beta * commitment.

    ``q`` is the quantizer record from the forward pass. The codebook term
    compares the stopped encoder output with the gathered entries, so only
    the codebook receives its gradient; the commitment term does the
    reverse.
    """
    x, x_hat = ad.as_tensor(x), ad.as_tensor(x_hat)
    _check_same(x, x_hat, "vq_loss")
    _check_same(q.z_e, q.z_q, "vq_loss codes")
    rec = reconstruction_loss(x, x_hat, feature_extractor)
    codebook = mse(q.sg_z_e, q.z_q)
    commitment = mse(q.sg_z_q, q.z_e)
    total = ad.add(ad.add(rec, codebook), ad.mul(commitment, w.beta))
    return LossResult(
        total,
        {
            "rec": float(rec.value),
            "codebook": float(codebook.value),
            "commitment": float(commitment.value),
            "weighted_commitment": float(w.beta * commitment.value),
            "total": float(total.value),
        },
    )


def gan_loss(d_real, d_fake) -> tuple[Tensor, Tensor]:
    """Discriminator loss and non-saturating generator loss from patch
    probabilities (clipped to [EPS, 1 - EPS])."""
    d_real = ad.clip(ad.as_tensor(d_real), EPS, 1.0 - EPS)
    d_fake = ad.clip(ad.as_tensor(d_fake), EPS, 1.0 - EPS)
    loss_d = ad.sub(
        ad.mul(ad.mean(ad.log(d_real)), -1.0),
        ad.mean(ad.log(ad.sub(1.0, d_fake))),
    )
    loss_g = ad.mul(ad.mean(ad.log(d_fake)), -1.0)
    return loss_d, loss_g


def correlation(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Pearson correlation per image of an (N, H, W) batch, shape (N,).

    A constant map has zero covariance with anything, so it scores 0.
    """
    gt = np.asarray(gt, dtype=np.float64)
    dp = ad.sub(pred, ad.mean(pred, axis=(1, 2), keepdims=True))
    dg = gt - gt.mean(axis=(1, 2), keepdims=True)
    num = ad.sum(ad.mul(dp, dg), axis=(1, 2))
    sp = ad.sum(ad.square(dp), axis=(1, 2))
    sg = (dg**2).sum(axis=(1, 2))
    return ad.div(num, ad.sqrt(ad.add(ad.mul(sp, sg), 1e-24)))


def kl_divergence(pred: Tensor, gt: np.ndarray) -> Tensor:
    """KL(gt || pred) per image over unit-mass maps, shape (N,)."""
    gt = np.asarray(gt, dtype=np.float64)
    gt = gt / gt.sum(axis=(1, 2), keepdims=True)
    mask = gt > 0
    log_gt = np.where(mask, np.log(np.where(mask, gt, 1.0)), 0.0)
    cross = ad.sum(ad.mul(ad.log(ad.add(pred, EPS)), gt), axis=(1, 2))
    return ad.sub((gt * log_gt).sum(axis=(1, 2)), cross)


def saliency_loss(
    pred,
    gt,
    w: VQLossWeights | float = VQLossWeights(),
    rec: str = "saliency",
    image=None,
    image_hat=None,
    rec_scale: float | None = None,
) -> LossResult:
    """L_rec + lambda * (L_CC + L_KL) on unit-mass (N, H, W) predictions.

    With ``rec="saliency"`` the reconstruction term compares prediction and
    ground truth, both multiplied by ``rec_scale`` (H * W by default, giving
    mean-one maps). ``rec="image"`` compares ``image_hat`` with ``image``
    instead and ``rec="none"`` drops it. ``w`` may also be a bare lambda.
    """
    lam = w.lam if isinstance(w, VQLossWeights) else float(w)
    pred = ad.as_tensor(pred)
    gt = np.asarray(gt.value if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if pred.value.ndim == 2:
        pred = ad.reshape(pred, (1,) + pred.shape)
        gt = gt.reshape((1,) + gt.shape)
    if pred.shape != gt.shape:
        raise ValueError(f"saliency_loss: shape mismatch {pred.shape} vs {gt.shape}")
    l_cc = ad.mean(ad.sub(1.0, correlation(pred, gt)))
    l_kl = ad.mean(kl_divergence(pred, gt))
    if rec == "saliency":
        n, h, wd = pred.shape
        scale = float(h * wd) if rec_scale is None else float(rec_scale)
        p4 = ad.reshape(ad.mul(pred, scale), (n, 1, h, wd))
        l_rec = reconstruction_loss(Tensor(gt.reshape(n, 1, h, wd) * scale), p4)
    elif rec == "image":
        if image is None or image_hat is None:
            raise ValueError("rec='image' needs image and image_hat")
        l_rec = reconstruction_loss(image, image_hat)
    elif rec == "none":
        l_rec = Tensor(0.0)
    else:
        raise ValueError(f"unknown rec target {rec!r}")
    total = ad.add(l_rec, ad.mul(ad.add(l_cc, l_kl), lam))
    return LossResult(
        total,
        {
            "rec": float(l_rec.value),
            "cc": float(l_cc.value),
            "kl": float(l_kl.value),
            "total": float(total.value),
        },
    )
