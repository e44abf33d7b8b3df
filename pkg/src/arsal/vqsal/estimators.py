"""scikit-learn style wrappers around the VQ saliency networks."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_grid, check_image, check_images, resize
from ..core import SaliencyDensity
from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import VQLossWeights
from .network import ARFusionNet, VQConfig, VQNet, density_head
from .training import to_nchw, train_ar, train_saliency, train_vq


def _work_batch(images, size: int) -> np.ndarray:
    out = []
    for im in check_images(images):
        out.append(np.stack([resize(im.rgb[:, :, k], (size, size)) for k in range(3)], axis=2))
    return np.stack(out)


def _work_density(densities, size: int) -> np.ndarray:
    out = []
    for d in densities:
        g = np.maximum(resize(check_grid(d), (size, size)), 0.0)
        total = g.sum()
        out.append(g / total if total > 0 else np.full(g.shape, 1.0 / g.size))
    return np.stack(out)


def _to_density(pred: np.ndarray, shape) -> SaliencyDensity:
    g = np.maximum(resize(pred, shape), 0.0)
    return SaliencyDensity(g / g.sum(), "sum-to-one")


class _VQBase(BaseEstimator):
    def _cfg(self) -> VQConfig:
        if self.work_size % 4:
            raise ValueError(f"work_size must be a multiple of 4, got {self.work_size}")
        return VQConfig(in_channels=3, channels=tuple(self.channels), n_z=self.n_z, K=self.K, seed=self.seed)

    def _weights(self) -> VQLossWeights:
        return VQLossWeights(beta=self.beta, lam=self.lam)

    def save(self, directory) -> None:
        check_is_fitted(self, "net_")
        save_checkpoint(self.net_, directory, extra={"estimator": self.get_params()})

    @classmethod
    def load(cls, directory):
        from .checkpoint import read_header

        est = cls(**read_header(directory)["extra"].get("estimator", {}))
        est.net_ = load_checkpoint(directory)
        return est


class VQSal(_VQBase):
    """Single-stream VQ saliency predictor.

    ``fit`` pretrains encoder, codebook and image decoder by reconstruction,
    then freezes encoder and codebook and fine-tunes a saliency decoder.
    Images are processed at ``work_size`` x ``work_size``.
    """

    def __init__(
        self,
        K: int = 64,
        n_z: int = 16,
        channels: tuple = (16, 32),
        work_size: int = 32,
        steps_vq: int = 200,
        steps_sal: int = 200,
        lr: float = 0.01,
        momentum: float = 0.9,
        beta: float = 0.25,
        lam: float = 0.2,
        rec_target: str = "saliency",
        batch_size: int | None = None,
        seed: int = 0,
    ):
        self.K = K
        self.n_z = n_z
        self.channels = channels
        self.work_size = work_size
        self.steps_vq = steps_vq
        self.steps_sal = steps_sal
        self.lr = lr
        self.momentum = momentum
        self.beta = beta
        self.lam = lam
        self.rec_target = rec_target
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        x = _work_batch(X, self.work_size)
        gt = _work_density(y, self.work_size)
        if len(x) != len(gt):
            raise ValueError(f"{len(x)} images but {len(gt)} ground-truth maps")
        net = VQNet(self._cfg())
        self.vq_curve_ = train_vq(
            net, x, self.steps_vq, self.lr, self.momentum, self.batch_size, self.seed, self._weights()
        ).losses
        net.to_saliency(aux_channels=3 if self.rec_target == "image" else 0)
        self.sal_curve_ = train_saliency(
            net, x, gt, self.steps_sal, self.lr, self.momentum, self.batch_size, self.seed, self._weights(),
            self.rec_target,
        ).losses
        self.net_ = net
        return self

    def predict_one(self, image) -> SaliencyDensity:
        check_is_fitted(self, "net_")
        img = check_image(image)
        out, _ = self.net_.forward(to_nchw(_work_batch([img], self.work_size)))
        pred = density_head(ad.slice_channels(out, 0, 1)).value[0]
        return _to_density(pred, img.shape)

    def predict(self, X) -> list[SaliencyDensity]:
        return [self.predict_one(im) for im in check_images(X)]


class VQSalAR(_VQBase):
    """Three-decoder AR fusion network on a shared frozen encoder.

    ``X`` is a sequence of objects with ``ar_padded``, ``bg_view`` and
    ``superimposed`` images (see :class:`arsal.fusion.FusionInputs`).
    """

    def __init__(
        self,
        K: int = 64,
        n_z: int = 16,
        channels: tuple = (16, 32),
        work_size: int = 32,
        steps_vq: int = 200,
        steps_sal: int = 200,
        steps_ar: int = 200,
        lr: float = 0.01,
        momentum: float = 0.9,
        beta: float = 0.25,
        lam: float = 0.2,
        batch_size: int | None = None,
        seed: int = 0,
    ):
        self.K = K
        self.n_z = n_z
        self.channels = channels
        self.work_size = work_size
        self.steps_vq = steps_vq
        self.steps_sal = steps_sal
        self.steps_ar = steps_ar
        self.lr = lr
        self.momentum = momentum
        self.beta = beta
        self.lam = lam
        self.batch_size = batch_size
        self.seed = seed

    def _triples(self, X):
        ar = _work_batch([item.ar_padded for item in X], self.work_size)
        bg = _work_batch([item.bg_view for item in X], self.work_size)
        s = _work_batch([item.superimposed for item in X], self.work_size)
        return ar, bg, s

    def fit(self, X, y, base: VQNet | None = None):
        """Train; ``base`` supplies an already fine-tuned saliency VQNet."""
        X = list(X)
        ar, bg, s = self._triples(X)
        gt = _work_density(y, self.work_size)
        if base is None:
            pool = np.concatenate([ar, bg, s])
            base = VQNet(self._cfg())
            train_vq(base, pool, self.steps_vq, self.lr, self.momentum, self.batch_size, self.seed, self._weights())
            base.to_saliency()
            train_saliency(
                base, s, gt, self.steps_sal, self.lr, self.momentum, self.batch_size, self.seed, self._weights()
            )
        net = ARFusionNet(base, seed=self.seed)
        self.ar_curve_ = train_ar(
            net, ar, bg, s, gt, self.steps_ar, self.lr, self.momentum, self.batch_size, self.seed, self._weights()
        ).losses
        self.net_ = net
        return self

    def predict_one(self, item) -> SaliencyDensity:
        check_is_fitted(self, "net_")
        shape = check_image(item.superimposed).shape
        ar, bg, s = (to_nchw(b) for b in self._triples([item]))
        return _to_density(self.net_.forward(ar, bg, s).value[0], shape)

    def predict(self, X) -> list[SaliencyDensity]:
        return [self.predict_one(item) for item in X]
