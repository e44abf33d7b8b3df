"""Optimisation loops and the finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import LossResult, VQLossWeights, gan_loss, saliency_loss, vq_loss
from .network import ARFusionNet, PatchDiscriminator, StopGradient, VQNet, density_head


class SGD:
    """Plain SGD with optional heavy-ball momentum."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.value = p.value - self.lr * v


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    components: list = field(default_factory=list)

    def slope(self) -> float:
        """Least-squares slope of the loss curve per step."""
        if len(self.losses) < 2:
            return 0.0
        return float(np.polyfit(np.arange(len(self.losses)), self.losses, 1)[0])


def to_nchw(images) -> np.ndarray:
    """Stack (H, W), (H, W, C) or (N, H, W, C) arrays as an NCHW batch."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    elif arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"cannot interpret array of shape {arr.shape} as an image batch")
    return np.ascontiguousarray(np.transpose(arr, (0, 3, 1, 2)))


def _batches(n: int, batch_size: int | None, rng):
    if batch_size is None or batch_size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=batch_size, replace=False))


# -- loss closures ------------------------------------------------------------


def reconstruction_objective(net: VQNet, x: np.ndarray, w: VQLossWeights, feature_extractor=None):
    """Closure mapping a stop-gradient recorder to the full VQ loss."""

    def fn(sg: StopGradient) -> LossResult:
        x_hat, q = net.forward(x, sg)
        return vq_loss(x, x_hat, q, w, feature_extractor)

    return fn


def saliency_objective(net: VQNet, x: np.ndarray, gt: np.ndarray, w: VQLossWeights, rec: str = "saliency"):
    """Closure for L_rec + lambda * L_sal with the (frozen) saliency net."""

    def fn(sg: StopGradient) -> LossResult:
        out, _ = net.forward(x, sg)
        pred = density_head(ad.slice_channels(out, 0, 1))
        if rec == "image":
            return saliency_loss(pred, gt, w, rec="image", image=x, image_hat=ad.slice_channels(out, 1, out.shape[1]))
        return saliency_loss(pred, gt, w, rec=rec)

    return fn


def fusion_objective(net: ARFusionNet, x_ar, x_bg, x_s, gt, w: VQLossWeights):
    def fn(sg: StopGradient) -> LossResult:
        return saliency_loss(net.forward(x_ar, x_bg, x_s, sg), gt, w)

    return fn


# -- gradients ---------------------------------------------------------------


def analytic_gradients(objective: Callable, params: dict[str, Tensor]):
    """Backpropagate once. Frozen parameters report exact zeros.

    Returns the loss, the gradients by name and the stop-gradient record
    needed to replay the same surrogate.
    """
    for p in params.values():
        p.grad = None
    sg = StopGradient()
    res = objective(sg)
    ad.backward(res.total)
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value)) for name, p in params.items()
    }
    for p in params.values():
        p.grad = None
    return res.value, grads, sg.values


def numeric_gradients(
    objective: Callable, params: dict[str, Tensor], record: dict, h: float = 1e-5, names=None
) -> dict[str, np.ndarray]:
    """Central differences of the replayed surrogate loss."""
    out = {}
    for name in names or params:
        p = params[name]
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = objective(StopGradient(record)).value
            flat[i] = orig - h
            down = objective(StopGradient(record)).value
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2.0 * h)
        out[name] = g
    return out


@dataclass
class GradCheckReport:
    max_abs_error: dict
    max_rel_error: dict
    failures: dict
    analytic: dict
    numeric: dict

    @property
    def ok(self) -> bool:
        return not any(self.failures.values())


def gradient_check(
    objective: Callable,
    params: dict[str, Tensor],
    rtol: float = 1e-4,
    atol: float = 1e-6,
    h: float = 1e-5,
    names=None,
) -> GradCheckReport:
    """Compare backprop with central differences for every parameter entry.

    An entry passes when |a - n| <= max(rtol * max(|a|, |n|), atol).
    Quantizer indices and stop-gradient values are frozen at the base point
    so the numeric derivative is taken of the same smooth surrogate.
    """
    _, analytic, record = analytic_gradients(objective, params)
    numeric = numeric_gradients(objective, params, record, h, names)
    abs_err, rel_err, failures = {}, {}, {}
    for name, n in numeric.items():
        a = analytic[name]
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        abs_err[name] = float(diff.max()) if diff.size else 0.0
        rel_err[name] = float(np.max(np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)))
        failures[name] = int(np.sum(diff > np.maximum(rtol * scale, atol)))
    return GradCheckReport(abs_err, rel_err, failures, analytic, numeric)


# -- training loops ----------------------------------------------------------


def _run(
    objective_for: Callable,
    params: list[Tensor],
    n: int,
    steps: int,
    lr: float,
    momentum: float,
    batch_size: int | None,
    seed: int,
    after_step: Callable | None = None,
) -> TrainResult:
    rng = np.random.default_rng(seed)
    opt = SGD(params, lr, momentum)
    result = TrainResult()
    for _ in range(steps):
        idx = _batches(n, batch_size, rng)
        opt.zero_grad()
        res = objective_for(idx)(StopGradient())
        ad.backward(res.total)
        opt.step()
        result.losses.append(res.value)
        result.components.append(res.components)
        if after_step is not None:
            after_step(idx)
    opt.zero_grad()
    return result


def train_vq(
    net: VQNet,
    images,
    steps: int = 200,
    lr: float = 0.01,
    momentum: float = 0.9,
    batch_size: int | None = None,
    seed: int = 0,
    weights: VQLossWeights = VQLossWeights(),
    adversarial: bool = False,
    gan_weight: float = 0.1,
) -> TrainResult:
    """Reconstruction training of encoder, codebook and decoder.

    With ``adversarial=True`` a patch discriminator is trained alternately
    and the non-saturating generator loss is added with ``gan_weight``.
    """
    if net.mode != "reconstruction":
        raise ValueError("train_vq needs a network in reconstruction mode")
    x_all = to_nchw(images)
    disc = PatchDiscriminator(net.cfg.in_channels, seed) if adversarial else None
    disc_opt = SGD(disc.parameters(), lr, momentum) if disc else None

    def objective_for(idx):
        x = x_all[idx]

        def fn(sg):
            x_hat, q = net.forward(x, sg)
            res = vq_loss(x, x_hat, q, weights)
            if disc is None:
                return res
            disc.set_trainable(False)
            _, loss_g = gan_loss(disc(ad.constant(x)), disc(x_hat))
            disc.set_trainable(True)
            total = ad.add(res.total, ad.mul(loss_g, gan_weight))
            comps = dict(res.components, gan_g=float(loss_g.value), total=float(total.value))
            return LossResult(total, comps)

        return fn

    def disc_step(idx):
        x = x_all[idx]
        x_hat, _ = net.forward(x)
        disc_opt.zero_grad()
        loss_d, _ = gan_loss(disc(ad.constant(x)), disc(ad.constant(x_hat)))
        ad.backward(loss_d)
        disc_opt.step()

    return _run(
        objective_for,
        net.trainable_parameters(),
        len(x_all),
        steps,
        lr,
        momentum,
        batch_size,
        seed,
        disc_step if disc else None,
    )


def _as_density_batch(densities) -> np.ndarray:
    arr = np.asarray(densities, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    return arr / arr.sum(axis=(1, 2), keepdims=True)


def train_saliency(
    net: VQNet,
    images,
    densities,
    steps: int = 200,
    lr: float = 0.01,
    momentum: float = 0.9,
    batch_size: int | None = None,
    seed: int = 0,
    weights: VQLossWeights = VQLossWeights(),
    rec: str = "saliency",
) -> TrainResult:
    """Fine-tune the saliency decoder with encoder and codebook frozen."""
    if net.mode != "saliency":
        net.to_saliency(aux_channels=net.cfg.in_channels if rec == "image" else 0)
    x_all = to_nchw(images)
    gt_all = _as_density_batch(densities)
    if len(gt_all) != len(x_all):
        raise ValueError(f"{len(x_all)} images but {len(gt_all)} density maps")
    return _run(
        lambda idx: saliency_objective(net, x_all[idx], gt_all[idx], weights, rec),
        net.trainable_parameters(),
        len(x_all),
        steps,
        lr,
        momentum,
        batch_size,
        seed,
    )


def train_ar(
    net: ARFusionNet,
    ar_images,
    bg_images,
    s_images,
    densities,
    steps: int = 200,
    lr: float = 0.01,
    momentum: float = 0.9,
    batch_size: int | None = None,
    seed: int = 0,
    weights: VQLossWeights = VQLossWeights(),
) -> TrainResult:
    """Train the three decoders and the fusion head."""
    x_ar, x_bg, x_s = to_nchw(ar_images), to_nchw(bg_images), to_nchw(s_images)
    gt_all = _as_density_batch(densities)
    return _run(
        lambda idx: fusion_objective(net, x_ar[idx], x_bg[idx], x_s[idx], gt_all[idx], weights),
        net.trainable_parameters(),
        len(gt_all),
        steps,
        lr,
        momentum,
        batch_size,
        seed,
    )
