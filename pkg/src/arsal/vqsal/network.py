"""Encoder, codebook quantizer, decoders and the multi-decoder fusion net."""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class VQConfig:
    """Toy-scale architecture. The encoder downsamples by 4 overall."""

    in_channels: int = 3
    channels: tuple = (16, 32)
    n_z: int = 16
    K: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "channels": list(self.channels),
            "n_z": self.n_z,
            "K": self.K,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VQConfig":
        return cls(
            in_channels=int(d["in_channels"]),
            channels=tuple(int(c) for c in d["channels"]),
            n_z=int(d["n_z"]),
            K=int(d["K"]),
            seed=int(d.get("seed", 0)),
        )


class Conv:
    """Parameter holder for one convolution layer."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng, name: str):
        fan_in = c_in * k * k
        self.weight = Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (c_out, c_in, k, k)), True, f"{name}.weight")
        self.bias = Tensor(np.zeros(c_out), True, f"{name}.bias")
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self):
        return [self.weight, self.bias]


class _Module:
    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {f"{prefix}{p.name}": p for p in self.parameters()}

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None


class Encoder(_Module):
    """Two stride-2 convolutions and a stride-1 projection to n_z channels."""

    def __init__(self, cfg: VQConfig, rng):
        c1, c2 = cfg.channels
        self.layers = [
            Conv(cfg.in_channels, c1, 3, 2, rng, "enc.0"),
            Conv(c1, c2, 3, 2, rng, "enc.1"),
            Conv(c2, cfg.n_z, 3, 1, rng, "enc.2"),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.tanh(self.layers[0](x))
        h = ad.tanh(self.layers[1](h))
        return self.layers[2](h)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class Decoder(_Module):
    """Mirror of the encoder with nearest-neighbour upsampling."""

    def __init__(self, cfg: VQConfig, out_channels: int, rng, name: str = "dec"):
        c1, c2 = cfg.channels
        self.out_channels = out_channels
        self.layers = [
            Conv(cfg.n_z, c2, 3, 1, rng, f"{name}.0"),
            Conv(c2, c1, 3, 1, rng, f"{name}.1"),
            Conv(c1, out_channels, 3, 1, rng, f"{name}.2"),
        ]

    def __call__(self, z: Tensor) -> Tensor:
        h = ad.tanh(self.layers[0](z))
        h = ad.upsample_nearest(h, 2)
        h = ad.tanh(self.layers[1](h))
        h = ad.upsample_nearest(h, 2)
        return self.layers[2](h)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def renamed(self, name: str) -> "Decoder":
        """Deep copy with parameters renamed under ``name``."""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.name = name + p.name[p.name.index(".") :]
        return clone


class Codebook(_Module):
    """K x n_z embedding table."""

    def __init__(self, entries: np.ndarray):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2:
            raise ValueError("codebook entries must be a K x n_z matrix")
        if np.any(np.isnan(entries)):
            raise ValueError("codebook contains NaN entries")
        if entries.shape[0] < 1:
            raise ValueError("codebook needs at least one entry")
        if entries.shape[0] == 1:
            warnings.warn("codebook with K=1 makes the quantizer output constant", RuntimeWarning, stacklevel=2)
        self.entries = Tensor(entries, True, "codebook")

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def n_z(self) -> int:
        return self.entries.shape[1]

    def parameters(self):
        return [self.entries]


@dataclass
class VisualTokens:
    """Nearest-entry index per site and the gathered entries."""

    indices: np.ndarray
    embedded: np.ndarray


def quantize(z_hat: np.ndarray, cb) -> VisualTokens:
    """Map every spatial code (last axis n_z) to its nearest codebook entry.

    Ties resolve to the lowest index.
    """
    entries = cb.entries.value if isinstance(cb, Codebook) else np.asarray(cb, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z_hat.shape[-1] != entries.shape[1]:
        raise ValueError(f"code dimension {z_hat.shape[-1]} does not match codebook n_z {entries.shape[1]}")
    flat = z_hat.reshape(-1, entries.shape[1])
    d2 = ((flat[:, None, :] - entries[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1).reshape(z_hat.shape[:-1])
    return VisualTokens(idx, entries[idx])


class StopGradient:
    """Records the values behind every stop-gradient and quantizer choice.

    A replaying instance substitutes the recorded values, which turns the
    forward pass into the smooth surrogate whose exact derivative equals the
    straight-through gradient. Finite-difference checks rely on this.
    """

    def __init__(self, replay: dict | None = None):
        self.replay = replay is not None
        self.values: dict = dict(replay) if replay else {}

    def __call__(self, key: str, t: Tensor) -> Tensor:
        if self.replay:
            return Tensor(self.values[key])
        self.values[key] = t.value.copy()
        return Tensor(t.value.copy())

    def indices(self, key: str, compute) -> np.ndarray:
        if self.replay:
            return self.values[key]
        idx = compute()
        self.values[key] = idx
        return idx


@dataclass
class QuantizeResult:
    z_e: Tensor  # encoder output, NCHW
    z_q: Tensor  # gathered codebook entries, NCHW (gradient reaches codebook)
    z_st: Tensor  # straight-through decoder input, value of z_q, gradient to z_e
    tokens: VisualTokens
    sg_z_e: Tensor = field(repr=False, default=None)
    sg_z_q: Tensor = field(repr=False, default=None)


def quantize_tensor(z_e: Tensor, codebook: Codebook, sg: StopGradient, key: str = "q") -> QuantizeResult:
    nhwc = ad.transpose(z_e, (0, 2, 3, 1))
    idx = sg.indices(f"{key}.idx", lambda: quantize(nhwc.value, codebook).indices)
    z_q_nhwc = ad.gather_rows(codebook.entries, idx)
    z_q = ad.transpose(z_q_nhwc, (0, 3, 1, 2))
    offset = sg(f"{key}.offset", ad.sub(z_q, z_e))
    z_st = ad.add(z_e, offset)
    tokens = VisualTokens(idx, codebook.entries.value[idx])
    return QuantizeResult(z_e, z_q, z_st, tokens, sg(f"{key}.z_e", z_e), sg(f"{key}.z_q", z_q))


class VQNet:
    """Encoder, codebook and decoder.

    ``mode="reconstruction"`` trains everything with the decoder producing an
    image. ``mode="saliency"`` freezes the encoder and codebook and uses a
    saliency decoder (one channel, plus ``aux_channels`` of image
    reconstruction when L_rec targets the input image).
    """

    def __init__(self, cfg: VQConfig | None = None, mode: str = "reconstruction", aux_channels: int = 0):
        self.cfg = cfg or VQConfig()
        rng = np.random.default_rng(self.cfg.seed)
        self.encoder = Encoder(self.cfg, rng)
        self.codebook = Codebook(rng.normal(0.0, 1.0, (self.cfg.K, self.cfg.n_z)))
        self.decoder = Decoder(self.cfg, self.cfg.in_channels, rng, "dec")
        self.aux_channels = 0
        self.mode = "reconstruction"
        if mode == "saliency":
            self.to_saliency(aux_channels=aux_channels)
        elif mode != "reconstruction":
            raise ValueError(f"unknown mode {mode!r}")

    @property
    def frozen(self) -> bool:
        return self.mode == "saliency"

    def to_saliency(self, aux_channels: int = 0, seed: int | None = None) -> "VQNet":
        """Switch to saliency mode: freeze encoder and codebook, replace the
        decoder by a fresh saliency decoder initialized from the image
        decoder's hidden layers."""
        rng = np.random.default_rng(self.cfg.seed + 1 if seed is None else seed)
        old = self.decoder
        sal = Decoder(self.cfg, 1 + aux_channels, rng, "sal")
        for new_layer, old_layer in zip(sal.layers[:-1], old.layers[:-1]):
            new_layer.weight.value = old_layer.weight.value.copy()
            new_layer.bias.value = old_layer.bias.value.copy()
        self.decoder = sal
        self.aux_channels = aux_channels
        self.mode = "saliency"
        self.encoder.set_trainable(False)
        self.codebook.set_trainable(False)
        return self

    def encode(self, x: Tensor, sg: StopGradient, key: str = "q") -> QuantizeResult:
        return quantize_tensor(self.encoder(x), self.codebook, sg, key)

    def forward(self, x, sg: StopGradient | None = None):
        sg = sg or StopGradient()
        q = self.encode(ad.as_tensor(x), sg)
        return self.decoder(q.z_st), q

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.codebook.parameters() + self.decoder.parameters()

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def tokens(self, x: np.ndarray) -> VisualTokens:
        z = self.encoder(ad.constant(x)).value
        return quantize(np.transpose(z, (0, 2, 3, 1)), self.codebook)


def density_head(raw: Tensor) -> Tensor:
    """Softplus then unit mass per image: (N, 1, H, W) -> (N, H, W)."""
    n, _, h, w = raw.shape
    pos = ad.reshape(ad.softplus(raw), (n, h, w))
    total = ad.sum(pos, axis=(1, 2), keepdims=True)
    return ad.div(pos, total)


class ARFusionNet:
    """Shared frozen encoder/codebook, three decoders and a 1x1 fusion conv.

    Decoder order in the fusion input is (AR, BG, S).
    """

    BRANCHES = ("ar", "bg", "s")

    def __init__(self, base: VQNet, seed: int = 0):
        if base.mode != "saliency":
            base = copy.deepcopy(base).to_saliency()
        self.cfg = base.cfg
        self.encoder = base.encoder
        self.codebook = base.codebook
        self.encoder.set_trainable(False)
        self.codebook.set_trainable(False)
        if base.aux_channels:
            raise ValueError("fusion decoders must be single-channel saliency decoders")
        self.decoders = {b: base.decoder.renamed(f"dec_{b}") for b in self.BRANCHES}
        rng = np.random.default_rng(seed)
        self.fuse_weight = Tensor(
            np.full((1, 3, 1, 1), 1.0 / 3.0) + rng.normal(0.0, 1e-3, (1, 3, 1, 1)), True, "fuse.weight"
        )
        self.fuse_bias = Tensor(np.zeros(1), True, "fuse.bias")

    def parameters(self) -> list[Tensor]:
        out = self.encoder.parameters() + self.codebook.parameters()
        for b in self.BRANCHES:
            out += self.decoders[b].parameters()
        return out + [self.fuse_weight, self.fuse_bias]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def branch_outputs(self, x_ar, x_bg, x_s, sg: StopGradient | None = None):
        sg = sg or StopGradient()
        shapes = {np.shape(ad.as_tensor(v).value) for v in (x_ar, x_bg, x_s)}
        if len(shapes) != 1:
            raise ValueError(f"AR, BG and superimposed inputs differ in shape: {sorted(shapes)}")
        outs = []
        for b, x in zip(self.BRANCHES, (x_ar, x_bg, x_s)):
            q = quantize_tensor(self.encoder(ad.as_tensor(x)), self.codebook, sg, key=f"q_{b}")
            outs.append(self.decoders[b](q.z_st))
        return outs

    def forward(self, x_ar, x_bg, x_s, sg: StopGradient | None = None) -> Tensor:
        outs = self.branch_outputs(x_ar, x_bg, x_s, sg)
        fused = ad.conv2d(ad.concat(outs, axis=1), self.fuse_weight, self.fuse_bias)
        return density_head(fused)


class PatchDiscriminator(_Module):
    """Three convolutions ending in a per-patch real/fake probability."""

    def __init__(self, in_channels: int = 3, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.layers = [
            Conv(in_channels, 8, 3, 2, rng, "disc.0"),
            Conv(8, 16, 3, 2, rng, "disc.1"),
            Conv(16, 1, 3, 1, rng, "disc.2"),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.tanh(self.layers[0](x))
        h = ad.tanh(self.layers[1](h))
        return ad.sigmoid(self.layers[2](h))

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]
