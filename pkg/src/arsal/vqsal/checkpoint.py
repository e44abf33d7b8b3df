"""Checkpoints: ``header.json`` plus one little-endian float64 blob per
parameter, all inside one directory."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import atomic_write_bytes, atomic_write_text
from .network import ARFusionNet, VQConfig, VQNet

FORMAT = "arsal-vq-checkpoint/1"


def _blob_name(param_name: str) -> str:
    return param_name.replace("/", "_") + ".f64"


def save_checkpoint(net, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = net.named_parameters()
    kind = "ar_fusion" if isinstance(net, ARFusionNet) else "vqnet"
    header = {
        "format": FORMAT,
        "kind": kind,
        "architecture": net.cfg.to_dict(),
        "K": net.cfg.K,
        "n_z": net.cfg.n_z,
        "seed": net.cfg.seed,
        "mode": getattr(net, "mode", "saliency"),
        "aux_channels": getattr(net, "aux_channels", 0),
        "parameters": [
            {"name": name, "shape": list(p.value.shape), "file": _blob_name(name)} for name, p in params.items()
        ],
        "extra": extra or {},
    }
    for name, p in params.items():
        atomic_write_bytes(directory / _blob_name(name), p.value.astype("<f8").tobytes())
    atomic_write_text(directory / "header.json", json.dumps(header, indent=2, sort_keys=True))
    return directory


def read_header(directory) -> dict:
    with open(Path(directory) / "header.json") as fh:
        header = json.load(fh)
    if header.get("format") != FORMAT:
        raise ValueError(f"not a VQ checkpoint: format {header.get('format')!r}")
    return header


def load_checkpoint(directory):
    """Rebuild the network recorded in ``directory``."""
    directory = Path(directory)
    header = read_header(directory)
    cfg = VQConfig.from_dict(header["architecture"])
    net = VQNet(cfg)
    if header["kind"] == "ar_fusion":
        net = ARFusionNet(net.to_saliency())
    elif header["mode"] == "saliency":
        net.to_saliency(aux_channels=int(header.get("aux_channels", 0)))
    params = net.named_parameters()
    for entry in header["parameters"]:
        if entry["name"] not in params:
            raise ValueError(f"checkpoint parameter {entry['name']!r} does not exist in the rebuilt network")
        raw = np.frombuffer((directory / entry["file"]).read_bytes(), dtype="<f8")
        target = params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != target.value.shape or raw.size != int(np.prod(shape)):
            raise ValueError(f"shape mismatch for {entry['name']}: {shape} vs {target.value.shape}")
        target.value = raw.reshape(shape).astype(np.float64)
    return net
