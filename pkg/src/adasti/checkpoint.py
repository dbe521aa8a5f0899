"""Single-file checkpoints: fixed header followed by a torch payload.

Header layout: 8-byte magic, little-endian uint32 format version, 16-byte
ASCII config fingerprint.
"""
from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .data import GraphSpec, NormStats
from .errors import CheckpointVersionError
from .model import AdaSTI

MAGIC = b"ADASTI\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sI16s")


@dataclass
class Checkpoint:
    config: ExperimentConfig
    model_state: dict
    adjacency: np.ndarray
    norm_mean: np.ndarray
    norm_std: np.ndarray
    epoch: int = 0
    optimizer_state: dict | None = None
    rng_state: torch.Tensor | None = None
    history: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    @property
    def graph(self) -> GraphSpec:
        return GraphSpec(self.adjacency)

    @property
    def norm_stats(self) -> NormStats:
        return NormStats(self.norm_mean, self.norm_std)

    def build_model(self) -> AdaSTI:
        model = AdaSTI(self.config.model(), self.adjacency)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path):
    payload = {
        "config": asdict(ckpt.config),
        "model_state": ckpt.model_state,
        "adjacency": torch.as_tensor(ckpt.adjacency),
        "norm_mean": torch.as_tensor(ckpt.norm_mean),
        "norm_std": torch.as_tensor(ckpt.norm_std),
        "epoch": ckpt.epoch,
        "optimizer_state": ckpt.optimizer_state,
        "rng_state": ckpt.rng_state,
        "history": ckpt.history,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    header = _HEADER.pack(MAGIC, VERSION, ckpt.fingerprint.encode("ascii"))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointVersionError(f"{path}: truncated checkpoint")
    magic, version, fp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointVersionError(f"{path}: not an AdaSTI checkpoint")
    if version > VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version} is newer than supported {VERSION}"
        )
    payload = torch.load(io.BytesIO(raw[_HEADER.size:]), weights_only=True)
    ckpt = Checkpoint(
        config=ExperimentConfig(**payload["config"]),
        model_state=payload["model_state"],
        adjacency=payload["adjacency"].numpy(),
        norm_mean=payload["norm_mean"].numpy(),
        norm_std=payload["norm_std"].numpy(),
        epoch=payload["epoch"],
        optimizer_state=payload["optimizer_state"],
        rng_state=payload["rng_state"],
        history=payload["history"],
    )
    if ckpt.fingerprint != fp.decode("ascii"):
        raise CheckpointVersionError(f"{path}: header fingerprint does not match stored config")
    return ckpt
