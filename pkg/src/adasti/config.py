"""Model and experiment configuration.

Config files are flat ``key = value`` documents; ``#`` starts a comment.
Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ContractError, ParseError

PLACEMENTS = ("none", "nast", "stc")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64
    mlp_hidden: int = 2048
    d_state: int = 64
    layers: int = 4
    heads: int = 8
    emb_dim: int = 128
    attn_width: int = 64
    num_steps: int = 50
    stc_conv_kernel: int = 1
    positional: bool = True
    shared_directions: bool = False
    no_bis4pi: bool = False
    no_gated_attention: bool = False
    aux_s4_gcgru_placement: str = "none"

    def __post_init__(self):
        if self.aux_s4_gcgru_placement not in PLACEMENTS:
            raise ContractError(f"aux_s4_gcgru_placement must be one of {PLACEMENTS}")
        if self.channels % self.heads or self.attn_width % self.heads:
            raise ContractError("channel widths must be divisible by heads")
        if self.stc_conv_kernel % 2 == 0:
            raise ContractError("stc_conv_kernel must be odd")


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    data_path: str = ""  # empty -> synthetic ring benchmark
    missing_token: str = "NA"
    graph_path: str = ""
    graph_kind: str = "distance"  # distance | adjacency
    adjacency_threshold: float = 0.1
    L: int = 24
    stride: int = 24
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    # masks
    missing_pattern: str = "random"  # random | block | native
    missing_rate: float = 0.25
    n_v: int = 3
    n_t: int = 6
    mask_path: str = ""
    # synthetic benchmark
    synthetic_nodes: int = 8
    synthetic_windows: int = 400
    synthetic_noise: float = 0.1
    # model
    channels: int = 64
    mlp_hidden: int = 2048
    d_state: int = 64
    layers: int = 4
    heads: int = 8
    emb_dim: int = 128
    attn_width: int = 64
    stc_conv_kernel: int = 1
    positional: bool = True
    shared_directions: bool = False
    # diffusion
    num_steps: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.2
    schedule: str = "quadratic"
    # objective / sampling
    lam: float = 1.0
    target_fraction: float = 0.1
    k: int = 100
    val_k: int = 1
    # optimisation
    lr: float = 1e-3
    weight_decay: float = 1e-6
    epochs: int = 200
    batch_size: int = 16
    val_every: int = 5
    seed: int = 0
    # ablations / alternative readings
    no_bis4pi: bool = False
    no_gated_attention: bool = False
    literal_reverse_coeffs: bool = False
    literal_reconstruction: bool = False
    aux_s4_gcgru_placement: str = "none"
    # output
    output_dir: str = "runs/default"

    def __post_init__(self):
        checks = [
            (self.missing_pattern in ("random", "block", "native"), "missing_pattern"),
            (self.graph_kind in ("distance", "adjacency"), "graph_kind"),
            (self.schedule in ("linear", "quadratic"), "schedule"),
            (0 < self.missing_rate < 1, "missing_rate must lie in (0, 1)"),
            (0 < self.target_fraction < 1, "target_fraction must lie in (0, 1)"),
            (self.lam >= 0, "lam must be >= 0"),
            (0 < self.beta_min < self.beta_max < 1, "need 0 < beta_min < beta_max < 1"),
            (self.k >= 1 and self.val_k >= 1, "k must be >= 1"),
            (self.L >= 1 and self.stride >= 1, "L and stride must be positive"),
            (0 < self.train_fraction < 1 and 0 <= self.val_fraction < 1
             and self.train_fraction + self.val_fraction < 1, "split fractions"),
            (self.epochs >= 1 and self.batch_size >= 1, "epochs/batch_size"),
        ]
        for ok, what in checks:
            if not ok:
                raise ContractError(f"invalid config: {what}")
        self.model()  # validates model fields

    def model(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def fingerprint(self) -> str:
        text = "\n".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def validate_paths(self):
        for key in ("data_path", "graph_path", "mask_path"):
            value = getattr(self, key)
            if value and not Path(value).exists():
                raise ContractError(f"{key} does not exist: {value}")


def _coerce(raw: str, typ, key, lineno):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ParseError(f"bad value {raw!r} for {key}", line=lineno) from None
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    return raw


def parse_config(text: str) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ParseError(f"unknown config key {key!r}", line=lineno)
        values[key] = _coerce(raw, types[key], key, lineno)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())
