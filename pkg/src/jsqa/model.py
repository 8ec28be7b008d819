"""Raw-waveform CNN encoder with an optional projection head and a bounded MOS head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, DataError

Mode = Literal["train", "eval"]

LEAKY_SLOPE = 0.2
DROPOUT_RATE = 0.2
BN_MOMENTUM = 0.1


def block_schedule(start: int, blocks: int = 4, per_block: int = 4, growth: int = 2) -> tuple[int, ...]:
    """Channel counts that grow by ``growth`` every ``per_block`` layers."""
    return tuple(start * growth ** (i // per_block) for i in range(blocks * per_block))


def alternating_strides(num_layers: int) -> tuple[int, ...]:
    return tuple(2 if i % 2 == 0 else 1 for i in range(num_layers))


@dataclass
class EncoderConfig:
    num_layers: int = 16
    kernel_size: int = 15
    channel_schedule: tuple[int, ...] = block_schedule(64)
    stride_schedule: tuple[int, ...] = alternating_strides(16)
    leaky_slope: float = LEAKY_SLOPE
    bn_momentum: float = BN_MOMENTUM

    def __post_init__(self):
        self.channel_schedule = tuple(int(c) for c in self.channel_schedule)
        self.stride_schedule = tuple(int(s) for s in self.stride_schedule)
        self.validate()

    @classmethod
    def narrow(cls) -> "EncoderConfig":
        """16 filters in the first block, doubling every 4 layers (128-d embedding)."""
        return cls(channel_schedule=block_schedule(16))

    @classmethod
    def toy(cls, start: int = 4) -> "EncoderConfig":
        return cls(channel_schedule=block_schedule(start))

    @property
    def embedding_dim(self) -> int:
        return self.channel_schedule[-1] if self.channel_schedule else 0

    @property
    def half_dim(self) -> int:
        return self.embedding_dim // 2

    def validate(self) -> None:
        if self.num_layers < 0:
            raise ConfigError("num_layers must be non-negative")
        if len(self.channel_schedule) != self.num_layers or len(self.stride_schedule) != self.num_layers:
            raise ConfigError(
                f"channel/stride schedules need {self.num_layers} entries, "
                f"got {len(self.channel_schedule)}/{len(self.stride_schedule)}"
            )
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd number")
        if any(c < 1 for c in self.channel_schedule) or any(s < 1 for s in self.stride_schedule):
            raise ConfigError("channels and strides must be positive")
        for i in range(1, self.num_layers):
            if self.channel_schedule[i] != self.channel_schedule[i - 1] and i % 4 != 0:
                raise ConfigError(f"channel count may only change at layers divisible by 4 (changed at {i})")
        if self.num_layers and self.embedding_dim % 2:
            raise ConfigError("embedding dimension must be even")

    def reference_deviations(self) -> list[str]:
        notes = []
        if self.num_layers != 16:
            notes.append(f"num_layers={self.num_layers} (reference: 16)")
        if self.kernel_size != 15:
            notes.append(f"kernel_size={self.kernel_size} (reference: 15)")
        if self.num_layers and self.channel_schedule[0] != 16:
            notes.append(f"first block has {self.channel_schedule[0]} filters (reference text: 16)")
        if self.embedding_dim != 512:
            notes.append(f"embedding_dim={self.embedding_dim} (reference: 512)")
        return notes

    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for s in self.stride_schedule:
            rf += (self.kernel_size - 1) * jump
            jump *= s
        return rf

    def output_length(self, n: int) -> int:
        pad = self.kernel_size // 2
        for s in self.stride_schedule:
            n = (n + 2 * pad - self.kernel_size) // s + 1
        return n


@dataclass
class ProjectionConfig:
    enabled: bool = False
    input_dim: int = 256
    layer_dims: tuple[int, int] = (128, 64)
    dropout_rate: float = DROPOUT_RATE
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.layer_dims != (self.input_dim // 2, self.input_dim // 4):
            raise ConfigError(f"projection layers must halve {self.input_dim}: got {self.layer_dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")


@dataclass
class RegressorConfig:
    input_dim: int = 512
    hidden_dims: tuple[int, int, int] = (256, 128, 64)
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if len(self.hidden_dims) != 3:
            raise ConfigError("regressor needs exactly 3 hidden layers (4 linear layers in total)")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    regressor: RegressorConfig = field(default_factory=RegressorConfig)

    @classmethod
    def for_encoder(cls, encoder: EncoderConfig, projection: bool = False,
                    dropout_rate: float = DROPOUT_RATE) -> "ModelConfig":
        e = encoder.embedding_dim
        h = encoder.half_dim
        return cls(
            encoder,
            ProjectionConfig(projection, h, (h // 2, h // 4), dropout_rate, encoder.leaky_slope),
            RegressorConfig(e, (e // 2, e // 4, e // 8), encoder.leaky_slope),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig(**d["encoder"]), ProjectionConfig(**d["projection"]), RegressorConfig(**d["regressor"]))


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        c_in = 1
        for c_out, stride in zip(cfg.channel_schedule, cfg.stride_schedule):
            self.convs.append(nn.Conv1d(c_in, c_out, cfg.kernel_size, stride=stride, padding=cfg.kernel_size // 2))
            self.norms.append(nn.BatchNorm1d(c_out, momentum=cfg.bn_momentum))
            c_in = c_out

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        if self.cfg.num_layers == 0:
            raise ConfigError("encoder has no layers")
        if wav.dim() != 2:
            raise DataError(f"expected (batch, samples), got shape {tuple(wav.shape)}")
        rf = self.cfg.receptive_field()
        if wav.shape[1] < rf:
            raise DataError(f"input of {wav.shape[1]} samples is shorter than the receptive field ({rf})")
        x = wav.unsqueeze(1)
        for conv, norm in zip(self.convs, self.norms):
            x = F.leaky_relu(norm(conv(x)), self.cfg.leaky_slope)
        return x.mean(dim=-1)


class ProjectionHead(nn.Module):
    def __init__(self, cfg: ProjectionConfig):
        super().__init__()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.input_dim, cfg.layer_dims[0])
        self.fc2 = nn.Linear(cfg.layer_dims[0], cfg.layer_dims[1])

    def forward(self, h: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        x = F.leaky_relu(self.fc1(h), self.cfg.leaky_slope)
        p = self.cfg.dropout_rate
        if self.training and p > 0.0:
            keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
            x = x * keep / (1.0 - p)
        return self.fc2(x)


class RegressionHead(nn.Module):
    def __init__(self, cfg: RegressorConfig):
        super().__init__()
        self.cfg = cfg
        dims = (cfg.input_dim, *cfg.hidden_dims)
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(dims[-1], 1)

    def pre_activation(self, e: torch.Tensor) -> torch.Tensor:
        x = e
        for fc in self.hidden:
            x = F.leaky_relu(fc(x), self.cfg.leaky_slope)
        return self.out(x).squeeze(-1)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return scaled_sigmoid(self.pre_activation(e))


def scaled_sigmoid(x: torch.Tensor) -> torch.Tensor:
    """Map reals onto the MOS range (1, 5)."""
    return 1.0 + 4.0 * torch.sigmoid(x)


class JsqaModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder)
        self.projection = ProjectionHead(cfg.projection) if cfg.projection.enabled else None
        self.regressor = RegressionHead(cfg.regressor)

    def contrastive_vectors(self, wav: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        """Vectors fed to the contrastive loss: the half embedding, projected if the head is on."""
        h = half_embedding(self.encoder(wav))
        return self.projection(h, generator) if self.projection is not None else h

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        return self.regressor(self.encoder(wav))


# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------


def _fan_in_uniform_(t: torch.Tensor, fan_in: int, slope: float, gen: torch.Generator) -> None:
    bound = math.sqrt(6.0 / ((1.0 + slope ** 2) * fan_in))
    with torch.no_grad():
        t.copy_((torch.rand(t.shape, generator=gen, dtype=torch.float64) * 2.0 - 1.0) * bound)


def init_params(cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> JsqaModel:
    """Build a model with deterministic fan-in-scaled uniform weights and zero biases."""
    model = JsqaModel(cfg).to(dtype)
    gen = torch.Generator().manual_seed(int(seed))
    slope = cfg.encoder.leaky_slope
    for module in model.modules():
        if isinstance(module, (nn.Conv1d, nn.Linear)) and module.weight.numel():
            fan_in = module.weight[0].numel()
            _fan_in_uniform_(module.weight, fan_in, slope, gen)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm1d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
            module.reset_running_stats()
    return model


def set_mode(module: nn.Module, mode: Mode) -> None:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    module.train(mode == "train")


def encoder_forward(model: JsqaModel, batch: torch.Tensor, mode: Mode = "eval") -> torch.Tensor:
    set_mode(model.encoder, mode)
    return model.encoder(batch)


def half_embedding(e: torch.Tensor, embedding_dim: int | None = None) -> torch.Tensor:
    d = e.shape[-1]
    if (embedding_dim is not None and d != embedding_dim) or d % 2:
        raise DataError(f"cannot halve an embedding of dimension {d}")
    return e[..., : d // 2]


def projection_forward(model: JsqaModel, h: torch.Tensor, mode: Mode = "eval",
                       generator: torch.Generator | None = None) -> torch.Tensor:
    if model.projection is None:
        raise ConfigError("projection head is disabled in this model")
    set_mode(model.projection, mode)
    return model.projection(h, generator)


def regressor_forward(model: JsqaModel, e: torch.Tensor) -> torch.Tensor:
    return model.regressor(e)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def layer_table(cfg: EncoderConfig, input_len: int = 32000) -> list[dict]:
    rows = []
    c_in, n = 1, input_len
    pad = cfg.kernel_size // 2
    for i, (c_out, s) in enumerate(zip(cfg.channel_schedule, cfg.stride_schedule)):
        n = (n + 2 * pad - cfg.kernel_size) // s + 1
        rows.append({
            "layer": i,
            "in": c_in,
            "out": c_out,
            "stride": s,
            "frames": n,
            "params": c_in * c_out * cfg.kernel_size + c_out + 2 * c_out,
        })
        c_in = c_out
    return rows
