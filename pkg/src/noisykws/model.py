"""Desk-scale encoders plus projection and classifier heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn
import torch.nn.functional as F

N_FRAMES = 98
N_MELS = 64


@dataclass
class EncoderConfig:
    arch: str = "conv_residual"
    width: int = 32
    depth: int = 3
    latent_dim: int = 64
    proj_dim: int = 128
    n_heads: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.arch not in ("conv_residual", "attention"):
            raise ValueError(f"unknown encoder arch {self.arch!r}")
        for name in ("width", "depth", "latent_dim", "proj_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.arch == "attention" and self.width % self.n_heads:
            raise ValueError("attention width must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.skip = None
        if stride != 1 or c_in != c_out:
            self.skip = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm2d(c_out))

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.relu(y + (x if self.skip is None else self.skip(x)))


class ConvResidualEncoder(nn.Module):
    """Small ResNet: a strided stem, ``depth`` residual blocks, global pooling."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        w = cfg.width
        self.stem = nn.Sequential(nn.Conv2d(1, w, 3, 2, 1, bias=False), nn.BatchNorm2d(w), nn.ReLU())
        blocks, c = [], w
        for i in range(cfg.depth):
            c_out = w * 2 ** min(i, 2)
            blocks.append(ResidualBlock(c, c_out, stride=2 if i > 0 else 1))
            c = c_out
        self.blocks = nn.Sequential(*blocks)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(c, cfg.latent_dim)

    def forward(self, x):
        x = self.blocks(self.stem(x.unsqueeze(1)))
        return self.out(self.dropout(x.mean(dim=(2, 3))))


class AttentionEncoder(nn.Module):
    """Transformer over frames, read out from a class token."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.embed = nn.Linear(N_MELS, cfg.width)
        self.cls = nn.Parameter(torch.zeros(1, 1, cfg.width))
        self.pos = nn.Parameter(torch.randn(1, N_FRAMES + 1, cfg.width) * 0.02)
        layer = nn.TransformerEncoderLayer(
            cfg.width, cfg.n_heads, dim_feedforward=2 * cfg.width, dropout=cfg.dropout,
            batch_first=True, norm_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, cfg.depth, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(cfg.width)
        self.out = nn.Linear(cfg.width, cfg.latent_dim)

    def forward(self, x):
        x = self.embed(x)
        x = torch.cat([self.cls.expand(x.shape[0], -1, -1), x], dim=1) + self.pos
        x = self.layers(x)
        return self.out(self.norm(x[:, 0]))


class KWSModel(nn.Module):
    """Encoder -> latent ``h``; ``h`` feeds both the classifier and the projection head.

    Calling the module returns logits, which is all evaluation needs.
    """

    def __init__(self, cfg: EncoderConfig, n_classes: int):
        super().__init__()
        if n_classes < 1:
            raise ValueError("n_classes must be positive")
        self.cfg = cfg
        self.n_classes = n_classes
        self.encoder = ConvResidualEncoder(cfg) if cfg.arch == "conv_residual" else AttentionEncoder(cfg)
        self.head = nn.Sequential(
            nn.Linear(cfg.latent_dim, cfg.latent_dim), nn.ReLU(), nn.Linear(cfg.latent_dim, cfg.proj_dim)
        )
        self.classifier = nn.Linear(cfg.latent_dim, n_classes)

    def encode(self, features: torch.Tensor) -> torch.Tensor:
        if features.ndim != 3 or tuple(features.shape[1:]) != (N_FRAMES, N_MELS):
            raise ValueError(f"expected features of shape (batch, {N_FRAMES}, {N_MELS}), got {tuple(features.shape)}")
        return self.encoder(features)

    def project(self, h: torch.Tensor) -> torch.Tensor:
        return self.head(h)

    def classify(self, h: torch.Tensor) -> torch.Tensor:
        return self.classifier(h)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.classify(self.encode(features))


def build_model(cfg: EncoderConfig, n_classes: int, seed: int | None = None) -> KWSModel:
    if seed is not None:
        torch.manual_seed(seed)
    return KWSModel(cfg, n_classes)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
