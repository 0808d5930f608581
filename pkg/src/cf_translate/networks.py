"""Residual generator and critic networks.

The generator is G(x) = sigmoid(x + M(x)) where M is a UNet-style
encoder-decoder predicting a residual; its final 1x1 convolution is
zero-initialized so training starts from M = 0 (output sigmoid(x), near the
identity for mid-range intensities). The critic maps a patch to one
unbounded real score, with no normalization layers so per-sample input
gradients stay well-defined for the gradient penalty.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

# sigmoid saturates to exactly 1.0 in float32 near |z| ~ 17; clamping keeps
# the open-interval output contract at the cost of a dead gradient only
# where sigmoid's own gradient is already ~1e-7
OUTPUT_EPS = 1e-7


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture knobs shared by generator and critic."""

    channels: int
    base_width: int = 64  # encoder width at the first level; doubles per level
    depth: int = 4  # number of 2x downsampling steps in the generator
    critic_blocks: int = 5  # number of stride-2 convolution blocks
    critic_base_width: int = 64

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.depth < 1 or self.base_width < 1:
            raise ValueError("generator depth and width must be >= 1")
        if self.critic_blocks < 1 or self.critic_base_width < 1:
            raise ValueError("critic depth and width must be >= 1")

    @property
    def generator_divisor(self) -> int:
        return 2 ** self.depth

    def level_width(self, level: int) -> int:
        return min(self.base_width * 2 ** level, self.base_width * 8)

    def critic_width(self, block: int) -> int:
        return min(self.critic_base_width * 2 ** block, self.critic_base_width * 8)


def _conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    """Two 3x3 convolutions with instance normalization and ReLU."""
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class ResidualMap(nn.Module):
    """UNet-style encoder-decoder predicting a per-pixel residual."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        widths = [config.level_width(i) for i in range(config.depth)]
        bottleneck = config.level_width(config.depth)

        self.encoders = nn.ModuleList()
        in_ch = config.channels
        for w in widths:
            self.encoders.append(_conv_block(in_ch, w))
            in_ch = w
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _conv_block(widths[-1], bottleneck)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        up_in = bottleneck
        for w in reversed(widths):
            self.upsamplers.append(nn.ConvTranspose2d(up_in, w, kernel_size=2, stride=2))
            self.decoders.append(_conv_block(2 * w, w))
            up_in = w

        self.head = nn.Conv2d(widths[0], config.channels, kernel_size=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            h = up(h)
            h = dec(torch.cat([h, skip], dim=1))
        return self.head(h)


class ResidualGenerator(nn.Module):
    """G(x) = sigmoid(x + M(x)), output clamped strictly inside (0, 1)."""

    def __init__(self, config: NetworkConfig, residual_map: nn.Module | None = None):
        super().__init__()
        self.config = config
        self.residual_map = residual_map if residual_map is not None else ResidualMap(config)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.sigmoid(x + self.residual_map(x))
        return out.clamp(OUTPUT_EPS, 1.0 - OUTPUT_EPS)


class Critic(nn.Module):
    """Stride-2 convolution stack, global average pool, linear scalar head."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        blocks = []
        in_ch = config.channels
        for i in range(config.critic_blocks):
            w = config.critic_width(i)
            blocks += [
                nn.Conv2d(in_ch, w, kernel_size=4, stride=2, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_ch = w
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(in_ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.pool(self.blocks(x)).flatten(1)
        return self.head(h).squeeze(1)


def _as_batch(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C, p, p) or (B, C, p, p), got shape {tuple(x.shape)}")


def _check_generator_input(config: NetworkConfig, x: torch.Tensor) -> None:
    if x.shape[1] != config.channels:
        raise ValueError(
            f"generator configured for {config.channels} channels, input has {x.shape[1]}"
        )
    div = config.generator_divisor
    if x.shape[2] % div or x.shape[3] % div:
        raise ValueError(
            f"generator with depth {config.depth} needs spatial dims divisible by "
            f"{div}, got {tuple(x.shape[2:])}"
        )
    # the bottleneck must keep >= 2x2 spatial extent for its normalization
    if x.shape[2] < 2 * div or x.shape[3] < 2 * div:
        raise ValueError(
            f"generator with depth {config.depth} needs spatial dims >= {2 * div}, "
            f"got {tuple(x.shape[2:])}"
        )


def generate(gen: ResidualGenerator, x: torch.Tensor) -> torch.Tensor:
    """Apply the generator; accepts one patch or a batch, preserves shape."""
    batch, squeeze = _as_batch(x)
    _check_generator_input(gen.config, batch)
    out = gen(batch)
    return out.squeeze(0) if squeeze else out


def criticize(critic: Critic, x: torch.Tensor) -> torch.Tensor:
    """Score patches; one scalar per patch, order-preserving."""
    batch, squeeze = _as_batch(x)
    if batch.shape[1] != critic.config.channels:
        raise ValueError(
            f"critic configured for {critic.config.channels} channels, "
            f"input has {batch.shape[1]}"
        )
    min_side = 2 ** critic.config.critic_blocks
    if batch.shape[2] < min_side or batch.shape[3] < min_side:
        raise ValueError(
            f"critic with {critic.config.critic_blocks} blocks needs at least "
            f"{min_side}x{min_side} inputs, got {tuple(batch.shape[2:])}"
        )
    scores = critic(batch)
    return scores.squeeze(0) if squeeze else scores


def residual(gen: ResidualGenerator, x: torch.Tensor) -> torch.Tensor:
    """generate(x) - x; every element lies in (-1, 1)."""
    return generate(gen, x) - x


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path: Path | str, gen: ResidualGenerator, epoch: int) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "epoch": int(epoch),
            "config": asdict(gen.config),
            "generator_state": gen.state_dict(),
        },
        str(path),
    )


def load_checkpoint(path: Path | str) -> tuple[ResidualGenerator, int]:
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    config = NetworkConfig(**payload["config"])
    gen = ResidualGenerator(config)
    gen.load_state_dict(payload["generator_state"])
    gen.eval()
    return gen, int(payload["epoch"])
