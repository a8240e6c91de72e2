"""Frozen convolutional feature extractor for style/content objectives.

Five convolutional blocks (3x3 convs + ReLU, 2x2 max pooling between blocks)
mirroring the canonical 16-conv/5-block classification backbone. Only the
post-activation output of each block's FIRST convolution is tapped, giving
one feature map per block at successively halved resolution. Weights are
either loaded from an external archive or drawn once from a seeded
generator; they are never trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .checkpoint import load_checkpoint
from .errors import ConfigError, ShapeError
from .rng import torch_generator

CANONICAL_CHANNELS = (64, 128, 256, 512, 512)
CANONICAL_LAYERS = (2, 2, 4, 4, 4)


@dataclass(frozen=True)
class ExtractorSpec:
    block_channels: tuple = CANONICAL_CHANNELS
    block_layers: tuple = CANONICAL_LAYERS
    # Input adapter: [-1,1] grayscale -> [0,1] -> replicate to 3 channels ->
    # shift by the recorded mean/std. Constants are configurable and written
    # into run metadata.
    adapter_mean: tuple = (0.485, 0.456, 0.406)
    adapter_std: tuple = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if len(self.block_channels) != 5 or len(self.block_layers) != 5:
            raise ConfigError("extractor needs exactly 5 blocks")
        if any(n < 1 or n > 4 for n in self.block_layers):
            raise ConfigError("block layer counts must be within 1..4")
        if any(c < 1 for c in self.block_channels):
            raise ConfigError("block channels must be positive")

    @property
    def n_blocks(self) -> int:
        return 5

    @classmethod
    def tiny(cls):
        """Narrow variant for gradient checks; same block structure."""
        return cls(block_channels=(4, 4, 8, 8, 8), block_layers=(1, 1, 2, 2, 2))

    def to_dict(self) -> dict:
        return {
            "block_channels": list(self.block_channels),
            "block_layers": list(self.block_layers),
            "adapter_mean": list(self.adapter_mean),
            "adapter_std": list(self.adapter_std),
        }

    @classmethod
    def from_dict(cls, payload: dict):
        return cls(
            block_channels=tuple(payload["block_channels"]),
            block_layers=tuple(payload["block_layers"]),
            adapter_mean=tuple(payload["adapter_mean"]),
            adapter_std=tuple(payload["adapter_std"]),
        )


class FeatureExtractor(nn.Module):
    def __init__(
        self,
        spec: ExtractorSpec = ExtractorSpec(),
        *,
        weights: dict | None = None,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.spec = spec
        gen = generator if generator is not None else torch_generator(0, "extractor")

        blocks = []
        prev = 3
        for channels, layers in zip(spec.block_channels, spec.block_layers):
            block = nn.ModuleList()
            for _ in range(layers):
                block.append(nn.Conv2d(prev, channels, 3, stride=1, padding=1))
                prev = channels
            blocks.append(block)
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)
        self.act = nn.ReLU()
        self.register_buffer("adapter_mean", torch.tensor(spec.adapter_mean).view(1, 3, 1, 1))
        self.register_buffer("adapter_std", torch.tensor(spec.adapter_std).view(1, 3, 1, 1))

        if weights is None:
            self._init_random(gen)
        else:
            self._load_named_weights(weights)
        self.to(dtype)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _init_random(self, gen: torch.Generator):
        with torch.no_grad():
            for block in self.blocks:
                for conv in block:
                    fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
                    std = (2.0 / fan_in) ** 0.5
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
                    conv.bias.zero_()

    def _load_named_weights(self, weights: dict):
        with torch.no_grad():
            for j, block in enumerate(self.blocks, start=1):
                for i, conv in enumerate(block, start=1):
                    for kind, param in (("weight", conv.weight), ("bias", conv.bias)):
                        name = f"block{j}.conv{i}.{kind}"
                        if name not in weights:
                            raise ConfigError(f"extractor weights missing '{name}' (block {j})")
                        value = weights[name]
                        if tuple(value.shape) != tuple(param.shape):
                            raise ConfigError(
                                f"extractor weight '{name}' has shape {tuple(value.shape)}, "
                                f"expected {tuple(param.shape)} (block {j})"
                            )
                        param.copy_(value.to(param.dtype))

    def forward(self, img: torch.Tensor):
        """Per-block feature taps for a [-1, 1] single-channel image."""
        if img.ndim != 4 or img.shape[1] != 1:
            raise ShapeError(f"expected input of shape (B, 1, H, W), got {tuple(img.shape)}")
        min_size = 2**self.spec.n_blocks
        if img.shape[2] < min_size or img.shape[3] < min_size:
            raise ShapeError(
                f"spatial size {tuple(img.shape[2:])} below extractor minimum "
                f"{min_size}x{min_size}"
            )
        x = (img + 1.0) / 2.0
        x = x.repeat(1, 3, 1, 1)
        x = (x - self.adapter_mean) / self.adapter_std

        taps = []
        last = len(self.blocks) - 1
        for j, block in enumerate(self.blocks):
            if j > 0:
                x = self.pool(x)
            x = self.act(block[0](x))
            taps.append(x)
            if j == last:
                break
            for conv in list(block)[1:]:
                x = self.act(conv(x))
        return taps


def build_extractor(
    spec: ExtractorSpec = ExtractorSpec(),
    seed_or_path=0,
    dtype: torch.dtype = torch.float32,
) -> FeatureExtractor:
    """Build from a seed (int) or an external weight archive path (str/Path)."""
    if isinstance(spec, dict):
        spec = ExtractorSpec.from_dict(spec)
    if isinstance(seed_or_path, int):
        gen = torch_generator(seed_or_path, "extractor")
        return FeatureExtractor(spec, generator=gen, dtype=dtype)
    archive = load_checkpoint(seed_or_path)
    return FeatureExtractor(spec, weights=archive.tensors, dtype=dtype)


def extract_block_features(extractor: FeatureExtractor, img: torch.Tensor):
    return extractor(img)
