"""Encoder-decoder U-blocks and the cascaded generator built from them.

A U-block halves the spatial size at every encoder convolution (kernel 4,
stride 2, padding 1) and mirrors that with fractionally strided
deconvolutions, concatenating encoder features into the decoder at mirrored
depths. The cascade chains N identical U-blocks so each block refines the
previous block's translation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .rng import torch_generator

# Paper-scale defaults: eight encoder layers (64..512) and the mirrored
# decoder widths; the decoder list holds the channel count CONSUMED by each
# deconvolution (output of the previous stage after skip concatenation).
DEFAULT_ENCODER_CHANNELS = (64, 128, 256, 512, 512, 512, 512, 512)
DEFAULT_DECODER_CHANNELS = (512, 1024, 1024, 1024, 1024, 512, 256, 128)


class SampleNorm(nn.Module):
    """Normalization over each sample's spatial extent (batch-size-1 statistics).

    Unlike the stock instance norm it tolerates 1x1 feature maps, which occur
    at the bottleneck of a full-depth block; there the normalized output
    collapses to the learned bias.
    """

    def __init__(self, num_channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(num_channels))
        self.bias = nn.Parameter(torch.zeros(num_channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        normed = (x - mean) / torch.sqrt(var + self.eps)
        return normed * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


@dataclass(frozen=True)
class UBlockSpec:
    """Architecture of one encoder-decoder block."""

    encoder_channels: tuple = DEFAULT_ENCODER_CHANNELS
    decoder_channels: tuple = DEFAULT_DECODER_CHANNELS
    kernel_size: int = 4
    leaky_slope: float = 0.2
    norm_eps: float = 1e-5

    def __post_init__(self):
        enc = tuple(int(c) for c in self.encoder_channels)
        dec = tuple(int(c) for c in self.decoder_channels)
        object.__setattr__(self, "encoder_channels", enc)
        object.__setattr__(self, "decoder_channels", dec)
        if len(enc) != len(dec):
            raise ConfigError(
                f"encoder/decoder channel lists must have equal length, "
                f"got {len(enc)} vs {len(dec)}"
            )
        if not 2 <= len(enc) <= 8:
            raise ConfigError(f"depth must be within 2..8, got {len(enc)}")
        if any(c < 1 for c in enc + dec):
            raise ConfigError("channel counts must be positive")
        if dec[0] != enc[-1]:
            raise ConfigError(
                f"first decoder width ({dec[0]}) must equal the bottleneck "
                f"width ({enc[-1]})"
            )
        d = len(enc)
        for j in range(1, d):
            skip = enc[d - 1 - j]
            if dec[j] <= skip:
                raise ConfigError(
                    f"decoder width {dec[j]} at layer {j + 1} leaves no channels "
                    f"after the {skip}-wide skip concatenation"
                )

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def skip_pairs(self):
        """Mirrored (encoder_layer, decoder_layer) pairs, 1-based; no bottleneck skip."""
        d = self.depth
        return tuple((k, d + 1 - k) for k in range(1, d))

    def deconv_out_channels(self, output_image_channels: int):
        """Output width of each deconvolution, derived from the mirrored lists."""
        d = self.depth
        outs = [self.decoder_channels[j + 1] - self.encoder_channels[d - 2 - j] for j in range(d - 1)]
        outs.append(output_image_channels)
        return tuple(outs)

    @classmethod
    def scaled(cls, depth: int = 8, width_divisor: int = 1):
        """Reduced-size variant following the same widening/mirroring pattern."""
        if width_divisor < 1:
            raise ConfigError(f"width_divisor must be >= 1, got {width_divisor}")
        base, cap = 64 // width_divisor, 512 // width_divisor
        if base < 1:
            raise ConfigError(f"width_divisor {width_divisor} leaves no channels")
        enc = tuple(min(base * 2**k, cap) for k in range(depth))
        dec = (enc[-1],) + tuple(2 * c for c in reversed(enc[:-1]))
        return cls(encoder_channels=enc, decoder_channels=dec)

    def to_dict(self) -> dict:
        return {
            "encoder_channels": list(self.encoder_channels),
            "decoder_channels": list(self.decoder_channels),
            "kernel_size": self.kernel_size,
            "leaky_slope": self.leaky_slope,
            "norm_eps": self.norm_eps,
        }

    @classmethod
    def from_dict(cls, payload: dict):
        return cls(
            encoder_channels=tuple(payload["encoder_channels"]),
            decoder_channels=tuple(payload["decoder_channels"]),
            kernel_size=payload.get("kernel_size", 4),
            leaky_slope=payload.get("leaky_slope", 0.2),
            norm_eps=payload.get("norm_eps", 1e-5),
        )


@dataclass(frozen=True)
class CascadeConfig:
    """Generator description: N chained U-blocks over single-channel images."""

    n_blocks: int = 6
    ublock: UBlockSpec = field(default_factory=UBlockSpec)
    input_channels: int = 1
    output_channels: int = 1

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.input_channels != self.output_channels:
            raise ConfigError(
                "chained blocks require input_channels == output_channels"
            )

    def to_dict(self) -> dict:
        return {
            "n_blocks": self.n_blocks,
            "ublock": self.ublock.to_dict(),
            "input_channels": self.input_channels,
            "output_channels": self.output_channels,
        }

    @classmethod
    def from_dict(cls, payload: dict):
        return cls(
            n_blocks=payload["n_blocks"],
            ublock=UBlockSpec.from_dict(payload["ublock"]),
            input_channels=payload.get("input_channels", 1),
            output_channels=payload.get("output_channels", 1),
        )


def _init_conv(module: nn.Module, gen: torch.Generator):
    noise = torch.randn(module.weight.shape, generator=gen, dtype=module.weight.dtype)
    with torch.no_grad():
        module.weight.copy_(noise * 0.02)
        if module.bias is not None:
            module.bias.zero_()


class UBlock(nn.Module):
    """One encoder-decoder block with mirrored skip connections."""

    def __init__(
        self,
        spec: UBlockSpec,
        in_channels: int = 1,
        out_channels: int = 1,
        *,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.spec = spec
        self.in_channels = in_channels
        self.out_channels = out_channels
        gen = generator if generator is not None else torch_generator(0, "ublock")
        d = spec.depth
        k = spec.kernel_size

        enc_convs, enc_norms = [], []
        prev = in_channels
        for ch in spec.encoder_channels:
            enc_convs.append(nn.Conv2d(prev, ch, k, stride=2, padding=1))
            enc_norms.append(SampleNorm(ch, spec.norm_eps))
            prev = ch
        self.encoder_convs = nn.ModuleList(enc_convs)
        self.encoder_norms = nn.ModuleList(enc_norms)
        self.encoder_act = nn.LeakyReLU(spec.leaky_slope)

        outs = spec.deconv_out_channels(out_channels)
        dec_convs, dec_norms = [], []
        for j in range(d):
            dec_convs.append(nn.ConvTranspose2d(spec.decoder_channels[j], outs[j], k, stride=2, padding=1))
            if j < d - 1:
                dec_norms.append(SampleNorm(outs[j], spec.norm_eps))
        self.decoder_convs = nn.ModuleList(dec_convs)
        self.decoder_norms = nn.ModuleList(dec_norms)
        self.decoder_act = nn.ReLU()
        self.final_act = nn.Tanh()

        for conv in list(self.encoder_convs) + list(self.decoder_convs):
            _init_conv(conv, gen)
        self.to(dtype)

    def check_input(self, y: torch.Tensor):
        if y.ndim != 4 or y.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected input of shape (B, {self.in_channels}, H, W), got {tuple(y.shape)}"
            )
        divisor = 2**self.spec.depth
        if y.shape[2] % divisor or y.shape[3] % divisor:
            raise ShapeError(
                f"spatial size {tuple(y.shape[2:])} must be divisible by "
                f"2^{self.spec.depth} = {divisor}"
            )

    def forward(self, y: torch.Tensor, skip_gain: float = 1.0) -> torch.Tensor:
        self.check_input(y)
        feats = []
        x = y
        for conv, norm in zip(self.encoder_convs, self.encoder_norms):
            x = self.encoder_act(norm(conv(x)))
            feats.append(x)

        d = self.spec.depth
        x = feats[-1]
        for j, deconv in enumerate(self.decoder_convs):
            if j > 0:
                skip = feats[d - 1 - j]
                if skip_gain != 1.0:
                    skip = skip * skip_gain
                x = torch.cat([x, skip], dim=1)
            x = deconv(x)
            if j < d - 1:
                x = self.decoder_act(self.decoder_norms[j](x))
            else:
                x = self.final_act(x)
        return x

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class CascadeGenerator(nn.Module):
    """Chain of N U-blocks; each block consumes the previous block's output."""

    def __init__(
        self,
        config: CascadeConfig,
        *,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.config = config
        gen = generator if generator is not None else torch_generator(0, "cascade")
        blocks = []
        for i in range(config.n_blocks):
            in_ch = config.input_channels if i == 0 else config.output_channels
            blocks.append(
                UBlock(config.ublock, in_ch, config.output_channels, generator=gen, dtype=dtype)
            )
        self.blocks = nn.ModuleList(blocks)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        x = y
        for block in self.blocks:
            x = block(x)
        return x

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


# Both builders draw from the same seed path, so a cascade's first block is
# weight-identical to a bare U-block built with the same seed.
def build_ublock(spec: UBlockSpec, seed: int, in_channels: int = 1, out_channels: int = 1, dtype=torch.float32) -> UBlock:
    return UBlock(spec, in_channels, out_channels, generator=torch_generator(seed, "generator"), dtype=dtype)


def build_cascade(config: CascadeConfig, seed: int, dtype=torch.float32) -> CascadeGenerator:
    return CascadeGenerator(config, generator=torch_generator(seed, "generator"), dtype=dtype)
