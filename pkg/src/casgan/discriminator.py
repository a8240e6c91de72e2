"""Patch-wise discriminator with a 16-pixel receptive field.

The network scores the channel concatenation of a candidate image and its
conditioning source image. Three kernel-4 convolutions with strides (2, 1, 1)
give each output unit a receptive field of exactly 4 -> 10 -> 16 input
pixels. The two hidden activations are exposed (together with the raw input
pair) for the feature-matching loss, and every weight matrix carries a
persistent power-iteration vector for spectral normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ShapeError
from .generator import SampleNorm
from .rng import torch_generator

# Rayleigh-Ritz refinement window over past power iterates: geometric lags
# retain subdominant directions, making the estimate robust when the top
# singular values are clustered.
_RITZ_LAGS = (0, 1, 2, 4, 8, 16)


@dataclass(frozen=True)
class PatchDiscriminatorSpec:
    layer_channels: tuple = (64, 128)
    kernel_size: int = 4
    leaky_slope: float = 0.2
    normalize: bool = True  # turn off to probe pure conv geometry
    input_channels: int = 2  # candidate (+) condition

    def to_dict(self) -> dict:
        return {
            "layer_channels": list(self.layer_channels),
            "kernel_size": self.kernel_size,
            "leaky_slope": self.leaky_slope,
            "normalize": self.normalize,
            "input_channels": self.input_channels,
        }

    @classmethod
    def from_dict(cls, payload: dict):
        return cls(
            layer_channels=tuple(payload["layer_channels"]),
            kernel_size=payload.get("kernel_size", 4),
            leaky_slope=payload.get("leaky_slope", 0.2),
            normalize=payload.get("normalize", True),
            input_channels=payload.get("input_channels", 2),
        )


class FeatureStack:
    """Ordered activations, shallow to deep; entry 0 is the raw input pair."""

    def __init__(self, entries):
        self.entries = list(entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    def __iter__(self):
        return iter(self.entries)

    @property
    def shapes(self):
        """(height, width, depth) of each entry."""
        return [(t.shape[-2], t.shape[-1], t.shape[-3]) for t in self.entries]


class PatchDiscriminator(nn.Module):
    def __init__(
        self,
        spec: PatchDiscriminatorSpec = PatchDiscriminatorSpec(),
        *,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.spec = spec
        gen = generator if generator is not None else torch_generator(0, "discriminator")
        k = spec.kernel_size

        convs, norms = [], []
        prev = spec.input_channels
        for i, ch in enumerate(spec.layer_channels):
            stride = 2 if i == 0 else 1
            convs.append(nn.Conv2d(prev, ch, k, stride=stride, padding=1))
            norms.append(SampleNorm(ch) if spec.normalize else nn.Identity())
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.act = nn.LeakyReLU(spec.leaky_slope)
        self.head = nn.Conv2d(prev, 1, k, stride=1, padding=1)
        self.sigmoid = nn.Sigmoid()

        for i, conv in enumerate(list(self.convs) + [self.head]):
            noise = torch.randn(conv.weight.shape, generator=gen, dtype=conv.weight.dtype)
            with torch.no_grad():
                conv.weight.copy_(noise * 0.02)
                conv.bias.zero_()
            u = torch.randn(conv.weight.shape[0], generator=gen, dtype=conv.weight.dtype)
            self.register_buffer(f"sn_u{i}", u / u.norm())
        self.to(dtype)

    def weight_layers(self):
        """(conv, persistent u buffer name) for every spectral-normalized layer."""
        layers = [(conv, f"sn_u{i}") for i, conv in enumerate(self.convs)]
        layers.append((self.head, f"sn_u{len(self.convs)}"))
        return layers

    def forward(self, candidate: torch.Tensor, condition: torch.Tensor):
        if candidate.shape != condition.shape:
            raise ShapeError(
                f"candidate {tuple(candidate.shape)} and condition "
                f"{tuple(condition.shape)} must share shape"
            )
        x = torch.cat([candidate, condition], dim=1)
        feats = [x]
        for conv, norm in zip(self.convs, self.norms):
            x = self.act(norm(conv(x)))
            feats.append(x)
        prob_map = self.sigmoid(self.head(x))
        return prob_map, FeatureStack(feats)

    @property
    def hidden_layers(self) -> int:
        return len(self.spec.layer_channels)


def build_patch_discriminator(
    spec: PatchDiscriminatorSpec = PatchDiscriminatorSpec(),
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> PatchDiscriminator:
    return PatchDiscriminator(spec, generator=torch_generator(seed, "discriminator"), dtype=dtype)


def estimate_spectral_norm(
    weight: torch.Tensor,
    u_state: torch.Tensor | None,
    iterations: int = 1,
    eps: float = 1e-12,
    generator: torch.Generator | None = None,
):
    """Largest-singular-value estimate via power iteration.

    Returns ``(sigma, u)`` where ``u`` is the persistent left-vector estimate
    to reuse on the next call. For ``iterations >= 2`` the scalar estimate is
    sharpened by a Rayleigh-Ritz solve over a small window of past iterates;
    the estimate never exceeds the true value. A zero matrix yields sigma 0
    with the state untouched.
    """
    mat = weight.detach().reshape(weight.shape[0], -1)
    if u_state is None:
        gen = generator if generator is not None else torch_generator(0, "power-iteration")
        u = torch.randn(mat.shape[0], generator=gen, dtype=mat.dtype)
        u = u / (u.norm() + eps)
    else:
        u = u_state.detach().clone()

    if not bool(mat.abs().max() > 0):
        return torch.zeros((), dtype=mat.dtype), u

    history = []
    v = None
    max_lag = max(_RITZ_LAGS)
    for _ in range(max(1, int(iterations))):
        v = mat.t() @ u
        v = v / (v.norm() + eps)
        u = mat @ v
        u = u / (u.norm() + eps)
        history.append(v)
        if len(history) > max_lag + 1:
            history.pop(0)

    sigma = u @ (mat @ v)

    if iterations >= 2:
        basis = []
        for lag in _RITZ_LAGS:
            idx = len(history) - 1 - lag
            if idx < 0:
                continue
            vec = history[idx].clone()
            for b in basis:
                vec = vec - (b @ vec) * b
            norm = vec.norm()
            if norm > 1e-8:
                basis.append(vec / norm)
        if len(basis) >= 2:
            projected = mat @ torch.stack(basis, dim=1)
            gram = projected.t() @ projected
            top = torch.linalg.eigvalsh(gram)[-1].clamp_min(0).sqrt()
            sigma = torch.maximum(sigma, top)
    return sigma, u


def apply_spectral_normalization(
    disc: PatchDiscriminator, iterations: int = 1, eps: float = 1e-12
):
    """Divide each weight matrix by its estimated spectral norm (in place).

    One power-iteration step per call with the u vectors persisted as module
    buffers; meant to run right after every discriminator update.
    """
    with torch.no_grad():
        for conv, u_name in disc.weight_layers():
            u = getattr(disc, u_name)
            sigma, u_new = estimate_spectral_norm(conv.weight, u, iterations, eps)
            u.copy_(u_new)
            if float(sigma) > eps:
                conv.weight.div_(sigma)
