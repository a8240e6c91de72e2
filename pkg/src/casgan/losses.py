"""Loss terms and their weighted combination.

Adversarial terms follow the non-saturating convention: the generator
minimizes the mean of -log D(fake) while the discriminator ascends
log D(real) + log(1 - D(fake)) (the trainer negates the latter for its
minimizer). Feature-matching terms are size-normalized L1 distances over the
discriminator's activation stack, with index 0 holding the raw input pair so
a plain pixel MAE is always part of the perceptual term. Style and content
penalties compare Gram matrices and raw activations of a frozen extractor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch

from .errors import ConfigError, ShapeError

PROB_EPS = 1e-7  # clamp for probabilities inside logs

PRESET_NAMES = (
    "cgan",
    "pix2pix",
    "perceptual",
    "style-content",
    "id-cgan-like",
    "fila-like",
    "medgan",
)


@dataclass(frozen=True)
class LossWeights:
    """Every balancing coefficient of the composite generator objective."""

    lambda1: float = 20.0  # perceptual
    lambda2: float = 1e-4  # style
    lambda3: float = 1e-4  # content
    # Per-layer weights for the perceptual sum, i = 0..L (0 = raw inputs).
    lambda_p: tuple = (1.0, 1.0, 1.0)
    # Per-block masks: style uses the first and last blocks, content all but
    # the deepest; magnitudes fold into lambda2/lambda3.
    lambda_s: tuple = (1.0, 0.0, 0.0, 0.0, 1.0)
    lambda_c: tuple = (1.0, 1.0, 1.0, 1.0, 0.0)
    # Preset-only extras for baseline objectives.
    lambda_l1: float = 0.0
    lambda_l2: float = 0.0
    lambda_tv: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lambda_p", tuple(float(v) for v in self.lambda_p))
        object.__setattr__(self, "lambda_s", tuple(float(v) for v in self.lambda_s))
        object.__setattr__(self, "lambda_c", tuple(float(v) for v in self.lambda_c))
        scalars = {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda3": self.lambda3,
            "lambda_l1": self.lambda_l1,
            "lambda_l2": self.lambda_l2,
            "lambda_tv": self.lambda_tv,
        }
        for name, value in scalars.items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        for name, values in (("lambda_p", self.lambda_p), ("lambda_s", self.lambda_s), ("lambda_c", self.lambda_c)):
            if any(v < 0 for v in values):
                raise ConfigError(f"every entry of {name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda3": self.lambda3,
            "lambda_p": list(self.lambda_p),
            "lambda_s": list(self.lambda_s),
            "lambda_c": list(self.lambda_c),
            "lambda_l1": self.lambda_l1,
            "lambda_l2": self.lambda_l2,
            "lambda_tv": self.lambda_tv,
        }

    @classmethod
    def from_dict(cls, payload: dict):
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown loss weight fields: {sorted(unknown)}")
        kwargs = dict(payload)
        for key in ("lambda_p", "lambda_s", "lambda_c"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class LossBreakdown:
    """Per-term values plus the weighted total; fields may be tensors or floats."""

    adversarial: object
    perceptual: object
    style: object
    content: object
    l1: object = 0.0
    l2: object = 0.0
    tv: object = 0.0
    total: object = 0.0

    def as_floats(self) -> dict:
        out = {}
        for name in ("adversarial", "perceptual", "style", "content", "l1", "l2", "tv", "total"):
            value = getattr(self, name)
            out[name] = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        return out


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape {tuple(a.shape)} vs {tuple(b.shape)}")


def adversarial_loss_discriminator(prob_real: torch.Tensor, prob_fake: torch.Tensor) -> torch.Tensor:
    """Patch-mean of log D(real) + log(1 - D(fake)); the discriminator ascends this."""
    real = prob_real.clamp(PROB_EPS, 1.0 - PROB_EPS)
    fake = prob_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return torch.log(real).mean() + torch.log(1.0 - fake).mean()


def adversarial_loss_generator(prob_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term: mean of -log D(fake)."""
    fake = prob_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -torch.log(fake).mean()


def l1_loss(xhat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    _check_same_shape(xhat, x, "l1_loss")
    return (xhat - x).abs().mean()


def l2_loss(xhat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    _check_same_shape(xhat, x, "l2_loss")
    return ((xhat - x) ** 2).mean()


def tv_loss(img: torch.Tensor) -> torch.Tensor:
    """Anisotropic total variation: mean absolute forward difference."""
    dx = img[..., :, 1:] - img[..., :, :-1]
    dy = img[..., 1:, :] - img[..., :-1, :]
    count = dx.numel() + dy.numel()
    if count == 0:
        return img.sum() * 0.0
    return (dx.abs().sum() + dy.abs().sum()) / count


def perceptual_component(features_fake: torch.Tensor, features_real: torch.Tensor) -> torch.Tensor:
    """Size-normalized L1 distance between one pair of feature maps."""
    _check_same_shape(features_fake, features_real, "perceptual_component")
    return (features_fake - features_real).abs().mean()


def perceptual_loss(stack_fake, stack_real, lambda_p) -> torch.Tensor:
    """Weighted sum of per-layer feature distances over the full stack."""
    entries_fake = list(stack_fake)
    entries_real = list(stack_real)
    if len(entries_fake) != len(entries_real):
        raise ShapeError(
            f"feature stacks disagree in length: {len(entries_fake)} vs {len(entries_real)}"
        )
    if len(lambda_p) != len(entries_fake):
        raise ConfigError(
            f"lambda_p has {len(lambda_p)} entries for {len(entries_fake)} stack layers"
        )
    total = entries_fake[0].sum() * 0.0
    for weight, fake, real in zip(lambda_p, entries_fake, entries_real):
        if weight != 0.0:
            total = total + weight * perceptual_component(fake, real)
    return total


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """Channel-by-channel correlation matrix, normalized by h*w*d."""
    v = features
    if v.ndim == 4:
        if v.shape[0] != 1:
            raise ShapeError(f"gram_matrix expects a single sample, got batch {v.shape[0]}")
        v = v.squeeze(0)
    if v.ndim != 3:
        raise ShapeError(f"gram_matrix expects (C, H, W), got {tuple(features.shape)}")
    d, h, w = v.shape
    flat = v.reshape(d, h * w)
    return (flat @ flat.t()) / (h * w * d)


def style_loss(features_fake, features_real, lambda_s) -> torch.Tensor:
    """Frobenius-squared Gram discrepancies, 1/(4 d_j^2)-normalized per block."""
    if len(features_fake) != len(features_real):
        raise ShapeError(
            f"block counts disagree: {len(features_fake)} vs {len(features_real)}"
        )
    if len(lambda_s) != len(features_fake):
        raise ConfigError(
            f"lambda_s has {len(lambda_s)} entries for {len(features_fake)} blocks"
        )
    total = features_fake[0].sum() * 0.0
    for weight, fake, real in zip(lambda_s, features_fake, features_real):
        if weight == 0.0:
            continue
        _check_same_shape(fake, real, "style_loss")
        d = fake.shape[-3]
        diff = gram_matrix(fake) - gram_matrix(real)
        total = total + weight / (4.0 * d * d) * (diff**2).sum()
    return total


def content_loss(features_fake, features_real, lambda_c) -> torch.Tensor:
    """Size-normalized Frobenius-squared feature discrepancies per block."""
    if len(features_fake) != len(features_real):
        raise ShapeError(
            f"block counts disagree: {len(features_fake)} vs {len(features_real)}"
        )
    if len(lambda_c) != len(features_fake):
        raise ConfigError(
            f"lambda_c has {len(lambda_c)} entries for {len(features_fake)} blocks"
        )
    total = features_fake[0].sum() * 0.0
    for weight, fake, real in zip(lambda_c, features_fake, features_real):
        if weight == 0.0:
            continue
        _check_same_shape(fake, real, "content_loss")
        h, w, d = fake.shape[-2], fake.shape[-1], fake.shape[-3]
        total = total + weight / (h * w * d) * ((fake - real) ** 2).sum()
    return total


def combined_generator_loss(
    adversarial,
    perceptual,
    style,
    content,
    l1=0.0,
    l2=0.0,
    tv=0.0,
    *,
    weights: LossWeights,
) -> LossBreakdown:
    """Weighted cumulative objective; works on tensors (training) or floats."""
    total = (
        adversarial
        + weights.lambda1 * perceptual
        + weights.lambda2 * style
        + weights.lambda3 * content
        + weights.lambda_l1 * l1
        + weights.lambda_l2 * l2
        + weights.lambda_tv * tv
    )
    return LossBreakdown(
        adversarial=adversarial,
        perceptual=perceptual,
        style=style,
        content=content,
        l1=l1,
        l2=l2,
        tv=tv,
        total=total,
    )


def loss_preset(name: str) -> LossWeights:
    """Named weight bundles for the ablation arms and baseline objectives."""
    zeros = dict(
        lambda1=0.0,
        lambda2=0.0,
        lambda3=0.0,
        lambda_p=(0.0, 0.0, 0.0),
        lambda_s=(0.0,) * 5,
        lambda_c=(0.0,) * 5,
    )
    defaults = LossWeights()
    presets = {
        # Pure conditional adversarial objective.
        "cgan": LossWeights(**zeros),
        # Adversarial + pixel reconstruction.
        "pix2pix": LossWeights(**zeros, lambda_l1=100.0),
        # Adversarial + discriminator feature matching (with raw-pixel term).
        "perceptual": replace(defaults, lambda2=0.0, lambda3=0.0),
        # Adversarial + extractor-based style and content penalties.
        "style-content": replace(defaults, lambda1=0.0, lambda_p=(0.0, 0.0, 0.0)),
        # Adversarial + L2 pixel reconstruction + content.
        "id-cgan-like": replace(
            defaults, lambda1=0.0, lambda2=0.0, lambda_p=(0.0, 0.0, 0.0), lambda_s=(0.0,) * 5, lambda_l2=100.0
        ),
        # Adversarial + style/content + total variation + L1 reconstruction.
        "fila-like": replace(
            defaults, lambda1=0.0, lambda_p=(0.0, 0.0, 0.0), lambda_l1=100.0, lambda_tv=1e-5
        ),
        # The full composite objective at its published weights.
        "medgan": defaults,
    }
    if name not in presets:
        raise ConfigError(f"unknown preset '{name}'; valid presets: {', '.join(PRESET_NAMES)}")
    return presets[name]
