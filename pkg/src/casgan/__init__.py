"""Paired image-to-image translation with cascaded U-block generators,
patch discriminators, and a composite adversarial + feature-matching +
style/content objective, plus metrics, ablation, and perceptual-study
tooling."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    PairedDataset,
    PairedSample,
    generate_synthetic_pairs,
    load_paired_dataset,
    normalize_image,
    denormalize_image,
    write_dataset,
)
from .discriminator import (
    FeatureStack,
    PatchDiscriminator,
    PatchDiscriminatorSpec,
    apply_spectral_normalization,
    build_patch_discriminator,
    estimate_spectral_norm,
)
from .features import ExtractorSpec, FeatureExtractor, build_extractor, extract_block_features
from .generator import (
    CascadeConfig,
    CascadeGenerator,
    UBlock,
    UBlockSpec,
    build_cascade,
    build_ublock,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    combined_generator_loss,
    content_loss,
    gram_matrix,
    l1_loss,
    l2_loss,
    loss_preset,
    perceptual_component,
    perceptual_loss,
    style_loss,
    tv_loss,
)
from .metrics import MetricParams, MetricReport, evaluate_dataset, mse, psnr, ssim, uqi, vif
from .trainer import TrainConfig, TrainingState, resume, train, translate

__version__ = "0.1.0"
