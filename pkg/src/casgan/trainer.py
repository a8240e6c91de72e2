"""Alternating optimization loop: N_G generator updates per discriminator update.

For every visited sample the generator takes ``n_g`` ADAM steps minimizing
the weighted composite objective, then the discriminator takes one step
ascending its patch objective, immediately followed by the spectral-norm
projection of its weights. Batch size is fixed at 1 (per-sample statistics
everywhere); sample order reshuffles each epoch from the run seed, so a
resumed run retraces an uninterrupted one exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .checkpoint import (
    Checkpoint,
    load_module_tensors,
    load_optimizer_state,
    module_tensors,
    optimizer_tensors,
    save_checkpoint,
)
from .data import PairedDataset
from .discriminator import (
    PatchDiscriminator,
    PatchDiscriminatorSpec,
    apply_spectral_normalization,
)
from .errors import ConfigError, TrainingDivergedError
from .features import ExtractorSpec, FeatureExtractor, build_extractor
from .generator import CascadeConfig, CascadeGenerator
from .losses import (
    LossWeights,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    combined_generator_loss,
    content_loss,
    l1_loss,
    l2_loss,
    perceptual_loss,
    style_loss,
    tv_loss,
)
from .rng import numpy_rng, torch_generator

RESUME_OVERRIDABLE = (
    "n_epochs",
    "learning_rate",
    "checkpoint_interval",
    "log_interval",
    "max_steps",
    "threads",
)


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 200
    n_g: int = 3
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    casnet: CascadeConfig = field(default_factory=CascadeConfig)
    discriminator: PatchDiscriminatorSpec = field(default_factory=PatchDiscriminatorSpec)
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    extractor_weights: str | None = None  # external archive path; None = seeded
    seed: int = 0
    checkpoint_interval: int = 0  # sample visits between checkpoints; 0 = final only
    log_interval: int = 50
    max_steps: int | None = None  # stop after this many sample visits
    threads: int | None = None  # pin torch CPU threads (1 = bit-exact runs)

    def __post_init__(self):
        if self.n_epochs < 1:
            raise ConfigError(f"n_epochs must be >= 1, got {self.n_epochs}")
        if self.n_g < 1:
            raise ConfigError(f"n_g must be >= 1, got {self.n_g}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size != 1:
            raise ConfigError("batch_size is fixed at 1 (per-sample statistics)")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")

    def to_dict(self) -> dict:
        out = {
            "n_epochs": self.n_epochs,
            "n_g": self.n_g,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "batch_size": self.batch_size,
            "weights": self.weights.to_dict(),
            "casnet": self.casnet.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "extractor": self.extractor.to_dict(),
            "extractor_weights": self.extractor_weights,
            "seed": self.seed,
            "checkpoint_interval": self.checkpoint_interval,
            "log_interval": self.log_interval,
            "max_steps": self.max_steps,
            "threads": self.threads,
        }
        return out

    @classmethod
    def from_dict(cls, payload: dict):
        known = set(cls.__dataclass_fields__)  # type: ignore[attr-defined]
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(payload)
        if "weights" in kwargs:
            kwargs["weights"] = LossWeights.from_dict(kwargs["weights"])
        if "casnet" in kwargs:
            kwargs["casnet"] = CascadeConfig.from_dict(kwargs["casnet"])
        if "discriminator" in kwargs:
            kwargs["discriminator"] = PatchDiscriminatorSpec.from_dict(kwargs["discriminator"])
        if "extractor" in kwargs:
            kwargs["extractor"] = ExtractorSpec.from_dict(kwargs["extractor"])
        return cls(**kwargs)


@dataclass
class TrainingState:
    config: TrainConfig
    generator: CascadeGenerator
    discriminator: PatchDiscriminator
    extractor: FeatureExtractor
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int = 0  # completed sample visits
    epoch: int = 0
    epoch_pos: int = 0  # completed visits within the current epoch
    generator_steps: int = 0
    discriminator_steps: int = 0
    last_event: dict | None = None


def _build_extractor(config: TrainConfig) -> FeatureExtractor:
    if config.extractor_weights is not None:
        return build_extractor(config.extractor, config.extractor_weights)
    return FeatureExtractor(config.extractor, generator=torch_generator(config.seed, "extractor"))


def initialize_state(config: TrainConfig) -> TrainingState:
    generator = CascadeGenerator(config.casnet, generator=torch_generator(config.seed, "generator"))
    discriminator = PatchDiscriminator(
        config.discriminator, generator=torch_generator(config.seed, "discriminator")
    )
    extractor = _build_extractor(config)
    adam = dict(lr=config.learning_rate, betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps)
    return TrainingState(
        config=config,
        generator=generator,
        discriminator=discriminator,
        extractor=extractor,
        opt_g=torch.optim.Adam(generator.parameters(), **adam),
        opt_d=torch.optim.Adam(discriminator.parameters(), **adam),
    )


def state_to_checkpoint(state: TrainingState) -> Checkpoint:
    tensors = {}
    tensors.update(module_tensors(state.generator, "generator"))
    tensors.update(module_tensors(state.discriminator, "discriminator"))
    opt_meta = {}
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        opt_tensors, meta = optimizer_tensors(opt, prefix)
        tensors.update(opt_tensors)
        opt_meta[prefix] = meta
    metadata = {
        "format": 1,
        "config": state.config.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "epoch_pos": state.epoch_pos,
        "generator_steps": state.generator_steps,
        "discriminator_steps": state.discriminator_steps,
        "optimizers": opt_meta,
    }
    return Checkpoint(tensors=tensors, metadata=metadata)


def state_from_checkpoint(checkpoint: Checkpoint, overrides: dict | None = None) -> TrainingState:
    overrides = dict(overrides or {})
    bad = set(overrides) - set(RESUME_OVERRIDABLE)
    if bad:
        raise ConfigError(
            f"resume cannot override {sorted(bad)}; allowed: {list(RESUME_OVERRIDABLE)}"
        )
    config = TrainConfig.from_dict(checkpoint.metadata["config"])
    if overrides:
        config = dataclasses.replace(config, **overrides)

    state = initialize_state(config)
    load_module_tensors(state.generator, checkpoint.tensors, "generator")
    load_module_tensors(state.discriminator, checkpoint.tensors, "discriminator")
    opt_meta = checkpoint.metadata["optimizers"]
    load_optimizer_state(state.opt_g, checkpoint.tensors, opt_meta["opt_g"], "opt_g")
    load_optimizer_state(state.opt_d, checkpoint.tensors, opt_meta["opt_d"], "opt_d")
    if "learning_rate" in overrides:
        for opt in (state.opt_g, state.opt_d):
            for group in opt.param_groups:
                group["lr"] = config.learning_rate

    state.step = checkpoint.metadata["step"]
    state.epoch = checkpoint.metadata["epoch"]
    state.epoch_pos = checkpoint.metadata["epoch_pos"]
    state.generator_steps = checkpoint.metadata["generator_steps"]
    state.discriminator_steps = checkpoint.metadata["discriminator_steps"]
    return state


def epoch_order(seed: int, epoch: int, n: int):
    return numpy_rng(seed, "order", epoch).permutation(n)


def _set_requires_grad(module: torch.nn.Module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


def _visit(state: TrainingState, sample) -> tuple[dict, float]:
    """Train on one sample: n_g generator steps, one discriminator step."""
    cfg = state.config
    weights = cfg.weights
    G, D, E = state.generator, state.discriminator, state.extractor
    y = sample.source.unsqueeze(0)
    x = sample.target.unsqueeze(0)
    use_extractor = weights.lambda2 > 0 or weights.lambda3 > 0

    # The discriminator and extractor are fixed during the generator's inner
    # steps, so their real-pair activations are computed once per visit.
    with torch.no_grad():
        _, feats_real = D(x, y)
        taps_real = E(x) if use_extractor else None

    _set_requires_grad(D, False)
    breakdown = None
    for _ in range(cfg.n_g):
        xhat = G(y)
        prob_fake, feats_fake = D(xhat, y)
        adv = adversarial_loss_generator(prob_fake)
        perc = perceptual_loss(feats_fake, feats_real, weights.lambda_p) if weights.lambda1 > 0 else 0.0
        sty = cont = 0.0
        if use_extractor:
            taps_fake = E(xhat)
            if weights.lambda2 > 0:
                sty = style_loss(taps_fake, taps_real, weights.lambda_s)
            if weights.lambda3 > 0:
                cont = content_loss(taps_fake, taps_real, weights.lambda_c)
        l1v = l1_loss(xhat, x) if weights.lambda_l1 > 0 else 0.0
        l2v = l2_loss(xhat, x) if weights.lambda_l2 > 0 else 0.0
        tvv = tv_loss(xhat) if weights.lambda_tv > 0 else 0.0

        breakdown = combined_generator_loss(adv, perc, sty, cont, l1v, l2v, tvv, weights=weights)
        _check_finite(breakdown.as_floats(), state.step + 1)
        state.opt_g.zero_grad(set_to_none=True)
        breakdown.total.backward()
        state.opt_g.step()
        state.generator_steps += 1
    _set_requires_grad(D, True)

    with torch.no_grad():
        fake = G(y)
    prob_real, _ = D(x, y)
    prob_fake, _ = D(fake, y)
    objective = adversarial_loss_discriminator(prob_real, prob_fake)
    disc_objective = float(objective.detach())
    _check_finite({"discriminator_objective": disc_objective}, state.step + 1)
    state.opt_d.zero_grad(set_to_none=True)
    (-objective).backward()
    state.opt_d.step()
    apply_spectral_normalization(D)
    state.discriminator_steps += 1

    return breakdown.as_floats(), disc_objective


def _emit(state: TrainingState, sample_id: str, gen_losses: dict, disc_objective: float, sink):
    event = {
        "step": state.step,
        "epoch": state.epoch,
        "sample_id": sample_id,
        "generator": gen_losses,
        "discriminator_objective": disc_objective,
    }
    state.last_event = event
    if sink is not None:
        sink(event)


def _check_finite(values: dict, step: int):
    for term, value in values.items():
        if value != value or abs(value) == float("inf"):
            raise TrainingDivergedError(term, step, value)


def _maybe_checkpoint(state: TrainingState, checkpoint_dir) -> None:
    if checkpoint_dir is None:
        return
    interval = state.config.checkpoint_interval
    if interval and state.step % interval == 0:
        save_checkpoint(state_to_checkpoint(state), Path(checkpoint_dir) / f"step_{state.step:08d}.mgck")


def _run(state: TrainingState, dataset: PairedDataset, sink, checkpoint_dir) -> TrainingState:
    cfg = state.config
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    if cfg.threads is not None:
        torch.set_num_threads(cfg.threads)

    done = False
    while state.epoch < cfg.n_epochs and not done:
        order = epoch_order(cfg.seed, state.epoch, len(dataset))
        while state.epoch_pos < len(dataset):
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                done = True
                break
            sample = dataset[int(order[state.epoch_pos])]
            gen_losses, disc_objective = _visit(state, sample)
            state.step += 1
            state.epoch_pos += 1
            _emit(state, sample.sample_id, gen_losses, disc_objective, sink)
            _maybe_checkpoint(state, checkpoint_dir)
        if not done:
            state.epoch += 1
            state.epoch_pos = 0

    if checkpoint_dir is not None:
        save_checkpoint(state_to_checkpoint(state), Path(checkpoint_dir) / "final.mgck")
    return state


def train(config: TrainConfig, dataset: PairedDataset, sink=None, checkpoint_dir=None) -> TrainingState:
    return _run(initialize_state(config), dataset, sink, checkpoint_dir)


def resume(
    checkpoint: Checkpoint,
    dataset: PairedDataset,
    overrides: dict | None = None,
    sink=None,
    checkpoint_dir=None,
) -> TrainingState:
    """Continue a run from a checkpoint; only schedule knobs may change."""
    state = state_from_checkpoint(checkpoint, overrides)
    return _run(state, dataset, sink, checkpoint_dir)


def generator_from_checkpoint(checkpoint: Checkpoint) -> CascadeGenerator:
    config = TrainConfig.from_dict(checkpoint.metadata["config"])
    generator = CascadeGenerator(config.casnet, generator=torch_generator(0, "rebuild"))
    load_module_tensors(generator, checkpoint.tensors, "generator")
    generator.eval()
    return generator


def extractor_from_checkpoint(checkpoint: Checkpoint) -> FeatureExtractor:
    config = TrainConfig.from_dict(checkpoint.metadata["config"])
    return _build_extractor(config)


def translate(checkpoint: Checkpoint, inputs) -> list:
    """Run the checkpointed generator over a list of (1, H, W) images, in order."""
    generator = generator_from_checkpoint(checkpoint)
    outputs = []
    with torch.no_grad():
        for img in inputs:
            tensor = img if isinstance(img, torch.Tensor) else torch.as_tensor(img)
            if tensor.ndim == 2:
                tensor = tensor.unsqueeze(0)
            outputs.append(generator(tensor.unsqueeze(0)).squeeze(0))
    return outputs
