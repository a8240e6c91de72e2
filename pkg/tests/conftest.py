import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from casgan.data import generate_synthetic_pairs
from casgan.features import ExtractorSpec
from casgan.generator import CascadeConfig, UBlockSpec


@pytest.fixture(scope="session", autouse=True)
def single_thread_math():
    # Bit-exact reproducibility assertions need a fixed reduction order.
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_ublock_spec():
    # depth 3, width 4: small enough for finite-difference checks
    return UBlockSpec(encoder_channels=(4, 8, 8), decoder_channels=(8, 16, 8))


@pytest.fixture(scope="session")
def tiny_cascade_config(tiny_ublock_spec):
    return CascadeConfig(n_blocks=1, ublock=tiny_ublock_spec)


@pytest.fixture(scope="session")
def desk_cascade_config():
    return CascadeConfig(n_blocks=1, ublock=UBlockSpec.scaled(depth=5, width_divisor=4))


@pytest.fixture(scope="session")
def tiny_extractor_spec():
    return ExtractorSpec.tiny()


@pytest.fixture(scope="session")
def small_train_set():
    return generate_synthetic_pairs(seed=11, count=6, size=32, groups=3, split="train")


@pytest.fixture(scope="session")
def small_val_set():
    return generate_synthetic_pairs(
        seed=12, count=4, size=32, groups=2, split="val", group_prefix="vg", id_prefix="v"
    )
