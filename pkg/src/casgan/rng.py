"""Deterministic seeding helpers.

Every stochastic choice in the package derives from a root seed plus a
string/integer path, so independent components never share streams and
identical inputs reproduce identical results across runs and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def _part_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_sequence(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([_part_to_int(p) for p in parts])


def numpy_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(*parts))


def torch_generator(*parts) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    # SeedSequence gives a well-mixed 64-bit state from the hashed parts.
    gen.manual_seed(int(seed_sequence(*parts).generate_state(1, np.uint64)[0]))
    return gen
