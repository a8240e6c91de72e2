"""Paired-image datasets: loading, normalization, and synthetic generation.

On-disk layout: ``root/{source,target}/<id>.png`` (8-bit grayscale, identical
basenames) plus ``root/manifest.json`` mapping each id to its group and split.
Groups model patients: a group never spans both splits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError, ImageFormatError, PairingError
from .rng import numpy_rng

SPLITS = ("train", "val")

# 5x5 binomial kernel, a close small-footprint Gaussian; sums to 1 so
# constants are preserved (with reflect padding, also at borders).
_BLUR_1D = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
BLUR_KERNEL = np.outer(_BLUR_1D, _BLUR_1D)
EDGE_GAIN = 1.5


@dataclass(frozen=True)
class PairedSample:
    """One aligned (source, target) image pair, the unit of training."""

    source: torch.Tensor  # (1, H, W) float32 in [-1, 1]
    target: torch.Tensor  # (1, H, W) float32 in [-1, 1]
    group_id: str
    sample_id: str

    def __post_init__(self):
        if self.source.shape != self.target.shape:
            raise DataError(
                f"sample '{self.sample_id}': source {tuple(self.source.shape)} "
                f"vs target {tuple(self.target.shape)}"
            )


class PairedDataset:
    """Immutable ordered collection of PairedSamples with a split tag."""

    def __init__(self, samples, split: str, manifest_digest: str | None = None):
        if split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got '{split}'")
        samples = tuple(samples)
        seen = set()
        for s in samples:
            if s.sample_id in seen:
                raise DataError(f"duplicate sample_id '{s.sample_id}'")
            seen.add(s.sample_id)
        self.samples = samples
        self.split = split
        self.manifest_digest = manifest_digest or _digest_samples(samples, split)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    def __iter__(self):
        return iter(self.samples)

    @property
    def group_ids(self):
        return sorted({s.group_id for s in self.samples})

    @property
    def image_size(self):
        return tuple(self.samples[0].source.shape[-2:]) if self.samples else None


def _digest_samples(samples, split: str) -> str:
    h = hashlib.sha256()
    h.update(split.encode())
    for s in samples:
        h.update(s.sample_id.encode())
        h.update(s.group_id.encode())
        h.update(denormalize_image(s.source).tobytes())
        h.update(denormalize_image(s.target).tobytes())
    return h.hexdigest()


def normalize_image(pixels: np.ndarray) -> torch.Tensor:
    """Map 8-bit grayscale values [0, 255] onto [-1, 1] (tanh output range)."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ImageFormatError(f"expected a 2-D grayscale grid, got shape {arr.shape}")
    scaled = arr.astype(np.float32) / 255.0 * 2.0 - 1.0
    return torch.from_numpy(scaled).unsqueeze(0)


def denormalize_image(tensor: torch.Tensor) -> np.ndarray:
    """Inverse of normalize_image, rounding back to the 8-bit grid."""
    arr = tensor.detach().cpu().numpy()
    arr = np.squeeze(arr, axis=0) if arr.ndim == 3 else arr
    pixels = np.rint((arr + 1.0) / 2.0 * 255.0)
    return np.clip(pixels, 0, 255).astype(np.uint8)


def _read_grayscale(path: Path, expected_size=None) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode != "L":
            raise ImageFormatError(f"{path}: expected 8-bit grayscale (mode L), got mode {img.mode}")
        arr = np.asarray(img, dtype=np.uint8)
    if expected_size is not None and arr.shape != expected_size:
        raise ImageFormatError(
            f"{path}: size {arr.shape} differs from dataset size {expected_size}"
        )
    return arr


def load_manifest(root: Path) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DataError(f"missing manifest: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    entries = manifest.get("samples")
    if not isinstance(entries, dict):
        raise DataError(f"{path}: manifest must contain a 'samples' object")
    for sid, meta in entries.items():
        if "group_id" not in meta or "split" not in meta:
            raise DataError(f"{path}: sample '{sid}' needs 'group_id' and 'split'")
        if meta["split"] not in SPLITS:
            raise DataError(f"{path}: sample '{sid}' has unknown split '{meta['split']}'")
    _check_group_separation(entries)
    return entries


def _check_group_separation(entries: dict):
    by_group: dict[str, set] = {}
    for meta in entries.values():
        by_group.setdefault(meta["group_id"], set()).add(meta["split"])
    shared = sorted(g for g, splits in by_group.items() if len(splits) > 1)
    if shared:
        raise DataError(f"groups present in both train and val splits: {shared}")


def load_paired_dataset(root, split: str) -> PairedDataset:
    """Load the requested split from a dataset directory.

    Files present under only one of source/ and target/, or listed in the
    manifest without files (and vice versa), are reported as orphans rather
    than silently dropped.
    """
    root = Path(root)
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got '{split}'")
    entries = load_manifest(root)
    source_ids = {p.stem for p in (root / "source").glob("*.png")}
    target_ids = {p.stem for p in (root / "target").glob("*.png")}
    manifest_ids = set(entries)

    orphans = sorted(
        (source_ids ^ target_ids) | ((source_ids & target_ids) ^ manifest_ids)
    )
    if orphans:
        raise PairingError(
            f"unpaired ids (present in only some of source/, target/, manifest): {orphans}",
            orphan_ids=orphans,
        )

    samples = []
    expected = None
    for sid in sorted(manifest_ids):
        if entries[sid]["split"] != split:
            continue
        src = _read_grayscale(root / "source" / f"{sid}.png", expected)
        expected = expected or src.shape
        tgt = _read_grayscale(root / "target" / f"{sid}.png", expected)
        samples.append(
            PairedSample(
                source=normalize_image(src),
                target=normalize_image(tgt),
                group_id=entries[sid]["group_id"],
                sample_id=sid,
            )
        )
    return PairedDataset(samples, split)


def synthetic_transform(source: np.ndarray) -> np.ndarray:
    """Ground-truth mapping for synthetic pairs, in [-1, 1] space.

    Mild Gaussian blur, unsharp-mask edge enhancement, then intensity
    inversion; on a constant region c this reduces to clip(-c).
    """
    blurred = ndimage.convolve(source.astype(np.float64), BLUR_KERNEL, mode="reflect")
    twice = ndimage.convolve(blurred, BLUR_KERNEL, mode="reflect")
    enhanced = blurred + EDGE_GAIN * (blurred - twice)
    return np.clip(-enhanced, -1.0, 1.0)


def _random_scene(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random blob/ellipse scene with values in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    scene = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        rx, ry = rng.uniform(0.08, 0.30, size=2)
        theta = rng.uniform(0.0, np.pi)
        amp = rng.uniform(0.4, 1.0)
        dx, dy = xx - cx, yy - cy
        xr = dx * np.cos(theta) + dy * np.sin(theta)
        yr = -dx * np.sin(theta) + dy * np.cos(theta)
        scene += amp * np.exp(-((xr / rx) ** 2 + (yr / ry) ** 2))
    peak = scene.max()
    if peak > 0:
        scene /= peak
    return scene


def generate_synthetic_pairs(
    seed: int,
    count: int,
    size: int,
    groups: int,
    split: str = "train",
    group_prefix: str = "g",
    id_prefix: str = "s",
) -> PairedDataset:
    """Deterministic stand-in for clinical data with a known target mapping.

    Both images are quantized to the 8-bit grid when generated, so a dataset
    written to PNG and loaded back is bit-identical to the in-memory one.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if groups < 1:
        raise ConfigError(f"groups must be >= 1, got {groups}")
    if size < 32 or size & (size - 1) != 0:
        raise ConfigError(f"size must be a power of two >= 32, got {size}")

    samples = []
    for i in range(count):
        rng = numpy_rng(seed, "synth", split, i)
        scene = _random_scene(rng, size)
        src_u8 = np.clip(np.rint(scene * 255.0), 0, 255).astype(np.uint8)
        source = normalize_image(src_u8)
        target_float = synthetic_transform(source.squeeze(0).numpy())
        tgt_u8 = denormalize_image(torch.from_numpy(target_float.astype(np.float32)).unsqueeze(0))
        samples.append(
            PairedSample(
                source=source,
                target=normalize_image(tgt_u8),
                group_id=f"{group_prefix}{i % groups}",
                sample_id=f"{id_prefix}{i:04d}",
            )
        )
    return PairedDataset(samples, split)


def write_dataset(root, datasets) -> Path:
    """Write one or more splits into the standard directory layout."""
    root = Path(root)
    (root / "source").mkdir(parents=True, exist_ok=True)
    (root / "target").mkdir(parents=True, exist_ok=True)
    entries = {}
    for ds in datasets:
        for s in ds:
            if s.sample_id in entries:
                raise DataError(f"duplicate sample_id across splits: '{s.sample_id}'")
            entries[s.sample_id] = {"group_id": s.group_id, "split": ds.split}
            Image.fromarray(denormalize_image(s.source), "L").save(root / "source" / f"{s.sample_id}.png")
            Image.fromarray(denormalize_image(s.target), "L").save(root / "target" / f"{s.sample_id}.png")
    _check_group_separation(entries)
    manifest = {"samples": {sid: entries[sid] for sid in sorted(entries)}}
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return root
