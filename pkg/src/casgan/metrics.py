"""Full-reference image quality metrics and dataset-level evaluation reports.

All pixel metrics operate on the denormalized 8-bit scale ([0, 255] values,
max_value 255); conventions are fixed here and recorded in report metadata.
The feature-space distance (pdist) runs on [-1, 1] tensors through the
frozen extractor with unit-normalized channel activations.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.signal import convolve2d

from .data import PairedDataset, denormalize_image
from .errors import ShapeError
from .features import FeatureExtractor

METRIC_COLUMNS = ("ssim", "psnr_db", "mse", "vif", "uqi", "pdist")


@dataclass(frozen=True)
class MetricParams:
    max_value: float = 255.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    uqi_window: int = 8
    vif_scales: int = 4
    vif_noise_variance: float = 2.0

    def to_dict(self) -> dict:
        return {
            "max_value": self.max_value,
            "ssim_window": self.ssim_window,
            "ssim_sigma": self.ssim_sigma,
            "ssim_k1": self.ssim_k1,
            "ssim_k2": self.ssim_k2,
            "uqi_window": self.uqi_window,
            "vif_scales": self.vif_scales,
            "vif_noise_variance": self.vif_noise_variance,
        }


def _as_2d(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {arr.shape}")
    return arr


def _check_pair(a, b):
    a, b = _as_2d(a), _as_2d(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_value: float = 255.0) -> float:
    """10*log10(max^2 / mse), +inf sentinel for identical images."""
    if max_value <= 0:
        raise ValueError(f"max_value must be positive, got {max_value}")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(max_value**2 / err))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(
    a,
    b,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    max_value: float = 255.0,
) -> float:
    """Mean local structural similarity with a Gaussian window (valid positions)."""
    a, b = _check_pair(a, b)
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} smaller than ssim window {window}")
    kernel = gaussian_kernel(window, sigma)
    c1 = (k1 * max_value) ** 2
    c2 = (k2 * max_value) ** 2

    mu_a = convolve2d(a, kernel, mode="valid")
    mu_b = convolve2d(b, kernel, mode="valid")
    var_a = convolve2d(a * a, kernel, mode="valid") - mu_a**2
    var_b = convolve2d(b * b, kernel, mode="valid") - mu_b**2
    cov = convolve2d(a * b, kernel, mode="valid") - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def uqi(a, b, window: int = 8, return_skipped: bool = False):
    """Universal quality index: SSIM statistic with c1 = c2 = 0, uniform window.

    Windows whose denominator vanishes (zero variances and zero means) are
    skipped; if no window is defined the result falls back to 1.0 for equal
    images and 0.0 otherwise.
    """
    a, b = _check_pair(a, b)
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} smaller than uqi window {window}")
    n = window * window
    kernel = np.ones((window, window))

    sum_a = convolve2d(a, kernel, mode="valid")
    sum_b = convolve2d(b, kernel, mode="valid")
    sum_aa = convolve2d(a * a, kernel, mode="valid")
    sum_bb = convolve2d(b * b, kernel, mode="valid")
    sum_ab = convolve2d(a * b, kernel, mode="valid")

    mu_a, mu_b = sum_a / n, sum_b / n
    var_a = sum_aa / n - mu_a**2
    var_b = sum_bb / n - mu_b**2
    cov = sum_ab / n - mu_a * mu_b

    den = (var_a + var_b) * (mu_a**2 + mu_b**2)
    valid = den != 0.0
    skipped = int(valid.size - valid.sum())
    if not valid.any():
        value = 1.0 if np.array_equal(a, b) else 0.0
    else:
        q = (4.0 * cov[valid] * mu_a[valid] * mu_b[valid]) / den[valid]
        value = float(np.mean(q))
    return (value, skipped) if return_skipped else value


def vif(a, b, scales: int = 4, noise_variance: float = 2.0) -> float:
    """Pixel-domain visual information fidelity over a Gaussian pyramid."""
    a, b = _check_pair(a, b)
    if min(a.shape) < 32:
        raise ShapeError(f"vif needs at least 32x32 images, got {a.shape}")
    eps = 1e-10
    num = 0.0
    den = 0.0
    ref, dist = a, b
    for scale in range(1, scales + 1):
        size = 2 ** (scales - scale + 1) + 1
        kernel = gaussian_kernel(size, size / 5.0)
        if scale > 1:
            if min(ref.shape) < size:
                break
            ref = convolve2d(ref, kernel, mode="valid")[::2, ::2]
            dist = convolve2d(dist, kernel, mode="valid")[::2, ::2]
        if min(ref.shape) < size:
            break
        mu1 = convolve2d(ref, kernel, mode="valid")
        mu2 = convolve2d(dist, kernel, mode="valid")
        sigma1_sq = np.clip(convolve2d(ref * ref, kernel, mode="valid") - mu1**2, 0, None)
        sigma2_sq = np.clip(convolve2d(dist * dist, kernel, mode="valid") - mu2**2, 0, None)
        sigma12 = convolve2d(ref * dist, kernel, mode="valid") - mu1 * mu2

        g = sigma12 / (sigma1_sq + eps)
        sv_sq = sigma2_sq - g * sigma12
        g = np.where(sigma1_sq < eps, 0.0, g)
        sv_sq = np.where(sigma1_sq < eps, sigma2_sq, sv_sq)
        sv_sq = np.where(g < 0.0, sigma2_sq, sv_sq)
        g = np.clip(g, 0.0, None)
        sv_sq = np.clip(sv_sq, eps, None)

        num += float(np.sum(np.log10(1.0 + g**2 * sigma1_sq / (sv_sq + noise_variance))))
        den += float(np.sum(np.log10(1.0 + sigma1_sq / noise_variance)))
    if den == 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return num / den


def perceptual_distance(extractor: FeatureExtractor, a: torch.Tensor, b: torch.Tensor) -> float:
    """Feature-space distance: mean squared difference of unit-normalized taps.

    Not a learned metric; there are no calibration weights. Zero iff the
    images are identical, symmetric, and increasing with distortion strength.
    """
    if a.ndim == 3:
        a = a.unsqueeze(0)
    if b.ndim == 3:
        b = b.unsqueeze(0)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    eps = 1e-10
    with torch.no_grad():
        taps_a = extractor(a)
        taps_b = extractor(b)
        total = 0.0
        for ta, tb in zip(taps_a, taps_b):
            na = ta / (ta.norm(dim=1, keepdim=True) + eps)
            nb = tb / (tb.norm(dim=1, keepdim=True) + eps)
            total += float(((na - nb) ** 2).mean())
    return total / len(taps_a)


@dataclass
class MetricReport:
    rows: list
    aggregate: dict
    metadata: dict = field(default_factory=dict)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("sample_id",) + METRIC_COLUMNS)
            for row in self.rows:
                writer.writerow([row["sample_id"]] + [row[c] for c in METRIC_COLUMNS])
            writer.writerow(["mean"] + [self.aggregate[c] for c in METRIC_COLUMNS])
        return path

    def write_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(
                {"rows": self.rows, "aggregate": self.aggregate, "metadata": self.metadata},
                fh,
                indent=2,
            )
        return path


def _aggregate(rows) -> dict:
    return {
        column: float(np.mean([row[column] for row in rows])) if rows else math.nan
        for column in METRIC_COLUMNS
    }


def evaluate_with_translator(
    translate_fn,
    extractor: FeatureExtractor,
    dataset: PairedDataset,
    params: MetricParams = MetricParams(),
    metadata: dict | None = None,
) -> MetricReport:
    """Translate every sample and score it against its target.

    ``translate_fn`` maps a (1, H, W) source tensor to a (1, H, W) output in
    [-1, 1]; passing an identity function scores the sources themselves.
    """
    rows = []
    for sample in sorted(dataset, key=lambda s: s.sample_id):
        output = translate_fn(sample.source)
        pred = denormalize_image(output).astype(np.float64)
        ref = denormalize_image(sample.target).astype(np.float64)
        rows.append(
            {
                "sample_id": sample.sample_id,
                "ssim": ssim(
                    ref,
                    pred,
                    window=params.ssim_window,
                    sigma=params.ssim_sigma,
                    k1=params.ssim_k1,
                    k2=params.ssim_k2,
                    max_value=params.max_value,
                ),
                "psnr_db": psnr(ref, pred, max_value=params.max_value),
                "mse": mse(ref, pred),
                "vif": vif(ref, pred, scales=params.vif_scales, noise_variance=params.vif_noise_variance),
                "uqi": uqi(ref, pred, window=params.uqi_window),
                "pdist": perceptual_distance(extractor, output.detach(), sample.target),
            }
        )
    meta = {"metric_params": params.to_dict(), "dataset_digest": dataset.manifest_digest,
            "split": dataset.split, "n_samples": len(rows)}
    meta.update(metadata or {})
    return MetricReport(rows=rows, aggregate=_aggregate(rows), metadata=meta)


def evaluate_dataset(checkpoint, dataset: PairedDataset, params: MetricParams = MetricParams()) -> MetricReport:
    """Score a trained checkpoint on a dataset split (Table-style report)."""
    from .trainer import generator_from_checkpoint, extractor_from_checkpoint

    generator = generator_from_checkpoint(checkpoint)
    extractor = extractor_from_checkpoint(checkpoint)

    def translate_one(source: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return generator(source.unsqueeze(0)).squeeze(0)

    metadata = {"checkpoint_step": checkpoint.metadata.get("step")}
    return evaluate_with_translator(translate_one, extractor, dataset, params, metadata)
