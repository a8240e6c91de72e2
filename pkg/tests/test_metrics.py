import csv
import json
import math

import numpy as np
import pytest
import torch

from casgan.data import generate_synthetic_pairs
from casgan.errors import ShapeError
from casgan.features import ExtractorSpec, build_extractor
from casgan.metrics import (
    METRIC_COLUMNS,
    MetricParams,
    evaluate_with_translator,
    mse,
    perceptual_distance,
    psnr,
    ssim,
    uqi,
    vif,
)

from oracles import loop_mse, loop_ssim, loop_uqi


def rand_images(shape=(16, 16), seed=0, scale=255.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, scale, size=shape), rng.uniform(0, scale, size=shape)


# ---------------------------------------------------------------- mse / psnr

def test_mse_psnr_identical():
    a, _ = rand_images()
    assert mse(a, a) == 0.0
    assert psnr(a, a) == math.inf


def test_psnr_closed_form():
    # max=255, mse=100 -> 10*log10(65025/100) = 28.1308 dB
    a = np.zeros((10, 10))
    b = np.full((10, 10), 10.0)
    assert mse(a, b) == pytest.approx(100.0)
    assert psnr(a, b, 255.0) == pytest.approx(28.1308, abs=1e-4)


def test_mse_matches_loop_oracle():
    a, b = rand_images(seed=3)
    assert mse(a, b) == pytest.approx(loop_mse(a, b), abs=1e-10)


def test_psnr_translation_invariance():
    a, b = rand_images(seed=4, scale=200.0)
    assert psnr(a, b) == pytest.approx(psnr(a + 30.0, b + 30.0), rel=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse(np.zeros((4, 4)), np.zeros((5, 5)))


# ---------------------------------------------------------------- ssim

def test_ssim_identical_is_one():
    a, _ = rand_images()
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negation_below_one():
    a, _ = rand_images(seed=5)
    assert ssim(a, 255.0 - a) < 1.0


def test_ssim_matches_loop_oracle():
    rng = np.random.default_rng(6)
    for _ in range(10):
        h = int(rng.integers(16, 33))
        w = int(rng.integers(16, 33))
        a = rng.uniform(0, 255, size=(h, w))
        b = rng.uniform(0, 255, size=(h, w))
        assert ssim(a, b) == pytest.approx(loop_ssim(a, b), abs=1e-6)


def test_ssim_window_too_large():
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), window=11)


def test_ssim_symmetry_and_range():
    a, b = rand_images(seed=7)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0


# ---------------------------------------------------------------- uqi

def test_uqi_identity():
    a, _ = rand_images(seed=8)
    assert uqi(a, a) == pytest.approx(1.0, abs=1e-9)


def test_uqi_constant_equal_images():
    a = np.full((16, 16), 42.0)
    assert uqi(a, a.copy()) == 1.0
    assert uqi(a, np.full((16, 16), 17.0)) == 0.0


def test_uqi_matches_loop_oracle():
    rng = np.random.default_rng(9)
    for _ in range(10):
        h = int(rng.integers(16, 33))
        w = int(rng.integers(16, 33))
        a = rng.uniform(0, 255, size=(h, w))
        b = rng.uniform(0, 255, size=(h, w))
        assert uqi(a, b) == pytest.approx(loop_uqi(a, b), abs=1e-6)


def test_uqi_reports_skipped_windows():
    a = np.zeros((16, 16))
    a[:2, :2] = 50.0
    value, skipped = uqi(a, a.copy(), return_skipped=True)
    assert skipped > 0
    assert value == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- vif

def test_vif_identity():
    a, _ = rand_images((48, 48), seed=10)
    assert vif(a, a) == pytest.approx(1.0, abs=1e-6)


def test_vif_noise_monotonicity():
    rng = np.random.default_rng(11)
    a = rng.uniform(40, 200, size=(64, 64))
    weak = a + rng.normal(0, 4, size=a.shape)
    strong = a + rng.normal(0, 40, size=a.shape)
    assert vif(a, strong) < vif(a, weak)


def test_vif_constant_images():
    a = np.full((32, 32), 99.0)
    assert vif(a, a.copy()) == 1.0
    assert vif(a, np.full((32, 32), 1.0)) == 0.0


def test_vif_min_size():
    with pytest.raises(ShapeError):
        vif(np.zeros((16, 16)), np.zeros((16, 16)))


def test_vif_nonnegative():
    a, b = rand_images((40, 40), seed=12)
    assert vif(a, b) >= 0.0


# ---------------------------------------------------------------- pdist

@pytest.fixture(scope="module")
def tiny_extractor():
    return build_extractor(ExtractorSpec.tiny(), 0)


def test_pdist_identity_and_symmetry(tiny_extractor):
    gen = torch.Generator().manual_seed(13)
    a = torch.rand(1, 32, 32, generator=gen) * 2 - 1
    b = torch.rand(1, 32, 32, generator=gen) * 2 - 1
    assert perceptual_distance(tiny_extractor, a, a) == 0.0
    assert perceptual_distance(tiny_extractor, a, b) == pytest.approx(
        perceptual_distance(tiny_extractor, b, a), abs=1e-9
    )
    assert perceptual_distance(tiny_extractor, a, b) > 0.0


def test_pdist_noise_monotonicity(tiny_extractor):
    gen = torch.Generator().manual_seed(14)
    a = torch.rand(1, 32, 32, generator=gen) * 2 - 1
    noise = torch.randn(1, 32, 32, generator=gen)
    values = [
        perceptual_distance(tiny_extractor, a, (a + amp * noise).clamp(-1, 1))
        for amp in (0.01, 0.1, 0.5)
    ]
    assert values[0] < values[1] < values[2]


# ---------------------------------------------------------------- reports

def test_identity_translator_perfect_scores(tmp_path, tiny_extractor):
    ds = generate_synthetic_pairs(seed=20, count=3, size=32, groups=1, split="val")
    # score sources against themselves: pass-through translator, target=source
    from casgan.data import PairedDataset, PairedSample

    mirrored = PairedDataset(
        [
            PairedSample(source=s.source, target=s.source, group_id=s.group_id, sample_id=s.sample_id)
            for s in ds
        ],
        "val",
    )
    report = evaluate_with_translator(lambda src: src, tiny_extractor, mirrored)
    assert len(report.rows) == 3
    for row in report.rows:
        assert row["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert row["mse"] == 0.0
        assert row["psnr_db"] == math.inf
        assert row["uqi"] == pytest.approx(1.0, abs=1e-9)
        assert row["vif"] == pytest.approx(1.0, abs=1e-6)
        assert row["pdist"] == 0.0


def test_report_shape_and_aggregate(tmp_path, tiny_extractor):
    ds = generate_synthetic_pairs(seed=21, count=4, size=32, groups=2, split="val")
    report = evaluate_with_translator(lambda src: -src, tiny_extractor, ds)
    assert len(report.rows) == len(ds)
    assert set(METRIC_COLUMNS) <= set(report.rows[0])
    for column in METRIC_COLUMNS:
        values = [row[column] for row in report.rows]
        assert report.aggregate[column] == pytest.approx(float(np.mean(values)), rel=1e-12)

    csv_path = report.write_csv(tmp_path / "report.csv")
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sample_id"] + list(METRIC_COLUMNS)
    assert len(rows) == len(ds) + 2  # header + samples + aggregate
    assert rows[-1][0] == "mean"

    json_path = report.write_json(tmp_path / "report.json")
    payload = json.loads(json_path.read_text())
    assert payload["metadata"]["dataset_digest"] == ds.manifest_digest
    assert payload["metadata"]["n_samples"] == len(ds)
