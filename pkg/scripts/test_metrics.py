#!/usr/bin/env python3
"""
PSNR / SSIM oracles, center crops and the evaluation report.
"""
import math
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "psidit"))

from psidit.data import SceneCorpus  # noqa: E402
from psidit.degradation import DegradationConfig  # noqa: E402
from psidit.metrics import (  # noqa: E402
    PSNR_CAP,
    EvalReport,
    ImageScores,
    center_crop,
    eval_report,
    psnr,
    ssim,
)


def test_center_crop():
    image = torch.arange(2 * 5 * 6, dtype=torch.float32).view(2, 5, 6)
    crop = center_crop(image, 3)
    assert crop.shape == (2, 3, 3)
    # (5 - 3) // 2 = 1 rows above, (6 - 3) // 2 = 1 column left
    assert torch.equal(crop, image[:, 1:4, 1:4])
    assert torch.equal(center_crop(image, 5), image[:, :, 0:5])
    with pytest.raises(ValueError):
        center_crop(image, 6)
    with pytest.raises(ValueError):
        center_crop(image, 0)


def test_psnr_cases():
    a = torch.rand(3, 16, 16)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(torch.zeros(3, 4, 4), torch.ones(3, 4, 4)) == pytest.approx(0.0, abs=1e-12)
    b = torch.full((3, 16, 16), 0.5)
    assert psnr(b, b + 16 / 255) == pytest.approx(24.05, abs=0.01)
    near, far = b + 0.01, b + 0.1
    assert psnr(b, near) > psnr(b, far)
    with pytest.raises(ValueError):
        psnr(a, a[:, :8])


def test_ssim_cases():
    gen = torch.Generator().manual_seed(0)
    a = torch.rand(3, 16, 16, generator=gen)
    b = torch.rand(3, 16, 16, generator=gen)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == ssim(b, a)
    assert ssim(a, b) < ssim(a, (a + b) / 2) < 1.0
    assert ssim(torch.zeros(3, 16, 16), torch.ones(3, 16, 16)) == pytest.approx(1.0e-4, abs=1e-5)
    with pytest.raises(ValueError):
        ssim(torch.rand(3, 10, 10), torch.rand(3, 10, 10))
    with pytest.raises(ValueError):
        ssim(a, b[:2])


def test_report_means_and_csv():
    report = EvalReport(
        rows=[ImageScores(3, 30.0, 0.9, 28.0, 0.8), ImageScores(7, 32.0, 0.7, 30.0, 0.6)],
        config_digest="ab" * 32,
        crop_size=16,
    )
    assert report.mean_psnr == 31.0 and report.baseline_psnr == 29.0
    assert report.mean_ssim == pytest.approx(0.8) and report.baseline_ssim == pytest.approx(0.7)
    lines = report.to_csv().splitlines()
    assert lines[0] == "index,psnr,ssim,bicubic_psnr,bicubic_ssim"
    assert lines[1] == "3,30.000000,0.900000,28.000000,0.800000"
    assert len(lines) == 3
    assert "+2.000 dB" in report.summary()
    assert math.isnan(EvalReport().mean_psnr)


def test_identity_degradation_baseline_hits_the_cap():
    corpus = SceneCorpus.generate(4, size=16, degradation=DegradationConfig.identity(), seed=0)
    report = eval_report(None, corpus)
    assert report.crop_size == 16
    assert [r.index for r in report.rows] == [0, 1, 2, 3]
    assert report.baseline_psnr == PSNR_CAP
    assert report.baseline_ssim == pytest.approx(1.0, abs=1e-9)


def test_default_degradation_baseline_is_below_the_cap():
    corpus = SceneCorpus.generate(4, size=32, seed=0)
    report = eval_report(None, corpus, crop_size=24)
    assert report.crop_size == 24
    assert report.baseline_psnr < PSNR_CAP
    assert report.baseline_ssim < 1.0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
