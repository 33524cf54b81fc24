#!/usr/bin/env python3
"""
Seeded blur / downsample / noise / quantize chain.
"""
import math
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "psidit"))

from psidit.degradation import (  # noqa: E402
    DegradationConfig,
    blur,
    degrade,
    gaussian_kernel,
    upsample_bicubic,
    upsample_bilinear,
)


def test_gaussian_kernel_properties():
    assert torch.equal(gaussian_kernel(0), torch.ones(1, 1, dtype=torch.float64))
    k = gaussian_kernel(1.5)
    assert k.shape == (2 * math.ceil(4.5) + 1,) * 2
    assert abs(k.sum().item() - 1) < 1e-9
    assert torch.allclose(k, torch.rot90(k), atol=1e-15)
    with pytest.raises(ValueError):
        gaussian_kernel(-1)


def test_identity_config_is_bit_exact():
    hr = torch.rand(3, 32, 32)
    assert torch.equal(degrade(hr, DegradationConfig.identity(), seed=4, index=2), hr)


def test_scale_shape_contract():
    lr = degrade(torch.rand(3, 32, 32), DegradationConfig(scale=4))
    assert lr.shape == (3, 8, 8)
    with pytest.raises(ValueError):
        degrade(torch.rand(3, 30, 30), DegradationConfig(scale=4))


def test_noise_level_statistic():
    cfg = DegradationConfig(blur_sigma=(0, 0), scale=1, noise_sigma=(0.1, 0.1), quant_levels=0)
    hr = torch.full((1, 100, 100), 0.5)
    diff = degrade(hr, cfg, seed=0, index=0) - hr
    assert abs(diff.std().item() - 0.1) < 0.01


def test_blur_keeps_constants_and_range():
    flat = torch.full((3, 16, 16), 0.3)
    assert torch.allclose(blur(flat, 2.0), flat, atol=1e-6)
    cfg = DegradationConfig(blur_sigma=(0.5, 2.0), noise_sigma=(0.05, 0.2), quant_levels=16)
    for index in range(5):
        lr = degrade(torch.rand(3, 32, 32), cfg, seed=1, index=index)
        assert lr.min() >= 0 and lr.max() <= 1


def test_deterministic_per_seed_and_index():
    hr = torch.rand(3, 32, 32)
    cfg = DegradationConfig()
    assert torch.equal(degrade(hr, cfg, seed=5, index=7), degrade(hr, cfg, seed=5, index=7))
    assert not torch.equal(degrade(hr, cfg, seed=5, index=7), degrade(hr, cfg, seed=5, index=8))


def test_quantization_levels():
    cfg = DegradationConfig(blur_sigma=(0, 0), scale=1, noise_sigma=(0, 0), quant_levels=2)
    lr = degrade(torch.linspace(0, 1, 64).view(1, 8, 8), cfg)
    assert set(lr.unique().tolist()) <= {0.0, 1.0}


def test_config_validation():
    with pytest.raises(ValueError):
        DegradationConfig(scale=0).validate()
    with pytest.raises(ValueError):
        DegradationConfig(quant_levels=1).validate()
    with pytest.raises(ValueError):
        DegradationConfig(noise_sigma=(0.2, 0.1)).validate()


def test_upsampling_helpers():
    lr = torch.rand(3, 8, 8)
    assert upsample_bilinear(lr, 32).shape == (3, 32, 32)
    assert upsample_bicubic(lr[None], 32).shape == (1, 3, 32, 32)
    assert torch.equal(upsample_bicubic(lr, 8), lr)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
