# SPDX-License-Identifier: MIT
"""
First-order synthetic degradation: blur, area downsample, additive noise, quantization.

All randomness comes from a generator derived from `(seed, "degrade", sample index)`, so
an LR image can always be re-derived from the HR image and the recorded seed.
"""

from dataclasses import asdict, dataclass
import logging
import math
import typing as tp

import torch
from torch.nn import functional as F

from .utils.rng import RngStreams, make_generator

logger = logging.getLogger(__name__)

RESAMPLE_METHODS = ("area",)


@dataclass
class DegradationConfig:
    blur_sigma: tp.Tuple[float, float] = (0.4, 1.2)
    scale: int = 4
    noise_sigma: tp.Tuple[float, float] = (0.0, 0.02)
    quant_levels: int = 64
    resample: str = "area"

    def __post_init__(self):
        self.blur_sigma = tuple(float(v) for v in self.blur_sigma)
        self.noise_sigma = tuple(float(v) for v in self.noise_sigma)

    def validate(self) -> None:
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        for name in ("blur_sigma", "noise_sigma"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a non-negative range, got {(lo, hi)}")
        if self.quant_levels != 0 and not 2 <= self.quant_levels <= 256:
            raise ValueError(f"quant_levels must be 0 or in [2, 256], got {self.quant_levels}")
        if self.resample not in RESAMPLE_METHODS:
            raise ValueError(f"unknown resample method {self.resample!r}")

    @classmethod
    def identity(cls) -> "DegradationConfig":
        return cls(blur_sigma=(0.0, 0.0), scale=1, noise_sigma=(0.0, 0.0), quant_levels=0)

    def to_dict(self) -> dict[str, tp.Any]:
        out = asdict(self)
        out["blur_sigma"] = list(self.blur_sigma)
        out["noise_sigma"] = list(self.noise_sigma)
        return out


def gaussian_kernel(sigma: float, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Normalized isotropic kernel of radius `ceil(3 sigma)`; `sigma=0` gives `[[1.0]]`."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return torch.ones(1, 1, dtype=dtype)
    radius = math.ceil(3 * sigma)
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    k = torch.outer(g, g)
    return (k / k.sum()).to(dtype)


def blur(image: torch.Tensor, sigma: float) -> torch.Tensor:
    """Per-channel convolution with replicate padding, `[..., C, H, W]` in and out."""
    if sigma == 0:
        return image
    kernel = gaussian_kernel(sigma, dtype=image.dtype)
    r = kernel.shape[-1] // 2
    shape = image.shape
    x = image.reshape(-1, 1, *shape[-2:])
    x = F.pad(x, (r, r, r, r), mode="replicate")
    x = F.conv2d(x, kernel[None, None])
    return x.reshape(shape)


def area_downsample(image: torch.Tensor, scale: int) -> torch.Tensor:
    H, W = image.shape[-2:]
    if H % scale or W % scale:
        raise ValueError(f"image {H}x{W} is not divisible by scale {scale}")
    if scale == 1:
        return image
    batched = image if image.dim() == 4 else image[None]
    out = F.avg_pool2d(batched, kernel_size=scale, stride=scale)
    return out if image.dim() == 4 else out[0]


def _draw(lo: float, hi: float, generator: torch.Generator) -> float:
    u = torch.rand((), generator=generator, dtype=torch.float64).item()
    return lo + (hi - lo) * u


def degrade(
    hr: torch.Tensor, config: DegradationConfig, seed: int = 0, index: int = 0,
    generator: tp.Optional[torch.Generator] = None,
) -> torch.Tensor:
    """HR `[C, H, W]` in `[0, 1]` to LR `[C, H/s, W/s]` in `[0, 1]`.

    Deterministic in `(hr, config, seed, index)` unless an explicit generator is given.
    """
    config.validate()
    H, W = hr.shape[-2:]
    if H % config.scale or W % config.scale:
        raise ValueError(f"HR dims {H}x{W} are not divisible by scale {config.scale}")
    if generator is None:
        generator = make_generator(seed, RngStreams.DEGRADE, index)
    # Draw order: blur sigma, noise sigma, then the noise field.
    blur_sigma = _draw(*config.blur_sigma, generator)
    noise_sigma = _draw(*config.noise_sigma, generator)

    x = hr.to(torch.float32)
    x = blur(x, blur_sigma)
    x = area_downsample(x, config.scale)
    if noise_sigma > 0:
        x = x + noise_sigma * torch.randn(x.shape, generator=generator, dtype=x.dtype)
    if config.quant_levels:
        q = config.quant_levels - 1
        x = torch.round(x.clamp(0, 1) * q) / q
    return x.clamp(0.0, 1.0)


def _resize(lr: torch.Tensor, size: tp.Union[int, tp.Tuple[int, int]], mode: str) -> torch.Tensor:
    if isinstance(size, int):
        size = (size, size)
    batched = lr if lr.dim() == 4 else lr[None]
    if tuple(batched.shape[-2:]) == tuple(size):
        out = batched
    else:
        out = F.interpolate(batched, size=size, mode=mode, align_corners=False)
    out = out.clamp(0.0, 1.0)
    return out if lr.dim() == 4 else out[0]


def upsample_bilinear(lr: torch.Tensor, size: tp.Union[int, tp.Tuple[int, int]]) -> torch.Tensor:
    """Resample LR back to the HR grid; the conditioning path tokenizes this."""
    return _resize(lr, size, "bilinear")


def upsample_bicubic(lr: torch.Tensor, size: tp.Union[int, tp.Tuple[int, int]]) -> torch.Tensor:
    return _resize(lr, size, "bicubic")
