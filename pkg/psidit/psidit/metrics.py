# SPDX-License-Identifier: MIT
"""
Full-reference metrics (PSNR, SSIM) on center crops, and the evaluation report.

Images are `[C, H, W]` float tensors with values in `[0, 1]`.
"""

from dataclasses import dataclass, field
import csv
import io
import logging
import math
import typing as tp

import torch
from torch import nn
from torch.nn import functional as F
from tqdm.auto import tqdm

from .degradation import upsample_bicubic
from .diffusion import sample

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def center_crop(image: torch.Tensor, size: int) -> torch.Tensor:
    """Square crop; for odd remainders the extra pixel goes to the bottom/right."""
    H, W = image.shape[-2:]
    if size < 1 or size > min(H, W):
        raise ValueError(f"crop size {size} does not fit a {H}x{W} image")
    top, left = (H - size) // 2, (W - size) // 2
    return image[..., top:top + size, left:left + size]


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """`10 log10(1 / MSE)` in dB with MAX = 1, capped at 100 dB."""
    _check_pair(a, b)
    mse = ((a.to(torch.float64) - b.to(torch.float64)) ** 2).mean().item()
    if mse == 0:
        return PSNR_CAP
    return min(10 * math.log10(1.0 / mse), PSNR_CAP)


def _ssim_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)[None, None]


def _gray(image: torch.Tensor) -> torch.Tensor:
    image = image.to(torch.float64)
    return image.mean(dim=-3) if image.dim() >= 3 else image


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean local SSIM of the channel-mean gray images, Gaussian window over valid positions."""
    _check_pair(a, b)
    x, y = _gray(a), _gray(b)
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {tuple(x.shape[-2:])}")
    x, y = x.reshape(-1, 1, *x.shape[-2:]), y.reshape(-1, 1, *y.shape[-2:])
    window = _ssim_window()
    mu_x, mu_y = F.conv2d(x, window), F.conv2d(y, window)
    var_x = F.conv2d(x * x, window) - mu_x ** 2
    var_y = F.conv2d(y * y, window) - mu_y ** 2
    cov = F.conv2d(x * y, window) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return (num / den).mean().item()


@dataclass
class ImageScores:
    index: int
    psnr: float
    ssim: float
    bicubic_psnr: float
    bicubic_ssim: float


@dataclass
class EvalReport:
    rows: list[ImageScores] = field(default_factory=list)
    config_digest: str = ""
    crop_size: int = 0

    COLUMNS: tp.ClassVar[tuple[str, ...]] = ("index", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim")

    def _mean(self, column: str) -> float:
        if not self.rows:
            return float("nan")
        return math.fsum(getattr(r, column) for r in self.rows) / len(self.rows)

    @property
    def mean_psnr(self) -> float:
        return self._mean("psnr")

    @property
    def mean_ssim(self) -> float:
        return self._mean("ssim")

    @property
    def baseline_psnr(self) -> float:
        return self._mean("bicubic_psnr")

    @property
    def baseline_ssim(self) -> float:
        return self._mean("bicubic_ssim")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.rows:
            writer.writerow([r.index] + [f"{getattr(r, c):.6f}" for c in self.COLUMNS[1:]])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [
            f"images        {len(self.rows)}",
            f"crop          {self.crop_size}",
            f"config        {self.config_digest[:16] or '-'}",
            f"PSNR  SR      {self.mean_psnr:8.3f} dB   bicubic {self.baseline_psnr:8.3f} dB",
            f"SSIM  SR      {self.mean_ssim:8.4f}      bicubic {self.baseline_ssim:8.4f}",
            f"gain          {self.mean_psnr - self.baseline_psnr:+8.3f} dB   {self.mean_ssim - self.baseline_ssim:+8.4f}",
        ]
        return "\n".join(lines)


def score_pair(index: int, sr: torch.Tensor, baseline: torch.Tensor, hr: torch.Tensor, crop: int) -> ImageScores:
    sr, baseline, hr = (center_crop(t, crop) for t in (sr, baseline, hr))
    return ImageScores(index, psnr(sr, hr), ssim(sr, hr), psnr(baseline, hr), ssim(baseline, hr))


def eval_report(
    model: tp.Optional[nn.Module],
    corpus,
    n_steps: int = 20,
    seed: int = 0,
    crop_size: tp.Optional[int] = None,
    batch_size: int = 32,
    config_digest: str = "",
    progress: bool = False,
) -> EvalReport:
    """Sample SR for every LR image of `corpus` and score it against its HR reference.

    With `model=None` only the bicubic baseline is computed (SR columns repeat it).
    """
    if corpus is None or len(corpus) == 0 or corpus.hr is None:
        raise ValueError("evaluation needs a corpus with HR references")
    H = corpus.hr.shape[-1]
    crop = crop_size or min(corpus.hr.shape[-2:])
    report = EvalReport(config_digest=config_digest, crop_size=crop)
    for start in tqdm(range(0, len(corpus), batch_size), desc="eval", disable=not progress):
        hr = corpus.hr[start:start + batch_size]
        lr = corpus.lr[start:start + batch_size]
        indices = corpus.indices[start:start + batch_size].tolist()
        baseline = upsample_bicubic(lr, H)
        if model is None:
            sr = baseline
        else:
            sr = sample(model, lr, corpus.captions[start:start + batch_size], n_steps, seed, indices)
        for i, idx in enumerate(indices):
            report.rows.append(score_pair(idx, sr[i], baseline[i], hr[i], crop))
    logger.info(
        "evaluated %d images: PSNR %.3f (bicubic %.3f), SSIM %.4f (bicubic %.4f)",
        len(report.rows), report.mean_psnr, report.baseline_psnr, report.mean_ssim, report.baseline_ssim,
    )
    return report
