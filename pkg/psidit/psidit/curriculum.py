# SPDX-License-Identifier: MIT
"""
Progressive masked-conditioning curriculum.

During the masked SR phase a fraction `r` of the LR tokens is dropped before the SSCM
attention. With the progressive strategy (`pms`) training starts near `r = 1` (the
network behaves like the text-to-image base) and walks down in `c` stages to `r_min`,
which is reached at step `k` and held until the end of the phase:

    r(p) = r_min                                           if p >= k
    r(p) = clamp(1 - (1 - r_min) * (i + σ) / c, r_min, 1)  otherwise, i = floor(p * c / k)

with σ ~ N(0, 1) drawn once per step when `sigma_enabled`, else 0.
"""

from dataclasses import asdict, dataclass
import csv
import io
import math
from pathlib import Path
import typing as tp

import torch
from torch.distributions import Normal

from .utils.rng import RngStreams, make_generator

STRATEGIES = ("none", "fixed", "uniform", "pms")


@dataclass
class MaskScheduleParams:
    strategy: str = "pms"
    r_min: float = 0.75
    t_total: int = 2000
    k: int = 1000
    c: int = 10
    sigma_enabled: bool = True
    fixed_ratio: float = 0.75
    lo: float = 0.75
    hi: float = 1.0

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown mask strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not 0.0 <= self.r_min <= 1.0:
            raise ValueError(f"r_min must lie in [0, 1], got {self.r_min}")
        if not 0 < self.k <= self.t_total:
            raise ValueError(f"need 0 < k <= t_total, got k={self.k}, t_total={self.t_total}")
        if self.c < 1:
            raise ValueError(f"progressive clip c must be >= 1, got {self.c}")
        if not 0.0 <= self.fixed_ratio <= 1.0:
            raise ValueError(f"fixed ratio must lie in [0, 1], got {self.fixed_ratio}")
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"need 0 <= lo <= hi <= 1, got lo={self.lo}, hi={self.hi}")

    @property
    def floor(self) -> float:
        """Lower clamp of the strategy's output."""
        if self.strategy == "pms":
            return self.r_min
        if self.strategy == "fixed":
            return self.fixed_ratio
        if self.strategy == "uniform":
            return self.lo
        return 0.0

    def to_dict(self) -> dict[str, tp.Any]:
        return asdict(self)


def stage_index(p: int, params: MaskScheduleParams) -> int:
    return (p * params.c) // params.k


def pms_ratio(p: int, params: MaskScheduleParams, sigma: float = 0.0) -> float:
    if p >= params.k:
        return params.r_min
    i = stage_index(p, params)
    raw = 1.0 - (1.0 - params.r_min) * (i + sigma) / params.c
    return min(max(raw, params.r_min), 1.0)


def mask_ratio(p: int, params: MaskScheduleParams, generator: tp.Optional[torch.Generator] = None) -> float:
    """Mask ratio at MIM step `p`. Output always lies in `[floor, 1]`."""
    if p < 0:
        raise ValueError(f"step must be >= 0, got {p}")
    params.validate()
    if params.strategy == "none":
        return 0.0
    if params.strategy == "fixed":
        return params.fixed_ratio
    if params.strategy == "uniform":
        u = torch.rand((), generator=generator, dtype=torch.float64).item()
        return params.lo + (params.hi - params.lo) * u
    if p >= params.k:
        return params.r_min
    sigma = 0.0
    if params.sigma_enabled:
        sigma = torch.randn((), generator=generator, dtype=torch.float64).item()
    return pms_ratio(p, params, sigma)


_STANDARD_NORMAL = Normal(torch.tensor(0.0, dtype=torch.float64), torch.tensor(1.0, dtype=torch.float64))


def expected_mask_ratio(p: int, params: MaskScheduleParams) -> float:
    """E[r(p)] under σ ~ N(0, 1) including the clamp, in closed form.

    With σ enabled the raw ratio is Gaussian with mean `a` and std `b`; the clamped mean is
    `L Φ(α) + U (1 - Φ(β)) + a (Φ(β) - Φ(α)) + b (φ(α) - φ(β))`, `α = (L-a)/b`, `β = (U-a)/b`.
    """
    if params.strategy == "none":
        return 0.0
    if params.strategy == "fixed":
        return params.fixed_ratio
    if params.strategy == "uniform":
        return 0.5 * (params.lo + params.hi)
    if not params.sigma_enabled or p >= params.k:
        return pms_ratio(p, params)
    lo, hi = params.r_min, 1.0
    a = 1.0 - (1.0 - params.r_min) * stage_index(p, params) / params.c
    b = (1.0 - params.r_min) / params.c
    if b == 0.0:
        return min(max(a, lo), hi)
    bounds = torch.tensor([(lo - a) / b, (hi - a) / b], dtype=torch.float64)
    cdf_a, cdf_b = _STANDARD_NORMAL.cdf(bounds).tolist()
    pdf_a, pdf_b = _STANDARD_NORMAL.log_prob(bounds).exp().tolist()
    return lo * cdf_a + hi * (1.0 - cdf_b) + a * (cdf_b - cdf_a) + b * (pdf_a - pdf_b)


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def sample_mask(num_tokens: int, r: float, generator: tp.Optional[torch.Generator] = None) -> torch.Tensor:
    """Mask exactly `round(r * Nl)` tokens uniformly without replacement; return the kept
    indices sorted ascending."""
    if num_tokens < 1:
        raise ValueError(f"need at least one token, got {num_tokens}")
    num_masked = round_half_away(r * num_tokens)
    num_masked = min(max(num_masked, 0), num_tokens)
    order = torch.randperm(num_tokens, generator=generator)
    return order[num_masked:].sort().values


@dataclass
class MaskPlan:
    step: int
    ratio: float
    kept: torch.Tensor


def plan_masks(
    step: int, num_tokens: int, sample_indices: tp.Sequence[int], params: MaskScheduleParams, seed: int
) -> MaskPlan:
    """Ratio from the "mask-ratio" stream keyed by step, kept indices from the
    "mask-indices" stream keyed by (step, sample index)."""
    r = mask_ratio(step, params, make_generator(seed, RngStreams.MASK_RATIO, step))
    kept = [
        sample_mask(num_tokens, r, make_generator(seed, RngStreams.MASK_INDICES, step, int(idx)))
        for idx in sample_indices
    ]
    return MaskPlan(step=step, ratio=r, kept=torch.stack(kept) if kept else torch.zeros(0, 0, dtype=torch.long))


@dataclass
class TraceRow:
    p: int
    r_sigma0: float
    r_mc_mean: float


def schedule_trace(
    params: MaskScheduleParams,
    t_total: tp.Optional[int] = None,
    n_mc: int = 1000,
    stride: int = 1,
    seed: int = 0,
) -> list[TraceRow]:
    """Per-step table of the σ=0 ratio and a Monte-Carlo mean over `n_mc` σ draws."""
    params.validate()
    t_total = params.t_total if t_total is None else t_total
    rows = []
    for p in range(0, t_total, stride):
        if params.strategy == "pms":
            r0 = pms_ratio(p, params)
        else:
            r0 = mask_ratio(p, params, make_generator(seed, "trace", p))
        draws = [mask_ratio(p, params, make_generator(seed, "trace", p, j)) for j in range(n_mc)] if n_mc else [r0]
        rows.append(TraceRow(p, r0, math.fsum(draws) / len(draws)))
    return rows


def trace_to_csv(rows: tp.Sequence[TraceRow], path: tp.Optional[tp.Union[str, Path]] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["p", "r_sigma0", "r_mc_mean"])
    for row in rows:
        writer.writerow([row.p, repr(row.r_sigma0), repr(row.r_mc_mean)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
