# SPDX-License-Identifier: MIT
"""Timestep/caption conditioned layer normalization."""

import typing as tp

import torch
from torch import nn
from torch.nn import functional as F

NORM_EPS = 1e-6


def modulated_layer_norm(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Per-token zero-mean/unit-variance normalization over `D`, then `(1 + scale) * x̂ + shift`.

    Args:
        x (torch.Tensor): tokens, shape `[B, N, D]`.
        scale (torch.Tensor): shape `[B, D]`.
        shift (torch.Tensor): shape `[B, D]`.
    """
    if x.dim() != 3:
        raise ValueError(f"expected [B, N, D] tokens, got {tuple(x.shape)}")
    D = x.shape[-1]
    if scale.shape[-1] != D or shift.shape[-1] != D:
        raise ValueError(f"width mismatch: x {tuple(x.shape)}, scale {tuple(scale.shape)}, shift {tuple(shift.shape)}")
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    x_hat = (x - mean) / torch.sqrt(var + NORM_EPS)
    return x_hat * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class Modulation(tp.NamedTuple):
    shift_msa: torch.Tensor
    scale_msa: torch.Tensor
    gate_msa: torch.Tensor
    shift_mlp: torch.Tensor
    scale_mlp: torch.Tensor
    gate_mlp: torch.Tensor


class AdaLNModulation(nn.Module):
    """Maps the conditioning vector `c` to the six shift/scale/gate vectors of a block stream.

    Args:
        dim (int): stream width.
        chunks (int): number of `dim`-sized vectors produced.
    """

    def __init__(self, dim: int, chunks: int = 6, **factory_kwargs):
        super().__init__()
        self.chunks = chunks
        self.linear = nn.Linear(dim, chunks * dim, bias=True, **factory_kwargs)

    def forward(self, c: torch.Tensor) -> tp.Tuple[torch.Tensor, ...]:
        return tuple(self.linear(F.silu(c)).chunk(self.chunks, dim=-1))

    def block(self, c: torch.Tensor) -> Modulation:
        assert self.chunks == 6, "block modulation needs six chunks"
        return Modulation(*self(c))
