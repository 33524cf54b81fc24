# SPDX-License-Identifier: MIT
"""
Dense attention primitives shared by the MMDiT, SSCM and ControlNet blocks.

Attention is written out explicitly (no fused kernel) so the softmax is inspectable
and every step runs in 64-bit when the gradient check asks for it.
"""

import math
import typing as tp

from einops import rearrange
import torch
from torch import nn


def check_finite(name: str, x: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"{name} contains non-finite values, shape {tuple(x.shape)}")
    return x


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Softmax(q kᵀ / √d) over the key axis, shape `[B, H, Nq, Nk]`."""
    d = q.shape[-1]
    logits = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(d)
    return torch.softmax(logits, dim=-1)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """
    Args:
        q (torch.Tensor): queries, shape `[B, H, Nq, d]`.
        k (torch.Tensor): keys, shape `[B, H, Nk, d]`.
        v (torch.Tensor): values, shape `[B, H, Nk, d]`.
    Returns:
        torch.Tensor: `softmax(q·kᵀ/√d)·v`, shape `[B, H, Nq, d]`.
    """
    if q.dim() != 4 or k.dim() != 4 or v.dim() != 4:
        raise ValueError(f"expected 4-D q/k/v, got {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    B, H, _, d = q.shape
    if d == 0:
        raise ValueError("head dimension must be positive")
    if k.shape[:2] != (B, H) or v.shape[:2] != (B, H) or k.shape[-1] != d or v.shape[-1] != d:
        raise ValueError(f"shape mismatch: q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    if k.shape[2] != v.shape[2]:
        raise ValueError(f"key/value length mismatch: {k.shape[2]} != {v.shape[2]}")
    if k.shape[2] < 1:
        raise ValueError("attention needs at least one key")
    for name, x in (("q", q), ("k", k), ("v", v)):
        check_finite(name, x)
    return torch.matmul(attention_weights(q, k), v)


def split_heads(x: torch.Tensor, num_heads: int) -> torch.Tensor:
    return rearrange(x, "b t (h d) -> b h t d", h=num_heads)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    return rearrange(x, "b h t d -> b t (h d)")


def joint_attention(
    qkvs: tp.Sequence[torch.Tensor], num_heads: int
) -> list[torch.Tensor]:
    """Attention over several streams concatenated along the token dimension.

    Args:
        qkvs (sequence of torch.Tensor): per-stream fused projections, each `[B, N_i, 3 * D]`.
            A stream may be empty (`N_i = 0`), it then contributes no key and receives an
            empty output.
        num_heads (int): number of heads.
    Returns:
        list of torch.Tensor: per-stream attention outputs `[B, N_i, D]`, heads merged,
            before any output projection.
    """
    lengths = [x.shape[1] for x in qkvs]
    projected = torch.cat(list(qkvs), dim=1)
    q, k, v = rearrange(projected, "b t (p h d) -> p b h t d", p=3, h=num_heads)
    x = scaled_dot_attention(q, k, v)
    x = merge_heads(x)
    return list(torch.split(x, lengths, dim=1))


class QKV(nn.Linear):
    """Fused query/key/value projection `D -> 3 D` for one stream."""

    def __init__(self, dim: int, **factory_kwargs):
        super().__init__(dim, 3 * dim, bias=True, **factory_kwargs)
