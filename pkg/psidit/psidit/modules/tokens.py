# SPDX-License-Identifier: MIT
"""
Token codec: images, captions and flow times to the token sequences of the three flows.

Images are `[C, H, W]` (or batched `[B, C, H, W]`) float tensors with values in `[0, 1]`.
Tokens are formed directly from pixels, one token per non-overlapping `P x P` patch, in
row-major patch order.
"""

from dataclasses import dataclass
import math
import typing as tp

from einops import rearrange
import torch
from torch import nn
from torch.nn import functional as F

PAD_ID = 0
BOS_ID = 1


@dataclass(frozen=True)
class PatchGeometry:
    height: int
    width: int
    patch: int
    channels: int = 3

    @property
    def grid(self) -> tp.Tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def num_tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def token_dim(self) -> int:
        return self.patch * self.patch * self.channels


def patchify(image: torch.Tensor, patch: int) -> torch.Tensor:
    """Split `[..., C, H, W]` into `[..., N, P*P*C]` tokens, `N = (H/P)(W/P)`."""
    H, W = image.shape[-2:]
    if patch <= 0 or H % patch or W % patch:
        raise ValueError(f"image {H}x{W} is not divisible by patch size {patch}")
    return rearrange(image, "... c (h p1) (w p2) -> ... (h w) (p1 p2 c)", p1=patch, p2=patch)


def unpatchify(tokens: torch.Tensor, geometry: PatchGeometry) -> torch.Tensor:
    """Exact inverse of `patchify` for the given geometry."""
    gh, gw = geometry.grid
    if geometry.height % geometry.patch or geometry.width % geometry.patch:
        raise ValueError(f"geometry {geometry} is not divisible by its patch size")
    if tokens.shape[-2] != geometry.num_tokens or tokens.shape[-1] != geometry.token_dim:
        raise ValueError(
            f"tokens {tuple(tokens.shape)} do not match geometry "
            f"({geometry.num_tokens} tokens of width {geometry.token_dim})"
        )
    return rearrange(
        tokens, "... (h w) (p1 p2 c) -> ... c (h p1) (w p2)",
        h=gh, w=gw, p1=geometry.patch, p2=geometry.patch, c=geometry.channels,
    )


def embed_caption(ids: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    """Row lookup of caption ids; `PAD_ID` rows read the dedicated pad embedding."""
    if ids.dtype not in (torch.int32, torch.int64):
        raise ValueError(f"caption ids must be integers, got {ids.dtype}")
    vocab = table.shape[0]
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= vocab):
        raise ValueError(f"caption id out of vocabulary [0, {vocab}): {ids.tolist()}")
    return F.embedding(ids.long(), table)


def timestep_features(tau: torch.Tensor, dim: int, max_period: float = 10_000, scale: float = 1000.0) -> torch.Tensor:
    """Sinusoidal features of flow time at log-spaced frequencies, shape `[*tau.shape, dim]`."""
    assert dim % 2 == 0
    tau = torch.as_tensor(tau)
    if not torch.is_floating_point(tau):
        tau = tau.float()
    if ((tau < 0) | (tau > 1)).any():
        raise ValueError(f"flow time must lie in [0, 1], got {tau.tolist()}")
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=tau.dtype, device=tau.device) / half
    )
    phase = scale * tau.unsqueeze(-1) * freqs
    return torch.cat([torch.cos(phase), torch.sin(phase)], dim=-1)


class TimestepEmbedder(nn.Module):
    """Sinusoidal flow-time features followed by a two-layer projection to width `dim`.

    Args:
        dim (int): output width.
        freq_dim (int): number of sinusoidal features.
    """

    def __init__(self, dim: int, freq_dim: int = 64, **factory_kwargs):
        super().__init__()
        self.freq_dim = freq_dim
        self.linear_in = nn.Linear(freq_dim, dim, bias=True, **factory_kwargs)
        self.linear_out = nn.Linear(dim, dim, bias=True, **factory_kwargs)

    def forward(self, tau: torch.Tensor) -> torch.Tensor:
        x = timestep_features(tau, self.freq_dim).to(self.linear_in.weight.dtype)
        return self.linear_out(F.silu(self.linear_in(x)))


def timestep_embed(tau: tp.Union[float, torch.Tensor], embedder: TimestepEmbedder) -> torch.Tensor:
    """Embed a flow time with the given embedder, output width is the embedder's `dim`."""
    return embedder(torch.as_tensor(tau, dtype=embedder.linear_in.weight.dtype))


@dataclass
class TokenStreams:
    """Embedded tokens of the three flows.

    `lr` holds only the kept LR tokens; `lr_kept_indices[b]` lists, in increasing order,
    the grid positions they came from. The noise and LR streams share one patch grid, so
    LR index `i` and noise index `i` cover the same pixels.
    """
    text: torch.Tensor
    noise: torch.Tensor
    lr: torch.Tensor
    lr_kept_indices: torch.Tensor

    def __post_init__(self):
        B = self.noise.shape[0]
        if self.text.shape[0] != B or self.lr.shape[0] != B or self.lr_kept_indices.shape[0] != B:
            raise ValueError("all streams must share the batch dimension")
        if self.lr.shape[1] != self.lr_kept_indices.shape[1]:
            raise ValueError(
                f"kept LR tokens {self.lr.shape[1]} != kept indices {self.lr_kept_indices.shape[1]}"
            )
        if self.lr_kept_indices.shape[1] > 1:
            if not (self.lr_kept_indices[:, 1:] > self.lr_kept_indices[:, :-1]).all():
                raise ValueError("lr_kept_indices must be strictly increasing")
        widths = {self.text.shape[-1], self.noise.shape[-1], self.lr.shape[-1]}
        if len(widths) != 1:
            raise ValueError(f"stream widths differ: {sorted(widths)}")

    @property
    def batch_size(self) -> int:
        return self.noise.shape[0]


def all_indices(batch_size: int, num_tokens: int, device=None) -> torch.Tensor:
    return torch.arange(num_tokens, device=device).expand(batch_size, num_tokens).clone()


def gather_tokens(tokens: torch.Tensor, kept: torch.Tensor) -> torch.Tensor:
    """Select `tokens[b, kept[b]]` for every batch item, `[B, N, D] -> [B, N', D]`."""
    index = kept.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
    return torch.gather(tokens, 1, index)
