# SPDX-License-Identifier: MIT
"""
Dual-stream MMDiT base network.

The base plays the role of the pretrained text-to-image model: it is trained from scratch
in the `PretrainT2I` phase, then frozen while the control branch learns to use the LR
image.
"""

from dataclasses import asdict, dataclass
import typing as tp

import torch
from torch import nn

from ..modules.tokens import (
    PatchGeometry,
    TimestepEmbedder,
    TokenStreams,
    all_indices,
    embed_caption,
    gather_tokens,
)
from ..modules.transformer import FinalLayer, MMDiTBlock

SSCM_INIT_POLICIES = ("random", "teb_copy", "nlb_copy")


@dataclass
class PsiDitConfig:
    depth: int = 4
    width: int = 64
    num_heads: int = 4
    patch: int = 4
    image_size: int = 32
    vocab_size: int = 32
    text_len: int = 8
    channels: int = 3
    mlp_ratio: float = 4.0
    init_std: float = 0.02
    enable_zero_init: bool = True
    sscm_init_policy: str = "nlb_copy"

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.width % self.num_heads:
            raise ValueError(f"width {self.width} is not divisible by num_heads {self.num_heads}")
        if self.image_size % self.patch:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch {self.patch}")
        if self.sscm_init_policy not in SSCM_INIT_POLICIES:
            raise ValueError(f"unknown sscm_init_policy {self.sscm_init_policy!r}, expected one of {SSCM_INIT_POLICIES}")
        if self.vocab_size < 2 or self.text_len < 1:
            raise ValueError("vocab_size must be >= 2 and text_len >= 1")

    @property
    def geometry(self) -> PatchGeometry:
        return PatchGeometry(self.image_size, self.image_size, self.patch, self.channels)

    @property
    def num_tokens(self) -> int:
        return self.geometry.num_tokens

    @property
    def token_dim(self) -> int:
        return self.geometry.token_dim

    def to_dict(self) -> dict[str, tp.Any]:
        return asdict(self)


def reset_parameters(module: nn.Module, generator: torch.Generator, std: float) -> dict[str, str]:
    """Seeded init in `named_parameters` order: biases zero, everything else `N(0, std²)`.

    Returns the provenance labels of the touched parameters.
    """
    labels = {}
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias"):
                param.zero_()
                labels[name] = "zero"
            else:
                noise = torch.randn(param.shape, generator=generator, dtype=torch.float32)
                param.copy_(noise * std)
                labels[name] = "init:seeded"
    return labels


class MMDiT(nn.Module):
    """Text + noisy-latent diffusion transformer predicting per-patch velocities.

    Args:
        config (PsiDitConfig): architecture.
    """

    def __init__(self, config: PsiDitConfig, device=None, dtype=None):
        super().__init__()
        config.validate()
        factory_kwargs = {"device": device, "dtype": dtype}
        D = config.width
        self.config = config
        self.x_embed = nn.Linear(config.token_dim, D, bias=True, **factory_kwargs)
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_tokens, D, **factory_kwargs))
        self.caption_table = nn.Parameter(torch.zeros(config.vocab_size, D, **factory_kwargs))
        self.text_pos = nn.Parameter(torch.zeros(1, config.text_len, D, **factory_kwargs))
        self.t_embedder = TimestepEmbedder(D, freq_dim=D, **factory_kwargs)
        self.caption_pool = nn.Linear(D, D, bias=True, **factory_kwargs)
        self.blocks = nn.ModuleList(
            [MMDiTBlock(D, config.num_heads, config.mlp_ratio, **factory_kwargs) for _ in range(config.depth)]
        )
        self.head = FinalLayer(D, config.token_dim, **factory_kwargs)
        self.provenance: dict[str, str] = {}

    def embed_text(self, caption_ids: torch.Tensor) -> torch.Tensor:
        if caption_ids.shape[-1] != self.config.text_len:
            raise ValueError(f"captions must have {self.config.text_len} ids, got {tuple(caption_ids.shape)}")
        return embed_caption(caption_ids, self.caption_table) + self.text_pos

    def embed_patches(self, patches: torch.Tensor) -> torch.Tensor:
        """Pixel patches `[B, Nn, P*P*C]` to positioned tokens `[B, Nn, D]`."""
        return self.x_embed(patches.to(self.x_embed.weight.dtype)) + self.pos_embed

    def make_streams(
        self,
        caption_ids: torch.Tensor,
        x_patches: torch.Tensor,
        lr_patches: tp.Optional[torch.Tensor] = None,
        kept: tp.Optional[torch.Tensor] = None,
    ) -> TokenStreams:
        """Embed the three flows. LR patches share the noise stream's patch embedding and
        positional table; `kept` selects the LR grid positions that survive masking."""
        text = self.embed_text(caption_ids)
        noise = self.embed_patches(x_patches)
        B, N, D = noise.shape
        if lr_patches is None:
            kept = torch.zeros(B, 0, dtype=torch.long, device=noise.device)
            lr = noise.new_zeros(B, 0, D)
        else:
            if kept is None:
                kept = all_indices(B, N, device=noise.device)
            lr = gather_tokens(self.embed_patches(lr_patches), kept)
        return TokenStreams(text=text, noise=noise, lr=lr, lr_kept_indices=kept)

    def condition(self, streams: TokenStreams, tau: torch.Tensor) -> torch.Tensor:
        """Conditioning vector `c = t_embed(tau) + pool(text)`, `[B, D]`."""
        B = streams.batch_size
        tau = torch.as_tensor(tau, dtype=streams.noise.dtype, device=streams.noise.device)
        if tau.dim() == 0:
            tau = tau.expand(B)
        return self.t_embedder(tau) + self.caption_pool(streams.text.mean(dim=1))

    def forward_streams(self, streams: TokenStreams, tau: torch.Tensor) -> torch.Tensor:
        """Base-only forward: the LR stream is ignored."""
        c = self.condition(streams, tau)
        text, noise = streams.text, streams.noise
        for block in self.blocks:
            text, noise = block(text, noise, c)
        return self.head(noise, c)

    def forward(self, caption_ids: torch.Tensor, x_patches: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
        return self.forward_streams(self.make_streams(caption_ids, x_patches), tau)


def init_base(config: PsiDitConfig, generator: torch.Generator) -> MMDiT:
    """Fresh seeded base with every parameter trainable (pretraining phase)."""
    model = MMDiT(config)
    model.provenance = reset_parameters(model, generator, config.init_std)
    model.requires_grad_(True)
    return model
