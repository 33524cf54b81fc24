# SPDX-License-Identifier: MIT
"""
Triple-flow Ψ-DiT: a frozen MMDiT base plus one SSCM per base block.

Each SSCM runs before its base block. Its noise-side output is added to the block's
noise input through the merge projection; its LR-side output becomes the next SSCM's
LR input. With zero-initialized merge projections the network reproduces the base
exactly, whatever the LR image.
"""

import typing as tp

import torch
from torch import nn

from ..modules.tokens import TokenStreams
from ..modules.transformer import SSCMBlock
from .mmdit import MMDiT, PsiDitConfig, SSCM_INIT_POLICIES, reset_parameters


class PsiDiT(nn.Module):
    """
    Args:
        base (MMDiT): base network, shared (not copied).
        config (PsiDitConfig, optional): defaults to the base's config.
    """

    def __init__(self, base: MMDiT, config: tp.Optional[PsiDitConfig] = None):
        super().__init__()
        config = config or base.config
        self.config = config
        self.base = base
        w = base.x_embed.weight
        self.sscm = nn.ModuleList(
            [
                SSCMBlock(config.width, config.num_heads, config.mlp_ratio, device=w.device, dtype=w.dtype)
                for _ in range(config.depth)
            ]
        )
        self.provenance: dict[str, str] = {}

    def make_streams(self, *args, **kwargs) -> TokenStreams:
        return self.base.make_streams(*args, **kwargs)

    def forward_streams(self, streams: TokenStreams, tau: torch.Tensor) -> torch.Tensor:
        if len(self.sscm) != len(self.base.blocks):
            raise ValueError(
                f"missing SSCM parameters: {len(self.sscm)} SSCM blocks for {len(self.base.blocks)} base blocks"
            )
        c = self.base.condition(streams, tau)
        text, noise, lr = streams.text, streams.noise, streams.lr
        for block, sscm in zip(self.base.blocks, self.sscm):
            noise_delta, lr = sscm(noise, lr, c, block.noise.modulation.block(c))
            noise = noise + noise_delta
            text, noise = block(text, noise, c)
        return self.base.head(noise, c)

    def forward(
        self,
        caption_ids: torch.Tensor,
        x_patches: torch.Tensor,
        tau: torch.Tensor,
        lr_patches: tp.Optional[torch.Tensor] = None,
        kept: tp.Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        return self.forward_streams(self.make_streams(caption_ids, x_patches, lr_patches, kept), tau)

    @property
    def branch_names(self) -> tuple[str, ...]:
        """Submodules trained in the SR phases."""
        return ("sscm",)


def init_sscm_from_base(
    base: MMDiT,
    config: tp.Optional[PsiDitConfig] = None,
    generator: tp.Optional[torch.Generator] = None,
) -> PsiDiT:
    """Attach SSCM blocks to `base` following the init policy, freeze the base.

    - `nlb_copy`: the LR stream is a bit-copy of the base block's noise stream.
    - `teb_copy`: the LR stream is a bit-copy of the base block's text stream.
    - `random`: fresh seeded weights.
    Under both copy policies the noise-side QKV read is copied from the same source stream
    as the LR stream. The merge projection is all zeros when `enable_zero_init` is set.
    """
    config = config or base.config
    policy = config.sscm_init_policy
    if policy not in SSCM_INIT_POLICIES:
        raise ValueError(f"unknown sscm_init_policy {policy!r}")
    if generator is None:
        generator = torch.Generator().manual_seed(0)

    model = PsiDiT(base, config)
    labels = {f"sscm.{k}": v for k, v in reset_parameters(model.sscm, generator, config.init_std).items()}
    with torch.no_grad():
        for i, (block, sscm) in enumerate(zip(base.blocks, model.sscm)):
            if policy != "random":
                source = "noise" if policy == "nlb_copy" else "text"
                sscm.lr.load_state_dict(getattr(block, source).state_dict())
                sscm.noise_qkv.load_state_dict(getattr(block, source).qkv.state_dict())
                for name, _ in sscm.lr.named_parameters():
                    labels[f"sscm.{i}.lr.{name}"] = f"copy:blocks.{i}.{source}.{name}"
                for name, _ in sscm.noise_qkv.named_parameters():
                    labels[f"sscm.{i}.noise_qkv.{name}"] = f"copy:blocks.{i}.{source}.qkv.{name}"
            if config.enable_zero_init:
                sscm.merge.weight.zero_()
                sscm.merge.bias.zero_()
                labels[f"sscm.{i}.merge.weight"] = "zero"
                labels[f"sscm.{i}.merge.bias"] = "zero"
    model.provenance = labels
    base.requires_grad_(False)
    model.sscm.requires_grad_(True)
    return model
