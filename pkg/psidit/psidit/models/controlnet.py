# SPDX-License-Identifier: MIT
"""
DiT-ControlNet baseline: a trainable replica of every base block reads the sum of the
noise and LR tokens and injects each block's noise output into the frozen base through
a zero-initialized linear map.
"""

import copy
import typing as tp

import torch
from torch import nn

from ..modules.tokens import TokenStreams
from .mmdit import MMDiT, PsiDitConfig, reset_parameters


def scatter_tokens(lr: torch.Tensor, kept: torch.Tensor, num_tokens: int) -> torch.Tensor:
    """Place kept LR tokens back on the full grid, zeros at masked positions."""
    B, _, D = lr.shape
    full = lr.new_zeros(B, num_tokens, D)
    return full.scatter(1, kept.unsqueeze(-1).expand(-1, -1, D), lr)


class ControlNetDiT(nn.Module):
    def __init__(self, base: MMDiT, config: tp.Optional[PsiDitConfig] = None):
        super().__init__()
        config = config or base.config
        self.config = config
        self.base = base
        self.replica = copy.deepcopy(base.blocks)
        w = base.x_embed.weight
        self.inject = nn.ModuleList(
            [nn.Linear(config.width, config.width, bias=True, device=w.device, dtype=w.dtype)
             for _ in range(config.depth)]
        )
        self.provenance: dict[str, str] = {}

    def make_streams(self, *args, **kwargs) -> TokenStreams:
        return self.base.make_streams(*args, **kwargs)

    def forward_streams(self, streams: TokenStreams, tau: torch.Tensor) -> torch.Tensor:
        if len(self.replica) != len(self.base.blocks) or len(self.inject) != len(self.base.blocks):
            raise ValueError(
                f"replica depth {len(self.replica)} / injections {len(self.inject)} "
                f"do not match base depth {len(self.base.blocks)}"
            )
        c = self.base.condition(streams, tau)
        text, noise = streams.text, streams.noise
        lr_full = scatter_tokens(streams.lr, streams.lr_kept_indices, noise.shape[1])
        text_c, noise_c = text, noise + lr_full
        for block, replica, inject in zip(self.base.blocks, self.replica, self.inject):
            text_c, noise_c = replica(text_c, noise_c, c)
            text, noise = block(text, noise, c)
            noise = noise + inject(noise_c)
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
        return ("replica", "inject")


def init_controlnet_from_base(
    base: MMDiT,
    config: tp.Optional[PsiDitConfig] = None,
    generator: tp.Optional[torch.Generator] = None,
) -> ControlNetDiT:
    """Replica blocks start as bit-copies of the base blocks; injections are zero when
    `enable_zero_init` is set, seeded random otherwise."""
    config = config or base.config
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    model = ControlNetDiT(base, config)
    labels = {f"replica.{name}": f"copy:blocks.{name}" for name, _ in model.replica.named_parameters()}
    if config.enable_zero_init:
        with torch.no_grad():
            for i, inject in enumerate(model.inject):
                inject.weight.zero_()
                inject.bias.zero_()
                labels[f"inject.{i}.weight"] = "zero"
                labels[f"inject.{i}.bias"] = "zero"
    else:
        labels.update({f"inject.{k}": v for k, v in reset_parameters(model.inject, generator, config.init_std).items()})
    model.provenance = labels
    base.requires_grad_(False)
    model.replica.requires_grad_(True)
    model.inject.requires_grad_(True)
    return model
