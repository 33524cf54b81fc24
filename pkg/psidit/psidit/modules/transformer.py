# SPDX-License-Identifier: MIT
"""
Transformer blocks of the triple-flow network.

`MMDiTBlock` is the dual-stream (text + noisy latent) block whose streams are joined
along the token dimension for attention. `SSCMBlock` is the Separable Stream Control
Module: a block of the same shape over (noisy latent, LR) whose noise-side output is
handed back to the base through a merge projection.
"""

import typing as tp

import torch
from torch import nn

from .attention import QKV, attention_weights, joint_attention, split_heads
from .mlp import FeedForward
from .norm import AdaLNModulation, Modulation, modulated_layer_norm


class StreamBranch(nn.Module):
    """Stream-specific weights of one block: modulation, QKV, output projection and MLP.

    Args:
        dim (int): stream width.
        mlp_ratio (float): MLP hidden width as a multiple of `dim`.
    """

    def __init__(self, dim: int, mlp_ratio: float = 4.0, **factory_kwargs):
        super().__init__()
        self.modulation = AdaLNModulation(dim, 6, **factory_kwargs)
        self.qkv = QKV(dim, **factory_kwargs)
        self.proj = nn.Linear(dim, dim, bias=True, **factory_kwargs)
        self.mlp = FeedForward(dim, int(dim * mlp_ratio), **factory_kwargs)

    def pre_attention(self, x: torch.Tensor, mod: Modulation) -> torch.Tensor:
        return self.qkv(modulated_layer_norm(x, mod.scale_msa, mod.shift_msa))

    def post_attention(self, x: torch.Tensor, attn: torch.Tensor, mod: Modulation) -> torch.Tensor:
        x = x + mod.gate_msa.unsqueeze(1) * self.proj(attn)
        h = modulated_layer_norm(x, mod.scale_mlp, mod.shift_mlp)
        return x + mod.gate_mlp.unsqueeze(1) * self.mlp(h)


class MMDiTBlock(nn.Module):
    """Dual-stream block with joint attention over `[text; noise]` tokens.

    Args:
        dim (int): width shared by both streams.
        num_heads (int): attention heads.
        mlp_ratio (float): MLP expansion.
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, **factory_kwargs):
        super().__init__()
        assert dim % num_heads == 0, f"width {dim} not divisible by {num_heads} heads"
        self.num_heads = num_heads
        self.text = StreamBranch(dim, mlp_ratio, **factory_kwargs)
        self.noise = StreamBranch(dim, mlp_ratio, **factory_kwargs)

    def forward(self, text: torch.Tensor, noise: torch.Tensor, c: torch.Tensor):
        if text.shape[-1] != noise.shape[-1]:
            raise ValueError(f"width mismatch: text {tuple(text.shape)}, noise {tuple(noise.shape)}")
        mod_t = self.text.modulation.block(c)
        mod_n = self.noise.modulation.block(c)
        attn_t, attn_n = joint_attention(
            [self.text.pre_attention(text, mod_t), self.noise.pre_attention(noise, mod_n)],
            self.num_heads,
        )
        return (
            self.text.post_attention(text, attn_t, mod_t),
            self.noise.post_attention(noise, attn_n, mod_n),
        )

    def attention_map(self, text: torch.Tensor, noise: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """Softmax weights over the concatenated `Nt + Nn` tokens, `[B, H, Nt+Nn, Nt+Nn]`."""
        qkv = torch.cat([
            self.text.pre_attention(text, self.text.modulation.block(c)),
            self.noise.pre_attention(noise, self.noise.modulation.block(c)),
        ], dim=1)
        q, k, _ = (split_heads(x, self.num_heads) for x in qkv.chunk(3, dim=-1))
        return attention_weights(q, k)


class SSCMBlock(nn.Module):
    """Separable Stream Control Module.

    Joint attention runs over `[noise; lr]`. The noise queries/keys/values come from a
    trainable noise-side QKV read applied to the noise tokens normalized with the base
    block's own noise modulation. The noise part of the attention output goes through
    `merge` and is returned as an additive delta for the base block's noise input; the
    LR part goes through projection and MLP and feeds the next SSCM.

    Args:
        dim (int): token width.
        num_heads (int): attention heads.
        mlp_ratio (float): MLP expansion of the LR stream.
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, **factory_kwargs):
        super().__init__()
        assert dim % num_heads == 0, f"width {dim} not divisible by {num_heads} heads"
        self.num_heads = num_heads
        self.lr = StreamBranch(dim, mlp_ratio, **factory_kwargs)
        self.noise_qkv = QKV(dim, **factory_kwargs)
        self.merge = nn.Linear(dim, dim, bias=True, **factory_kwargs)

    def forward(
        self, noise: torch.Tensor, lr: torch.Tensor, c: torch.Tensor, noise_mod: Modulation
    ) -> tp.Tuple[torch.Tensor, torch.Tensor]:
        if lr.shape[-1] != noise.shape[-1]:
            raise ValueError(f"width mismatch: noise {tuple(noise.shape)}, lr {tuple(lr.shape)}")
        mod_lr = self.lr.modulation.block(c)
        qkv_n = self.noise_qkv(modulated_layer_norm(noise, noise_mod.scale_msa, noise_mod.shift_msa))
        attn_n, attn_lr = joint_attention([qkv_n, self.lr.pre_attention(lr, mod_lr)], self.num_heads)
        return self.merge(attn_n), self.lr.post_attention(lr, attn_lr, mod_lr)


class FinalLayer(nn.Module):
    """Modulated norm and linear head from tokens to per-patch velocities."""

    def __init__(self, dim: int, out_dim: int, **factory_kwargs):
        super().__init__()
        self.modulation = AdaLNModulation(dim, 2, **factory_kwargs)
        self.linear = nn.Linear(dim, out_dim, bias=True, **factory_kwargs)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        shift, scale = self.modulation(c)
        return self.linear(modulated_layer_norm(x, scale, shift))
