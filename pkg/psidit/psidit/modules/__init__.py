# SPDX-License-Identifier: MIT
"""Modules used for building the models."""

# flake8: noqa
from .attention import scaled_dot_attention, joint_attention
from .norm import modulated_layer_norm
from .gradcheck import GradReport, grad_check
from .tokens import (
    BOS_ID,
    PAD_ID,
    PatchGeometry,
    TokenStreams,
    TimestepEmbedder,
    embed_caption,
    patchify,
    timestep_embed,
    timestep_features,
    unpatchify,
)
from .transformer import FinalLayer, MMDiTBlock, SSCMBlock, StreamBranch
