# SPDX-License-Identifier: MIT
"""
Networks: the MMDiT base, the triple-flow Ψ-DiT, the ControlNet baseline, parameter
stores and checkpoints.
"""

# flake8: noqa
from .mmdit import MMDiT, PsiDitConfig, SSCM_INIT_POLICIES, init_base, reset_parameters
from .psi_dit import PsiDiT, init_sscm_from_base
from .controlnet import ControlNetDiT, init_controlnet_from_base, scatter_tokens
from .params import ParamEntry, ParamStore, count_params
from .checkpoint import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    ParameterMismatchError,
    TruncatedCheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .loaders import (
    ARCHITECTURES,
    BASE_NAME,
    SR_NAME,
    default_config,
    get_base,
    get_sr_model,
    load_sr_model,
    restore,
    save,
)
