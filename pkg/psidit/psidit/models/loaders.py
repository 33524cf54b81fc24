# SPDX-License-Identifier: MIT
"""Default hyper-parameters and helpers building or restoring the networks."""

from pathlib import Path
import logging
import typing as tp

import torch
from torch import nn

from ..utils.rng import RngStreams, make_generator
from .checkpoint import ParameterMismatchError, load_checkpoint, save_checkpoint
from .controlnet import ControlNetDiT, init_controlnet_from_base
from .mmdit import MMDiT, PsiDitConfig, init_base
from .params import ParamStore
from .psi_dit import PsiDiT, init_sscm_from_base

logger = logging.getLogger(__name__)

ARCHITECTURES = ("psi_dit", "controlnet")
BASE_NAME = "base.ckpt"
SR_NAME = "sr.ckpt"

_psi_dit_kwargs = {
    "depth": 4,
    "width": 64,
    "num_heads": 4,
    "patch": 4,
    "image_size": 32,
    "vocab_size": 32,
    "text_len": 8,
    "channels": 3,
    "mlp_ratio": 4.0,
    "init_std": 0.02,
    "enable_zero_init": True,
    "sscm_init_policy": "nlb_copy",
}
_schedule_kwargs = {
    "strategy": "pms",
    "r_min": 0.75,
    "t_total": 2000,
    # half of t_total
    "k": 1000,
    "c": 10,
    "sigma_enabled": True,
    "fixed_ratio": 0.75,
    "lo": 0.75,
    "hi": 1.0,
}
_degradation_kwargs = {
    "blur_sigma": (0.4, 1.2),
    "scale": 4,
    "noise_sigma": (0.0, 0.02),
    "quant_levels": 64,
    "resample": "area",
}
_budget_kwargs = {
    "pretrain_steps": 3000,
    "sft_steps": 1000,
    "batch_size": 16,
    "pretrain_lr": 1e-3,
    "sr_lr": 3e-4,
    "betas": (0.9, 0.999),
    "sample_steps": 20,
    "caption_drop": 0.0,
    "log_every": 50,
}


SRModel = tp.Union[PsiDiT, ControlNetDiT]


def default_config(**overrides) -> PsiDitConfig:
    return PsiDitConfig(**{**_psi_dit_kwargs, **overrides})


def get_base(
    filename: tp.Optional[tp.Union[str, Path]] = None,
    config: tp.Optional[PsiDitConfig] = None,
    seed: int = 0,
    device: tp.Union[torch.device, str] = "cpu",
) -> MMDiT:
    """Fresh seeded base when `filename` is None, otherwise the base stored in `filename`."""
    config = config or default_config()
    model = init_base(config, make_generator(seed, RngStreams.INIT, "base"))
    if filename is not None:
        restore(model, filename)
    return model.to(device)


def get_sr_model(
    base: MMDiT,
    architecture: str = "psi_dit",
    config: tp.Optional[PsiDitConfig] = None,
    seed: int = 0,
) -> SRModel:
    """Attach the control branch to `base` and freeze the base."""
    config = config or base.config
    generator = make_generator(seed, RngStreams.INIT, architecture)
    if architecture == "psi_dit":
        return init_sscm_from_base(base, config, generator)
    if architecture == "controlnet":
        return init_controlnet_from_base(base, config, generator)
    raise ValueError(f"unknown architecture {architecture!r}, expected one of {ARCHITECTURES}")


def restore(model: nn.Module, filename: tp.Union[str, Path], strict: bool = True) -> nn.Module:
    store = load_checkpoint(filename)
    try:
        ParamStore.of(model).copy_from(store, strict=strict)
    except (KeyError, ValueError) as exc:
        raise ParameterMismatchError(f"{filename} does not fit {type(model).__name__}: {exc.args[0]}") from exc
    logger.info("restored %d tensors from %s", len(store), filename)
    return model


def load_sr_model(
    filename: tp.Union[str, Path],
    architecture: str = "psi_dit",
    config: tp.Optional[PsiDitConfig] = None,
) -> SRModel:
    """Rebuild the architecture around a fresh base and restore every tensor, flags included."""
    config = config or default_config()
    model = get_sr_model(MMDiT(config), architecture, config)
    return restore(model, filename)


def save(model: nn.Module, filename: tp.Union[str, Path]) -> Path:
    path = save_checkpoint(ParamStore.of(model), filename)
    logger.info("saved %s", path)
    return path
