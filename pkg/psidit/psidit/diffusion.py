# SPDX-License-Identifier: MIT
"""
Rectified-flow training and sampling.

Clean tokens `x0` are the patchified HR image rescaled to `[-1, 1]`. Flow time `tau`
runs from 0 (data) to 1 (noise) along the straight line `x_tau = (1 - tau) x0 + tau eps`,
and the network regresses the constant velocity `eps - x0`.

Training runs in three phases:

- `PretrainT2I`: the MMDiT base learns caption-conditioned generation, LR ignored.
- `MimSR`: the base is frozen, the control branch learns with progressively fewer
  LR tokens masked out.
- `SftSR`: same trainable set, LR tokens never masked.

Every random draw of step `p` comes from a generator keyed by `p` (and sample index),
so the trajectory only depends on the seed and the configuration.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
import logging
from pathlib import Path
import typing as tp

import torch
from torch import nn
from tqdm.auto import tqdm

from .curriculum import MaskScheduleParams, plan_masks
from .degradation import upsample_bilinear
from .models.checkpoint import save_checkpoint
from .models.loaders import BASE_NAME, SR_NAME, get_base, get_sr_model
from .models.mmdit import MMDiT, PsiDitConfig
from .models.params import ParamStore
from .modules.tokens import BOS_ID, PAD_ID, PatchGeometry, patchify, unpatchify
from .utils.logging import MetricsWriter
from .utils.rng import RngStreams, make_generator

logger = logging.getLogger(__name__)


class MissingCheckpointError(FileNotFoundError):
    pass


class Phase(str, Enum):
    PretrainT2I = "pretrain_t2i"
    MimSR = "mim_sr"
    SftSR = "sft_sr"

    @property
    def is_sr(self) -> bool:
        return self is not Phase.PretrainT2I


@dataclass
class TrainBudget:
    pretrain_steps: int = 3000
    sft_steps: int = 1000
    batch_size: int = 16
    pretrain_lr: float = 1e-3
    sr_lr: float = 3e-4
    betas: tp.Tuple[float, float] = (0.9, 0.999)
    sample_steps: int = 20
    caption_drop: float = 0.0
    log_every: int = 50

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)

    def validate(self) -> None:
        if self.pretrain_steps < 0 or self.sft_steps < 0:
            raise ValueError("phase budgets must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pretrain_lr <= 0 or self.sr_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        if self.sample_steps < 1:
            raise ValueError(f"sample_steps must be >= 1, got {self.sample_steps}")
        if not 0.0 <= self.caption_drop <= 1.0:
            raise ValueError(f"caption_drop must lie in [0, 1], got {self.caption_drop}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")

    def to_dict(self) -> dict[str, tp.Any]:
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out


@dataclass
class Batch:
    hr: torch.Tensor
    lr: torch.Tensor
    captions: torch.Tensor
    indices: torch.Tensor

    def __post_init__(self):
        B = self.hr.shape[0]
        if self.lr.shape[0] != B or self.captions.shape[0] != B or self.indices.shape[0] != B:
            raise ValueError(
                f"batch fields disagree on size: hr {tuple(self.hr.shape)}, lr {tuple(self.lr.shape)}, "
                f"captions {tuple(self.captions.shape)}, indices {tuple(self.indices.shape)}"
            )

    def __len__(self) -> int:
        return self.hr.shape[0]


class BatchSource(tp.Protocol):
    def batch(self, step: int, batch_size: int, seed: int) -> Batch:
        ...


@dataclass
class TrainState:
    model: nn.Module
    phase: Phase
    seed: int
    optimizer: tp.Optional[torch.optim.Optimizer] = None
    step: int = 0
    phase_step: int = 0
    frozen_digest: str = ""
    base_checkpoint: tp.Optional[Path] = None
    losses: list[float] = field(default_factory=list)
    mask_ratios: list[tp.Optional[float]] = field(default_factory=list)
    boundaries: list[dict[str, tp.Any]] = field(default_factory=list)

    @property
    def streams(self) -> RngStreams:
        return RngStreams(self.seed)

    @property
    def params(self) -> ParamStore:
        return ParamStore.of(self.model)

    def moments(self) -> dict[str, tp.Tuple[torch.Tensor, torch.Tensor]]:
        """Adam first/second moments keyed by parameter name."""
        if self.optimizer is None:
            return {}
        out = {}
        for name, param in self.model.named_parameters():
            st = self.optimizer.state.get(param)
            if st:
                out[name] = (st["exp_avg"], st["exp_avg_sq"])
        return out


def rf_interpolate(x0: torch.Tensor, eps: torch.Tensor, tau: tp.Union[float, torch.Tensor]) -> torch.Tensor:
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ in shape")
    tau = torch.as_tensor(tau, dtype=x0.dtype, device=x0.device)
    if bool(((tau < 0) | (tau > 1)).any()):
        raise ValueError(f"tau must lie in [0, 1], got range [{tau.min().item()}, {tau.max().item()}]")
    if tau.dim() == 1:
        tau = tau.view(-1, *([1] * (x0.dim() - 1)))
    return (1 - tau) * x0 + tau * eps


def rf_loss(pred_v: torch.Tensor, x0: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Mean squared error against the velocity target `eps - x0`."""
    if not pred_v.shape == x0.shape == eps.shape:
        raise ValueError(f"shapes differ: pred {tuple(pred_v.shape)}, x0 {tuple(x0.shape)}, eps {tuple(eps.shape)}")
    return ((pred_v - (eps - x0)) ** 2).mean()


def to_tokens(image: torch.Tensor, patch: int) -> torch.Tensor:
    """`[0, 1]` images to `[-1, 1]` patch tokens."""
    return patchify(image * 2 - 1, patch)


def from_tokens(tokens: torch.Tensor, geometry: PatchGeometry) -> torch.Tensor:
    return ((unpatchify(tokens, geometry) + 1) / 2).clamp(0.0, 1.0)


def null_captions(batch_size: int, text_len: int) -> torch.Tensor:
    ids = torch.full((batch_size, text_len), PAD_ID, dtype=torch.long)
    ids[:, 0] = BOS_ID
    return ids


def _config_of(model: nn.Module) -> PsiDitConfig:
    return model.config


def _predict(
    model: nn.Module,
    captions: torch.Tensor,
    x: torch.Tensor,
    tau: torch.Tensor,
    lr_patches: tp.Optional[torch.Tensor],
    kept: tp.Optional[torch.Tensor],
) -> torch.Tensor:
    if isinstance(model, MMDiT):
        return model(captions, x, tau)
    return model(captions, x, tau, lr_patches, kept)


def apply_freeze(model: nn.Module, phase: Phase) -> None:
    """PretrainT2I trains everything; SR phases train only the control branch."""
    if phase is Phase.PretrainT2I:
        if not isinstance(model, MMDiT):
            raise ValueError(f"{phase.value} trains the bare base, got {type(model).__name__}")
        model.requires_grad_(True)
        return
    names = getattr(model, "branch_names", None)
    if not names:
        raise ValueError(f"{phase.value} needs a model with a control branch, got {type(model).__name__}")
    model.requires_grad_(False)
    for name in names:
        getattr(model, name).requires_grad_(True)


def enter_phase(
    state: TrainState, phase: Phase, lr: float, betas: tp.Tuple[float, float] = (0.9, 0.999),
    writer: tp.Optional[MetricsWriter] = None,
) -> TrainState:
    if phase.is_sr:
        ckpt = state.base_checkpoint
        if ckpt is None or not Path(ckpt).exists():
            raise MissingCheckpointError(f"{phase.value} needs a checkpointed base, got {ckpt}")
    apply_freeze(state.model, phase)
    trainable = [p for p in state.model.parameters() if p.requires_grad]
    # Fresh moments at every phase boundary.
    state.optimizer = torch.optim.Adam(trainable, lr=lr, betas=betas, eps=1e-8, weight_decay=0.0)
    state.phase = phase
    state.phase_step = 0
    state.frozen_digest = state.params.digest(frozen_only=True)
    state.boundaries.append({"event": "phase_start", "phase": phase.value, "step": state.step})
    if writer is not None:
        writer.write(event="phase_start", phase=phase.value, step=state.step)
    logger.info("entering %s at step %d, %d trainable tensors", phase.value, state.step, len(trainable))
    return state


def train_step(
    state: TrainState,
    batch: Batch,
    schedule: tp.Optional[MaskScheduleParams] = None,
    caption_drop: float = 0.0,
) -> float:
    """One optimizer update. Advances `state.step` and `state.phase_step`, returns the loss."""
    if state.optimizer is None:
        raise RuntimeError("train_step called before enter_phase")
    model, phase, p = state.model, state.phase, state.step
    config = _config_of(model)
    streams = state.streams
    B = len(batch)

    x0 = to_tokens(batch.hr.to(torch.float32), config.patch)
    tau = torch.rand(B, generator=streams(RngStreams.TAU, p), dtype=x0.dtype)
    eps = torch.randn(x0.shape, generator=streams(RngStreams.NOISE, p), dtype=x0.dtype)
    x_tau = rf_interpolate(x0, eps, tau)

    captions = batch.captions
    if caption_drop > 0:
        drop = torch.rand(B, generator=streams(RngStreams.CAPTION_DROP, p)) < caption_drop
        captions = torch.where(drop[:, None], null_captions(B, captions.shape[1]), captions)

    lr_patches, kept, ratio = None, None, None
    if phase.is_sr:
        lr_up = upsample_bilinear(batch.lr.to(torch.float32), config.image_size)
        lr_patches = to_tokens(lr_up, config.patch)
        if phase is Phase.MimSR:
            if schedule is None:
                raise ValueError("mim_sr steps need mask schedule params")
            plan = plan_masks(state.phase_step, config.num_tokens, batch.indices.tolist(), schedule, state.seed)
            kept, ratio = plan.kept, plan.ratio
        else:
            ratio = 0.0

    pred = _predict(model, captions, x_tau, tau, lr_patches, kept)
    loss = rf_loss(pred, x0, eps)
    if not torch.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss.item()} in {phase.value} at step {p}: "
            f"tau in [{tau.min().item():.4f}, {tau.max().item():.4f}], mask ratio {ratio}"
        )
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()

    value = float(loss.item())
    state.losses.append(value)
    state.mask_ratios.append(ratio)
    state.step += 1
    state.phase_step += 1
    return value


def run_phase(
    state: TrainState,
    phase: Phase,
    steps: int,
    source: BatchSource,
    budget: tp.Optional[TrainBudget] = None,
    schedule: tp.Optional[MaskScheduleParams] = None,
    writer: tp.Optional[MetricsWriter] = None,
    progress: bool = False,
) -> TrainState:
    """Apply the phase's freeze mask, run `steps` updates, log every `budget.log_every` steps.

    SR phases need `state.base_checkpoint` to point at an existing base checkpoint.
    """
    budget = budget or TrainBudget()
    lr = budget.pretrain_lr if phase is Phase.PretrainT2I else budget.sr_lr
    enter_phase(state, phase, lr, budget.betas, writer)
    for _ in tqdm(range(steps), desc=phase.value, disable=not progress):
        batch = source.batch(state.step, budget.batch_size, state.seed)
        loss = train_step(state, batch, schedule, budget.caption_drop)
        if writer is not None and (state.phase_step % budget.log_every == 0 or state.phase_step == steps):
            writer.write(
                step=state.step, phase=phase.value, phase_step=state.phase_step,
                loss=loss, mask_ratio=state.mask_ratios[-1],
            )
    if phase.is_sr and state.params.digest(frozen_only=True) != state.frozen_digest:
        raise RuntimeError(f"frozen parameters changed during {phase.value}")
    state.boundaries.append({"event": "phase_end", "phase": phase.value, "step": state.step})
    if writer is not None:
        writer.write(event="phase_end", phase=phase.value, step=state.step)
    return state


def euler_integrate(
    velocity_fn: tp.Callable[[torch.Tensor, float], torch.Tensor],
    x_start: torch.Tensor,
    n_steps: int,
    tau_start: float = 1.0,
    tau_end: float = 0.0,
) -> torch.Tensor:
    """Integrate `dx/dtau = v(x, tau)` from `tau_start` to `tau_end` with uniform steps."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    taus = torch.linspace(tau_start, tau_end, n_steps + 1, dtype=torch.float64).tolist()
    x = x_start
    for t, t_next in zip(taus[:-1], taus[1:]):
        x = x + (t_next - t) * velocity_fn(x, t)
    return x


@torch.no_grad()
def sample(
    model: nn.Module,
    lr_image: torch.Tensor,
    captions: torch.Tensor,
    n_steps: int = 20,
    seed: int = 0,
    index: tp.Union[int, tp.Sequence[int]] = 0,
) -> torch.Tensor:
    """SR images `[B, C, H, W]` (or `[C, H, W]` for a single LR image) in `[0, 1]`.

    Starts from Gaussian tokens at `tau = 1` and conditions on every LR token. The noise of
    item `i` is keyed by `index + i` (or `index[i]`), independent of how items are batched.
    """
    single = lr_image.dim() == 3
    if single:
        lr_image, captions = lr_image[None], captions[None]
    config = _config_of(model)
    B = lr_image.shape[0]
    lr_up = upsample_bilinear(lr_image.to(torch.float32), config.image_size)
    lr_patches = to_tokens(lr_up, config.patch)
    keys = [index + i for i in range(B)] if isinstance(index, int) else [int(i) for i in index]
    if len(keys) != B:
        raise ValueError(f"got {len(keys)} sample indices for a batch of {B}")
    eps = torch.stack([
        torch.randn(
            config.num_tokens, config.token_dim,
            generator=make_generator(seed, RngStreams.SAMPLE, k), dtype=torch.float32,
        )
        for k in keys
    ])

    def velocity(x: torch.Tensor, t: float) -> torch.Tensor:
        tau = torch.full((B,), t, dtype=x.dtype)
        return _predict(model, captions, x, tau, lr_patches, None)

    x0 = euler_integrate(velocity, eps, n_steps)
    out = from_tokens(x0, config.geometry)
    return out[0] if single else out


def pretrain_base(
    config: PsiDitConfig,
    source: BatchSource,
    budget: TrainBudget,
    out_dir: tp.Union[str, Path],
    seed: int = 0,
    writer: tp.Optional[MetricsWriter] = None,
    progress: bool = False,
) -> TrainState:
    """Train a fresh base and checkpoint it to `out_dir/base.ckpt`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = TrainState(model=get_base(config=config, seed=seed), phase=Phase.PretrainT2I, seed=seed)
    run_phase(state, Phase.PretrainT2I, budget.pretrain_steps, source, budget, writer=writer, progress=progress)
    state.base_checkpoint = save_checkpoint(state.params, out_dir / BASE_NAME)
    return state


def train_sr(
    base_checkpoint: tp.Union[str, Path],
    source: BatchSource,
    budget: TrainBudget,
    schedule: MaskScheduleParams,
    out_dir: tp.Union[str, Path],
    architecture: str = "psi_dit",
    config: tp.Optional[PsiDitConfig] = None,
    seed: int = 0,
    writer: tp.Optional[MetricsWriter] = None,
    progress: bool = False,
    start_step: int = 0,
) -> TrainState:
    """MimSR for `schedule.t_total` steps, then SftSR for `budget.sft_steps`; checkpoint to `out_dir/sr.ckpt`."""
    base_checkpoint = Path(base_checkpoint)
    if not base_checkpoint.exists():
        raise MissingCheckpointError(f"no base checkpoint at {base_checkpoint}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = get_base(base_checkpoint, config=config, seed=seed)
    model = get_sr_model(base, architecture, config, seed=seed)
    state = TrainState(model=model, phase=Phase.MimSR, seed=seed, step=start_step, base_checkpoint=base_checkpoint)
    run_phase(state, Phase.MimSR, schedule.t_total, source, budget, schedule, writer, progress)
    run_phase(state, Phase.SftSR, budget.sft_steps, source, budget, None, writer, progress)
    save_checkpoint(state.params, out_dir / SR_NAME)
    return state
