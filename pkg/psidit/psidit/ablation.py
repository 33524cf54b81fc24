# SPDX-License-Identifier: MIT
"""
Ablation runner.

Every variant is an `ExperimentConfig` derived from one base configuration. All variants
start from the same base checkpoint, train under the same budgets and seeds, and are
compared on trainable-parameter count, loss curve, steps needed to reach a shared loss
threshold, and held-out PSNR/SSIM.

The loss threshold is the median final loss of the ControlNet variants (or of the last
variant when the grid has none), so the comparison calibrates itself per run.
"""

import copy
import csv
from dataclasses import dataclass, field
import io
import logging
import math
from pathlib import Path
import statistics
import typing as tp

from .config import ConfigError, ExperimentConfig
from .data import SceneCorpus
from .diffusion import train_sr
from .metrics import eval_report
from .models.params import count_params
from .utils.logging import MetricsWriter

logger = logging.getLogger(__name__)

GRIDS = ("architecture", "init", "mask")
THRESHOLD_WINDOW = 50
# Shared across variants; everything else may differ.
_SHARED_MODEL_KEYS = ("depth", "width", "num_heads", "patch", "image_size", "vocab_size", "text_len", "channels",
                      "mlp_ratio", "init_std")


def _variant(config: ExperimentConfig, architecture: tp.Optional[str] = None, **overrides) -> ExperimentConfig:
    out = copy.deepcopy(config)
    if architecture is not None:
        out.architecture = architecture
    for key, value in overrides.items():
        section, name = key.split("__")
        setattr(getattr(out, section), name, value)
    return out


def architecture_grid(config: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    return [
        ("psi_dit", _variant(config, "psi_dit")),
        ("controlnet", _variant(config, "controlnet")),
    ]


def init_grid(config: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    out = []
    for zero in (True, False):
        for policy in ("random", "teb_copy", "nlb_copy"):
            name = f"{policy}{'+zero' if zero else ''}"
            out.append((name, _variant(
                config, "psi_dit", model__enable_zero_init=zero, model__sscm_init_policy=policy,
            )))
    return out


def mask_grid(config: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    return [
        ("none", _variant(config, "psi_dit", schedule__strategy="none")),
        ("fixed0.5", _variant(config, "psi_dit", schedule__strategy="fixed", schedule__fixed_ratio=0.5)),
        ("fixed0.75", _variant(config, "psi_dit", schedule__strategy="fixed", schedule__fixed_ratio=0.75)),
        ("fixed0.85", _variant(config, "psi_dit", schedule__strategy="fixed", schedule__fixed_ratio=0.85)),
        ("uniform0.75-1.0", _variant(config, "psi_dit", schedule__strategy="uniform", schedule__lo=0.75,
                                     schedule__hi=1.0)),
        ("pms", _variant(config, "psi_dit", schedule__strategy="pms")),
    ]


def named_grid(name: str, config: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    builders = {"architecture": architecture_grid, "init": init_grid, "mask": mask_grid}
    if name not in builders:
        raise ConfigError(f"unknown ablation grid {name!r}, expected one of {GRIDS}")
    return builders[name](config)


def check_compatible(variants: tp.Sequence[tuple[str, ExperimentConfig]]) -> None:
    """Variants must share the base geometry, degradation and budgets."""
    if not variants:
        raise ConfigError("an ablation needs at least one variant")
    ref_name, ref = variants[0]
    for name, cfg in variants[1:]:
        for key in _SHARED_MODEL_KEYS:
            if getattr(cfg.model, key) != getattr(ref.model, key):
                raise ConfigError(f"variants {ref_name!r} and {name!r} disagree on model.{key}")
        if cfg.degradation.to_dict() != ref.degradation.to_dict():
            raise ConfigError(f"variants {ref_name!r} and {name!r} disagree on the degradation")
        if cfg.budget.to_dict() != ref.budget.to_dict():
            raise ConfigError(f"variants {ref_name!r} and {name!r} disagree on the budgets")
        if cfg.schedule.t_total != ref.schedule.t_total:
            raise ConfigError(f"variants {ref_name!r} and {name!r} disagree on the MIM step count")
    names = [n for n, _ in variants]
    if len(set(names)) != len(names):
        raise ConfigError(f"variant names must be unique, got {names}")


def running_mean(values: tp.Sequence[float], window: int = THRESHOLD_WINDOW) -> list[float]:
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def final_loss(losses: tp.Sequence[float], window: int = THRESHOLD_WINDOW) -> float:
    tail = list(losses[-window:])
    return math.fsum(tail) / len(tail) if tail else float("nan")


def steps_to_threshold(
    losses: tp.Sequence[float], threshold: float, window: int = THRESHOLD_WINDOW
) -> tp.Optional[int]:
    """Number of steps until the running mean first reaches `threshold`, None if never."""
    for i, m in enumerate(running_mean(losses, window)):
        if i + 1 >= min(window, len(losses)) and m <= threshold:
            return i + 1
    return None


@dataclass
class AblationRow:
    variant: str
    architecture: str
    seed: int
    enable_zero_init: bool
    sscm_init_policy: str
    mask_strategy: str
    trainable_params: int
    final_loss: float
    steps_to_threshold: tp.Optional[int]
    psnr: float
    ssim: float
    bicubic_psnr: float
    bicubic_ssim: float


@dataclass
class AblationReport:
    rows: list[AblationRow] = field(default_factory=list)
    curves: dict[tuple[str, int], list[float]] = field(default_factory=dict)
    threshold: float = float("nan")
    reference: str = ""

    COLUMNS: tp.ClassVar[tuple[str, ...]] = (
        "variant", "architecture", "seed", "enable_zero_init", "sscm_init_policy", "mask_strategy",
        "trainable_params", "final_loss", "steps_to_threshold", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim",
    )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.rows:
            cells = []
            for col in self.COLUMNS:
                v = getattr(r, col)
                if v is None:
                    cells.append("")
                elif isinstance(v, float):
                    cells.append(f"{v:.6f}")
                else:
                    cells.append(str(v))
            writer.writerow(cells)
        return buf.getvalue()

    def by_variant(self, variant: str) -> list[AblationRow]:
        return [r for r in self.rows if r.variant == variant]

    def trend(self) -> str:
        """Expected direction: the triple-flow model reaches the threshold in fewer steps than
        the ControlNet baseline. Reported, never enforced."""
        def median_steps(arch: str) -> tp.Optional[float]:
            steps = [r.steps_to_threshold for r in self.rows if r.architecture == arch]
            steps = [s for s in steps if s is not None]
            return statistics.median(steps) if steps else None

        psi, ctrl = median_steps("psi_dit"), median_steps("controlnet")
        if psi is None or ctrl is None:
            return "trend: n/a"
        verdict = "as expected" if psi < ctrl else "not observed"
        return f"trend: psi_dit {psi:g} steps vs controlnet {ctrl:g} steps to threshold ({verdict})"


def run_grid(
    variants: tp.Sequence[tuple[str, ExperimentConfig]],
    seeds: tp.Sequence[int],
    base_checkpoint: tp.Union[str, Path],
    train: SceneCorpus,
    heldout: SceneCorpus,
    out_dir: tp.Union[str, Path],
    progress: bool = False,
) -> AblationReport:
    check_compatible(variants)
    for _, cfg in variants:
        cfg.validate()
    out_dir = Path(out_dir)
    report = AblationReport()
    pending = []
    for name, cfg in variants:
        for seed in seeds:
            run_dir = out_dir / name / f"seed{seed}"
            writer = MetricsWriter(run_dir / "metrics.jsonl")
            logger.info("ablation variant %s, seed %d", name, seed)
            state = train_sr(
                base_checkpoint, train, cfg.budget, cfg.schedule, run_dir,
                architecture=cfg.architecture, config=cfg.model, seed=seed, writer=writer, progress=progress,
            )
            evaluated = heldout.take(cfg.eval.limit) if cfg.eval.limit else heldout
            ev = eval_report(
                state.model, evaluated, cfg.budget.sample_steps, cfg.eval.sample_seed, cfg.eval.crop_size,
                config_digest=cfg.digest(),
            )
            report.curves[(name, seed)] = list(state.losses)
            pending.append((name, cfg, seed, count_params(state.model, trainable_only=True), state.losses, ev))

    controlnets = [name for name, cfg in variants if cfg.architecture == "controlnet"]
    reference = controlnets or [variants[-1][0]]
    report.reference = ",".join(reference)
    report.threshold = statistics.median(
        final_loss(losses) for name, _, _, _, losses, _ in pending if name in reference
    )
    for name, cfg, seed, trainable, losses, ev in pending:
        report.rows.append(AblationRow(
            variant=name, architecture=cfg.architecture, seed=seed,
            enable_zero_init=cfg.model.enable_zero_init, sscm_init_policy=cfg.model.sscm_init_policy,
            mask_strategy=cfg.schedule.strategy, trainable_params=trainable,
            final_loss=final_loss(losses), steps_to_threshold=steps_to_threshold(losses, report.threshold),
            psnr=ev.mean_psnr, ssim=ev.mean_ssim, bicubic_psnr=ev.baseline_psnr, bicubic_ssim=ev.baseline_ssim,
        ))
    (out_dir / "ablation.csv").parent.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text(report.to_csv())
    logger.info("threshold %.6f from %s; %s", report.threshold, report.reference, report.trend())
    return report


def run_ablation(
    config_a: ExperimentConfig,
    config_b: ExperimentConfig,
    seeds: tp.Sequence[int],
    base_checkpoint: tp.Union[str, Path],
    train: SceneCorpus,
    heldout: SceneCorpus,
    out_dir: tp.Union[str, Path],
    names: tuple[str, str] = ("A", "B"),
) -> AblationReport:
    return run_grid([(names[0], config_a), (names[1], config_b)], seeds, base_checkpoint, train, heldout, out_dir)
