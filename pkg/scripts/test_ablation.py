#!/usr/bin/env python3
"""
Ablation grids, loss-curve summaries and a tiny end-to-end grid run.
"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "psidit"))

from psidit.ablation import (  # noqa: E402
    AblationReport,
    AblationRow,
    check_compatible,
    final_loss,
    named_grid,
    run_ablation,
    running_mean,
    steps_to_threshold,
)
from psidit.config import ConfigError, ExperimentConfig  # noqa: E402
from psidit.data import SceneCorpus  # noqa: E402
from psidit.models import ParamStore, get_base, save_checkpoint  # noqa: E402

TINY = {
    "model": {"depth": 1, "width": 16, "num_heads": 2, "patch": 4, "image_size": 16},
    "degradation": {"scale": 2},
    "schedule": {"t_total": 6, "k": 3, "c": 3},
    "budget": {"sft_steps": 3, "batch_size": 2, "sample_steps": 2, "log_every": 3},
    "eval": {"crop_size": 16, "limit": 2},
}


def tiny() -> ExperimentConfig:
    return ExperimentConfig.from_dict(TINY).validate()


def test_grids():
    config = tiny()
    assert [n for n, _ in named_grid("architecture", config)] == ["psi_dit", "controlnet"]
    init = named_grid("init", config)
    assert [n for n, _ in init] == [
        "random+zero", "teb_copy+zero", "nlb_copy+zero", "random", "teb_copy", "nlb_copy",
    ]
    assert all(cfg.architecture == "psi_dit" for _, cfg in init)
    assert init[4][1].model.sscm_init_policy == "teb_copy" and not init[4][1].model.enable_zero_init
    mask = dict(named_grid("mask", config))
    assert mask["fixed0.85"].schedule.strategy == "fixed" and mask["fixed0.85"].schedule.fixed_ratio == 0.85
    assert (mask["uniform0.75-1.0"].schedule.lo, mask["uniform0.75-1.0"].schedule.hi) == (0.75, 1.0)
    assert config.model.enable_zero_init and config.schedule.strategy == "pms"
    with pytest.raises(ConfigError):
        named_grid("optimizer", config)
    for name in ("architecture", "init", "mask"):
        check_compatible(named_grid(name, config))


def test_incompatible_variants():
    a, b = tiny(), tiny()
    b.model.width = 32
    with pytest.raises(ConfigError):
        check_compatible([("a", a), ("b", b)])
    c = tiny()
    c.budget.sft_steps = 4
    with pytest.raises(ConfigError):
        check_compatible([("a", a), ("c", c)])
    with pytest.raises(ConfigError):
        check_compatible([("a", a), ("a", tiny())])
    with pytest.raises(ConfigError):
        check_compatible([])


def test_loss_summaries():
    assert running_mean([4.0, 2.0, 6.0, 0.0], window=2) == [4.0, 3.0, 4.0, 3.0]
    assert final_loss([9.0, 1.0, 3.0], window=2) == 2.0
    losses = [5.0, 4.0, 3.0, 2.0, 1.0]
    assert steps_to_threshold(losses, 2.5, window=2) == 4
    assert steps_to_threshold(losses, 0.5, window=2) is None
    # the first window must fill before the threshold can be met
    assert steps_to_threshold([1.0, 9.0, 9.0], 4.0, window=2) is None
    assert steps_to_threshold([1.0], 5.0, window=2) == 1


def row(variant: str, architecture: str, steps) -> AblationRow:
    return AblationRow(variant, architecture, 0, True, "nlb_copy", "pms", 10, 0.5, steps, 20.0, 0.5, 19.0, 0.4)


def test_report_csv_and_trend():
    report = AblationReport(rows=[row("psi", "psi_dit", 12), row("ctrl", "controlnet", None)])
    lines = report.to_csv().splitlines()
    assert lines[0].startswith("variant,architecture,seed,")
    assert lines[1] == "psi,psi_dit,0,True,nlb_copy,pms,10,0.500000,12,20.000000,0.500000,19.000000,0.400000"
    assert lines[2].split(",")[8] == ""
    assert report.trend() == "trend: n/a"
    report.rows.append(row("ctrl", "controlnet", 30))
    assert report.trend().endswith("(as expected)")
    assert len(report.by_variant("ctrl")) == 2


def test_tiny_architecture_ablation(tmp_path):
    config = tiny()
    base = get_base(config=config.model, seed=0)
    ckpt = save_checkpoint(ParamStore.of(base), tmp_path / "base.ckpt")
    train = SceneCorpus.generate(8, size=16, degradation=config.degradation, seed=0)
    heldout = SceneCorpus.generate(2, size=16, degradation=config.degradation, seed=0, start=8)
    a, b = named_grid("architecture", config)
    report = run_ablation(a[1], b[1], [0, 1], ckpt, train, heldout, tmp_path / "abl", names=(a[0], b[0]))
    assert [(r.variant, r.seed) for r in report.rows] == [
        ("psi_dit", 0), ("psi_dit", 1), ("controlnet", 0), ("controlnet", 1),
    ]
    assert report.reference == "controlnet"
    psi, ctrl = report.by_variant("psi_dit")[0], report.by_variant("controlnet")[0]
    assert psi.trainable_params != ctrl.trainable_params
    assert all(len(curve) == 9 for curve in report.curves.values())
    assert all(r.bicubic_psnr == report.rows[0].bicubic_psnr for r in report.rows)
    assert (tmp_path / "abl" / "ablation.csv").read_text() == report.to_csv()
    assert (tmp_path / "abl" / "psi_dit" / "seed1" / "sr.ckpt").exists()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
