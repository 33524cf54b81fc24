#!/usr/bin/env python3
"""
Whole-pipeline checks: rerun determinism on a tiny budget, and the toy SR acceptance run
(slow, enabled with PSIDIT_SLOW=1).
"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "psidit"))

from psidit.config import ExperimentConfig, load_config  # noqa: E402
from psidit.data import SceneCorpus, gen_dataset  # noqa: E402
from psidit.diffusion import pretrain_base, train_sr  # noqa: E402
from psidit.metrics import EvalReport, eval_report  # noqa: E402
from psidit.models import BASE_NAME, SR_NAME  # noqa: E402
from psidit.utils.logging import MetricsWriter  # noqa: E402

CONFIGS = Path(__file__).resolve().parents[1] / "assets" / "configs"


def run_pipeline(config: ExperimentConfig, out: Path) -> EvalReport:
    """gen-data, pretrain, train and eval into `out`."""
    corpus_dir = out / "data"
    gen_dataset(corpus_dir, config.data.n_train, config.data.n_heldout, config.model.image_size,
                config.degradation, config.data.seed, config.model.text_len)
    train = SceneCorpus.from_dir(corpus_dir, "train")
    heldout = SceneCorpus.from_dir(corpus_dir, "heldout")
    if config.eval.limit:
        heldout = heldout.take(config.eval.limit)
    pretrain_base(config.model, train, config.budget, out, config.seed, MetricsWriter(out / "metrics_pretrain.jsonl"))
    state = train_sr(out / BASE_NAME, train, config.budget, config.schedule, out, config.architecture,
                     config.model, config.seed, MetricsWriter(out / "metrics_sr.jsonl"),
                     start_step=config.budget.pretrain_steps)
    report = eval_report(state.model, heldout, config.budget.sample_steps, config.eval.sample_seed,
                         config.eval.crop_size, config_digest=config.digest())
    (out / "eval.csv").write_text(report.to_csv())
    return report


def test_reruns_are_byte_identical(tmp_path):
    config = ExperimentConfig.from_dict({
        "model": {"depth": 1, "width": 16, "num_heads": 2, "patch": 4, "image_size": 16},
        "degradation": {"scale": 2},
        "schedule": {"t_total": 8, "k": 4, "c": 2},
        "budget": {"pretrain_steps": 10, "sft_steps": 4, "batch_size": 4, "sample_steps": 3, "log_every": 2},
        "data": {"n_train": 12, "n_heldout": 3},
        "eval": {"crop_size": 16},
    }).validate()
    run_pipeline(config, tmp_path / "a")
    run_pipeline(config, tmp_path / "b")
    for name in (BASE_NAME, SR_NAME, "metrics_pretrain.jsonl", "metrics_sr.jsonl", "eval.csv", "data/manifest.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


@pytest.mark.slow
def test_toy_super_resolution_beats_bicubic(tmp_path):
    config = load_config(CONFIGS / "toy.json")
    total = config.budget.pretrain_steps + config.schedule.t_total + config.budget.sft_steps
    assert total <= 6000
    report = run_pipeline(config, tmp_path)
    print(report.summary())
    assert report.mean_psnr >= report.baseline_psnr + 0.5
    assert report.mean_ssim > report.baseline_ssim


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
