# SPDX-License-Identifier: MIT
"""Command line entry point: `psidit <command> [--config PATH] [--seed N] [--out DIR] [--ckpt PATH]`."""

import argparse
import asyncio
import json
import logging
from pathlib import Path
import sys
import typing as tp

from .ablation import GRIDS, named_grid, run_grid
from .config import ConfigError, ExperimentConfig, load_config
from .curriculum import schedule_trace, trace_to_csv
from .data import MANIFEST_NAME, SceneCorpus, gen_dataset, load_png, save_png
from .diffusion import MissingCheckpointError, pretrain_base, sample, train_sr
from .metrics import eval_report
from .models.checkpoint import CheckpointError
from .models.loaders import ARCHITECTURES, BASE_NAME, SR_NAME, load_sr_model
from .prompts import AnnotationError, STUB_ENDPOINT, annotate_many, build_request, encode_caption_text, make_backend
from .utils.logging import MetricsWriter, print_log, setup_logger
from .utils.rng import seed_all

logger = logging.getLogger(__name__)


def _common() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before the command is not reset by the subparser.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=argparse.SUPPRESS, help="JSON experiment config.")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Overrides the config seed.")
    common.add_argument("--out", type=str, default=argparse.SUPPRESS, help="Overrides the config output directory.")
    common.add_argument("--ckpt", type=str, default=argparse.SUPPRESS, help="Checkpoint to read.")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--log-file", type=str, default=argparse.SUPPRESS, help="Also append log records to this file.")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="psidit", parents=[common],
        description="Triple-flow diffusion transformer for blind super-resolution, at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[common], help="Write the procedural toy corpus.")
    p.add_argument("--n-train", type=int, help="Overrides data.n_train.")
    p.add_argument("--n-heldout", type=int, help="Overrides data.n_heldout.")

    sub.add_parser("pretrain", parents=[common], help="Pretrain the text-to-image base.")

    p = sub.add_parser("train", parents=[common], help="MIM then SFT of the control branch on a frozen base.")
    p.add_argument("--architecture", choices=ARCHITECTURES, help="Overrides the config architecture.")

    p = sub.add_parser("sample", parents=[common], help="Super-resolve one LR image.")
    p.add_argument("--lr", required=True, type=str, help="LR PNG.")
    p.add_argument("--caption", default="", type=str, help="Caption text, projected on the caption vocabulary.")
    p.add_argument("--output", type=str, help="SR PNG to write, defaults to <out>/sample.png.")
    p.add_argument("--steps", type=int, help="Euler steps, overrides budget.sample_steps.")

    sub.add_parser("eval", parents=[common], help="PSNR/SSIM of a trained SR checkpoint on the held-out split.")

    p = sub.add_parser("ablate", parents=[common], help="Run an ablation grid from a shared base.")
    p.add_argument("--grid", choices=GRIDS, default="architecture")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])

    p = sub.add_parser("schedule-dump", parents=[common], help="Write the mask schedule trace as CSV.")
    p.add_argument("--mc", type=int, default=1000, help="Monte-Carlo draws per step.")
    p.add_argument("--stride", type=int, default=1)

    p = sub.add_parser("annotate", parents=[common], help="Subject-aware prompts for images.")
    p.add_argument("images", nargs="+", type=str)
    p.add_argument("--endpoint", default=STUB_ENDPOINT, type=str, help="'stub:' or an http(s) URL.")
    p.add_argument("--example", nargs=2, action="append", default=[], metavar=("IMAGE", "TEXT"),
                   help="In-context example, repeatable.")
    p.add_argument("--limit", type=int, default=4, help="Concurrent requests.")
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(getattr(args, "config", None))
    if hasattr(args, "seed"):
        config.seed = args.seed
    if hasattr(args, "out"):
        config.out_dir = args.out
    return config.validate()


def _corpus(config: ExperimentConfig, split: str) -> SceneCorpus:
    corpus_dir = config.corpus_dir
    if not (corpus_dir / MANIFEST_NAME).exists():
        logger.info("no corpus at %s, generating it", corpus_dir)
        gen_dataset(corpus_dir, config.data.n_train, config.data.n_heldout, config.model.image_size,
                    config.degradation, config.data.seed, config.model.text_len)
    return SceneCorpus.from_dir(corpus_dir, split)


def _ckpt(args: argparse.Namespace, default: Path) -> Path:
    path = Path(getattr(args, "ckpt", default))
    if not path.exists():
        raise MissingCheckpointError(f"no checkpoint at {path}")
    return path


def cmd_gen_data(args, config: ExperimentConfig) -> int:
    n_train = args.n_train if args.n_train is not None else config.data.n_train
    n_heldout = args.n_heldout if args.n_heldout is not None else config.data.n_heldout
    rows = gen_dataset(config.corpus_dir, n_train, n_heldout, config.model.image_size, config.degradation,
                       config.data.seed, config.model.text_len, progress=True)
    print_log("info", f"wrote {len(rows)} scenes to {config.corpus_dir}")
    return 0


def cmd_pretrain(args, config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    writer = MetricsWriter(out / "metrics_pretrain.jsonl")
    state = pretrain_base(config.model, _corpus(config, "train"), config.budget, out, config.seed, writer, True)
    print_log("info", f"base checkpoint {state.base_checkpoint}, final loss {state.losses[-1]:.5f}"
              if state.losses else f"base checkpoint {state.base_checkpoint}")
    return 0


def cmd_train(args, config: ExperimentConfig) -> int:
    if args.architecture:
        config.architecture = args.architecture
    out = Path(config.out_dir)
    base = _ckpt(args, out / BASE_NAME)
    writer = MetricsWriter(out / "metrics_sr.jsonl")
    state = train_sr(base, _corpus(config, "train"), config.budget, config.schedule, out, config.architecture,
                     config.model, config.seed, writer, True, start_step=config.budget.pretrain_steps)
    print_log("info", f"SR checkpoint {out / SR_NAME}, {state.step} global steps")
    return 0


def cmd_sample(args, config: ExperimentConfig) -> int:
    model = load_sr_model(_ckpt(args, Path(config.out_dir) / SR_NAME), config.architecture, config.model)
    lr = load_png(args.lr)
    expected = config.model.image_size // config.degradation.scale
    if tuple(lr.shape[-2:]) != (expected, expected):
        raise ValueError(f"LR image is {tuple(lr.shape[-2:])}, expected {expected}x{expected}")
    captions = encode_caption_text(args.caption, config.model.text_len)
    sr = sample(model, lr, captions, args.steps or config.budget.sample_steps, config.eval.sample_seed)
    output = Path(args.output) if args.output else Path(config.out_dir) / "sample.png"
    output.parent.mkdir(parents=True, exist_ok=True)
    save_png(sr, output)
    print_log("info", f"wrote {output}")
    return 0


def cmd_eval(args, config: ExperimentConfig) -> int:
    if not hasattr(args, "ckpt"):
        raise ValueError("eval needs --ckpt")
    model = load_sr_model(_ckpt(args, Path(args.ckpt)), config.architecture, config.model)
    heldout = _corpus(config, "heldout")
    if config.eval.limit:
        heldout = heldout.take(config.eval.limit)
    report = eval_report(model, heldout, config.budget.sample_steps, config.eval.sample_seed,
                         config.eval.crop_size, config_digest=config.digest(), progress=True)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(report.to_csv())
    print(report.summary())
    return 0


def cmd_ablate(args, config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    if hasattr(args, "ckpt"):
        base = _ckpt(args, Path(args.ckpt))
    else:
        state = pretrain_base(config.model, _corpus(config, "train"), config.budget, out, config.seed,
                              MetricsWriter(out / "metrics_pretrain.jsonl"), True)
        base = state.base_checkpoint
    report = run_grid(named_grid(args.grid, config), args.seeds, base, _corpus(config, "train"),
                      _corpus(config, "heldout"), out / f"ablation_{args.grid}", progress=True)
    print(report.to_csv(), end="")
    print(report.trend())
    return 0


def cmd_schedule_dump(args, config: ExperimentConfig) -> int:
    rows = schedule_trace(config.schedule, n_mc=args.mc, stride=args.stride, seed=config.seed)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_to_csv(rows, out / "schedule.csv")
    print_log("info", f"wrote {len(rows)} rows to {out / 'schedule.csv'}")
    return 0


def cmd_annotate(args, config: ExperimentConfig) -> int:
    backend = make_backend(args.endpoint)
    examples = [(img, text) for img, text in args.example]
    requests = [build_request(img, examples) for img in args.images]
    prompts = asyncio.run(annotate_many(backend, requests, args.limit))
    for img, prompt in zip(args.images, prompts):
        print(json.dumps({"image": img, **prompt.to_json(), "caption": prompt.as_caption()}, sort_keys=True))
    return 0


COMMANDS: dict[str, tp.Callable[[argparse.Namespace, ExperimentConfig], int]] = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "schedule-dump": cmd_schedule_dump,
    "annotate": cmd_annotate,
}


def cli_dispatch(argv: tp.Optional[tp.Sequence[str]] = None) -> int:
    """Run one command; 0 on success, 1 on a validation or runtime failure, 2 on a usage error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logger(
        "psidit",
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        log_file=getattr(args, "log_file", None),
    )
    try:
        config = _resolve_config(args)
        if args.command in ("pretrain", "train", "ablate"):
            seed_all(config.seed)
        return COMMANDS[args.command](args, config)
    except (ConfigError, CheckpointError, MissingCheckpointError, AnnotationError, FileNotFoundError,
            ValueError, FloatingPointError, RuntimeError) as exc:
        print_log("error", f"{type(exc).__name__}: {exc}")
        return 1


def main():
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
