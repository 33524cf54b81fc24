# SPDX-License-Identifier: MIT
"""
Procedural toy corpus: one colored shape on a textured background per image.

On disk a corpus is a directory holding `hr/NNNNN.png`, `lr/NNNNN.png` and a
`manifest.jsonl` with one row per scene (index, split, scene description, caption ids
and the degradation seed). Everything is derived from the corpus seed, so generating
twice gives byte-identical files.
"""

from dataclasses import dataclass
import json
import logging
from pathlib import Path
import typing as tp

import numpy as np
from PIL import Image
import torch
from tqdm.auto import tqdm

from .degradation import DegradationConfig, degrade
from .diffusion import Batch
from .prompts import BACKGROUNDS, COLORS, POSITIONS, SHAPES, SceneSpec, synthetic_caption
from .utils.rng import RngStreams, make_generator, make_numpy_rng

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
SPLITS = ("train", "heldout")

RGB = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "magenta": (0.9, 0.1, 0.85),
    "cyan": (0.1, 0.85, 0.9),
    "white": (0.97, 0.97, 0.97),
    "black": (0.03, 0.03, 0.03),
}
CENTERS = {
    "center": (0.5, 0.5),
    "top-left": (0.3, 0.3),
    "top-right": (0.3, 0.7),
    "bottom-left": (0.7, 0.3),
    "bottom-right": (0.7, 0.7),
}


def random_spec(rng: np.random.Generator) -> SceneSpec:
    return SceneSpec(
        shape=SHAPES[rng.integers(len(SHAPES))],
        color=COLORS[rng.integers(len(COLORS))],
        background=BACKGROUNDS[rng.integers(len(BACKGROUNDS))],
        position=POSITIONS[rng.integers(len(POSITIONS))],
    )


def _background(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    tone_a = rng.uniform(0.15, 0.55, size=3)
    tone_b = np.clip(tone_a + rng.uniform(-0.3, 0.3, size=3), 0.0, 1.0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "plain":
        mix = np.zeros((size, size))
    elif kind == "stripes":
        period = int(rng.integers(3, 8))
        axis = yy if rng.integers(2) else xx
        mix = ((axis // period) % 2).astype(np.float64)
    elif kind == "checker":
        cell = int(rng.integers(3, 8))
        mix = (((yy // cell) + (xx // cell)) % 2).astype(np.float64)
    elif kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        mix = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    elif kind == "noise":
        mix = rng.uniform(0.0, 1.0, size=(size, size))
    else:
        raise ValueError(f"unknown background {kind!r}")
    return tone_a[None, None] * (1 - mix[..., None]) + tone_b[None, None] * mix[..., None]


def _shape_mask(shape: str, size: int, center: tp.Tuple[float, float], radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dy, dx = yy - center[0] * size, xx - center[1] * size
    if shape == "circle":
        return dx ** 2 + dy ** 2 <= radius ** 2
    if shape == "square":
        return (np.abs(dx) <= 0.85 * radius) & (np.abs(dy) <= 0.85 * radius)
    if shape == "triangle":
        return (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) / 2)
    if shape == "cross":
        arm = radius / 3
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    raise ValueError(f"unknown shape {shape!r}")


def render_scene(spec: SceneSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    """`[H, W, 3]` float image in `[0, 1]`."""
    spec.validate()
    image = _background(spec.background, size, rng)
    cy, cx = CENTERS[spec.position]
    jitter = rng.uniform(-0.04, 0.04, size=2)
    radius = size * rng.uniform(0.16, 0.24)
    mask = _shape_mask(spec.shape, size, (cy + jitter[0], cx + jitter[1]), radius)
    image[mask] = np.asarray(RGB[spec.color])
    return np.clip(image, 0.0, 1.0)


def to_uint8(image: tp.Union[np.ndarray, torch.Tensor]) -> np.ndarray:
    """`[H, W, 3]` array or `[3, H, W]` tensor in `[0, 1]` to `[H, W, 3]` uint8."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy()
    return np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)


def from_uint8(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(array)).permute(2, 0, 1).to(torch.float32) / 255


def save_png(image: tp.Union[np.ndarray, torch.Tensor], path: tp.Union[str, Path]) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def load_png(path: tp.Union[str, Path]) -> torch.Tensor:
    with Image.open(path) as img:
        return from_uint8(np.asarray(img.convert("RGB"), dtype=np.uint8))


@dataclass
class ManifestRow:
    index: int
    split: str
    hr: str
    lr: str
    spec: SceneSpec
    caption: list[int]
    degrade_seed: int

    def to_json(self) -> dict[str, tp.Any]:
        return {
            "index": self.index, "split": self.split, "hr": self.hr, "lr": self.lr,
            "spec": self.spec.to_dict(), "caption": self.caption, "degrade_seed": self.degrade_seed,
        }

    @classmethod
    def from_json(cls, row: dict[str, tp.Any]) -> "ManifestRow":
        return cls(
            index=int(row["index"]), split=row["split"], hr=row["hr"], lr=row["lr"],
            spec=SceneSpec(**row["spec"]), caption=list(row["caption"]), degrade_seed=int(row["degrade_seed"]),
        )


def make_pair(
    index: int, size: int, degradation: DegradationConfig, seed: int, text_len: int = 8,
) -> tp.Tuple[SceneSpec, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Scene `index` of the corpus with seed `seed`: spec, HR, LR and caption ids.

    HR is quantized to 8 bits before degradation so LR can be re-derived from the PNG.
    """
    rng = make_numpy_rng(seed, RngStreams.SCENE, index)
    spec = random_spec(rng)
    hr = from_uint8(to_uint8(render_scene(spec, size, rng)))
    lr = from_uint8(to_uint8(degrade(hr, degradation, seed=seed, index=index)))
    return spec, hr, lr, synthetic_caption(spec, text_len)


def gen_dataset(
    out_dir: tp.Union[str, Path],
    n_train: int = 2000,
    n_heldout: int = 200,
    size: int = 32,
    degradation: tp.Optional[DegradationConfig] = None,
    seed: int = 0,
    text_len: int = 8,
    progress: bool = False,
) -> list[ManifestRow]:
    """Write `n_train + n_heldout` scenes; the last `n_heldout` indices are held out."""
    degradation = degradation or DegradationConfig()
    degradation.validate()
    if size % degradation.scale:
        raise ValueError(f"image size {size} is not divisible by scale {degradation.scale}")
    out_dir = Path(out_dir)
    (out_dir / "hr").mkdir(parents=True, exist_ok=True)
    (out_dir / "lr").mkdir(parents=True, exist_ok=True)
    rows = []
    total = n_train + n_heldout
    for index in tqdm(range(total), desc="gen-data", disable=not progress):
        spec, hr, lr, caption = make_pair(index, size, degradation, seed, text_len)
        name = f"{index:05d}.png"
        save_png(hr, out_dir / "hr" / name)
        save_png(lr, out_dir / "lr" / name)
        rows.append(ManifestRow(
            index=index, split="train" if index < n_train else "heldout",
            hr=f"hr/{name}", lr=f"lr/{name}", spec=spec, caption=caption.tolist(), degrade_seed=seed,
        ))
    with open(out_dir / MANIFEST_NAME, "w") as f:
        for row in rows:
            f.write(json.dumps(row.to_json(), sort_keys=True) + "\n")
    logger.info("wrote %d scenes (%d held out) to %s", total, n_heldout, out_dir)
    return rows


def read_manifest(corpus_dir: tp.Union[str, Path]) -> list[ManifestRow]:
    path = Path(corpus_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    with open(path) as f:
        return [ManifestRow.from_json(json.loads(line)) for line in f if line.strip()]


class SceneCorpus:
    """In-memory HR/LR/caption tensors with seeded batch sampling.

    Args:
        hr (torch.Tensor): `[N, 3, H, W]`.
        lr (torch.Tensor): `[N, 3, H/s, W/s]`.
        captions (torch.Tensor): `[N, Nt]` caption ids.
        indices (torch.Tensor): `[N]` corpus indices, keys of the per-sample RNG streams.
    """

    def __init__(
        self, hr: torch.Tensor, lr: torch.Tensor, captions: torch.Tensor, indices: torch.Tensor,
        specs: tp.Optional[list[SceneSpec]] = None,
    ):
        if not hr.shape[0] == lr.shape[0] == captions.shape[0] == indices.shape[0]:
            raise ValueError("corpus tensors disagree on the number of scenes")
        self.hr, self.lr, self.captions, self.indices = hr, lr, captions, indices
        self.specs = specs or []

    def __len__(self) -> int:
        return self.hr.shape[0]

    @classmethod
    def from_dir(cls, corpus_dir: tp.Union[str, Path], split: str = "train") -> "SceneCorpus":
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
        corpus_dir = Path(corpus_dir)
        rows = [r for r in read_manifest(corpus_dir) if r.split == split]
        if not rows:
            raise ValueError(f"split {split!r} of {corpus_dir} is empty")
        return cls(
            hr=torch.stack([load_png(corpus_dir / r.hr) for r in rows]),
            lr=torch.stack([load_png(corpus_dir / r.lr) for r in rows]),
            captions=torch.tensor([r.caption for r in rows], dtype=torch.long),
            indices=torch.tensor([r.index for r in rows], dtype=torch.long),
            specs=[r.spec for r in rows],
        )

    @classmethod
    def generate(
        cls, n: int, size: int = 32, degradation: tp.Optional[DegradationConfig] = None,
        seed: int = 0, start: int = 0, text_len: int = 8,
    ) -> "SceneCorpus":
        """Scenes `start .. start + n - 1` without touching the disk."""
        degradation = degradation or DegradationConfig()
        pairs = [make_pair(i, size, degradation, seed, text_len) for i in range(start, start + n)]
        return cls(
            hr=torch.stack([p[1] for p in pairs]),
            lr=torch.stack([p[2] for p in pairs]),
            captions=torch.stack([p[3] for p in pairs]),
            indices=torch.arange(start, start + n, dtype=torch.long),
            specs=[p[0] for p in pairs],
        )

    def batch(self, step: int, batch_size: int, seed: int) -> Batch:
        pick = torch.randint(len(self), (batch_size,), generator=make_generator(seed, RngStreams.BATCH, step))
        return Batch(hr=self.hr[pick], lr=self.lr[pick], captions=self.captions[pick], indices=self.indices[pick])

    def take(self, n: int) -> "SceneCorpus":
        return SceneCorpus(self.hr[:n], self.lr[:n], self.captions[:n], self.indices[:n], self.specs[:n])
