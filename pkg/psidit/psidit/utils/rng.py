# SPDX-License-Identifier: MIT
"""Named, seeded RNG streams.

Every random draw in the repository comes from a `torch.Generator` whose seed is
derived from `(base seed, stream name, *keys)`. Results therefore depend only on
the keys, never on the order in which batches or samples are produced.
"""

import hashlib
import random
import typing as tp

import numpy as np
import torch


def seed_all(seed: int):
    """Seed torch, numpy and Python RNG and force deterministic kernels."""
    torch.manual_seed(seed)
    random.seed(seed)
    np.random.seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.backends.cudnn.deterministic = True
    torch.backends.cudnn.benchmark = False


def derive_seed(seed: int, stream: str, *keys: tp.Union[int, str]) -> int:
    """63-bit seed for the substream `stream` at position `keys`."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    h.update(b"\x00" + stream.encode())
    for key in keys:
        h.update(b"\x00" + str(key).encode())
    return int.from_bytes(h.digest(), "little") & ((1 << 63) - 1)


def make_generator(seed: int, stream: str, *keys: tp.Union[int, str]) -> torch.Generator:
    g = torch.Generator(device="cpu")
    g.manual_seed(derive_seed(seed, stream, *keys))
    return g


def make_numpy_rng(seed: int, stream: str, *keys: tp.Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream, *keys))


class RngStreams:
    """Named generator factory bound to one base seed.

    Args:
        seed (int): base seed of the run.
    """

    MASK_RATIO = "mask-ratio"
    MASK_INDICES = "mask-indices"
    NOISE = "noise"
    TAU = "tau"
    BATCH = "batch"
    CAPTION_DROP = "caption-drop"
    INIT = "init"
    SAMPLE = "sample"
    DEGRADE = "degrade"
    SCENE = "scene"

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, stream: str, *keys: tp.Union[int, str]) -> torch.Generator:
        return make_generator(self.seed, stream, *keys)
