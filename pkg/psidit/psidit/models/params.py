# SPDX-License-Identifier: MIT
"""
Named parameter store.

A `ParamStore` is an ordered view `name -> tensor` over a module's parameters (or
over free tensors loaded from a checkpoint). The trainable flag of an entry is the
tensor's `requires_grad`; each entry also carries a provenance label recording where
its initial value came from (`init:seeded`, `zero`, `copy:<name>`, `checkpoint`...).
"""

from collections.abc import Mapping
from dataclasses import dataclass
import hashlib
import typing as tp

import torch
from torch import nn


@dataclass
class ParamEntry:
    tensor: torch.Tensor
    provenance: str

    @property
    def trainable(self) -> bool:
        return self.tensor.requires_grad


def collect_provenance(module: nn.Module) -> dict[str, str]:
    """Merge the `provenance` dicts found on `module` and its submodules, keyed by full name."""
    labels: dict[str, str] = {}
    for prefix, sub in module.named_modules():
        own = getattr(sub, "provenance", None)
        if not own:
            continue
        for name, label in own.items():
            labels[f"{prefix}.{name}" if prefix else name] = label
    return labels


class ParamStore(Mapping):
    def __init__(self, entries: tp.Optional[tp.Mapping[str, ParamEntry]] = None):
        self._entries: dict[str, ParamEntry] = dict(entries or {})

    @classmethod
    def of(cls, module: nn.Module) -> "ParamStore":
        labels = collect_provenance(module)
        entries = {}
        for name, param in module.named_parameters():
            entries[name] = ParamEntry(param, labels.get(name, "init:seeded"))
        return cls(entries)

    @classmethod
    def from_tensors(
        cls, tensors: tp.Mapping[str, torch.Tensor], trainable: bool = True, provenance: str = "tensor"
    ) -> "ParamStore":
        entries = {}
        for name, tensor in tensors.items():
            if tensor.is_floating_point():
                tensor.requires_grad_(trainable)
            entries[name] = ParamEntry(tensor, provenance)
        return cls(entries)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._entries[name].tensor

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def is_trainable(self, name: str) -> bool:
        return self._entries[name].trainable

    def provenance(self, name: str) -> str:
        return self._entries[name].provenance

    def trainable_items(self) -> tp.Iterator[tuple[str, torch.Tensor]]:
        for name, e in self._entries.items():
            if e.trainable:
                yield name, e.tensor

    def frozen_items(self) -> tp.Iterator[tuple[str, torch.Tensor]]:
        for name, e in self._entries.items():
            if not e.trainable:
                yield name, e.tensor

    def digest(self, frozen_only: bool = False) -> str:
        """SHA-256 over names, flags and raw bytes, in store order."""
        h = hashlib.sha256()
        for name, e in self._entries.items():
            if frozen_only and e.trainable:
                continue
            h.update(name.encode())
            h.update(b"\x01" if e.trainable else b"\x00")
            h.update(e.tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def copy_from(self, other: "ParamStore", strict: bool = True) -> None:
        """Copy values and trainable flags from `other`, matching by name."""
        missing = [n for n in self._entries if n not in other]
        unexpected = [n for n in other if n not in self._entries]
        if strict and (missing or unexpected):
            raise KeyError(f"parameter mismatch, missing {missing[:5]}, unexpected {unexpected[:5]}")
        with torch.no_grad():
            for name, e in self._entries.items():
                if name not in other:
                    continue
                src = other[name]
                if tuple(src.shape) != tuple(e.tensor.shape):
                    raise ValueError(f"{name}: shape {tuple(src.shape)} != {tuple(e.tensor.shape)}")
                e.tensor.copy_(src)
                e.tensor.requires_grad_(other.is_trainable(name))
                e.provenance = other.provenance(name)


def count_params(params: tp.Union[ParamStore, nn.Module], trainable_only: bool = False) -> int:
    if isinstance(params, nn.Module):
        params = ParamStore.of(params)
    return sum(
        t.numel() for name, t in params.items()
        if not trainable_only or params.is_trainable(name)
    )
