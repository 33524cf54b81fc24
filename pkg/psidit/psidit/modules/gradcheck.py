# SPDX-License-Identifier: MIT
"""Central finite-difference check of autograd gradients."""

import bisect
from dataclasses import dataclass, field
import logging
import typing as tp

import torch

if tp.TYPE_CHECKING:
    from ..models.params import ParamStore

logger = logging.getLogger(__name__)


class NondeterministicLossError(RuntimeError):
    pass


def relative_error(a: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
    """`|a - f| / max(|a|, |f|, 1e-8)`, elementwise."""
    floor = torch.full_like(a, 1e-8)
    return (a - f).abs() / torch.maximum(torch.maximum(a.abs(), f.abs()), floor)


@dataclass
class GradReport:
    names: list[str]
    indices: list[int]
    analytic: torch.Tensor
    finite_difference: torch.Tensor
    rel_error: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.rel_error = relative_error(self.analytic, self.finite_difference)

    def __len__(self) -> int:
        return len(self.names)

    def fraction_within(self, tol: float = 1e-4) -> float:
        if len(self) == 0:
            return 1.0
        return float((self.rel_error < tol).double().mean())

    def worst(self, count: int = 5) -> list[tuple[str, int, float, float, float]]:
        order = torch.argsort(self.rel_error, descending=True)[:count].tolist()
        return [
            (self.names[i], self.indices[i], float(self.analytic[i]),
             float(self.finite_difference[i]), float(self.rel_error[i]))
            for i in order
        ]


def grad_check(
    loss_fn: tp.Callable[["ParamStore"], torch.Tensor],
    params: "ParamStore",
    n_samples: int = 200,
    h: float = 1e-5,
    generator: tp.Optional[torch.Generator] = None,
) -> GradReport:
    """Compare autograd gradients of `loss_fn` with central differences on sampled entries.

    Args:
        loss_fn (callable): deterministic scalar function of the store.
        params (ParamStore): store whose trainable tensors are checked; must be 64-bit.
        n_samples (int): number of sampled entries across all trainable tensors.
        h (float): finite-difference step. With unit-scale losses at 64 bits, 1e-5 keeps the
            truncation error (order h^2) and the rounding error (order 1e-16 / h) both small
            next to gradients of order 1e-6; 1e-6 starts to lose entries to rounding.
        generator (torch.Generator, optional): RNG for picking entries.
    """
    entries = list(params.trainable_items())
    if not entries:
        raise ValueError("no trainable parameters to check")
    for name, tensor in entries:
        if tensor.dtype != torch.float64:
            raise ValueError(f"grad_check needs 64-bit parameters, {name} is {tensor.dtype}")

    with torch.no_grad():
        first = loss_fn(params)
        second = loss_fn(params)
    if not torch.equal(first, second):
        raise NondeterministicLossError(
            f"loss_fn returned {first.item()!r} then {second.item()!r} for identical parameters"
        )

    tensors = [t for _, t in entries]
    loss = loss_fn(params)
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]

    offsets = [0]
    for t in tensors:
        offsets.append(offsets[-1] + t.numel())
    total = offsets[-1]
    count = min(n_samples, total)
    flat_picks = torch.randperm(total, generator=generator)[:count].sort().values.tolist()

    names, indices, analytic, numeric = [], [], [], []
    with torch.no_grad():
        for flat in flat_picks:
            i = bisect.bisect_right(offsets, flat) - 1
            j = flat - offsets[i]
            values = tensors[i].view(-1)
            orig = values[j].item()
            values[j] = orig + h
            plus = loss_fn(params).item()
            values[j] = orig - h
            minus = loss_fn(params).item()
            values[j] = orig
            names.append(entries[i][0])
            indices.append(j)
            analytic.append(grads[i].reshape(-1)[j].item())
            numeric.append((plus - minus) / (2 * h))

    report = GradReport(
        names, indices,
        torch.tensor(analytic, dtype=torch.float64),
        torch.tensor(numeric, dtype=torch.float64),
    )
    logger.info(f"grad_check: {len(report)} entries, {100 * report.fraction_within():.2f}% within 1e-4")
    return report
