# SPDX-License-Identifier: MIT
"""Token-wise feed-forward block."""

import torch
from torch import nn
from torch.nn import functional as F


class FeedForward(nn.Module):
    """`linear_out(gelu_tanh(linear_in(x)))`, applied to every token independently.

    Args:
        dim (int): input and output width.
        hidden (int): inner width.
    """

    def __init__(self, dim: int, hidden: int, **factory_kwargs):
        super().__init__()
        self.linear_in = nn.Linear(dim, hidden, bias=True, **factory_kwargs)
        self.linear_out = nn.Linear(hidden, dim, bias=True, **factory_kwargs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear_out(F.gelu(self.linear_in(x), approximate="tanh"))
