# SPDX-License-Identifier: MIT
"""
psidit is a desk-scale triple-flow diffusion transformer for blind super-resolution.

A frozen dual-stream MMDiT base is steered by trainable Separable Stream Control
Modules that attend over low-resolution tokens, trained with a progressive
masked-conditioning curriculum.
"""

# flake8: noqa
from . import utils
from . import modules
from . import models

__version__ = "0.1.0"
