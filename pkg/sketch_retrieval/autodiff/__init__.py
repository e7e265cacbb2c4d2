"""
Minimal dense tensors with exact reverse-mode gradients.

The primitives in :mod:`sketch_retrieval.autodiff.tensor` are everything the
matching network needs; :mod:`.optim` holds AdamW and :mod:`.checkpoint` the
on-disk weight container.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .module import Module, init_normal
from .optim import AdamW, AdamWHyper, adamw_step
from .tensor import (
    Tape,
    Tensor,
    backward,
    constant,
    get_default_dtype,
    get_tape,
    is_grad_enabled,
    no_grad,
    parameter,
    set_default_dtype,
)

__all__ = [
    "AdamW",
    "AdamWHyper",
    "Module",
    "Tape",
    "Tensor",
    "adamw_step",
    "backward",
    "constant",
    "get_default_dtype",
    "get_tape",
    "init_normal",
    "is_grad_enabled",
    "load_checkpoint",
    "no_grad",
    "parameter",
    "save_checkpoint",
    "set_default_dtype",
]
