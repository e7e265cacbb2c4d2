import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Tensor

_LOGGER = logging.getLogger("sketch-retrieval.autodiff")


@dataclass
class AdamWHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moment estimates."""

    def __init__(
        self,
        params: Iterable[tuple[str, Tensor]],
        lr: float,
        hyper: AdamWHyper | None = None,
    ) -> None:
        if lr < 0:
            raise ValueError(f"AdamW: learning rate must be non-negative, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.hyper = hyper or AdamWHyper()
        self.step_count = 0
        self._first: dict[str, np.ndarray] = {}
        self._second: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for _, tensor in self.params:
            tensor.grad = None

    def step(self, *, skip_missing: bool = False) -> int:
        """Update every parameter; with `skip_missing`, parameters without a gradient are left alone."""

        active = []
        for name, tensor in self.params:
            if tensor.grad is None:
                if skip_missing:
                    continue
                raise RuntimeError(f"AdamW: parameter '{name}' has no gradient")
            if tensor.grad.shape != tensor.shape:
                raise ValueError(
                    f"AdamW: gradient shape {tensor.grad.shape} does not match parameter '{name}' {tensor.shape}"
                )
            active.append((name, tensor))
        self.step_count += 1
        for name, tensor in active:
            adamw_step(
                name,
                tensor,
                self._first,
                self._second,
                self.step_count,
                self.lr,
                self.hyper,
            )
        return len(active)


def adamw_step(
    name: str,
    tensor: Tensor,
    first: dict[str, np.ndarray],
    second: dict[str, np.ndarray],
    step: int,
    lr: float,
    hyper: AdamWHyper,
) -> None:
    """One AdamW update of a single parameter; moment buffers live in `first`/`second`."""

    grad = tensor.grad
    if grad is None:
        raise RuntimeError(f"AdamW: parameter '{name}' has no gradient")
    m = first.get(name)
    v = second.get(name)
    if m is None:
        m = np.zeros_like(tensor.data)
        v = np.zeros_like(tensor.data)
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad * grad
    first[name] = m
    second[name] = v
    m_hat = m / (1.0 - hyper.beta1**step)
    v_hat = v / (1.0 - hyper.beta2**step)
    decayed = tensor.data * (1.0 - lr * hyper.weight_decay)
    tensor.data = decayed - lr * m_hat / (np.sqrt(v_hat) + hyper.eps)


__all__ = ["AdamW", "AdamWHyper", "adamw_step"]
