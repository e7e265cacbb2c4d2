from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward, get_tape, no_grad


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = 1e-5,
    entries: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Central differences of scalar `fn()` with respect to `tensor` (flat `entries` only if given)."""

    tensor.data = np.array(tensor.data)
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    indices = range(flat.size) if entries is None else entries
    with no_grad():
        for index in indices:
            original = flat[index]
            flat[index] = original + step
            upper = fn().item()
            flat[index] = original - step
            lower = fn().item()
            flat[index] = original
            grad[index] = (upper - lower) / (2.0 * step)
    return grad.reshape(tensor.shape)


def analytic_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    get_tape().clear()
    loss = fn()
    backward(loss)
    return [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for t in tensors
    ]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """
    Worst entry-wise |a - n| / max(|a|, |n|, floor).

    Entries below `floor` in both gradients are measured against `floor` instead.
    """

    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradcheck(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-5,
    entries: Optional[dict[int, Sequence[int]]] = None,
) -> float:
    """
    Largest relative error between reverse-mode and central-difference gradients
    over `tensors`. `entries` optionally restricts tensor i to some flat indices.
    """

    analytic = analytic_gradients(fn, tensors)
    worst = 0.0
    for position, (tensor, grad) in enumerate(zip(tensors, analytic)):
        subset = None if entries is None else entries.get(position)
        numeric = numerical_gradient(fn, tensor, step=step, entries=subset)
        if subset is not None:
            worst = max(worst, relative_error(grad.reshape(-1)[list(subset)], numeric.reshape(-1)[list(subset)]))
        else:
            worst = max(worst, relative_error(grad, numeric))
    return worst


__all__ = ["analytic_gradients", "gradcheck", "numerical_gradient", "relative_error"]
