"""
Dense tensors with a recorded tape for reverse-mode differentiation.

Every primitive appends one entry to the thread-local tape when any input
requires a gradient and recording is enabled. `backward` walks the tape in
reverse, visits each entry once and clears it afterwards.
"""

import contextlib
import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

_LOGGER = logging.getLogger("sketch-retrieval.autodiff")

_DEFAULT_DTYPE: type = np.float64

Number = Union[int, float]
GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def set_default_dtype(dtype: type) -> None:
    """Switch between 64-bit (default, used by tests) and 32-bit tensors."""

    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"Unsupported tensor dtype {dtype!r}; use numpy.float32 or numpy.float64.")
    _DEFAULT_DTYPE = dtype


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


class Tensor:
    """
    A dense array plus gradient bookkeeping. Treated as an immutable value:
    primitives always allocate a new output, and optimizers rebind `data`.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "") -> None:
        self.data = np.array(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = requires_grad
        out.grad = None
        out.name = ""
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: "Tensor | Number") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor | Number") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor | Number") -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":  # noqa: N802 - mirrors numpy
        return transpose(self)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


@dataclass
class TapeEntry:
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: GradFn


class Tape:
    """Ordered record of executed primitives. Inputs always precede their consumers."""

    def __init__(self) -> None:
        self._entries: list[TapeEntry] = []

    def record(self, entry: TapeEntry) -> None:
        self._entries.append(entry)

    @property
    def entries(self) -> list[TapeEntry]:
        return self._entries

    def clear(self) -> None:
        self._entries = []

    def __len__(self) -> int:
        return len(self._entries)


class _AutodiffState(threading.local):
    def __init__(self) -> None:
        self.tape = Tape()
        self.grad_enabled = True


_STATE = _AutodiffState()


def get_tape() -> Tape:
    return _STATE.tape


def is_grad_enabled() -> bool:
    return _STATE.grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording for the current thread (evaluation, explainability)."""

    previous = _STATE.grad_enabled
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


def _emit(name: str, inputs: Sequence[Tensor], data: np.ndarray, grad_fn: GradFn) -> Tensor:
    track = _STATE.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=track)
    if track:
        _STATE.tape.record(TapeEntry(name, tuple(inputs), out, grad_fn))
    return out


def _as_tensor(value: "Tensor | Number", like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.full(like.data.shape, float(value), dtype=_DEFAULT_DTYPE), False)


def backward(loss: Tensor) -> None:
    """
    Populate `.grad` on every tensor that requires a gradient and lies on a
    recorded path to `loss`, then clear the tape.
    """

    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = _STATE.tape
    if not len(tape):
        raise RuntimeError("backward: the tape is empty; no differentiable operation was recorded")

    for entry in tape.entries:
        for tensor in entry.inputs:
            if tensor.requires_grad:
                tensor.grad = None

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(tape.entries):
        upstream = pending.pop(id(entry.output), None)
        if upstream is None:
            continue
        entry.output.grad = upstream
        for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + grad
            else:
                pending[key] = grad
                owners[key] = tensor
    for key, grad in pending.items():
        owners[key].grad = grad
    tape.clear()
    _LOGGER.debug("backward finished; %d leaf gradients populated", len(pending))


# --------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: "Tensor | Number") -> Tensor:
    """Same-shape add, or bias-add when `b` is a vector matching the last axis of `a`."""

    b = _as_tensor(b, a)
    if a.shape == b.shape:
        return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        width = b.shape[0]
        return _emit(
            "add",
            (a, b),
            a.data + b.data,
            lambda g: (g, g.reshape(-1, width).sum(axis=0)),
        )
    raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a: Tensor, b: "Tensor | Number") -> Tensor:
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return _emit("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _emit("relu", (x,), np.where(active, x.data, 0.0), lambda g: (g * active,))


def sigmoid(x: Tensor) -> Tensor:
    exp = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + exp), exp / (1.0 + exp))
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return _emit("clip", (x,), np.clip(x.data, low, high), lambda g: (g * inside,))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the identity in evaluation mode or when `rate` is zero."""

    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", (x,), x.data * mask, lambda g: (g * mask,))


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    return _emit("matmul", (a, b), a.data @ b.data, lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x (m, k) @ weight (k, n) + bias (n)."""

    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"affine: shape mismatch {x.shape} vs {weight.shape}")
    if bias is None:
        return _emit(
            "affine",
            (x, weight),
            x.data @ weight.data,
            lambda g: (g @ weight.data.T, x.data.T @ g),
        )
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"affine: bias shape {bias.shape} does not match weight {weight.shape}")
    return _emit(
        "affine",
        (x, weight, bias),
        x.data @ weight.data + bias.data,
        lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)),
    )


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {x.shape}")
    return _emit("transpose", (x,), x.data.T, lambda g: (g.T,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if math.prod(shape) != x.size:
        raise ValueError(f"reshape: cannot view {x.shape} as {shape}")
    original = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(original),))


# --------------------------------------------------------------------------
# indexing and assembly


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or (index.size and (index.min() < 0 or index.max() >= x.shape[0])):
        raise ValueError(f"take_rows: index out of range for shape {x.shape}")

    def grad_fn(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take_rows", (x,), x.data[index], grad_fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ValueError(f"slice_cols: [{start}:{stop}] invalid for shape {x.shape}")

    def grad_fn(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_cols", (x,), x.data[:, start:stop], grad_fn)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    widths = {p.shape[1] for p in parts if p.ndim == 2}
    if not parts or len(widths) != 1 or any(p.ndim != 2 for p in parts):
        raise ValueError(f"concat_rows: incompatible shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    return _emit(
        "concat_rows",
        parts,
        np.concatenate([p.data for p in parts], axis=0),
        lambda g: tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts))),
    )


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    heights = {p.shape[0] for p in parts if p.ndim == 2}
    if not parts or len(heights) != 1 or any(p.ndim != 2 for p in parts):
        raise ValueError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _emit(
        "concat_cols",
        parts,
        np.concatenate([p.data for p in parts], axis=1),
        lambda g: tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))),
    )


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors (typically scalars) along a new leading axis."""

    shapes = {p.shape for p in parts}
    if not parts or len(shapes) != 1:
        raise ValueError(f"stack: incompatible shapes {[p.shape for p in parts]}")
    return _emit(
        "stack",
        parts,
        np.stack([p.data for p in parts]),
        lambda g: tuple(g[i] for i in range(len(parts))),
    )


def place(x: Tensor, rows: Sequence[int], cols: Sequence[int], shape: tuple[int, int]) -> Tensor:
    """Scatter a compact (len(rows), len(cols)) block into a zero matrix of `shape`."""

    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if x.shape != (rows.size, cols.size):
        raise ValueError(f"place: block shape {x.shape} does not match index sizes ({rows.size}, {cols.size})")
    full = np.zeros(shape, dtype=_DEFAULT_DTYPE)
    grid = np.ix_(rows, cols)
    full[grid] = x.data
    return _emit("place", (x,), full, lambda g: (g[grid],))


# --------------------------------------------------------------------------
# normalisation and attention helpers


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of a matrix."""

    if x.ndim != 2:
        raise ValueError(f"softmax: expected a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)
    return _emit(
        "softmax",
        (x,),
        out,
        lambda g: (out * (g - (g * out).sum(axis=1, keepdims=True)),),
    )


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"layer_norm: shape mismatch {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    width = x.shape[1]
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)
    normed = centered * inv_std

    def grad_fn(g: np.ndarray):
        g_normed = g * gamma.data
        g_x = (inv_std / width) * (
            width * g_normed
            - g_normed.sum(axis=1, keepdims=True)
            - normed * (g_normed * normed).sum(axis=1, keepdims=True)
        )
        return (g_x, (g * normed).sum(axis=0), g.sum(axis=0))

    return _emit("layer_norm", (x, gamma, beta), normed * gamma.data + beta.data, grad_fn)


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Scale each row to unit length; all-zero rows stay zero."""

    if x.ndim != 2:
        raise ValueError(f"l2_normalize_rows: expected a matrix, got shape {x.shape}")
    norms = np.sqrt((x.data**2).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    out = np.where(norms > 0, x.data / safe, 0.0)

    def grad_fn(g: np.ndarray):
        proj = (g * out).sum(axis=1, keepdims=True)
        return (np.where(norms > 0, (g - out * proj) / safe, 0.0),)

    return _emit("l2_normalize_rows", (x,), out, grad_fn)


# --------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    return _emit("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.full_like(x.data, g),))


def mean(x: Tensor) -> Tensor:
    count = x.size
    return _emit("mean", (x,), np.asarray(x.data.mean()), lambda g: (np.full_like(x.data, g / count),))


def mean_square(x: Tensor) -> Tensor:
    count = x.size
    return _emit(
        "mean_square",
        (x,),
        np.asarray((x.data**2).mean()),
        lambda g: (g * 2.0 * x.data / count,),
    )


def norm(x: Tensor) -> Tensor:
    """Euclidean norm over all entries; the gradient at the origin is taken as zero."""

    value = float(np.sqrt((x.data**2).sum()))

    def grad_fn(g: np.ndarray):
        if value == 0.0:
            return (np.zeros_like(x.data),)
        return (g * x.data / value,)

    return _emit("norm", (x,), np.asarray(value), grad_fn)


# --------------------------------------------------------------------------
# convolution


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding (before, after) such that the output extent is ceil(size / stride)."""

    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor],
    stride: int = 1,
    padding: "int | str | tuple[int, int, int, int]" = 0,
) -> Tensor:
    """
    2-D cross-correlation.

    x: (C, H, W); weight: (O, C, kh, kw); bias: (O,). `padding` is an int,
    "same" (output extent ceil(H / stride)) or (top, bottom, left, right).
    """

    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ValueError(f"conv2d: shape mismatch {x.shape} vs {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match weight {weight.shape}")
    channels, height, width = x.shape
    out_channels, _, kh, kw = weight.shape
    if padding == "same":
        top, bottom = same_padding(height, kh, stride)
        left, right = same_padding(width, kw, stride)
    elif isinstance(padding, int):
        top = bottom = left = right = padding
    else:
        top, bottom, left, right = padding
    padded = np.pad(x.data, ((0, 0), (top, bottom), (left, right)))
    if padded.shape[1] < kh or padded.shape[2] < kw:
        raise ValueError(f"conv2d: kernel {weight.shape[2:]} larger than padded input {padded.shape[1:]}")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    out_h, out_w = windows.shape[1], windows.shape[2]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, channels * kh * kw)
    kernel = weight.data.reshape(out_channels, -1)
    flat = cols @ kernel.T
    if bias is not None:
        flat = flat + bias.data
    out = flat.T.reshape(out_channels, out_h, out_w)

    def grad_fn(g: np.ndarray):
        g_flat = g.reshape(out_channels, -1).T
        g_weight = (g_flat.T @ cols).reshape(weight.shape)
        g_cols = (g_flat @ kernel).reshape(out_h, out_w, channels, kh, kw)
        g_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                g_padded[:, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += (
                    g_cols[:, :, :, i, j].transpose(2, 0, 1)
                )
        g_x = g_padded[:, top : top + height, left : left + width]
        if bias is None:
            return (g_x, g_weight)
        return (g_x, g_weight, g_flat.sum(axis=0))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", inputs, out, grad_fn)


__all__ = [
    "Tape",
    "TapeEntry",
    "Tensor",
    "add",
    "affine",
    "backward",
    "clip",
    "concat_cols",
    "concat_rows",
    "constant",
    "conv2d",
    "dropout",
    "get_default_dtype",
    "get_tape",
    "is_grad_enabled",
    "l2_normalize_rows",
    "layer_norm",
    "matmul",
    "mean",
    "mean_square",
    "mul",
    "no_grad",
    "norm",
    "parameter",
    "place",
    "relu",
    "reshape",
    "same_padding",
    "scale",
    "set_default_dtype",
    "sigmoid",
    "slice_cols",
    "softmax",
    "stack",
    "sub",
    "sum_all",
    "take_rows",
    "transpose",
]
