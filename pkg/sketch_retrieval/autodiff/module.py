import logging
from typing import Iterator, Optional

import numpy as np

from .tensor import Tensor

_LOGGER = logging.getLogger("sketch-retrieval.autodiff")


class Module:
    """
    Parameter container. Parameters are discovered from instance attributes in
    assignment order, so names and ordering are deterministic.
    """

    def __init__(self) -> None:
        self.training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{index}.")

    def parameters(self) -> list[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.parameters())

    def children(self) -> Iterator["Module"]:
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (item for item in value if isinstance(item, Module))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], *, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise ValueError(
                f"Checkpoint does not match the model: missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, tensor in own.items():
            if name not in state:
                continue
            array = np.asarray(state[name])
            if array.shape != tensor.shape:
                raise ValueError(
                    f"Checkpoint entry '{name}' has shape {array.shape}, model expects {tensor.shape}"
                )
            tensor.data = array.astype(tensor.data.dtype)
        _LOGGER.debug("Loaded %d parameter arrays", len(own))


def init_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: Optional[int] = None) -> np.ndarray:
    """Scaled normal initialisation, std = 1/sqrt(fan_in)."""

    fan_in = fan_in or shape[0]
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


__all__ = ["Module", "init_normal"]
