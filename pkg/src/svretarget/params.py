"""Named parameter/buffer store shared by all network blocks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Parameter
from .weights import WeightFileError, load_weights, save_weights


class ParamSet:
    """Ordered mapping of dotted names to :class:`Parameter` objects plus plain buffers.

    Initialization draws from a single seeded generator, so creation order
    fixes the values.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def uniform(self, name: str, shape, fan_in: int) -> Parameter:
        bound = 1.0 / np.sqrt(fan_in)
        return self._add(name, self.rng.uniform(-bound, bound, size=shape))

    def constant(self, name: str, shape, value: float = 0.0) -> Parameter:
        return self._add(name, np.full(shape, value))

    def buffer(self, name: str, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        self.buffers[name] = arr
        return arr

    def _add(self, name: str, value) -> Parameter:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        p = Parameter(np.asarray(value, dtype=self.dtype), name=name)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = [n for n in list(self.params) + list(self.buffers) if n not in state]
        if strict and missing:
            raise KeyError(f"weights missing: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for name, p in self.params.items():
            if name in state:
                if state[name].shape != p.shape:
                    raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
                p.data = np.array(state[name], dtype=self.dtype)
        for name, buf in self.buffers.items():
            if name in state:
                buf[...] = state[name]

    def save(self, path) -> None:
        save_weights(path, self.state())

    def load(self, path, strict: bool = True) -> None:
        try:
            self.load_state(load_weights(path), strict=strict)
        except (KeyError, ValueError) as err:
            if isinstance(err, WeightFileError):
                raise
            raise WeightFileError(f"{path}: {err}") from None
