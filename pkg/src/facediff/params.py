"""Named parameter collections and weight initialization."""

from __future__ import annotations

from typing import Dict, Iterator, List

import numpy as np

from .autodiff import Parameter


class ParamStore:
    """Ordered, uniquely-named Parameter registry backing a model."""

    def __init__(self, dtype=np.float32):
        self.dtype = dtype
        self._params: Dict[str, Parameter] = {}

    def add(self, name: str, array: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(np.asarray(array, dtype=self.dtype), name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params.keys())

    def all(self) -> List[Parameter]:
        return list(self._params.values())

    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"missing parameters in state: {sorted(missing)[:5]}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=self.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def glorot_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)
