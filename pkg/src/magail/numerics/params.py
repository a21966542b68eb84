from __future__ import annotations

from typing import Iterator

import numpy as np


class ParamStore:
    """Named float64 parameters, each paired with a gradient slot of equal shape."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: {arr.shape} vs {self._values[name].shape}")
        self._values[name][...] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._values if n.startswith(prefix)]

    def items(self):
        return self._values.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def grads(self) -> dict[str, np.ndarray]:
        return dict(self._grads)

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def view(self) -> dict[str, np.ndarray]:
        """Plain ``name -> array`` mapping, suitable for gradient-free forward passes."""
        return dict(self._values)

    def copy(self) -> "ParamStore":
        out = ParamStore(self.rng_seed)
        for name, value in self._values.items():
            out.add(name, value.copy())
        return out

    def load(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            self[name] = value

    def size(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    def equal(self, other: "ParamStore") -> bool:
        if list(self._values) != list(other._values):
            return False
        return all(np.array_equal(self._values[n], other._values[n]) for n in self._values)
