"""Parameter containers and initialisers."""

from __future__ import annotations

from typing import Dict, Iterator, List, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype


def parameter(data, name=None, trainable=True) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=trainable, name=name)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def trunc_normal(rng: np.random.Generator, shape, std=0.02, bound=2.0) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within ``bound`` standard deviations."""
    out = rng.standard_normal(size=shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


class Module:
    """Attribute-walking container: any Tensor, Module, or list of Modules is a child."""

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        out = []
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    out.extend(child.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> Iterator[Tensor]:
        for _, p in self.named_parameters():
            yield p

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype, order="C")

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            if p.grad is not None:
                p.grad = p.grad.astype(dtype)
        return self

    def label_parameters(self) -> None:
        """Stamp each parameter with its dotted path (used in diagnostics)."""
        for name, p in self.named_parameters():
            p.name = name

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as (d_in, d_out)."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = parameter(xavier_uniform(rng, d_in, d_out))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = F.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y
