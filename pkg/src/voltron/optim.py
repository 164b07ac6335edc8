"""Decoupled-weight-decay Adam, warmup-cosine schedule, global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .errors import InvariantError


def lr_schedule(step: int, warmup: int, total: int, peak: float) -> float:
    """Linear 0 -> peak over ``warmup`` steps, cosine peak -> 0 at ``total``; 0 past the end."""
    if step >= total:
        return 0.0
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    span = max(total - warmup, 1)
    return peak * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / span))


def global_norm(params: Sequence[Tuple[str, Tensor]]) -> float:
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params: Sequence[Tuple[str, Tensor]], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``; returns the raw norm."""
    norm = global_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return norm


def decays(name: str, p: Tensor) -> bool:
    """Only matrices decay; vectors (norm scales, biases, LayerScale, modality embeddings) are exempt."""
    return p.ndim >= 2


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Sequence[Tuple[str, Tensor]], lr: float) -> None:
        """One update of every trainable parameter; frozen tensors are skipped untouched."""
        live: List[Tuple[str, Tensor]] = [(n, p) for n, p in params if p.requires_grad]
        for name, p in live:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise InvariantError(f"non-finite gradient in parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in live:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and decays(name, p):
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in sorted(self.m):
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], step_count: int) -> None:
        self.m, self.v = {}, {}
        for key, arr in arrays.items():
            kind, name = key.split("/", 1)
            (self.m if kind == "m" else self.v)[name] = np.array(arr, dtype=np.float32, order="C")
        self.step_count = int(step_count)
