"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class GradCheckReport:
    max_error: float
    per_param: Dict[str, float] = field(default_factory=dict)

    def worst(self) -> Tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]


def _named(params) -> list:
    if isinstance(params, dict):
        return list(params.items())
    out = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            out.append(p)
        else:
            out.append((p.name or f"param{i}", p))
    return out


def _central(f: Callable[[], Tensor], flat: np.ndarray, i: int, h: float) -> float:
    orig = flat[i]
    try:
        flat[i] = orig + h
        up = f().item()
        flat[i] = orig - h
        down = f().item()
    finally:
        flat[i] = orig
    if not (np.isfinite(up) and np.isfinite(down)):
        raise NonFiniteError("non-finite loss")
    return (up - down) / (2 * h)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    f: Callable[[], Tensor],
    params: Union[Iterable, Dict[str, Tensor]],
    eps: float = 1e-5,
    coords: Optional[int] = 100,
    rng: Optional[np.random.Generator] = None,
    report: bool = False,
    richardson: bool = False,
):
    """Compare backprop gradients of scalar ``f()`` with central differences.

    Up to ``coords`` coordinates are sampled per parameter (all of them when
    ``coords`` is None). Returns the maximum relative error
    ``|a - n| / max(|a|, |n|, 1e-8)``, or a :class:`GradCheckReport` when
    ``report`` is set.

    ``richardson`` combines central differences at ``eps`` and ``2 eps`` as
    ``(4 D(eps) - D(2 eps)) / 3``, cancelling the O(eps^2) term. That allows
    a step near 1e-3, where float64 roundoff (about 1e-16 |f| / eps) stays
    far below gradients of order 1e-9 that a 1e-5 step would drown.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    named = _named(params)
    for _, p in named:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in named}

    per_param = {}
    for name, p in named:
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if coords is None or coords >= n else rng.choice(n, size=coords, replace=False)
        worst = 0.0
        for i in idx:
            try:
                numeric = _central(f, flat, i, eps)
                if richardson:
                    numeric = (4.0 * numeric - _central(f, flat, i, 2 * eps)) / 3.0
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite value while perturbing {name}[{i}]: {exc}") from exc
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[i]), numeric))
        per_param[name] = worst
    result = GradCheckReport(max(per_param.values()) if per_param else 0.0, per_param)
    return result if report else result.max_error
