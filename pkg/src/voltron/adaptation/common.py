"""Shared minibatch loop and small layers used by the adaptation heads."""

from __future__ import annotations

import math
from typing import Callable, List

import numpy as np

from ..autodiff import Module, Tensor, parameter, xavier_uniform
from ..autodiff import functional as F
from ..optim import AdamW

ADAPT_LR = 1e-3
ADAPT_WD = 0.01


class Conv2d(Module):
    """Stride-1 'same' convolution, NCHW."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, size: int = 3):
        fan_in, fan_out = c_in * size * size, c_out * size * size
        self.weight = parameter(xavier_uniform(rng, fan_in, fan_out, (c_out, c_in, size, size)))
        self.bias = parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias)


class BatchNorm1d(Module):
    """Feature batch norm; running statistics (momentum 0.1) are used in eval mode."""

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = parameter(np.ones(d))
        self.beta = parameter(np.zeros(d))
        self.running_mean = parameter(np.zeros(d), trainable=False)
        self.running_var = parameter(np.ones(d), trainable=False)
        self.momentum = momentum
        self.eps = eps
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            n = x.shape[0]
            mu = F.mean(x, axis=0)
            centred = x - mu
            var = F.mean(centred * centred, axis=0)
            m = self.momentum
            unbiased = var.data * (n / max(n - 1, 1))
            self.running_mean.data = ((1 - m) * self.running_mean.data + m * mu.data).astype(x.dtype)
            self.running_var.data = ((1 - m) * self.running_var.data + m * unbiased).astype(x.dtype)
            xhat = centred / F.sqrt(var + self.eps)
        else:
            xhat = (x - self.running_mean.data) / np.sqrt(self.running_var.data + self.eps)
        return xhat * self.gamma + self.beta


def fit(module: Module, n_items: int, steps: int, batch_size: int, step_loss: Callable[[np.ndarray], Tensor],
        rng: np.random.Generator, lr: float = ADAPT_LR, weight_decay: float = ADAPT_WD) -> List[float]:
    """Run ``steps`` AdamW updates over shuffled minibatches; returns the loss trace."""
    opt = AdamW(0.9, 0.999, 1e-8, weight_decay)
    params = module.trainable()
    losses = []
    per_epoch = max(1, math.ceil(n_items / batch_size))
    order = rng.permutation(n_items)
    for step in range(steps):
        slot = step % per_epoch
        if slot == 0 and step > 0:
            order = rng.permutation(n_items)
        idx = np.sort(order[slot * batch_size:(slot + 1) * batch_size])
        module.zero_grad()
        loss = step_loss(idx)
        loss.backward()
        opt.step(params, lr)
        losses.append(float(loss.item()))
    return losses


def epochs_to_steps(epochs: int, n_items: int, batch_size: int) -> int:
    return epochs * max(1, math.ceil(n_items / batch_size))
