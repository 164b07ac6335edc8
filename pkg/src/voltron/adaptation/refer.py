"""Referring-expression grounding: pooled features (+ language) -> MLP -> (x, y, w, h)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..autodiff import Linear, Module, Tensor, no_grad
from ..autodiff import functional as F
from ..errors import DataError
from ..rng import stream
from .common import epochs_to_steps, fit
from .features import Features, MapPool

REFER_HIDDEN = (512, 128, 128, 64)
IOU_THRESHOLD = 0.25


def check_boxes(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if np.any(boxes[:, 2] <= 0) or np.any(boxes[:, 3] <= 0):
        raise DataError("degenerate gold box: width and height must be positive")
    return boxes


def iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of (x, y, w, h) boxes (top-left corner), broadcasting over leading dims."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    aw, ah = np.maximum(a[..., 2], 0), np.maximum(a[..., 3], 0)
    bw, bh = np.maximum(b[..., 2], 0), np.maximum(b[..., 3], 0)
    ix = np.clip(np.minimum(a[..., 0] + aw, b[..., 0] + bw) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    iy = np.clip(np.minimum(a[..., 1] + ah, b[..., 1] + bh) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


class ReferHead(Module):
    def __init__(self, rng: np.random.Generator, d: int, d_lang: int = 0, hidden: Sequence[int] = REFER_HIDDEN,
                 heads: int = 4):
        self.pool = MapPool(rng, d, n_seed=1, heads=heads)
        widths = [d + d_lang] + list(hidden)
        self.layers = [Linear(rng, widths[i], widths[i + 1]) for i in range(len(hidden))]
        self.out = Linear(rng, widths[-1], 4)

    def __call__(self, rows, key_mask=None, lang: Optional[np.ndarray] = None) -> Tensor:
        x = self.pool(rows, key_mask)[:, 0]
        if lang is not None:
            x = F.concat([x, Tensor(lang, dtype=x.dtype)], axis=1)
        for layer in self.layers:
            x = F.gelu(layer(x))
        return self.out(x)

    def predict(self, feats: Features) -> np.ndarray:
        with no_grad():
            return self(feats.rows, feats.key_mask, feats.lang).data.astype(np.float64)


@dataclass
class ReferConfig:
    epochs: int = 300
    batch_size: int = 512
    lr: float = 1e-3
    weight_decay: float = 0.01
    delta: float = 1.0
    heads: int = 4


@dataclass
class ReferResult:
    head: ReferHead
    metrics: Dict[str, float]
    losses: List[float] = field(default_factory=list)


def accuracy(pred: np.ndarray, gold: np.ndarray, threshold: float = IOU_THRESHOLD) -> float:
    return float(np.mean(iou(pred, gold) >= threshold))


def refer_adapt(train: Features, train_boxes: np.ndarray, test: Features, test_boxes: np.ndarray, d: int,
                cfg: Optional[ReferConfig] = None, seed: int = 0) -> ReferResult:
    cfg = cfg or ReferConfig()
    train_boxes, test_boxes = check_boxes(train_boxes), check_boxes(test_boxes)
    rng = stream(seed, "adapt", 2)
    d_lang = 0 if train.lang is None else train.lang.shape[1]
    head = ReferHead(rng, d, d_lang, heads=cfg.heads)
    target = train_boxes.astype(head.out.weight.dtype)

    def loss(idx):
        pred = head(train.rows[idx], train.key_mask[idx], None if train.lang is None else train.lang[idx])
        return F.huber(pred, Tensor(target[idx]), cfg.delta)

    losses = fit(head, len(train), epochs_to_steps(cfg.epochs, len(train), cfg.batch_size), cfg.batch_size,
                 loss, rng, cfg.lr, cfg.weight_decay)
    pred = head.predict(test)
    metrics = {"acc@0.25": accuracy(pred, test_boxes), "mean_iou": float(iou(pred, test_boxes).mean()),
               "train_acc@0.25": accuracy(head.predict(train), train_boxes)}
    return ReferResult(head, metrics, losses)
