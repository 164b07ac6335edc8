"""Grasp affordance segmentation with a progressive-upsampling (PUP) head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..autodiff import Module, Tensor, no_grad
from ..autodiff import functional as F
from ..errors import ConfigError, DataError
from ..rng import stream
from .common import Conv2d, epochs_to_steps, fit
from .features import Features, MapPool

GRASPABLE, NON_GRASPABLE, BACKGROUND = 0, 1, 2
PUP_CHANNELS = (128, 64, 32, 16)


class PupHead(Module):
    """MAP with one seed per patch, then conv blocks back up to pixel resolution.

    Each block is conv3x3 -> bilinear x2 -> ReLU; only the first log2(p)
    blocks upsample, so the output always matches the input frame size.
    """

    def __init__(self, rng: np.random.Generator, d: int, grid: Sequence[int], p: int,
                 channels: Sequence[int] = PUP_CHANNELS, n_classes: int = 3, heads: int = 4):
        n_up = int(round(math.log2(p)))
        if 2 ** n_up != p or n_up > len(channels):
            raise ConfigError(f"patch size {p} needs a power-of-two <= 2^{len(channels)}")
        self.grid = tuple(grid)
        self.n_up = n_up
        self.pool = MapPool(rng, d, n_seed=self.grid[0] * self.grid[1], heads=heads)
        widths = [d] + list(channels)
        self.convs = [Conv2d(rng, widths[i], widths[i + 1]) for i in range(len(channels))]
        self.classify = Conv2d(rng, widths[-1], n_classes, size=1)

    def __call__(self, rows, key_mask=None) -> Tensor:
        """Logits (B, classes, H, W)."""
        x = self.pool(rows, key_mask)  # (B, R, d)
        b, r, d = x.shape
        x = F.reshape(F.transpose(x, (0, 2, 1)), (b, d) + self.grid)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < self.n_up:
                x = F.upsample_bilinear(x, 2)
            x = F.relu(x)
        return self.classify(x)

    def probabilities(self, rows, key_mask=None) -> np.ndarray:
        with no_grad():
            return F.softmax(self(rows, key_mask), axis=1).data


def check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() > 2):
        raise DataError("grasp labels must take values in {0, 1, 2}")
    return labels.astype(np.int64)


def precision_metrics(graspable_prob: np.ndarray, labels: np.ndarray) -> Dict[str, float]:
    """Ranked precision of 'graspable' confidences, averaged over images.

    top1: is the single most confident pixel graspable. topXpct: precision
    among the X% most confident pixels. Ties go to the lowest flat index.
    """
    b = graspable_prob.shape[0]
    probs = graspable_prob.reshape(b, -1)
    hits = labels.reshape(b, -1) == GRASPABLE
    n_pix = probs.shape[1]
    out = {}
    order = np.argsort(-probs, axis=1, kind="stable")
    ranked = np.take_along_axis(hits, order, axis=1)
    out["top1"] = float(ranked[:, 0].mean())
    for pct, key in ((1, "top1pct"), (5, "top5pct")):
        n = max(1, int(round(pct / 100 * n_pix)))
        out[key] = float(ranked[:, :n].mean())
    return out


@dataclass
class GraspConfig:
    epochs: int = 50
    batch_size: int = 64
    folds: int = 5
    lr: float = 1e-3
    weight_decay: float = 0.01
    heads: int = 4


@dataclass
class GraspResult:
    head: PupHead
    metrics: Dict[str, float]
    fold_metrics: List[Dict[str, float]] = field(default_factory=list)


def _train_head(feats: Features, labels: np.ndarray, idx: np.ndarray, d: int, grid, p: int, cfg: GraspConfig,
                rng: np.random.Generator) -> PupHead:
    head = PupHead(rng, d, grid, p, heads=cfg.heads)

    def loss(batch):
        sel = idx[batch]
        logits = head(feats.rows[sel], feats.key_mask[sel])
        return F.cross_entropy(F.transpose(logits, (0, 2, 3, 1)), labels[sel])

    fit(head, len(idx), epochs_to_steps(cfg.epochs, len(idx), cfg.batch_size), cfg.batch_size, loss, rng,
        cfg.lr, cfg.weight_decay)
    return head


def evaluate_head(head: PupHead, feats: Features, labels: np.ndarray) -> Dict[str, float]:
    probs = head.probabilities(feats.rows, feats.key_mask)
    return precision_metrics(probs[:, GRASPABLE], labels)


def grasp_adapt(feats: Features, labels: np.ndarray, d: int, grid, p: int, cfg: Optional[GraspConfig] = None,
                seed: int = 0) -> GraspResult:
    """k-fold training; the head with the best held-out top-1 is kept, metrics are fold means."""
    cfg = cfg or GraspConfig()
    labels = check_labels(labels)
    n = len(feats)
    if n < cfg.folds:
        raise DataError(f"{n} images cannot be split into {cfg.folds} folds")
    rng = stream(seed, "adapt", 0)
    folds = np.array_split(rng.permutation(n), cfg.folds)
    best, best_score, per_fold = None, -1.0, []
    for f, held in enumerate(folds):
        train_idx = np.sort(np.concatenate([folds[j] for j in range(cfg.folds) if j != f]))
        head = _train_head(feats, labels, train_idx, d, grid, p, cfg, stream(seed, "adapt", 1, f))
        m = evaluate_head(head, feats.take(np.sort(held)), labels[np.sort(held)])
        per_fold.append(m)
        if m["top1"] > best_score:
            best, best_score = head, m["top1"]
    mean = {k: float(np.mean([m[k] for m in per_fold])) for k in per_fold[0]}
    return GraspResult(best, mean, per_fold)
