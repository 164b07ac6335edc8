"""Frozen-encoder feature extraction and the two pooling operators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import Module, Tensor, no_grad, parameter, trunc_normal
from ..autodiff import functional as F
from ..errors import ConfigError, ContractError
from ..nn import MultiHeadAttention, RMSNorm

LANGUAGE_MODES = ("visual", "encoder", "null", "concat")


class MapPool(Module):
    """Multi-head attention pooling: learned seed queries cross-attend over a row set."""

    def __init__(self, rng: np.random.Generator, d: int, n_seed: int = 1, heads: int = 4):
        if n_seed < 1:
            raise ConfigError("MAP needs at least one seed query")
        self.seeds = parameter(trunc_normal(rng, (n_seed, d)))
        self.attn = MultiHeadAttention(rng, d, heads)
        self.norm = RMSNorm(d)

    def __call__(self, rows, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """rows (B, n, d) -> (B, n_seed, d)."""
        rows = rows if isinstance(rows, Tensor) else Tensor(rows, dtype=self.seeds.dtype)
        b, n, d = rows.shape
        if n == 0:
            raise ContractError("MAP over an empty row set")
        q = F.broadcast_to(F.reshape(self.seeds, (1,) + self.seeds.shape), (b,) + self.seeds.shape)
        mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, :]
        return self.norm(self.attn(q, context=rows, mask=mask))


def mean_pool(rows, key_mask: Optional[np.ndarray] = None) -> Tensor:
    """Average over rows (B, n, d) -> (B, d), ignoring rows whose key_mask is False."""
    rows = rows if isinstance(rows, Tensor) else Tensor(rows)
    if rows.shape[1] == 0:
        raise ContractError("mean over an empty row set")
    if key_mask is None:
        return F.mean(rows, axis=1)
    w = np.asarray(key_mask, dtype=rows.dtype)[:, :, None]
    return F.sum(rows * w, axis=1) * (1.0 / w.sum(axis=1))


@dataclass
class Features:
    rows: np.ndarray  # (N, n, d) frozen encoder outputs
    key_mask: np.ndarray  # (N, n)
    lang: Optional[np.ndarray] = None  # (N, d_lang) for the concat mode
    duplicated: bool = False  # single frames were copied into both slots of a k=2 model

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def take(self, idx) -> "Features":
        idx = np.asarray(idx)
        return Features(self.rows[idx], self.key_mask[idx],
                        None if self.lang is None else self.lang[idx], self.duplicated)


def frozen_language_vector(model, token_ids: np.ndarray, length_mask: np.ndarray) -> np.ndarray:
    """Mean frozen-table embedding over the real tokens of each utterance: (N, d_lang)."""
    table = model.encoder.lang_table.data.astype(np.float64)
    w = np.asarray(length_mask, dtype=np.float64)
    return (table[np.asarray(token_ids)] * w[..., None]).sum(axis=1) / w.sum(axis=1, keepdims=True)


def extract(model, frames: np.ndarray, token_ids: Optional[np.ndarray] = None,
            length_mask: Optional[np.ndarray] = None, mode: str = "visual", chunk: int = 64) -> Features:
    """Encode unmasked frames with the frozen encoder.

    ``visual``: <NULL> utterance, visual rows only. ``encoder``: the given
    utterance, visual plus real language rows. ``null``: same layout as
    ``encoder`` but with the <NULL> utterance. ``concat``: ``visual`` rows
    plus the utterance's mean frozen-table embedding.
    """
    if mode not in LANGUAGE_MODES:
        raise ConfigError(f"unknown language mode {mode!r}; choose from {LANGUAGE_MODES}")
    frames = np.asarray(frames, dtype=np.float32)
    single = frames.ndim == 4 or frames.shape[1] == 1
    frames = model.frames_for(frames)
    n = frames.shape[0]
    if mode in ("encoder", "concat") and token_ids is None:
        raise ContractError(f"language mode {mode!r} needs utterances")
    null_ids, null_mask = model.null_batch(n)
    ids, lm = (token_ids, length_mask) if mode == "encoder" else (null_ids, null_mask)
    rows, masks = [], []
    with no_grad():
        for s in range(0, n, chunk):
            enc = model.encode(frames[s:s + chunk], None, ids[s:s + chunk], lm[s:s + chunk])
            if mode == "visual" or mode == "concat":
                rows.append(enc.visual.data)
                masks.append(np.ones(enc.visual.shape[:2], dtype=bool))
            else:
                rows.append(enc.h.data)
                masks.append(enc.key_mask)
    lang = frozen_language_vector(model, token_ids, length_mask) if mode == "concat" else None
    return Features(np.concatenate(rows), np.concatenate(masks), lang,
                    duplicated=bool(single and model.cfg.k == 2))
