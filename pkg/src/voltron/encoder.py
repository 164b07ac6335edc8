"""Multimodal encoder: visible patches and caption tokens through one Transformer stack."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .autodiff import Linear, Module, Tensor, parameter, trunc_normal
from .autodiff import functional as F
from .config import ModelConfig
from .data import MaskSpec, Vocabulary, is_null_utterance, patchify
from .errors import ContractError, DataError, VocabularyError
from .nn import Block, RMSNorm, sinusoid_1d, sinusoid_2d

_VEMB_MAGIC = b"VEMB"


def hashed_embedding_table(vocab: Vocabulary, d_lang: int) -> np.ndarray:
    """Deterministic stand-in for a pretrained word-embedding table: one Gaussian row per token string."""
    rows = []
    for tok in vocab.tokens:
        seed = int.from_bytes(hashlib.sha256(tok.encode("utf-8")).digest()[:8], "little")
        rows.append(np.random.default_rng(seed).standard_normal(d_lang))
    return np.stack(rows)


def save_embedding_table(path, table: np.ndarray) -> None:
    table = np.asarray(table, dtype="<f4")
    n, d = table.shape
    Path(path).write_bytes(_VEMB_MAGIC + struct.pack("<II", n, d) + table.tobytes(order="C"))


def load_embedding_table(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != _VEMB_MAGIC:
        raise DataError(f"{path}: not an embedding table (bad magic)")
    n, d = struct.unpack_from("<II", blob, 4)
    if len(blob) != 12 + 4 * n * d:
        raise DataError(f"{path}: expected {n}x{d} float32 payload")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(n, d).astype(np.float64)


@dataclass
class EncodedSequence:
    h: Tensor  # (B, S', d)
    k: int
    visible_per_frame: int
    masks: Optional[List[MaskSpec]]
    lang_mask: np.ndarray  # (B, L)
    null_utterance: np.ndarray  # (B,) bool

    @property
    def num_visual(self) -> int:
        return self.k * self.visible_per_frame

    @property
    def visual(self) -> Tensor:
        return self.h[:, : self.num_visual]

    @property
    def language(self) -> Tensor:
        return self.h[:, self.num_visual:]

    @property
    def key_mask(self) -> np.ndarray:
        """(B, S') True for rows that are real (visual rows and non-pad language rows)."""
        b = self.lang_mask.shape[0]
        return np.concatenate([np.ones((b, self.num_visual), dtype=bool), self.lang_mask], axis=1)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, rng: np.random.Generator,
                 language_table: Optional[np.ndarray] = None):
        if len(vocab) != cfg.vocab_size:
            raise VocabularyError(f"vocabulary has {len(vocab)} tokens, config expects {cfg.vocab_size}")
        self.cfg = cfg
        self.vocab = vocab
        table = hashed_embedding_table(vocab, cfg.d_lang) if language_table is None else language_table
        if table.shape != (cfg.vocab_size, cfg.d_lang):
            raise DataError(f"language table shape {table.shape} != ({cfg.vocab_size}, {cfg.d_lang})")
        self.patch_embed = Linear(rng, cfg.patch_dim, cfg.d)
        self.lang_table = parameter(table, trainable=False)
        self.lang_proj = Linear(rng, cfg.d_lang, cfg.d)
        self.mod_img = parameter(trunc_normal(rng, cfg.d))
        self.mod_lang = parameter(trunc_normal(rng, cfg.d))
        self.frame_emb = parameter(trunc_normal(rng, (2, cfg.d)))
        self.blocks = [Block(rng, cfg.d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)]
        self.norm = RMSNorm(cfg.d) if cfg.final_norm else None

    # -- embeddings -------------------------------------------------------------
    def embed_patches(self, frames: np.ndarray, masks: Optional[Sequence[MaskSpec]]) -> Tensor:
        """frames: (B, k, H, W, C). Returns (B, k * visible, d) with masked patches dropped."""
        cfg = self.cfg
        frames = np.asarray(frames)
        if frames.ndim != 5 or frames.shape[2:] != (cfg.height, cfg.width, cfg.channels):
            raise ContractError(f"frames {frames.shape} do not match (B, k, {cfg.height}, {cfg.width}, "
                                f"{cfg.channels})")
        b, k = frames.shape[:2]
        if k not in (1, 2):
            raise ContractError(f"frame context must hold 1 or 2 frames, got {k}")
        patches = patchify(frames, cfg.p)  # (B, k, R, pd)
        pos = sinusoid_2d(*cfg.grid, cfg.d)
        if masks is None:
            vis_idx = np.broadcast_to(np.arange(cfg.num_regions), (b, cfg.num_regions))
        else:
            if len(masks) != b:
                raise ContractError(f"{len(masks)} masks for a batch of {b}")
            for m in masks:
                if m.num_regions != cfg.num_regions:
                    raise ContractError(f"mask covers {m.num_regions} regions, frames have {cfg.num_regions}")
            counts = {len(m.visible) for m in masks}
            if len(counts) != 1:
                raise ContractError("masks in one batch must share a visible count")
            vis_idx = np.stack([m.visible for m in masks])
        n_vis = vis_idx.shape[1]
        picked = np.take_along_axis(patches, vis_idx[:, None, :, None], axis=2)  # (B, k, n_vis, pd)
        x = self.patch_embed(Tensor(picked, dtype=self.patch_embed.weight.dtype))
        x = x + pos[vis_idx][:, None]  # (B, 1, n_vis, d)
        x = x + self.mod_img
        x = x + F.reshape(self.frame_emb[:k], (1, k, 1, cfg.d))
        return F.reshape(x, (b, k * n_vis, cfg.d))

    def embed_language(self, token_ids: np.ndarray) -> Tensor:
        """(B, L) ids -> (B, L, d); every slot is embedded, padding is masked later."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise VocabularyError(f"token id outside [0, {self.cfg.vocab_size})")
        x = self.lang_proj(F.embedding(self.lang_table, ids))
        x = x + sinusoid_1d(ids.shape[1], self.cfg.d)
        return x + self.mod_lang

    # -- forward ----------------------------------------------------------------
    def __call__(self, frames: np.ndarray, masks: Optional[Sequence[MaskSpec]], token_ids: np.ndarray,
                 length_mask: np.ndarray) -> EncodedSequence:
        token_ids = np.asarray(token_ids)
        length_mask = np.asarray(length_mask, dtype=bool)
        if token_ids.shape != length_mask.shape or token_ids.ndim != 2:
            raise ContractError(f"token ids {token_ids.shape} and length mask {length_mask.shape} disagree")
        vis = self.embed_patches(frames, masks)
        lang = self.embed_language(token_ids)
        x = F.concat([vis, lang], axis=1)
        b, k = vis.shape[0], np.asarray(frames).shape[1]
        n_vis = vis.shape[1] // k
        keys = np.concatenate([np.ones((b, vis.shape[1]), dtype=bool), length_mask], axis=1)
        attn_mask = keys[:, None, :]  # (B, 1, S') broadcast over queries
        for block in self.blocks:
            x = block(x, mask=attn_mask)
        if self.norm is not None:
            x = self.norm(x)
        nulls = np.array([is_null_utterance(row, self.vocab) for row in token_ids])
        return EncodedSequence(x, k, n_vis, list(masks) if masks is not None else None, length_mask, nulls)
