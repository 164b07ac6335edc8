"""Shared decoder hosting masked-patch reconstruction and prefix-causal caption generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Linear, Module, Tensor, parameter, trunc_normal
from .autodiff import functional as F
from .config import ModelConfig
from .data import BOS_ID, MaskSpec, normalize_targets, patchify
from .encoder import EncodedSequence
from .errors import ContractError
from .nn import Block, RMSNorm, sinusoid_1d, sinusoid_2d


def build_prefix_mask(num_patch_rows: int, max_len: int) -> np.ndarray:
    """(P + L, P + L) boolean mask.

    Every row sees all patch rows; language row t additionally sees language
    rows 0..t. Patch rows never see language rows.
    """
    if num_patch_rows < 1 or max_len < 1:
        raise ContractError("prefix mask needs at least one patch row and one language row")
    n = num_patch_rows + max_len
    mask = np.zeros((n, n), dtype=bool)
    mask[:, :num_patch_rows] = True
    mask[num_patch_rows:, num_patch_rows:] = np.tril(np.ones((max_len, max_len), dtype=bool))
    return mask


def shift_right(teacher: np.ndarray, bos_id: int) -> np.ndarray:
    """Decoder inputs: position 0 gets BOS, position t gets teacher token t-1."""
    teacher = np.asarray(teacher, dtype=np.int64)
    out = np.empty_like(teacher)
    out[:, 0] = bos_id
    out[:, 1:] = teacher[:, :-1]
    return out


def generation_targets(token_ids: np.ndarray, length_mask: np.ndarray, pad_id: int):
    """Targets for the generator from BOS-framed ids: drop BOS, pad the tail back to L."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    length_mask = np.asarray(length_mask, dtype=bool)
    b, L = token_ids.shape
    targets = np.full((b, L), pad_id, dtype=np.int64)
    targets[:, :-1] = token_ids[:, 1:]
    weights = np.zeros((b, L), dtype=bool)
    weights[:, :-1] = length_mask[:, 1:]
    return targets, weights


@dataclass
class DecoderOutput:
    pixels: Optional[Tensor]  # (B, k * masked, p*p*C); None for unmasked input
    logits: Optional[Tensor]  # (B, L, |V|)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        dd = cfg.d_dec
        self.enc_to_dec = Linear(rng, cfg.d, dd)
        self.mask_token = parameter(trunc_normal(rng, dd))
        self.mod_img = parameter(trunc_normal(rng, dd))
        self.mod_lang = parameter(trunc_normal(rng, dd))
        self.frame_emb = parameter(trunc_normal(rng, (2, dd)))
        self.token_table = parameter(trunc_normal(rng, (cfg.vocab_size, dd)))
        self.blocks = [Block(rng, dd, cfg.heads_dec, cfg.mlp_ratio) for _ in range(cfg.depth_dec)]
        self.norm = RMSNorm(dd)
        self.pixel_head = Linear(rng, dd, cfg.patch_dim)
        self.lang_head = Linear(rng, dd, cfg.vocab_size)

    def _patch_rows(self, enc: EncodedSequence) -> Tensor:
        """Visible rows scattered back onto the grid with MASK rows in the gaps: (B, k*|R|, d_dec)."""
        cfg = self.cfg
        R, dd, k = cfg.num_regions, cfg.d_dec, enc.k
        b = enc.h.shape[0]
        vis = self.enc_to_dec(enc.visual)  # (B, k*n_vis, dd)
        n_vis = enc.visible_per_frame
        vis = F.reshape(vis, (b, k, n_vis, dd))
        if enc.masks is None:
            grid = vis
        else:
            n_mask = R - n_vis
            fill = F.broadcast_to(F.reshape(self.mask_token, (1, 1, 1, dd)), (b, k, n_mask, dd))
            stacked = F.concat([vis, fill], axis=2)  # (B, k, R, dd) in visible-then-masked order
            order = np.stack([np.concatenate([m.visible, m.masked]) for m in enc.masks])
            restore = np.argsort(order, axis=1, kind="stable")  # (B, R)
            grid = F.gather(stacked, np.broadcast_to(restore[:, None, :, None], (b, k, R, dd)), axis=2)
        grid = grid + sinusoid_2d(*cfg.grid, dd)
        grid = grid + F.reshape(self.frame_emb[:k], (1, k, 1, dd))
        grid = grid + self.mod_img
        return F.reshape(grid, (b, k * R, dd))

    def _language_rows(self, teacher: np.ndarray) -> Tensor:
        inputs = shift_right(teacher, BOS_ID)
        x = F.embedding(self.token_table, inputs)
        x = x + sinusoid_1d(inputs.shape[1], self.cfg.d_dec)
        return x + self.mod_lang

    def __call__(self, enc: EncodedSequence, teacher: Optional[np.ndarray] = None) -> DecoderOutput:
        """Run the shared stack; language rows are appended only when ``teacher`` is given."""
        cfg = self.cfg
        patch_rows = self._patch_rows(enc)
        P = patch_rows.shape[1]
        if teacher is not None:
            teacher = np.asarray(teacher, dtype=np.int64)
            x = F.concat([patch_rows, self._language_rows(teacher)], axis=1)
            mask = build_prefix_mask(P, teacher.shape[1])
        else:
            x = patch_rows
            mask = None
        for block in self.blocks:
            x = block(x, mask=mask)
        x = self.norm(x)

        pixels = None
        if enc.masks is not None:
            b, k, R = x.shape[0], enc.k, cfg.num_regions
            masked = np.stack([m.masked for m in enc.masks])  # (B, n_mask)
            rows = (np.arange(k)[None, :, None] * R + masked[:, None, :]).reshape(b, -1)  # frame-major
            picked = F.gather(x, np.broadcast_to(rows[:, :, None], (b, rows.shape[1], cfg.d_dec)), axis=1)
            pixels = self.pixel_head(picked)
        logits = self.lang_head(x[:, P:]) if teacher is not None else None
        return DecoderOutput(pixels, logits)

    def reconstruct(self, enc: EncodedSequence) -> Tensor:
        if enc.masks is None:
            raise ContractError("reconstruction needs the MaskSpecs the encoder consumed")
        return self(enc).pixels

    def generate_logits(self, enc: EncodedSequence, teacher: np.ndarray) -> Tensor:
        """Logits (B, L, |V|); logits[:, t] predict teacher[:, t] and see only teacher[:, :t]."""
        if not np.all(enc.null_utterance):
            raise ContractError("generator input must be encoded with the <NULL> utterance, never the caption")
        return self(enc, teacher).logits


def masked_targets(frames: np.ndarray, masks: Sequence[MaskSpec], p: int) -> np.ndarray:
    """Normalised pixel targets of the masked regions, frame-major: (B, k * masked, p*p*C)."""
    patches = normalize_targets(patchify(np.asarray(frames, dtype=np.float64), p))  # (B, k, R, pd)
    masked = np.stack([m.masked for m in masks])
    out = np.take_along_axis(patches, masked[:, None, :, None], axis=2)
    b = out.shape[0]
    return out.reshape(b, -1, out.shape[-1])
