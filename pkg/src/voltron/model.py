"""Encoder + decoder bundle with the utterance scorer."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .autodiff import Module, Tensor, no_grad
from .autodiff import functional as F
from .config import ModelConfig
from .data import MaskSpec, Vocabulary, null_utterance, tokenize
from .decoder import Decoder, generation_targets
from .encoder import EncodedSequence, Encoder
from .errors import CapabilityError, ContractError
from .rng import stream


class VoltronModel(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, language_table: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        rng = rng if rng is not None else stream(cfg.seed, "init")
        self.encoder = Encoder(cfg, vocab, rng, language_table)
        self.decoder = Decoder(cfg, rng)
        self.label_parameters()

    @property
    def can_generate(self) -> bool:
        return self.cfg.alpha > 0

    def null_batch(self, b: int) -> Tuple[np.ndarray, np.ndarray]:
        ids, mask = null_utterance(self.vocab, self.cfg.max_len)
        return np.tile(ids, (b, 1)), np.tile(mask, (b, 1))

    def encode(self, frames: np.ndarray, masks: Optional[list], token_ids: Optional[np.ndarray] = None,
               length_mask: Optional[np.ndarray] = None) -> EncodedSequence:
        """Encode (B, k, H, W, C) frames; no ids means the <NULL> utterance."""
        frames = np.asarray(frames)
        if token_ids is None:
            token_ids, length_mask = self.null_batch(frames.shape[0])
        return self.encoder(frames, masks, token_ids, length_mask)

    def frames_for(self, frames: np.ndarray) -> np.ndarray:
        """Broadcast (B, k', H, W, C) to this model's k by duplicating a single frame."""
        frames = np.asarray(frames)
        if frames.ndim == 4:
            frames = frames[:, None]
        if frames.shape[1] == self.cfg.k:
            return frames
        if frames.shape[1] == 1 and self.cfg.k == 2:
            return np.repeat(frames, 2, axis=1)
        raise ContractError(f"cannot feed {frames.shape[1]} frames to a k={self.cfg.k} model")

    def token_logprobs(self, frames: np.ndarray, token_ids: np.ndarray, length_mask: np.ndarray,
                       masks: Optional[list] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Per-position log-probabilities of the caption tokens and their weights, (B, L) each."""
        if not self.can_generate:
            raise CapabilityError(f"variant {self.cfg.variant} (alpha=0) has no trained language generator")
        with no_grad():
            enc = self.encode(self.frames_for(frames), masks)
            logits = self.decoder.generate_logits(enc, token_ids)
            logp = F.log_softmax(logits, axis=-1).data
        targets, weights = generation_targets(token_ids, length_mask, self.vocab.pad_id)
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0].astype(np.float64)
        return np.where(weights, picked, 0.0), weights

    def score_utterance(self, frames: np.ndarray, utterance: str,
                        masks: Optional[list] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Log-likelihood of ``utterance`` given each context in ``frames``.

        Returns ``(total, per_token)`` arrays of shape (B,). The sum runs over
        every generated target (caption words plus EOS), so an empty caption
        scores ``log P(EOS | BOS)``.
        """
        frames = self.frames_for(frames)
        ids, mask = tokenize(utterance, self.vocab, self.cfg.max_len)
        b = frames.shape[0]
        ids, mask = np.tile(ids, (b, 1)), np.tile(mask, (b, 1))
        picked, weights = self.token_logprobs(frames, ids, mask, masks)
        total = picked.sum(axis=1)
        return total, total / weights.sum(axis=1)
