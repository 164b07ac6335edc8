"""The alpha-gated objective: conditioned reconstruction, or <NULL> reconstruction plus caption generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .autodiff import functional as F
from .config import ModelConfig
from .data import Corpus, MaskSpec, context_from_indices, make_mask
from .decoder import generation_targets, masked_targets
from .errors import ConfigError, ContractError


def sample_gate(alpha: float, rng: np.random.Generator) -> int:
    """One Bernoulli(alpha) draw."""
    return int(sample_gates(alpha, rng, 1)[0])


def sample_gates(alpha: float, rng: np.random.Generator, n: int) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    # always consume n uniforms so the stream position does not depend on alpha
    return (rng.random(n) < alpha).astype(np.int64)


@dataclass
class Batch:
    frames: np.ndarray  # (B, k, H, W, C) float32
    masks: List[MaskSpec]
    token_ids: np.ndarray  # (B, L)
    length_mask: np.ndarray  # (B, L)
    clip_ids: np.ndarray  # (B,)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def subset(self, idx: np.ndarray) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.frames[idx], [self.masks[i] for i in idx], self.token_ids[idx],
                     self.length_mask[idx], self.clip_ids[idx])


def make_batch(corpus: Corpus, entries: Sequence[Tuple[int, Tuple[int, ...]]], cfg: ModelConfig,
               rng: np.random.Generator) -> Batch:
    """Assemble contexts for ``entries`` and draw one mask per example (shared across its frames)."""
    contexts = [context_from_indices(corpus.clips[cid], idx) for cid, idx in entries]
    masks = [make_mask(cfg.num_regions, cfg.gamma, rng) for _ in contexts]
    return Batch(
        np.stack([c.frames for c in contexts]).astype(np.float32),
        masks,
        np.stack([c.token_ids for c in contexts]),
        np.stack([c.length_mask for c in contexts]),
        np.asarray([cid for cid, _ in entries], dtype=np.int64),
    )


def case_losses(batch: Batch, model, generate: bool) -> Tuple[Tensor, Optional[Tensor]]:
    """Per-example losses when every example takes the same gate value.

    ``generate=False``: MSE of reconstruction conditioned on the caption (the
    <NULL> utterance for the no-language variant). ``generate=True``: MSE of
    reconstruction conditioned on <NULL>, plus per-example mean NLL of the
    caption. Returns ``(mse (B,), nll (B,) or None)``.
    """
    cfg = model.cfg
    b = len(batch)
    if generate or not cfg.uses_language:
        ids, lm = model.null_batch(b)
    else:
        ids, lm = batch.token_ids, batch.length_mask
    enc = model.encode(batch.frames, batch.masks, ids, lm)
    if generate:
        if not np.all(enc.null_utterance):
            raise ContractError("generation must be conditioned on the <NULL> utterance")
        out = model.decoder(enc, batch.token_ids)
    else:
        out = model.decoder(enc)
    target = masked_targets(batch.frames, batch.masks, cfg.p).astype(out.pixels.dtype)
    diff = out.pixels - Tensor(target)
    mse = F.mean(diff * diff, axis=(1, 2))
    nll = None
    if generate:
        targets, weights = generation_targets(batch.token_ids, batch.length_mask, model.vocab.pad_id)
        logp = F.log_softmax(out.logits, axis=-1)
        picked = F.gather(logp, targets[..., None], axis=-1)[..., 0]
        w = weights.astype(picked.dtype)
        nll = -F.sum(picked * w, axis=1) * (1.0 / w.sum(axis=1))
    return mse, nll


@dataclass
class LossResult:
    loss: Tensor
    mse: float  # mean per-example reconstruction MSE over the whole batch
    nll: float  # mean per-example NLL over z=1 examples; nan when there are none
    gate_rate: float
    per_example: np.ndarray  # (B,) each example's loss contribution


def compute_loss(batch: Batch, model, z: np.ndarray) -> LossResult:
    """Mean over examples of the gated per-example loss; z=1 needs a generating variant."""
    cfg = model.cfg
    z = np.asarray(z, dtype=np.int64).reshape(-1)
    b = len(batch)
    if z.shape[0] != b:
        raise ContractError(f"{z.shape[0]} gates for a batch of {b}")
    if np.any(z == 1) and cfg.alpha == 0:
        raise ContractError(f"variant {cfg.variant} never generates; z=1 is illegal")
    terms: List[Tensor] = []
    per_example = np.zeros(b)
    mse_sum, nll_vals = 0.0, []
    for gen in (False, True):
        idx = np.flatnonzero(z == int(gen))
        if idx.size == 0:
            continue
        mse, nll = case_losses(batch.subset(idx), model, gen)
        case = mse if nll is None else mse + nll * cfg.gen_weight
        terms.append(F.sum(case))
        per_example[idx] = case.data
        mse_sum += float(np.sum(mse.data, dtype=np.float64))
        if nll is not None:
            nll_vals.append(nll.data.astype(np.float64))
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    loss = total * (1.0 / b)
    nll_mean = float(np.concatenate(nll_vals).mean()) if nll_vals else float("nan")
    return LossResult(loss, mse_sum / b, nll_mean, float(z.mean()), per_example)
