"""Zero-shot intent scoring: per-frame caption likelihood under the language generator."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..errors import CapabilityError, DataError


def intent_curve(model, frames: np.ndarray, utterance: str, stride: int = 1) -> List[Tuple[int, float]]:
    """(frame index, per-token log-likelihood) for every ``stride``-th frame.

    Two-frame models pair each sampled frame with the clip's first frame.
    """
    if not model.can_generate:
        raise CapabilityError(f"variant {model.cfg.variant} cannot score utterances (alpha=0)")
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise DataError(f"expected (T, H, W, C) frames, got {frames.shape}")
    if stride < 1:
        raise DataError("stride must be >= 1")
    idx = np.arange(0, frames.shape[0], stride)
    if model.cfg.k == 2:
        ctx = np.stack([np.stack([frames[0], frames[t]]) for t in idx])
    else:
        ctx = frames[idx][:, None]
    _, per_token = model.score_utterance(ctx, utterance)
    return [(int(t), float(s)) for t, s in zip(idx, per_token)]
