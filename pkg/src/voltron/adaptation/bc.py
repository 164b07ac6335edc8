"""Behaviour cloning from frozen features: pool (+ language) + proprio -> BatchNorm -> 2-layer MLP."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..autodiff import Linear, Module, Tensor, no_grad
from ..autodiff import functional as F
from ..data import tokenize
from ..errors import ConfigError
from ..rng import stream
from .common import BatchNorm1d, epochs_to_steps, fit
from .demos import Demo, check_demos
from .envs import make_env
from .features import Features, MapPool, extract, mean_pool

PROFILES = {
    # simulated control: width 256, 20k steps at batch 32; real-robot style: width 64, 10 epochs at batch 256
    "sim": {"width": 256, "batch_size": 32, "steps": 20000, "epochs": 0},
    "real": {"width": 64, "batch_size": 256, "steps": 0, "epochs": 10},
}
NULL_UTTERANCE = None


@dataclass
class BcConfig:
    profile: str = "sim"
    width: int = 256
    batch_size: int = 32
    steps: int = 20000
    epochs: int = 0  # used when steps == 0
    lr: float = 1e-3
    weight_decay: float = 0.01
    pool: str = "map"  # map | mean
    mode: str = "visual"  # see features.LANGUAGE_MODES
    heads: int = 4

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "BcConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown BC profile {profile!r}; choose from {sorted(PROFILES)}")
        return replace(cls(profile=profile, **PROFILES[profile]), **overrides)


class BcHead(Module):
    def __init__(self, rng: np.random.Generator, d: int, proprio_dim: int, action_dim: int, d_lang: int = 0,
                 width: int = 256, pool: str = "map", heads: int = 4):
        if pool not in ("map", "mean"):
            raise ConfigError(f"unknown pooling {pool!r}")
        self.pool_kind = pool
        self.pool = MapPool(rng, d, n_seed=1, heads=heads) if pool == "map" else None
        d_in = d + d_lang + proprio_dim
        self.norm = BatchNorm1d(d_in)
        self.fc1 = Linear(rng, d_in, width)
        self.fc2 = Linear(rng, width, action_dim)

    def train_mode(self, training: bool) -> None:
        self.norm.training = training

    def __call__(self, rows, key_mask, proprio: np.ndarray, lang: Optional[np.ndarray] = None) -> Tensor:
        if self.pool is not None:
            x = self.pool(rows, key_mask)[:, 0]
        else:
            x = mean_pool(Tensor(rows, dtype=self.fc1.weight.dtype), key_mask)
        parts = [x]
        if lang is not None:
            parts.append(Tensor(lang, dtype=x.dtype))
        parts.append(Tensor(proprio, dtype=x.dtype))
        x = self.norm(F.concat(parts, axis=1))
        return self.fc2(F.relu(self.fc1(x)))


@dataclass
class BcResult:
    head: BcHead
    config: BcConfig
    metrics: Dict[str, float]
    losses: List[float] = field(default_factory=list)


def _utterance_batch(model, utterances: Sequence[Optional[str]]):
    ids, masks = [], []
    null_ids, null_mask = model.null_batch(1)
    for u in utterances:
        if u is NULL_UTTERANCE:
            ids.append(null_ids[0])
            masks.append(null_mask[0])
        else:
            i, m = tokenize(u, model.vocab, model.cfg.max_len)
            ids.append(i)
            masks.append(m)
    return np.stack(ids), np.stack(masks)


def demo_features(model, demos: Sequence[Demo], mode: str) -> Features:
    frames = np.concatenate([d.frames for d in demos])
    utts = [d.utterance for d in demos for _ in range(len(d))]
    ids, lm = _utterance_batch(model, utts)
    return extract(model, frames, ids, lm, mode)


def bc_adapt(model, demos: Sequence[Demo], cfg: Optional[BcConfig] = None, seed: int = 0,
             feats: Optional[Features] = None) -> BcResult:
    cfg = cfg or BcConfig()
    check_demos(demos)
    feats = feats if feats is not None else demo_features(model, demos, cfg.mode)
    proprio = np.concatenate([d.proprio for d in demos]).astype(np.float32)
    actions = np.concatenate([d.actions for d in demos]).astype(np.float32)
    rng = stream(seed, "adapt", 3)
    d_lang = 0 if feats.lang is None else feats.lang.shape[1]
    head = BcHead(rng, model.cfg.d, proprio.shape[1], actions.shape[1], d_lang, cfg.width, cfg.pool, cfg.heads)
    n = len(feats)
    steps = cfg.steps if cfg.steps > 0 else epochs_to_steps(cfg.epochs, n, cfg.batch_size)

    def loss(idx):
        pred = head(feats.rows[idx], feats.key_mask[idx], proprio[idx], None if feats.lang is None else feats.lang[idx])
        return F.mse(pred, Tensor(actions[idx], dtype=pred.dtype))

    head.train_mode(True)
    losses = fit(head, n, steps, cfg.batch_size, loss, rng, cfg.lr, cfg.weight_decay)
    head.train_mode(False)
    with no_grad():
        pred = head(feats.rows, feats.key_mask, proprio, feats.lang).data
    metrics = {"train_mse": float(np.mean((pred.astype(np.float64) - actions) ** 2)),
               "frame_duplication": float(feats.duplicated)}
    return BcResult(head, cfg, metrics, losses)


def rollout(model, result: BcResult, env_name: str, episodes: int = 50, seed: int = 0,
            utterance: object = "instruction") -> float:
    """Success rate of the policy over ``episodes`` episodes run in lockstep.

    ``utterance``: ``"instruction"`` feeds each episode's own instruction;
    ``None`` feeds the <NULL> utterance; any other string is fed verbatim.
    """
    envs = [make_env(env_name) for _ in range(episodes)]
    for i, env in enumerate(envs):
        env.reset(stream(seed, "rollout", 1, i))
    head, mode = result.head, result.config.mode
    head.train_mode(False)
    utts = [e.instruction if utterance == "instruction" else utterance for e in envs]
    ids, lm = _utterance_batch(model, utts)
    while not envs[0].done:
        frames = np.stack([e.render() for e in envs])
        feats = extract(model, frames, ids, lm, mode)
        proprio = np.stack([e.proprio() for e in envs])
        with no_grad():
            actions = head(feats.rows, feats.key_mask, proprio, feats.lang).data.astype(np.float64)
        for env, a in zip(envs, actions):
            env.step(a)
    return float(np.mean([e.success() for e in envs]))
