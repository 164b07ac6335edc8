"""Pretraining loop: epoch indices, per-example gates, AdamW, metrics stream, checkpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .checkpoint import Checkpoint
from .config import RunConfig, run_config_text
from .data import Corpus, build_epoch_index
from .errors import ConfigError
from .model import VoltronModel
from .objective import LossResult, compute_loss, make_batch, sample_gates
from .optim import AdamW, clip_grad_norm, lr_schedule
from .rng import stream

METRIC_KEYS = ("step", "epoch", "loss", "mse", "nll", "lr", "gate_rate")


def metrics_header(run: RunConfig) -> str:
    return "".join(f"# {line}\n" if line else "#\n" for line in run_config_text(run).splitlines())


def metrics_line(values: dict) -> str:
    parts = []
    for key in METRIC_KEYS:
        v = values[key]
        parts.append(f"{key}={v!r}" if isinstance(v, float) else f"{key}={v}")
    return " ".join(parts)


def parse_metrics(text: str) -> List[dict]:
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        row = {}
        for item in line.split():
            key, _, val = item.partition("=")
            row[key] = int(val) if key in ("step", "epoch") else float(val)
        rows.append(row)
    return rows


def header_config(text: str) -> str:
    """Recover the echoed config INI from a metrics file header."""
    lines = []
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        lines.append(line[2:] if line.startswith("# ") else "")
    return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    model: VoltronModel
    optimizer: AdamW
    records: List[dict] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None

    def tail_mean(self, key: str, frac: float = 0.1) -> float:
        vals = np.array([r[key] for r in self.records], dtype=np.float64)
        n = max(1, int(math.ceil(frac * len(vals))))
        tail = vals[-n:]
        tail = tail[np.isfinite(tail)]
        return float(tail.mean()) if tail.size else float("nan")


def steps_per_epoch(run: RunConfig, corpus: Corpus) -> int:
    return int(math.ceil(len(corpus) * run.train.frames_per_clip / run.train.batch_size))


def total_steps(run: RunConfig, corpus: Corpus) -> int:
    return run.train.max_steps if run.train.max_steps > 0 else run.train.epochs * steps_per_epoch(run, corpus)


def make_checkpoint(model: VoltronModel, opt: AdamW, step: int, epoch: int, batch_in_epoch: int) -> Checkpoint:
    # data/gate streams are pure functions of (seed, epoch); the position inside the epoch pins them down
    return Checkpoint(
        model.cfg, model.vocab,
        {n: p.data for n, p in model.named_parameters()},
        opt.state_arrays(),
        {"step": step, "epoch": epoch, "optimizer_steps": opt.step_count},
        {"seed": model.cfg.seed, "streams": ["data", "gate"], "epoch": epoch, "batch_in_epoch": batch_in_epoch},
        {"variant": model.cfg.variant},
    )


def train(run: RunConfig, corpus: Corpus, language_table: Optional[np.ndarray] = None,
          write: bool = True, on_step: Optional[Callable[[int, LossResult], None]] = None) -> TrainResult:
    """Run the objective for ``total_steps`` steps.

    Everything random is a pure function of ``run.model.seed``: the epoch
    index and masks come from the ``data`` stream of each epoch, the gates
    from the ``gate`` stream, and initialisation from ``init``. With
    ``write`` the metrics stream and checkpoints go under ``run.output``.
    """
    cfg, tc = run.model, run.train
    cfg.validate()
    if len(corpus.vocab) != cfg.vocab_size:
        raise ConfigError(f"corpus vocabulary has {len(corpus.vocab)} entries, model expects {cfg.vocab_size}")
    if corpus.frame_shape != (cfg.height, cfg.width, cfg.channels):
        raise ConfigError(f"corpus frames {corpus.frame_shape} != config ({cfg.height}, {cfg.width}, "
                          f"{cfg.channels})")
    if corpus.max_len != cfg.max_len:
        raise ConfigError(f"corpus captions padded to {corpus.max_len}, model expects {cfg.max_len}")
    if tc.batch_size < 1:
        raise ConfigError("batch_size must be >= 1")

    model = VoltronModel(cfg, corpus.vocab, language_table)
    opt = AdamW(tc.beta1, tc.beta2, 1e-8, tc.weight_decay)
    params = model.trainable()
    total = total_steps(run, corpus)
    warmup = int(round(tc.warmup_frac * total))
    peak = tc.peak_lr

    out_dir = Path(run.output)
    metrics_fh = None
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        run.metrics_path.parent.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(run.metrics_path, "w", encoding="utf-8")
        metrics_fh.write(metrics_header(run))

    result = TrainResult(model, opt)
    step, epoch = 0, 0
    try:
        while step < total:
            index = build_epoch_index(corpus, tc.frames_per_clip, cfg.seed, cfg.k, epoch)
            data_rng = stream(cfg.seed, "data", epoch, 1)
            gate_rng = stream(cfg.seed, "gate", epoch)
            for b_idx, start in enumerate(range(0, len(index), tc.batch_size)):
                if step >= total:
                    break
                batch = make_batch(corpus, index.entries[start:start + tc.batch_size], cfg, data_rng)
                z = sample_gates(cfg.alpha, gate_rng, len(batch))
                lr = lr_schedule(step, warmup, total, peak)
                model.zero_grad()
                res = compute_loss(batch, model, z)
                res.loss.backward()
                clip_grad_norm(params, tc.clip_norm)
                opt.step(params, lr)
                record = {"step": step, "epoch": epoch, "loss": float(res.loss.item()), "mse": res.mse,
                          "nll": res.nll, "lr": float(lr), "gate_rate": res.gate_rate}
                result.records.append(record)
                if metrics_fh is not None:
                    metrics_fh.write(metrics_line(record) + "\n")
                if on_step is not None:
                    on_step(step, res)
                step += 1
                if write and tc.checkpoint_every and step % tc.checkpoint_every == 0 and step < total:
                    ckpt = make_checkpoint(model, opt, step, epoch, b_idx + 1)
                    ckpt.save(out_dir / f"step-{step:06d}.vckp")
            epoch += 1
        if write:
            ckpt = make_checkpoint(model, opt, step, epoch, 0)
            result.checkpoint_path = ckpt.save(out_dir / "final.vckp")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return result


def evaluate(model: VoltronModel, corpus: Corpus, seed: int = 0, masks_per_clip: int = 20) -> dict:
    """Memorisation metrics under the training mask distribution.

    Every clip is paired with ``masks_per_clip`` masks from a dedicated
    stream; frames are the first and last of the clip for k=2 and the first
    for k=1. Reports mean masked-patch MSE with caption conditioning (the
    <NULL> utterance for no-language models) and, for generating models,
    mean per-token caption NLL conditioned on <NULL>.
    """
    from .autodiff import no_grad
    from .data import make_mask
    from .objective import Batch, case_losses

    cfg = model.cfg
    rng = stream(seed, "data", 1 << 20)
    mses, nlls = [], []
    for cid, clip in enumerate(corpus.clips):
        idx = [0] if cfg.k == 1 else [0, clip.num_frames - 1]
        n = masks_per_clip
        batch = Batch(np.repeat(clip.frames[idx][None], n, axis=0),
                      [make_mask(cfg.num_regions, cfg.gamma, rng) for _ in range(n)],
                      np.tile(clip.token_ids, (n, 1)), np.tile(clip.length_mask, (n, 1)),
                      np.full(n, cid, dtype=np.int64))
        with no_grad():
            mse, _ = case_losses(batch, model, generate=False)
            mses.append(float(mse.data.astype(np.float64).mean()))
            if model.can_generate:
                _, nll = case_losses(batch, model, generate=True)
                nlls.append(float(nll.data.astype(np.float64).mean()))
    out = {"mse": float(np.mean(mses))}
    if nlls:
        out["nll"] = float(np.mean(nlls))
        out["nll_max"] = float(np.max(nlls))
    return out
