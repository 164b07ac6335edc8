"""Invariant suites behind ``voltron verify``.

``fast`` covers shapes, mask non-leakage, prefix causality, pooling and
gates on small random models. ``full`` adds the float64 gradient check over
every parameter of a 2-block V-Gen toy model and the memorisation oracles.
Each check raises :class:`InvariantError` naming what broke.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, default_dtype, grad_check, no_grad
from .config import ModelConfig, RunConfig, TrainConfig
from .data import Corpus, MaskSpec, Vocabulary, make_mask, num_masked, tokenize
from .errors import InvariantError
from .model import VoltronModel

FAULTS = ("causality", "leakage")
GRAD_TOLERANCE = 1e-3


def toy_config(variant: str = "v-gen", **overrides) -> ModelConfig:
    """The 2-block desk model: d=64, p=8, 32x32 frames, L=8, |V|=64."""
    base = dict(d=64, depth=2, heads=2, p=8, height=32, width=32, max_len=8, vocab_size=64,
                d_dec=32, depth_dec=2, heads_dec=4)
    base.update(overrides)
    return ModelConfig.for_variant(variant, **base)


def toy_vocab(size: int = 64) -> Vocabulary:
    return Vocabulary.build(["the red block glows", "the blue ring glows"], size=size)


def _frames(rng, b: int, cfg: ModelConfig) -> np.ndarray:
    return rng.random((b, cfg.k, cfg.height, cfg.width, cfg.channels)).astype(np.float32)


def _caption(model: VoltronModel, text: str, b: int):
    ids, lm = tokenize(text, model.vocab, model.cfg.max_len)
    return np.tile(ids, (b, 1)), np.tile(lm, (b, 1))


# -- individual checks ----------------------------------------------------------------


def check_shape_law(rng: np.random.Generator, n: int = 50) -> str:
    """Encoder output length is (1 - gamma) k |R| visual rows plus L language rows."""
    vocab = toy_vocab()
    tested = 0
    while tested < n:
        p = int(rng.choice([2, 4, 8]))
        gh, gw = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        R = gh * gw
        k = int(rng.integers(1, 3))
        gamma = float(rng.uniform(0.0, 0.95))
        if not 1 <= num_masked(R, gamma) < R:
            continue  # no mask to draw; not a configuration
        tested += 1
        cfg = toy_config("v-dual" if k == 2 else "v-cond", p=p, height=gh * p, width=gw * p, gamma=gamma,
                         depth=1, d=16, heads=2, d_dec=16, d_lang=8)
        model = VoltronModel(cfg, vocab, rng=rng)
        masks = [make_mask(R, gamma, rng)]
        with no_grad():
            enc = model.encode(_frames(rng, 1, cfg), masks)
        expect = k * (R - num_masked(R, gamma)) + cfg.max_len
        if enc.h.shape[1] != expect:
            raise InvariantError(f"shape law: gamma={gamma:.3f} k={k} |R|={R} gave {enc.h.shape[1]} rows, "
                                 f"expected {expect}")
    return f"{n} configurations"


def check_mask_leakage(rng: np.random.Generator, n: int = 20, model: Optional[VoltronModel] = None) -> str:
    """Randomising masked-patch pixels leaves the encoder output bit-identical."""
    model = model or VoltronModel(toy_config(), toy_vocab(), rng=rng)
    cfg = model.cfg
    p = cfg.p
    for i in range(n):
        frames = _frames(rng, 1, cfg)
        mask = make_mask(cfg.num_regions, cfg.gamma, rng)
        other = frames.copy()
        gw = cfg.grid[1]
        for r in mask.masked:
            y, x = (r // gw) * p, (r % gw) * p
            other[:, :, y:y + p, x:x + p] = rng.random((1, cfg.k, p, p, cfg.channels))
        ids, lm = _caption(model, "the red block glows", 1)
        with no_grad():
            a = model.encode(frames, [mask], ids, lm).h.data
            b = model.encode(other, [mask], ids, lm).h.data
        if not np.array_equal(a, b):
            raise InvariantError(f"mask leakage: instance {i} output moved by {np.abs(a - b).max():.3e}")
    return f"{n} instances"


def check_causality(rng: np.random.Generator, max_len: int = 20, model: Optional[VoltronModel] = None) -> str:
    """Perturbing teacher token t changes no logit at positions <= t."""
    model = model or VoltronModel(toy_config(max_len=max_len), toy_vocab(), rng=rng)
    cfg = model.cfg
    L = cfg.max_len
    frames = _frames(rng, 1, cfg)
    mask = make_mask(cfg.num_regions, cfg.gamma, rng)
    teacher = rng.integers(5, cfg.vocab_size, size=(1, L))
    with no_grad():
        enc = model.encode(frames, [mask])
        base = model.decoder.generate_logits(enc, teacher).data
        for t in range(L):
            pert = teacher.copy()
            pert[0, t] = 5 + (pert[0, t] - 5 + 1) % (cfg.vocab_size - 5)
            out = model.decoder.generate_logits(enc, pert).data
            if not np.array_equal(out[:, :t + 1], base[:, :t + 1]):
                raise InvariantError(f"causality: changing teacher token {t} moved logits at positions <= {t}")
    return f"L={L}, every position"


def check_pooling(rng: np.random.Generator, n: int = 10) -> str:
    from .adaptation.features import MapPool, mean_pool

    pool = MapPool(rng, 64, n_seed=1, heads=4)
    for _ in range(n):
        rows = rng.standard_normal((2, int(rng.integers(1, 12)), 64)).astype(np.float32)
        perm = rng.permutation(rows.shape[1])
        with no_grad():
            a = pool(rows).data
            b = pool(rows[:, perm]).data
            if not np.allclose(a, b, rtol=0, atol=1e-6):
                raise InvariantError("pooling: MAP output depends on row order")
            m = mean_pool(rows).data
        if not np.allclose(m, rows.mean(axis=1), atol=1e-6):
            raise InvariantError("pooling: mean pool disagrees with a direct mean")
    return f"{n} row sets"


def check_gates(rng: np.random.Generator, n: int = 100_000) -> str:
    from .objective import sample_gates

    rate = float(sample_gates(0.5, rng, n).mean())
    if not 0.494 <= rate <= 0.506:
        raise InvariantError(f"gates: alpha=0.5 produced rate {rate:.4f} over {n} draws")
    if sample_gates(0.0, rng, 1000).any() or not sample_gates(1.0, rng, 1000).all():
        raise InvariantError("gates: alpha in {0, 1} must be deterministic")
    return f"rate {rate:.4f}"


def check_checkpoint_roundtrip(rng: np.random.Generator) -> str:
    from .checkpoint import Checkpoint, model_from_checkpoint
    from .optim import AdamW

    model = VoltronModel(toy_config(), toy_vocab(), rng=rng)
    ckpt = Checkpoint(model.cfg, model.vocab, model.state_dict(), AdamW().state_arrays())
    clone = model_from_checkpoint(Checkpoint.from_bytes(ckpt.to_bytes()))
    frames = _frames(rng, 2, model.cfg)
    masks = [make_mask(model.cfg.num_regions, model.cfg.gamma, rng) for _ in range(2)]
    with no_grad():
        a = model.encode(frames, masks).h.data
        b = clone.encode(frames, masks).h.data
    if not np.array_equal(a, b):
        raise InvariantError("checkpoint: reloaded model's forward pass differs")
    return "bit-exact"


def gradient_report(seed: int = 0, coords: Optional[int] = 8) -> Tuple[float, Dict[str, float]]:
    """Float64 central differences over every trainable parameter of the toy V-Gen model.

    Richardson-extrapolated at a 1e-3 step: some bias gradients here are
    around 1e-9, below the roundoff floor of a plain 1e-5 central difference.

    The batch holds one z=0 and one z=1 example so both decoder paths and
    the conditioned encoder path carry gradient.
    """
    from .objective import Batch, compute_loss

    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        model = VoltronModel(toy_config(), toy_vocab(), rng=rng)
        cfg = model.cfg
        frames = rng.random((2, cfg.k, cfg.height, cfg.width, cfg.channels))
        ids, lm = _caption(model, "the red block glows", 2)
        masks = [make_mask(cfg.num_regions, cfg.gamma, rng) for _ in range(2)]
        batch = Batch(frames, masks, ids, lm, np.zeros(2, dtype=np.int64))
        z = np.array([0, 1])
        report = grad_check(lambda: compute_loss(batch, model, z).loss, model.trainable(), eps=1e-3,
                            coords=coords, rng=rng, report=True, richardson=True)
    return report.max_error, report.per_param


def check_gradients(rng: np.random.Generator) -> str:
    worst, per_param = gradient_report(int(rng.integers(1 << 31)))
    if worst > GRAD_TOLERANCE:
        name = max(per_param, key=per_param.get)
        raise InvariantError(f"gradients: relative error {worst:.2e} in {name} exceeds {GRAD_TOLERANCE}")
    return f"{len(per_param)} parameters, max relative error {worst:.2e}"


def memorisation(variant: str, steps: int, seed: int = 0) -> dict:
    """Overfit the 8-clip toy corpus and report memorisation metrics."""
    from .fixtures import toy_raw
    from .train import evaluate, train

    cfg = toy_config(variant, seed=seed)
    corpus = Corpus.from_raw(toy_raw(), cfg.max_len, vocab_size=cfg.vocab_size)
    run = RunConfig(cfg, TrainConfig(batch_size=8, max_steps=steps, lr=1e-3, frames_per_clip=5))
    result = train(run, corpus, write=False)
    out = evaluate(result.model, corpus, seed=seed)
    out["train_mse"] = result.tail_mean("mse")
    return out


def check_memorisation_vcond(rng: np.random.Generator) -> str:
    m = memorisation("v-cond", 2000)
    if m["mse"] > 0.05:
        raise InvariantError(f"memorisation: V-Cond masked-patch MSE {m['mse']:.4f} > 0.05 after 2000 steps")
    return f"mse {m['mse']:.4f}"


def check_memorisation_vgen(rng: np.random.Generator) -> str:
    m = memorisation("v-gen", 4000)
    if m["mse"] > 0.05 or m["nll"] > 0.1:
        raise InvariantError(f"memorisation: V-Gen mse {m['mse']:.4f}, per-token NLL {m['nll']:.4f} "
                             f"(limits 0.05, 0.1) after 4000 steps")
    return f"mse {m['mse']:.4f}, nll {m['nll']:.4f}"


FAST: List[Tuple[str, Callable[[np.random.Generator], str]]] = [
    ("shape-law", check_shape_law),
    ("mask-leakage", check_mask_leakage),
    ("causality", check_causality),
    ("pooling", check_pooling),
    ("gates", check_gates),
    ("checkpoint", check_checkpoint_roundtrip),
]
FULL = FAST + [
    ("gradients", check_gradients),
    ("memorisation-v-cond", check_memorisation_vcond),
    ("memorisation-v-gen", check_memorisation_vgen),
]


@contextlib.contextmanager
def injected(fault: Optional[str]) -> Iterator[None]:
    """Test hook: deliberately break one invariant so the suite can be seen to catch it."""
    if fault is None:
        yield
        return
    from . import decoder, encoder

    if fault == "causality":
        original = decoder.build_prefix_mask
        decoder.build_prefix_mask = lambda P, L: np.ones((P + L, P + L), dtype=bool)
        try:
            yield
        finally:
            decoder.build_prefix_mask = original
    elif fault == "leakage":
        original = encoder.Encoder.embed_patches

        def leaky(self, frames, masks):
            x = original(self, frames, masks)
            return x + float(np.asarray(frames).sum()) * 1e-3

        encoder.Encoder.embed_patches = leaky
        try:
            yield
        finally:
            encoder.Encoder.embed_patches = original
    else:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")


@dataclass
class CheckResult:
    name: str
    ok: bool
    seconds: float
    detail: str


def run_checks(level: str = "fast", seed: int = 0, fault: Optional[str] = None,
               only: Optional[Sequence[str]] = None) -> List[CheckResult]:
    if level not in ("fast", "full"):
        raise ValueError(f"verify level must be 'fast' or 'full', got {level!r}")
    results = []
    with injected(fault):
        for i, (name, fn) in enumerate(FULL if level == "full" else FAST):
            if only is not None and name not in only:
                continue
            start = time.perf_counter()
            try:
                detail, ok = fn(np.random.default_rng([seed, i])), True
            except InvariantError as exc:
                detail, ok = str(exc), False
            results.append(CheckResult(name, ok, time.perf_counter() - start, detail))
    return results
