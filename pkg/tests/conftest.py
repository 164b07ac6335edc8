"""Shared fixtures. The expensive ones (scene-pretrained encoders, BC runs) are session-scoped
so the adaptation oracles and the acceptance suite train each model once."""

from pathlib import Path

import numpy as np
import pytest

from voltron.autodiff import default_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


# -- session-scoped pretrained encoders ---------------------------------------------------

SCENE_STEPS = 3000


def _pretrain_scene(variant: str, out: Path) -> Path:
    from voltron.config import ModelConfig, RunConfig, TrainConfig
    from voltron.data import Corpus
    from voltron.fixtures import scene_raw
    from voltron.train import train

    cfg = ModelConfig.for_variant(variant, max_len=8, seed=0)
    corpus = Corpus.from_raw(scene_raw(), 8, vocab_size=64)
    run = RunConfig(cfg, TrainConfig(batch_size=8, max_steps=SCENE_STEPS, lr=1e-3, frames_per_clip=5), output=str(out))
    return train(run, corpus).checkpoint_path


@pytest.fixture(scope="session")
def scene_vcond_ckpt(tmp_path_factory):
    return _pretrain_scene("v-cond", tmp_path_factory.mktemp("scene-vcond"))


@pytest.fixture(scope="session")
def scene_nolang_ckpt(tmp_path_factory):
    return _pretrain_scene("nolang", tmp_path_factory.mktemp("scene-nolang"))


@pytest.fixture(scope="session")
def reach_demos():
    from voltron.adaptation import collect_demos

    return collect_demos("reach", 25, seed=0)


@pytest.fixture(scope="session")
def reach_success(scene_vcond_ckpt, reach_demos):
    """success(pool, seed) for the sim-profile reach policy; each pair is trained once."""
    from voltron.adaptation import BcConfig, bc_adapt, rollout
    from voltron.checkpoint import load_model

    model = load_model(scene_vcond_ckpt)
    cache = {}

    def run(pool: str, seed: int) -> float:
        if (pool, seed) not in cache:
            result = bc_adapt(model, reach_demos, BcConfig.for_profile("sim", pool=pool), seed=seed)
            cache[pool, seed] = rollout(model, result, "reach", 50, seed=seed)
        return cache[pool, seed]

    return run


@pytest.fixture(scope="session")
def refer_accuracy(scene_vcond_ckpt, scene_nolang_ckpt):
    """acc@0.25(which, mode) on 1024 train / 256 test refer items."""
    from voltron.adaptation import ReferConfig, extract, refer_adapt
    from voltron.checkpoint import load_model
    from voltron.data import tokenize
    from voltron.fixtures import refer_examples

    paths = {"v-cond": scene_vcond_ckpt, "nolang": scene_nolang_ckpt}
    cache = {}

    def feats(model, n, seed, mode):
        frames, captions, boxes = refer_examples(n, seed=seed)
        toks = [tokenize(c, model.vocab, model.cfg.max_len) for c in captions]
        ids, lm = np.stack([t[0] for t in toks]), np.stack([t[1] for t in toks])
        return extract(model, frames, ids, lm, mode), boxes

    def run(which: str, mode: str) -> float:
        if (which, mode) not in cache:
            model = load_model(paths[which])
            tr, tr_b = feats(model, 1024, 1, mode)
            te, te_b = feats(model, 256, 2, mode)
            cache[which, mode] = refer_adapt(tr, tr_b, te, te_b, model.cfg.d, ReferConfig(), seed=0).metrics["acc@0.25"]
        return cache[which, mode]

    return run


@pytest.fixture(scope="session")
def progress_models():
    """V-Gen models memorising the progress fixture, one per seed."""
    from voltron.config import ModelConfig, RunConfig, TrainConfig
    from voltron.data import Corpus
    from voltron.fixtures import progress_raw
    from voltron.train import train

    cache = {}

    def get(seed: int):
        if seed not in cache:
            cfg = ModelConfig.for_variant("v-gen", max_len=8, seed=seed)
            corpus = Corpus.from_raw(progress_raw(), 8, vocab_size=64)
            run = RunConfig(cfg, TrainConfig(batch_size=8, max_steps=2000, lr=1e-3, frames_per_clip=5))
            cache[seed] = train(run, corpus, write=False).model
        return cache[seed]

    return get
