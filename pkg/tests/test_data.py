import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from voltron.data import (
    BOS_ID,
    EOS_ID,
    NULL_ID,
    PAD_ID,
    UNK_ID,
    Corpus,
    EpochIndex,
    Vocabulary,
    build_epoch_index,
    detokenize,
    is_null_utterance,
    load_corpus,
    make_mask,
    normalize_targets,
    null_utterance,
    num_masked,
    num_regions,
    patchify,
    sample_frame_context,
    sample_frame_indices,
    save_corpus,
    tokenize,
    unpatchify,
)
from voltron.errors import ConfigError, DataError, VocabularyError
from voltron.fixtures import toy_raw
from voltron.rng import stream

VOCAB = Vocabulary.build(["the red block glows", "a blue ring"], size=32)


# -- tokenization --------------------------------------------------------------------

def test_specials_have_fixed_ids():
    assert VOCAB.tokens[:5] == ["<PAD>", "<NULL>", "<BOS>", "<EOS>", "<UNK>"]
    assert (PAD_ID, NULL_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3, 4)


def test_empty_caption():
    ids, mask = tokenize("", VOCAB, 6)
    assert ids.tolist() == [BOS_ID, EOS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
    assert mask.tolist() == [True, True, False, False, False, False]


def test_caption_round_trip():
    ids, mask = tokenize("The Red block", VOCAB, 8)
    assert detokenize(ids, VOCAB) == "the red block"
    assert mask.sum() == 5


def test_unknown_word_maps_to_unk():
    ids, _ = tokenize("purple", VOCAB, 5)
    assert ids[1] == UNK_ID


def test_long_caption_is_truncated_to_eos():
    ids, mask = tokenize(" ".join(["red"] * 30), VOCAB, 20)
    assert len(ids) == 20 and ids[-1] == EOS_ID and mask.all()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["the", "red", "block", "glows", "zzz"]), max_size=30), st.integers(3, 24))
def test_tokenize_layout(words, max_len):
    ids, mask = tokenize(" ".join(words), VOCAB, max_len)
    n = int(mask.sum())
    assert ids.shape == mask.shape == (max_len,)
    assert ids[0] == BOS_ID and ids[n - 1] == EOS_ID
    assert np.all(ids[n:] == PAD_ID) and not mask[n:].any() and mask[:n].all()
    assert n == min(len(words), max_len - 2) + 2


def test_null_utterance_is_distinct_from_padding():
    ids, mask = null_utterance(VOCAB, 5)
    assert ids.tolist() == [NULL_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
    assert mask.tolist() == [True, False, False, False, False]
    assert is_null_utterance(ids, VOCAB)
    assert not is_null_utterance(tokenize("", VOCAB, 5)[0], VOCAB)


def test_vocabulary_contract():
    with pytest.raises(VocabularyError):
        Vocabulary(["a", "b"])
    with pytest.raises(ConfigError):
        Vocabulary.build(["many different words here"], size=6)
    with pytest.raises(VocabularyError):
        VOCAB.token(99)
    with pytest.raises(ConfigError):
        tokenize("x", VOCAB, 2)


# -- frame contexts ------------------------------------------------------------------

def test_single_frame_index_is_uniform():
    rng = np.random.default_rng(0)
    draws = np.array([sample_frame_indices(5, 1, rng)[0] for _ in range(100_000)])
    counts = np.bincount(draws, minlength=5)
    chi2 = float(((counts - 20_000) ** 2 / 20_000).sum())
    # chi-square with 4 degrees of freedom: the p = 0.01 critical value is 13.28
    assert chi2 < 13.28


def test_two_frame_clip_forces_pair():
    rng = np.random.default_rng(0)
    assert {sample_frame_indices(2, 2, rng) for _ in range(50)} == {(0, 1)}


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(0, 1000))
def test_dual_frames_are_ordered_and_split(t, seed):
    rng = np.random.default_rng(seed)
    i, j = sample_frame_indices(t, 2, rng)
    assert 0 <= i < j < t
    assert i < int(np.ceil(0.2 * t)) or t <= 5


def test_frame_context_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        sample_frame_indices(5, 3, rng)
    with pytest.raises(DataError):
        sample_frame_indices(1, 2, rng)


def test_frame_context_carries_caption():
    raw = toy_raw()
    clip = Corpus.from_raw(raw, 8, vocab_size=64).clips[0]
    ctx = sample_frame_context(clip, 2, np.random.default_rng(0))
    assert ctx.k == 2 and ctx.frames.shape == (2, 32, 32, 3)
    assert ctx.token_ids is clip.token_ids


# -- masking -----------------------------------------------------------------------

def test_mask_counts():
    rng = np.random.default_rng(0)
    m = make_mask(4, 0.5, rng)
    assert len(m.visible) == 2 and len(m.masked) == 2
    m = make_mask(196, 0.75, rng)
    assert len(m.visible) == 49 and len(m.masked) == 147


def test_mask_frequency_is_uniform():
    rng = np.random.default_rng(0)
    freq = np.mean([~make_mask(8, 0.5, rng).keep for _ in range(10_000)], axis=0)
    assert np.all(np.abs(freq - 0.5) <= 0.02)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 0.01, 0.99])
def test_degenerate_mask_ratio_is_rejected(gamma):
    with pytest.raises(ConfigError):
        make_mask(4, gamma, np.random.default_rng(0))


def test_num_masked_rounds_halves_up():
    assert num_masked(6, 0.25) == 2
    assert num_masked(10, 0.75) == 8


# -- patches -----------------------------------------------------------------------

def test_region_counts():
    assert num_regions(32, 32, 16) == 4
    assert num_regions(224, 224, 16) == 196
    with pytest.raises(ConfigError):
        num_regions(30, 32, 16)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 999))
def test_patchify_round_trip(p, gh, gw, c, seed):
    x = np.random.default_rng(seed).random((2, gh * p, gw * p, c))
    patches = patchify(x, p)
    assert patches.shape == (2, gh * gw, p * p * c)
    np.testing.assert_array_equal(unpatchify(patches, gh * p, gw * p, p), x)


def test_patch_order_is_row_major():
    x = np.zeros((4, 4, 1))
    x[0:2, 2:4] = 1.0  # top-right patch
    assert patchify(x, 2).max(axis=1).tolist() == [0.0, 1.0, 0.0, 0.0]


def test_normalize_constant_patch_is_zero():
    # the mean of twelve 0.7s is off by an ulp, and eps turns that into ~1e-10
    np.testing.assert_allclose(normalize_targets(np.full((1, 12), 0.7)), np.zeros((1, 12)), atol=1e-9)
    np.testing.assert_array_equal(normalize_targets(np.full((1, 12), 0.5)), np.zeros((1, 12)))


def test_normalize_two_pixels():
    out = normalize_targets(np.array([[0.0, 1.0]]))
    assert abs(out.mean()) < 1e-12
    assert abs(out.var() - 1.0) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, 48, elements=st.floats(0, 1)).filter(lambda a: a.var() > 1e-3))
def test_normalize_random_patch(patch):
    out = normalize_targets(patch[None])
    assert abs(out.mean()) <= 1e-6
    assert abs(out.var() - 1.0) <= 1e-4


# -- corpus and epoch index ----------------------------------------------------------

def _small_corpus(n_clips=3, t=5):
    raw = [(f"c{i}", np.full((t, 8, 8, 3), i / 4, dtype=np.float32), "the red block") for i in range(n_clips)]
    return Corpus.from_raw(raw, 6, vocab_size=16)


def test_epoch_index_covers_every_clip():
    index = build_epoch_index(_small_corpus(), 5, seed=0)
    assert len(index) == 15
    assert sorted(c for c, _ in index.entries) == sorted([0, 1, 2] * 5)


def test_epoch_index_is_pure_function_of_seed():
    corpus = _small_corpus()
    a = build_epoch_index(corpus, 5, seed=3, k=2, epoch=1).to_bytes()
    b = build_epoch_index(corpus, 5, seed=3, k=2, epoch=1).to_bytes()
    assert a == b
    assert build_epoch_index(corpus, 5, seed=4, k=2, epoch=1).to_bytes() != a
    assert build_epoch_index(corpus, 5, seed=3, k=2, epoch=2).to_bytes() != a


def test_epoch_index_file_round_trip(tmp_path):
    index = build_epoch_index(_small_corpus(), 4, seed=9, k=2)
    index.save(tmp_path / "e.veix")
    back = EpochIndex.load(tmp_path / "e.veix")
    assert back == index
    blob = (tmp_path / "e.veix").read_bytes()
    with pytest.raises(DataError):
        EpochIndex.from_bytes(blob[:-1])
    with pytest.raises(DataError):
        EpochIndex.from_bytes(b"XXXX" + blob[4:])


def test_corpus_round_trip(tmp_path):
    raw = toy_raw()
    save_corpus(tmp_path / "toy", raw)
    corpus = load_corpus(tmp_path / "toy", 8, vocab_size=64)
    assert len(corpus) == 8
    for (name, frames, caption), clip in zip(raw, corpus.clips):
        assert clip.name == name and clip.caption == caption
        np.testing.assert_array_equal(clip.frames, frames)


def test_missing_corpus_names_path(tmp_path):
    with pytest.raises(DataError, match="nowhere"):
        load_corpus(tmp_path / "nowhere", 8)


def test_corpus_rejects_mixed_shapes():
    raw = [("a", np.zeros((2, 8, 8, 3)), "x"), ("b", np.zeros((2, 16, 16, 3)), "y")]
    with pytest.raises(DataError):
        Corpus.from_raw(raw, 6)


def test_streams_are_independent():
    a = stream(0, "data").random(4)
    b = stream(0, "init").random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(stream(0, "data", 2).random(3), stream(0, "data", 2).random(3))
