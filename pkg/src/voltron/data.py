"""Corpus handling: tokenization, frame-context sampling, masking, patches, epoch indices."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, VocabularyError
from .rng import stream

PAD, NULL, BOS, EOS, UNK = "<PAD>", "<NULL>", "<BOS>", "<EOS>", "<UNK>"
SPECIALS = (PAD, NULL, BOS, EOS, UNK)
PAD_ID, NULL_ID, BOS_ID, EOS_ID, UNK_ID = range(len(SPECIALS))


# -- vocabulary & tokenization -------------------------------------------------

class Vocabulary:
    """Dense token <-> id map. Ids 0..4 are the reserved specials."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise VocabularyError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, captions: Iterable[str], size: Optional[int] = None) -> "Vocabulary":
        """Specials, then caption words in sorted order, then filler up to ``size``."""
        words = sorted({w for c in captions for w in split_words(c)} - set(SPECIALS))
        tokens = list(SPECIALS) + words
        if size is not None:
            if len(tokens) > size:
                raise ConfigError(f"corpus needs {len(tokens)} vocabulary entries but vocab_size={size}")
            tokens += [f"<unused-{i}>" for i in range(size - len(tokens))]
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabularyError(f"token id {idx} outside [0, {len(self.tokens)})")
        return self.tokens[idx]

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def null_id(self) -> int:
        return 1

    @property
    def bos_id(self) -> int:
        return 2

    @property
    def eos_id(self) -> int:
        return 3

    @property
    def unk_id(self) -> int:
        return 4

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


def split_words(text: str) -> List[str]:
    return text.lower().split()


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """Lower-case whitespace tokens framed by BOS/EOS and padded to ``max_len``.

    Over-long captions are truncated so that EOS is still the last kept id.
    """
    if len(vocab) == 0:
        raise VocabularyError("empty vocabulary")
    if max_len < 3:
        raise ConfigError(f"max caption length {max_len} leaves no room for BOS, EOS and a token")
    body = [vocab.id(w) for w in split_words(text)][: max_len - 2]
    ids = [vocab.bos_id] + body + [vocab.eos_id]
    mask = np.zeros(max_len, dtype=bool)
    mask[: len(ids)] = True
    ids = ids + [vocab.pad_id] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int64), mask


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    words = []
    for i in ids:
        tok = vocab.token(int(i))
        if tok == EOS:
            break
        if tok in SPECIALS:
            continue
        words.append(tok)
    return " ".join(words)


def null_utterance(vocab: Vocabulary, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """The "no language" utterance: a single NULL token followed by padding."""
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    ids[0] = vocab.null_id
    mask = np.zeros(max_len, dtype=bool)
    mask[0] = True
    return ids, mask


def is_null_utterance(ids: np.ndarray, vocab: Vocabulary) -> bool:
    ids = np.asarray(ids)
    return bool(ids[0] == vocab.null_id and np.all(ids[1:] == vocab.pad_id))


# -- clips and contexts ---------------------------------------------------------

@dataclass
class ClipRecord:
    frames: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    caption: str
    token_ids: np.ndarray
    length_mask: np.ndarray
    name: str = ""

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class FrameContext:
    frames: np.ndarray  # (k, H, W, C)
    frame_indices: Tuple[int, ...]
    token_ids: np.ndarray
    length_mask: np.ndarray

    @property
    def k(self) -> int:
        return int(self.frames.shape[0])


def dual_frame_boundary(num_frames: int) -> int:
    """First index that belongs to the trailing 80% of a clip."""
    return max(1, min(num_frames - 1, math.ceil(0.2 * num_frames)))


def sample_frame_indices(num_frames: int, k: int, rng: np.random.Generator) -> Tuple[int, ...]:
    if k not in (1, 2):
        raise ConfigError(f"frame context size must be 1 or 2, got {k}")
    if num_frames < 1:
        raise DataError("clip has no frames")
    if k == 1:
        return (int(rng.integers(num_frames)),)
    if num_frames < 2:
        raise DataError("dual-frame context needs a clip with at least 2 frames")
    b = dual_frame_boundary(num_frames)
    return int(rng.integers(0, b)), int(rng.integers(b, num_frames))


def context_from_indices(clip: ClipRecord, indices: Sequence[int]) -> FrameContext:
    idx = tuple(int(i) for i in indices)
    return FrameContext(clip.frames[list(idx)], idx, clip.token_ids, clip.length_mask)


def sample_frame_context(clip: ClipRecord, k: int, rng: np.random.Generator) -> FrameContext:
    return context_from_indices(clip, sample_frame_indices(clip.num_frames, k, rng))


# -- masking --------------------------------------------------------------------

def num_masked(num_regions: int, gamma: float) -> int:
    """round(gamma * |R|), halves rounded up."""
    return int(math.floor(gamma * num_regions + 0.5))


def check_mask_ratio(num_regions: int, gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"masking ratio must lie in (0, 1), got {gamma}")
    m = num_masked(num_regions, gamma)
    if m < 1 or num_regions - m < 1:
        raise ConfigError(f"masking ratio {gamma} over {num_regions} regions leaves {num_regions - m} visible "
                          f"and {m} masked")


@dataclass(frozen=True)
class MaskSpec:
    keep: np.ndarray  # (|R|,) bool, True = visible
    gamma: float

    @property
    def num_regions(self) -> int:
        return int(self.keep.shape[0])

    @property
    def visible(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    @property
    def masked(self) -> np.ndarray:
        return np.flatnonzero(~self.keep)


def make_mask(num_regions: int, gamma: float, rng: np.random.Generator) -> MaskSpec:
    check_mask_ratio(num_regions, gamma)
    drop = rng.permutation(num_regions)[: num_masked(num_regions, gamma)]
    keep = np.ones(num_regions, dtype=bool)
    keep[drop] = False
    return MaskSpec(keep, float(gamma))


# -- patches ----------------------------------------------------------------------

def _check_patch(h: int, w: int, p: int) -> None:
    if p <= 0 or h % p or w % p:
        raise ConfigError(f"patch size p={p} must divide H={h} and W={w}")


def num_regions(h: int, w: int, p: int) -> int:
    _check_patch(h, w, p)
    return (h // p) * (w // p)


def patchify(frames: np.ndarray, p: int) -> np.ndarray:
    """(..., H, W, C) -> (..., |R|, p*p*C) with row-major patch order."""
    *lead, h, w, c = frames.shape
    _check_patch(h, w, p)
    gh, gw = h // p, w // p
    x = frames.reshape(*lead, gh, p, gw, p, c)
    nl = len(lead)
    x = np.moveaxis(x, nl + 2, nl + 1)  # (..., gh, gw, p, p, c)
    return np.ascontiguousarray(x).reshape(*lead, gh * gw, p * p * c)


def unpatchify(patches: np.ndarray, h: int, w: int, p: int) -> np.ndarray:
    _check_patch(h, w, p)
    *lead, n, dim = patches.shape
    c = dim // (p * p)
    gh, gw = h // p, w // p
    if n != gh * gw or dim != p * p * c:
        raise ConfigError(f"cannot unpatchify {patches.shape} into {h}x{w} with p={p}")
    x = patches.reshape(*lead, gh, gw, p, p, c)
    nl = len(lead)
    x = np.moveaxis(x, nl + 1, nl + 2)
    return np.ascontiguousarray(x).reshape(*lead, h, w, c)


def normalize_targets(patches: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Standardise each patch (last axis) to zero mean and unit variance."""
    mean = patches.mean(axis=-1, keepdims=True)
    var = patches.var(axis=-1, keepdims=True)
    return (patches - mean) / np.sqrt(var + eps * eps)


# -- corpus -----------------------------------------------------------------------

@dataclass
class Corpus:
    clips: List[ClipRecord]
    vocab: Vocabulary
    max_len: int

    def __len__(self) -> int:
        return len(self.clips)

    @classmethod
    def from_raw(cls, raw: Sequence[Tuple[str, np.ndarray, str]], max_len: int,
                 vocab: Optional[Vocabulary] = None, vocab_size: Optional[int] = None) -> "Corpus":
        """Build from ``(name, frames, caption)`` triples."""
        if not raw:
            raise DataError("corpus is empty")
        if vocab is None:
            vocab = Vocabulary.build([c for _, _, c in raw], size=vocab_size)
        clips = []
        for name, frames, caption in raw:
            frames = np.asarray(frames, dtype=np.float32)
            if frames.ndim != 4 or frames.shape[0] < 1:
                raise DataError(f"clip {name!r}: expected (T, H, W, C) frames, got {frames.shape}")
            ids, mask = tokenize(caption, vocab, max_len)
            clips.append(ClipRecord(frames, caption, ids, mask, name))
        shapes = {c.frames.shape[1:] for c in clips}
        if len(shapes) != 1:
            raise DataError(f"clips disagree on frame shape: {sorted(shapes)}")
        return cls(clips, vocab, max_len)

    @property
    def frame_shape(self) -> Tuple[int, int, int]:
        return tuple(self.clips[0].frames.shape[1:])


def read_frame(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_frame(path: Path, frame: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_frames_dir(path: Path) -> np.ndarray:
    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise DataError(f"no PNG frames in {path}")
    return np.stack([read_frame(f) for f in files])


def load_raw_corpus(root) -> List[Tuple[str, np.ndarray, str]]:
    """Read ``root/manifest.txt``; each line names a clip folder of PNG frames plus ``caption.txt``."""
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"corpus manifest not found: {manifest}")
    raw = []
    for line in manifest.read_text().splitlines():
        rel = line.strip()
        if not rel or rel.startswith("#"):
            continue
        clip_dir = root / rel
        cap = clip_dir / "caption.txt"
        if not cap.is_file():
            raise DataError(f"missing caption file: {cap}")
        raw.append((rel, read_frames_dir(clip_dir), cap.read_text().strip()))
    if not raw:
        raise DataError(f"corpus at {root} lists no clips")
    return raw


def load_corpus(root, max_len: int, vocab: Optional[Vocabulary] = None,
                vocab_size: Optional[int] = None) -> Corpus:
    return Corpus.from_raw(load_raw_corpus(root), max_len, vocab=vocab, vocab_size=vocab_size)


def save_corpus(root, raw: Sequence[Tuple[str, np.ndarray, str]]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for name, frames, caption in raw:
        clip_dir = root / name
        clip_dir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(frames):
            write_frame(clip_dir / f"{t:05d}.png", frame)
        (clip_dir / "caption.txt").write_text(caption + "\n")
        names.append(name)
    (root / "manifest.txt").write_text("\n".join(names) + "\n")


# -- epoch index --------------------------------------------------------------------

_EIX_MAGIC = b"VEIX"
_EIX_VERSION = 1


@dataclass
class EpochIndex:
    seed: int
    epoch: int
    k: int
    entries: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def to_bytes(self) -> bytes:
        out = [_EIX_MAGIC, struct.pack("<IQ", _EIX_VERSION, self.seed),
               struct.pack("<III", self.epoch, self.k, len(self.entries))]
        rec = struct.Struct("<I" + "H" * self.k)
        for clip_id, frames in self.entries:
            out.append(rec.pack(clip_id, *frames))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EpochIndex":
        if blob[:4] != _EIX_MAGIC:
            raise DataError("not an epoch index file (bad magic)")
        version, seed = struct.unpack_from("<IQ", blob, 4)
        if version != _EIX_VERSION:
            raise DataError(f"unsupported epoch index version {version}")
        epoch, k, n = struct.unpack_from("<III", blob, 16)
        rec = struct.Struct("<I" + "H" * k)
        if len(blob) != 28 + n * rec.size:
            raise DataError("epoch index file is truncated or has trailing bytes")
        entries = []
        for i in range(n):
            vals = rec.unpack_from(blob, 28 + i * rec.size)
            entries.append((vals[0], tuple(vals[1:])))
        return cls(seed, epoch, k, entries)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EpochIndex":
        return cls.from_bytes(Path(path).read_bytes())


def build_epoch_index(corpus: Corpus, frames_per_clip: int, seed: int, k: int = 1, epoch: int = 0) -> EpochIndex:
    """``frames_per_clip`` contexts per clip, globally shuffled; a pure function of (seed, epoch)."""
    if len(corpus) == 0:
        raise DataError("cannot index an empty corpus")
    if frames_per_clip < 1:
        raise ConfigError("frames_per_clip must be >= 1")
    rng = stream(seed, "data", epoch)
    entries = []
    for clip_id, clip in enumerate(corpus.clips):
        for _ in range(frames_per_clip):
            entries.append((clip_id, sample_frame_indices(clip.num_frames, k, rng)))
    order = rng.permutation(len(entries))
    return EpochIndex(int(seed), int(epoch), int(k), [entries[i] for i in order])
