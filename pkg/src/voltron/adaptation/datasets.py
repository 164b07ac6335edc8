"""On-disk grasp and refer datasets.

Both follow the corpus convention: ``manifest.txt`` lists one folder per
item, each holding ``00000.png``. Grasp items add ``label.png``, a greyscale
map whose pixel values are the class ids 0/1/2. Refer items add
``caption.txt`` and ``box.txt`` ("x y w h", normalised, top-left origin).
A refer dataset has ``train/`` and ``test/`` halves.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from ..data import read_frame, write_frame
from ..errors import DataError


def _write_manifest(root: Path, names: Sequence[str]) -> None:
    (root / "manifest.txt").write_text("\n".join(names) + "\n")


def _items(root) -> List[Path]:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"dataset manifest not found: {manifest}")
    names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not names:
        raise DataError(f"dataset at {root} lists no items")
    return [root / n for n in names]


def _image(item: Path) -> np.ndarray:
    path = item / "00000.png"
    if not path.is_file():
        raise DataError(f"missing image: {path}")
    return read_frame(path)


def save_grasp_dataset(root, frames: np.ndarray, labels: np.ndarray) -> None:
    from PIL import Image

    root = Path(root)
    names = []
    for i, (frame, lab) in enumerate(zip(frames, labels)):
        item = root / f"img{i:04d}"
        item.mkdir(parents=True, exist_ok=True)
        write_frame(item / "00000.png", frame)
        Image.fromarray(np.asarray(lab, dtype=np.uint8), mode="L").save(item / "label.png")
        names.append(item.name)
    _write_manifest(root, names)


def load_grasp_dataset(root) -> Tuple[np.ndarray, np.ndarray]:
    from PIL import Image

    frames, labels = [], []
    for item in _items(root):
        path = item / "label.png"
        if not path.is_file():
            raise DataError(f"missing label map: {path}")
        with Image.open(path) as img:
            lab = np.asarray(img.convert("L"), dtype=np.int64)
        frame = _image(item)
        if lab.shape != frame.shape[:2]:
            raise DataError(f"{path}: label map {lab.shape} does not match image {frame.shape[:2]}")
        frames.append(frame)
        labels.append(lab)
    return np.stack(frames), np.stack(labels)


def _save_refer_half(root: Path, frames, captions, boxes) -> None:
    names = []
    for i, (frame, cap, box) in enumerate(zip(frames, captions, boxes)):
        item = root / f"img{i:04d}"
        item.mkdir(parents=True, exist_ok=True)
        write_frame(item / "00000.png", frame)
        (item / "caption.txt").write_text(cap + "\n")
        (item / "box.txt").write_text(" ".join(repr(float(v)) for v in box) + "\n")
        names.append(item.name)
    _write_manifest(root, names)


def _load_refer_half(root: Path):
    frames, captions, boxes = [], [], []
    for item in _items(root):
        for name in ("caption.txt", "box.txt"):
            if not (item / name).is_file():
                raise DataError(f"missing {name} in {item}")
        try:
            box = [float(v) for v in (item / "box.txt").read_text().split()]
        except ValueError as exc:
            raise DataError(f"{item / 'box.txt'}: expected four numbers") from exc
        if len(box) != 4:
            raise DataError(f"{item / 'box.txt'}: expected 'x y w h', got {len(box)} values")
        frames.append(_image(item))
        captions.append((item / "caption.txt").read_text().strip())
        boxes.append(box)
    return np.stack(frames), captions, np.asarray(boxes)


def save_refer_dataset(root, train: tuple, test: tuple) -> None:
    """``train`` and ``test`` are ``(frames, captions, boxes)`` triples."""
    root = Path(root)
    _save_refer_half(root / "train", *train)
    _save_refer_half(root / "test", *test)


def load_refer_dataset(root):
    root = Path(root)
    return _load_refer_half(root / "train"), _load_refer_half(root / "test")
