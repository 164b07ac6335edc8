"""Synthetic corpora and task fixtures small enough to train on a laptop CPU.

All pixel content is built from exact constants so that PNG round-trips are
lossless enough for memorisation checks.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

COLOURS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
SHAPES = ("block", "ring")
# grid cells (row, col) on the 4x4 patch grid of a 32x32 frame with p=8
_TOY_CELLS = [(0, 1), (1, 3), (2, 0), (3, 2), (1, 1), (2, 2), (0, 3), (3, 0)]


def shape_pattern(shape: str, p: int = 8) -> np.ndarray:
    pat = np.zeros((p, p))
    if shape == "block":
        pat[1:-1, 1:-1] = 1.0
    elif shape == "ring":
        pat[:, :] = 1.0
        pat[2:-2, 2:-2] = 0.0
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return pat


def background(size: int, vertical: bool, tint=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Grey ramp (0.2 -> 0.6) along one axis, plus a constant colour tint."""
    ramp = np.linspace(0.2, 0.6, size)
    grey = np.broadcast_to(ramp[:, None] if vertical else ramp[None, :], (size, size))
    return grey[:, :, None] + np.asarray(tint)[None, None, :]


def paint(frame: np.ndarray, cell: Tuple[int, int], colour: str, shape: str, level: float = 1.0,
          p: int = 8) -> None:
    r, c = cell
    patch = shape_pattern(shape, p)[:, :, None] * np.asarray(COLOURS[colour]) * level
    frame[r * p:(r + 1) * p, c * p:(c + 1) * p] = patch


def quantize(frames: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so in-memory and on-disk corpora are identical."""
    return (np.rint(np.clip(frames, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def toy_raw(n_clips: int = 8, num_frames: int = 6, size: int = 32) -> List[Tuple[str, np.ndarray, str]]:
    """One coloured shape per clip that brightens over time on a grey ramp.

    Brightening scales the object's cell uniformly, so normalised patch
    targets are the same in every frame of a clip. The caption names colour
    and shape; the background repeats both (tint = colour, ramp axis =
    shape), so any visible patch identifies the clip.
    """
    if n_clips > len(_TOY_CELLS):
        raise ValueError(f"at most {len(_TOY_CELLS)} toy clips")
    colours = list(COLOURS)
    raw = []
    for i in range(n_clips):
        colour, shape = colours[i % 4], SHAPES[(i // 4) % 2]
        frames = []
        for t in range(num_frames):
            frame = background(size, vertical=shape == "ring", tint=0.15 * np.asarray(COLOURS[colour]))
            paint(frame, _TOY_CELLS[i], colour, shape, level=0.6 + 0.4 * t / max(num_frames - 1, 1))
            frames.append(frame)
        raw.append((f"clip{i:02d}", quantize(np.stack(frames)), f"the {colour} {shape} glows"))
    return raw


def scene_raw(n_clips: int = 64, num_frames: int = 6, size: int = 32, seed: int = 0,
              ) -> List[Tuple[str, np.ndarray, str]]:
    """Point-mass reaching clips in the style of the control environments.

    One or two coloured blocks sit on a flat field; a white agent square
    moves in a straight line toward the named block, arriving on the last
    frame. The caption names the target: ``"the {colour} block"``.
    """
    from .adaptation.envs import FIELD, GRID, cell_centre

    rng = np.random.default_rng(seed)
    names = list(COLOURS)
    p = size // GRID
    raw = []
    for i in range(n_clips):
        n_obj = 1 + int(rng.integers(2))
        cells = rng.choice(GRID * GRID, size=n_obj, replace=False)
        cols = rng.choice(len(names), size=n_obj, replace=False)
        goal = cell_centre((int(cells[0]) // GRID, int(cells[0]) % GRID), np.zeros(2))
        start = rng.uniform(0.05, 0.95, 2)
        frames = []
        for t in range(num_frames):
            frame = np.full((size, size, 3), FIELD)
            for cell_id, col in zip(cells, cols):
                paint(frame, (int(cell_id) // GRID, int(cell_id) % GRID), names[int(col)], "block", p=p)
            pos = start + (goal - start) * t / max(num_frames - 1, 1)
            x, y = np.clip(np.rint(pos * size).astype(int), 2, size - 2)
            frame[y - 2:y + 2, x - 2:x + 2] = 1.0
            frames.append(frame)
        raw.append((f"scene{i:03d}", quantize(np.stack(frames)), f"the {names[int(cols[0])]} block"))
    return raw


def refer_examples(n: int, size: int = 32, seed: int = 0) -> Tuple[np.ndarray, List[str], np.ndarray]:
    """Two or three differently coloured blocks; the caption names one of them.

    Every block has the same shape and the target is drawn uniformly, so
    nothing in the image singles it out: only the caption does. Boxes are
    ``(x, y, w, h)`` of the target cell in [0, 1] image units.
    """
    from .adaptation.envs import FIELD, GRID

    rng = np.random.default_rng(seed)
    names = list(COLOURS)
    p = size // GRID
    frames, captions, boxes = [], [], []
    for _ in range(n):
        n_obj = 2 + int(rng.integers(2))
        cells = rng.choice(GRID * GRID, size=n_obj, replace=False)
        cols = rng.choice(len(names), size=n_obj, replace=False)
        frame = np.full((size, size, 3), FIELD)
        for cell_id, col in zip(cells, cols):
            paint(frame, (int(cell_id) // GRID, int(cell_id) % GRID), names[int(col)], "block", p=p)
        t = int(rng.integers(n_obj))
        r, c = int(cells[t]) // GRID, int(cells[t]) % GRID
        frames.append(frame)
        captions.append(f"the {names[int(cols[t])]} block")
        boxes.append((c / GRID, r / GRID, 1.0 / GRID, 1.0 / GRID))
    return quantize(np.stack(frames)), captions, np.asarray(boxes)


def grasp_examples(n: int, size: int = 32, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Bright disks (graspable) and grey squares (non-graspable) on a dark field.

    Labels: 0 graspable, 1 non-graspable, 2 background.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    frames = np.full((n, size, size, 3), 0.05)
    labels = np.full((n, size, size), 2, dtype=np.int64)
    for i in range(n):
        r = rng.uniform(5.0, 8.0)
        cx, cy = rng.uniform(r, size - r, 2)
        half = rng.uniform(4.0, 7.0)
        sx, sy = rng.uniform(half, size - half, 2)
        square = (np.abs(xx - sx) < half) & (np.abs(yy - sy) < half)
        disk = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        frames[i][square] = 0.45
        labels[i][square] = 1
        frames[i][disk] = 1.0  # the disk sits on top where they overlap
        labels[i][disk] = 0
    return quantize(frames), labels


PROGRESS_CAPTIONS = ("fill the bar", "empty the bar", "the bar stays empty", "the bar stays full")


def progress_raw(num_frames: int = 10, size: int = 32) -> List[Tuple[str, np.ndarray, str]]:
    """A green bar across the middle half of the frame, filling left to right.

    Four clips: filling, emptying, constant empty and constant full. At
    frame 0 "fill" looks like "stays empty", so only later frames tell the
    captions apart.
    """
    raw = []
    cols = (np.arange(size) + 0.5) / size
    for name, caption in zip(("fill", "empty", "still-empty", "still-full"), PROGRESS_CAPTIONS):
        frames = []
        for t in range(num_frames):
            f = t / max(num_frames - 1, 1)
            level = {"fill": f, "empty": 1.0 - f, "still-empty": 0.0, "still-full": 1.0}[name]
            frame = np.full((size, size, 3), 0.1)
            frame[size // 4:3 * size // 4] = 0.3
            lit = cols < level
            frame[size // 4:3 * size // 4, lit] = COLOURS["green"]
            frames.append(frame)
        raw.append((name, quantize(np.stack(frames)), caption))
    return raw
