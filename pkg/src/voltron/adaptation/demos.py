"""Demonstrations: scripted collection and the on-disk VDEM container.

A demo directory holds numbered PNG frames plus ``demo.vdem``:
``b"VDEM"``, u32 version, u32 steps, u32 proprio dim, u32 action dim,
u32 utterance byte length, the UTF-8 utterance, then per step a u32 frame
index followed by float32 proprio and action vectors (little-endian).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..data import read_frame, write_frame
from ..errors import DataError
from ..rng import stream
from .envs import GRID, make_env

_MAGIC = b"VDEM"
_VERSION = 1
_HEAD = struct.Struct("<4sIIIII")


@dataclass
class Demo:
    frames: np.ndarray  # (T, H, W, C)
    proprio: np.ndarray  # (T, P)
    actions: np.ndarray  # (T, A)
    utterance: str = ""

    def __len__(self) -> int:
        return int(self.frames.shape[0])


def collect_demos(env_name: str, n: int, seed: int, size: int = 32, cover: bool = True) -> List[Demo]:
    """Roll out the scripted expert; demo i uses rollout stream (seed, 0, i).

    With ``cover`` demo i targets grid cell ``i mod 16`` so that every goal
    cell is demonstrated once n >= 16.
    """
    demos = []
    for i in range(n):
        env = make_env(env_name, size)
        env.reset(stream(seed, "rollout", 0, i), goal_cell=i % (GRID * GRID) if cover else None)
        frames, prop, acts = [], [], []
        while not env.done:
            frames.append(env.render())
            prop.append(env.proprio())
            a = env.expert_action()
            acts.append(a.astype(np.float32))
            env.step(a)
        demos.append(Demo(np.stack(frames), np.stack(prop), np.stack(acts), env.instruction))
    return demos


def check_demos(demos: Sequence[Demo]) -> None:
    if not demos:
        raise DataError("no demonstrations")
    dims = {(d.proprio.shape[1], d.actions.shape[1]) for d in demos}
    if len({a for _, a in dims}) != 1:
        raise DataError(f"demos disagree on action dimensionality: {sorted({a for _, a in dims})}")
    if len({p for p, _ in dims}) != 1:
        raise DataError(f"demos disagree on proprio dimensionality: {sorted({p for p, _ in dims})}")
    for d in demos:
        if not (len(d.frames) == len(d.proprio) == len(d.actions)):
            raise DataError("demo frames, proprio and actions differ in length")


def save_demo(path, demo: Demo) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(demo.frames):
        write_frame(path / f"{t:05d}.png", frame)
    utt = demo.utterance.encode("utf-8")
    p_dim, a_dim = demo.proprio.shape[1], demo.actions.shape[1]
    rec = struct.Struct("<I" + "f" * (p_dim + a_dim))
    body = [_HEAD.pack(_MAGIC, _VERSION, len(demo), p_dim, a_dim, len(utt)), utt]
    for t in range(len(demo)):
        body.append(rec.pack(t, *demo.proprio[t].tolist(), *demo.actions[t].tolist()))
    (path / "demo.vdem").write_bytes(b"".join(body))


def load_demo(path) -> Demo:
    path = Path(path)
    blob_path = path / "demo.vdem"
    if not blob_path.is_file():
        raise DataError(f"missing demo file: {blob_path}")
    blob = blob_path.read_bytes()
    if len(blob) < _HEAD.size:
        raise DataError(f"{blob_path}: truncated")
    magic, version, n, p_dim, a_dim, u_len = _HEAD.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise DataError(f"{blob_path}: not a demo file (bad magic)")
    if version != _VERSION:
        raise DataError(f"{blob_path}: unsupported demo version {version}")
    off = _HEAD.size
    utterance = blob[off:off + u_len].decode("utf-8")
    off += u_len
    rec = struct.Struct("<I" + "f" * (p_dim + a_dim))
    if len(blob) != off + n * rec.size:
        raise DataError(f"{blob_path}: expected {n} records")
    frame_ids, prop, acts = [], [], []
    for i in range(n):
        vals = rec.unpack_from(blob, off + i * rec.size)
        frame_ids.append(vals[0])
        prop.append(vals[1:1 + p_dim])
        acts.append(vals[1 + p_dim:])
    frames = np.stack([read_frame(path / f"{t:05d}.png") for t in frame_ids]) if n else np.zeros((0, 1, 1, 3))
    return Demo(frames, np.asarray(prop, dtype=np.float32).reshape(n, p_dim),
                np.asarray(acts, dtype=np.float32).reshape(n, a_dim), utterance)


def save_demos(root, demos: Sequence[Demo]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for i, demo in enumerate(demos):
        name = f"demo{i:03d}"
        save_demo(root / name, demo)
        names.append(name)
    (root / "manifest.txt").write_text("".join(f"{n}\n" for n in names))


def load_demos(root) -> List[Demo]:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"demo manifest not found: {manifest}")
    names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    return [load_demo(root / n) for n in names]
