"""Scripted 2-D point-mass environments with exactly computable success.

The agent (a white square) moves in the unit square; goals are coloured
blocks drawn on the 4x4 patch grid. Actions are displacements clipped to
``max_step``; an episode succeeds if the agent ends within
``success_radius`` of the goal.
"""

from __future__ import annotations

from typing import List

import numpy as np

from ..fixtures import COLOURS, paint, quantize

GRID = 4
FIELD = 0.15


def clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v if n <= limit else v * (limit / n)


def cell_centre(cell, jitter: np.ndarray) -> np.ndarray:
    r, c = cell
    return np.array([(c + 0.5) / GRID, (r + 0.5) / GRID]) + jitter  # (x, y)


class PointMassEnv:
    """Reach a single red block."""

    horizon = 25
    max_step = 0.08
    success_radius = 0.1
    jitter = 0.0

    def __init__(self, size: int = 32):
        self.size = size
        self.pos = np.zeros(2)
        self.goals: List[tuple] = []  # (colour, cell, xy)
        self.target = 0
        self.t = 0

    @property
    def instruction(self) -> str:
        return f"the {self.goals[self.target][0]} block"

    @property
    def goal(self) -> np.ndarray:
        return self.goals[self.target][2]

    def _place_goals(self, rng: np.random.Generator, n: int, colours=None, first_cell=None) -> None:
        cells = rng.choice(GRID * GRID, size=n, replace=False)
        if first_cell is not None:
            others = [c for c in rng.permutation(GRID * GRID) if c != first_cell]
            cells = np.array([first_cell] + others[: n - 1])
        names = list(COLOURS)
        if colours is None:
            colours = rng.choice(len(COLOURS), size=n, replace=False)
        self.goals = []
        for cell_id, col in zip(cells, colours):
            cell = (int(cell_id) // GRID, int(cell_id) % GRID)
            self.goals.append((names[int(col)], cell, cell_centre(cell, rng.uniform(-self.jitter, self.jitter, 2))))

    def reset(self, rng: np.random.Generator, goal_cell=None) -> None:
        """``goal_cell`` (flat index) pins the target's cell; otherwise it is drawn from ``rng``."""
        self._place_goals(rng, 1, colours=[0], first_cell=goal_cell)
        self.target = 0
        self._reset_agent(rng)

    def _reset_agent(self, rng: np.random.Generator) -> None:
        while True:
            self.pos = rng.uniform(0.05, 0.95, 2)
            if all(np.linalg.norm(self.pos - g[2]) > 0.3 for g in self.goals):
                break
        self.t = 0

    def render(self) -> np.ndarray:
        s = self.size
        frame = np.full((s, s, 3), FIELD)
        p = s // GRID
        for colour, cell, _ in self.goals:
            paint(frame, cell, colour, "block", p=p)
        x, y = np.clip(np.rint(self.pos * s).astype(int), 2, s - 2)
        frame[y - 2:y + 2, x - 2:x + 2] = 1.0
        return quantize(frame)

    def proprio(self) -> np.ndarray:
        return self.pos.astype(np.float32).copy()

    def expert_action(self) -> np.ndarray:
        return clip_norm(self.goal - self.pos, self.max_step)

    def step(self, action: np.ndarray) -> None:
        a = clip_norm(np.asarray(action, dtype=np.float64), self.max_step)
        self.pos = np.clip(self.pos + a, 0.0, 1.0)
        self.t += 1

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def success(self) -> bool:
        return bool(np.linalg.norm(self.pos - self.goal) < self.success_radius)


class TwoGoalEnv(PointMassEnv):
    """Two coloured blocks; the instruction names which one to reach."""

    def reset(self, rng: np.random.Generator, goal_cell=None) -> None:
        self._place_goals(rng, 2, first_cell=goal_cell)
        self.target = 0 if goal_cell is not None else int(rng.integers(2))
        if goal_cell is not None and rng.random() < 0.5:
            self.goals.reverse()
            self.target = 1
        self._reset_agent(rng)


ENVS = {"reach": PointMassEnv, "two-goal": TwoGoalEnv}


def make_env(name: str, size: int = 32) -> PointMassEnv:
    if name not in ENVS:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}")
    return ENVS[name](size)
