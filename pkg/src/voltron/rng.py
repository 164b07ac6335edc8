"""Named random streams derived from one root seed.

``stream(seed, "data")`` and ``stream(seed, "init")`` are independent and each
is a pure function of ``(seed, name)``, so changing how many draws one
subsystem makes never shifts another subsystem's randomness.
"""

import os
import zlib

import numpy as np

STREAMS = ("data", "init", "gate", "rollout", "adapt")


def resolve_seed(seed: int) -> int:
    """Apply the ``VOLTRON_SEED`` override, the only environment override honoured."""
    env = os.environ.get("VOLTRON_SEED")
    return int(env) if env not in (None, "") else int(seed)


def stream(seed: int, name: str, *sub: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode()),) + tuple(int(s) for s in sub)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def get_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def set_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = state
