"""
Counter-based random streams.

Every draw in the toolkit is keyed by (master seed, stream, index). Adding runs or changing the
number of worker threads never perturbs an existing stream, which is what makes reruns
bit-identical.
"""

from typing import Sequence

import numpy as np

STREAMS = {
    "paths": 1,
    "calibration": 3,
    "sampling": 4,
    "bootstrap": 5,
    "frames": 6,
    "burn-in": 7,
    "synthetic": 8,
}

# Normals are drawn per path in fixed blocks of steps, so a path's increments do not depend on
# how many steps another caller asked for, or on how paths are chunked.
BLOCK_STEPS = 1024


def generator(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """A Philox generator for one (seed, stream, index) key."""
    if stream not in STREAMS:
        raise ValueError(f"Unknown random stream: {stream}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[stream], index))
    return np.random.Generator(np.random.Philox(sequence))


class PathNoise:
    """
    Standard normal pairs (ξ1, ξ2) per step for a set of paths.

    Path i always sees the same sequence regardless of which other paths share the batch.
    """

    def __init__(self, seed: int, stream: str, indices: Sequence[int]) -> None:
        self.indices = list(indices)
        self.generators = [generator(seed, stream, index) for index in self.indices]
        self.buffer = np.empty((len(self.indices), BLOCK_STEPS, 2))
        self.cursor = BLOCK_STEPS

    def _refill(self) -> None:
        for row, rng in enumerate(self.generators):
            self.buffer[row] = rng.standard_normal((BLOCK_STEPS, 2))
        self.cursor = 0

    def next(self) -> np.ndarray:
        """The (n_paths, 2) normals of the next step."""
        if self.cursor == BLOCK_STEPS:
            self._refill()
        step = self.buffer[:, self.cursor, :]
        self.cursor += 1
        return step
