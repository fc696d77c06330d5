"""
Binary dump of polar paths for offline analysis.

Records are little-endian float64 triples (s, t, θ). Paths are written one after the other in
index order, each with every `record_every`-th sample starting at s = 0. With compression the
stream goes through zstandard and the file gets a `.zst` suffix.
"""

from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np
import zstandard

from kzclt.brownian.sde import EPSILON, TWO_PI, _PolarStepper
from kzclt.common.logging import get_logger

logger = get_logger(__file__)

RECORD = np.dtype("<f8")


def dump_path_name(compress: bool) -> str:
    return "paths.bin.zst" if compress else "paths.bin"


def _write_chunk(
    stream: BinaryIO,
    seed: int,
    indices: Sequence[int],
    horizon: float,
    dt: float,
    record_every: int,
    t_init: float,
    theta_init: float,
    mode: str,
    epsilon: float,
) -> None:
    n_steps = int(round(horizon / dt))
    n_records = n_steps // record_every + 1
    records = np.empty((len(indices), n_records, 3), dtype=RECORD)
    stepper = _PolarStepper(seed, indices, dt, t_init, theta_init, mode, "paths", epsilon)
    records[:, 0, 0] = 0.0
    records[:, 0, 1] = stepper.t
    records[:, 0, 2] = stepper.theta % TWO_PI
    row = 1
    for step in range(1, n_steps + 1):
        stepper.step()
        if step % record_every == 0:
            records[:, row, 0] = stepper.s
            records[:, row, 1] = stepper.t
            records[:, row, 2] = stepper.theta % TWO_PI
            row += 1
    stream.write(records.tobytes())


def dump_paths(
    out_dir: Path,
    seed: int,
    n_paths: int,
    horizon: float,
    dt: float,
    record_every: int = 100,
    t_init: float = 0.0,
    theta_init: float = 0.0,
    mode: str = "ito-polar",
    compress: bool = False,
    chunk_size: int = 256,
    epsilon: float = EPSILON,
) -> Path:
    """Re-simulate paths 0 .. n_paths - 1 on their own streams and write them out."""
    if record_every < 1:
        raise ValueError(f"record_every must be positive, got {record_every}")
    path = Path(out_dir) / dump_path_name(compress)
    logger.info(f"Dumping {n_paths} paths every {record_every} steps to {path}")

    def write_all(stream: BinaryIO) -> None:
        for start in range(0, n_paths, chunk_size):
            indices = list(range(start, min(start + chunk_size, n_paths)))
            _write_chunk(
                stream, seed, indices, horizon, dt, record_every, t_init, theta_init, mode, epsilon
            )

    if compress:
        with zstandard.open(path, "wb") as stream:
            write_all(stream)
    else:
        with open(path, "wb") as stream:
            write_all(stream)
    return path


def load_paths(path: Path, records_per_path: int) -> np.ndarray:
    """Read a dump back as an array of shape (n_paths, records_per_path, 3)."""
    path = Path(path)
    if path.suffix == ".zst":
        with zstandard.open(path, "rb") as stream:
            raw = stream.read()
    else:
        raw = path.read_bytes()
    values = np.frombuffer(raw, dtype=RECORD)
    return values.reshape(-1, records_per_path, 3)
