"""
Evolution of cocycles along geodesic and Brownian drivers.

A batch of paths is held by `CocycleEnsemble`: reduced frames and markings (one per path), and
optionally a k-frame of fiber vectors per path. The ensemble is advanced by right
multiplication with driver increments; paths whose point leaves the fundamental domain are
reduced one by one and their vectors are pushed through the generator matrices.

Vectors are kept in floating point and re-orthonormalized by QR every 10 moves of a path and
every unit of driver time, with the logs of the R diagonals accumulated per column, so that

    σ_k = Σ_j log|R_jj| + ½ log det(QᵀQ) - ½ log det(VᵀV)
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from kzclt.brownian.frames import GroupBrownian, right_multiply
from kzclt.brownian.sde import EXIT_RADIUS, EXIT_WINDOW, TWO_PI, simulate_path
from kzclt.cocycles.models import BasePoint, CocycleModel, MonodromyModel, TautologicalModel
from kzclt.cocycles.monodromy import MOVE_CODES, MOVES
from kzclt.cocycles.reduction import (
    CUSP_HEIGHT,
    half_plane_point,
    outside_domain,
    reduction_moves,
)
from kzclt.common.errors import NonFinite, NotHit
from kzclt.common.logging import get_logger
from kzclt.common.seeds import generator
from kzclt.hyperbolic.group import GroupElement

logger = get_logger(__file__)

DRIVERS = ("geodesic", "brownian", "brownian-stopped")
QR_MOVES = 10
QR_TIME = 1.0
GEODESIC_STEP = 0.1


@dataclass(frozen=True)
class DriverSpec:
    kind: str = "geodesic"
    # Geodesic direction; None draws one uniformly per path.
    theta: Optional[float] = None
    dt: float = 1e-2

    def __post_init__(self):
        if self.kind not in DRIVERS:
            raise ValueError(f"Unknown driver {self.kind!r}, choose from {DRIVERS}")


@dataclass
class BasePoints:
    frames: tuple
    markings: np.ndarray
    last: np.ndarray

    def __len__(self) -> int:
        return len(self.markings)

    @staticmethod
    def identity(n: int) -> "BasePoints":
        return BasePoints(
            frames=(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n)),
            markings=np.zeros(n, dtype=np.int64),
            last=np.full(n, -1, dtype=np.int64),
        )

    @staticmethod
    def single(base: BasePoint) -> "BasePoints":
        frame = base.frame
        return BasePoints(
            frames=tuple(np.array([entry]) for entry in (frame.a, frame.b, frame.c, frame.d)),
            markings=np.array([base.marking], dtype=np.int64),
            last=np.array([-1], dtype=np.int64),
        )

    def point(self, index: int, theta: float = 0.0) -> BasePoint:
        return BasePoint(
            frame=GroupElement(*(float(entry[index]) for entry in self.frames)),
            marking=int(self.markings[index]),
            theta=theta,
        )


def random_frames(seed: int, indices: Sequence[int], dimension: int, k: int) -> np.ndarray:
    """Haar-distributed orthonormal k-frames, one per index, from the frames stream."""
    frames = np.empty((len(indices), dimension, k))
    for row, index in enumerate(indices):
        gaussian = generator(seed, "frames", index).standard_normal((dimension, k))
        q, r = np.linalg.qr(gaussian)
        frames[row] = q * np.sign(np.diag(r))
    return frames


def _multiply(frames: tuple, a, b, c, d) -> tuple:
    fa, fb, fc, fd = frames
    return fa * a + fb * c, fa * b + fb * d, fc * a + fd * c, fc * b + fd * d


def rotate_frames(frames: tuple, thetas) -> tuple:
    """F·r_-θ per path."""
    half = np.asarray(thetas) / 2
    return _multiply(frames, np.cos(half), np.sin(half), -np.sin(half), np.cos(half))


class CocycleEnsemble:
    """Reduced frames, markings and fiber vectors of a batch of paths."""

    def __init__(
        self,
        model: MonodromyModel,
        base: BasePoints,
        vectors: Optional[np.ndarray] = None,
    ) -> None:
        self.model = model
        self.matrices = model.float_matrices
        self.targets = model.targets
        self.frames = tuple(np.array(entry, dtype=float) for entry in base.frames)
        self.markings = base.markings.copy()
        self.last = base.last.copy()
        n = len(self.markings)
        self.vectors = None if vectors is None else np.array(vectors, dtype=float)
        k = 0 if vectors is None else self.vectors.shape[2]
        self.column_logs = np.zeros((n, k))
        self.offset = np.zeros(n)
        if self.vectors is not None:
            gram = np.einsum("nij,nik->njk", self.vectors, self.vectors)
            self.offset = -0.5 * np.linalg.slogdet(gram)[1]
        self.pending = np.zeros(n, dtype=np.int64)
        self.word_length = np.zeros(n, dtype=np.int64)
        self.since_qr = 0.0
        self.elapsed = 0.0
        self.renormalizations = 0
        height = self.heights()
        self.max_height = height.copy()
        self.in_cusp = height > CUSP_HEIGHT
        self.excursions = self.in_cusp.astype(np.int64)
        self.reduce()

    def __len__(self) -> int:
        return len(self.markings)

    def heights(self) -> np.ndarray:
        return half_plane_point(*self.frames)[1]

    def multiply(self, a, b, c, d, elapsed: float = 0.0) -> None:
        """Right-multiply every frame by [[a, b], [c, d]] (scalars or per-path arrays)."""
        self.frames = _multiply(self.frames, a, b, c, d)
        self._after_step(elapsed)

    def multiply_symmetric(self, e00, e01, e11, elapsed: float = 0.0) -> None:
        self.frames = right_multiply(self.frames, e00, e01, e11)
        self._after_step(elapsed)

    def _after_step(self, elapsed: float) -> None:
        self.reduce()
        self.elapsed += elapsed
        self.since_qr += elapsed
        if self.vectors is not None:
            if self.since_qr >= QR_TIME:
                self.renormalize()
                self.since_qr = 0.0
        height = self.heights()
        np.maximum(self.max_height, height, out=self.max_height)
        entering = (height > CUSP_HEIGHT) & ~self.in_cusp
        self.excursions += entering
        self.in_cusp = height > CUSP_HEIGHT

    def reduce(self) -> None:
        a, b, c, d = self.frames
        finite = np.isfinite(a) & np.isfinite(b) & np.isfinite(c) & np.isfinite(d)
        if not finite.all():
            raise NonFinite(
                f"{int(np.count_nonzero(~finite))} of {len(a)} frames went non-finite"
            )
        for i in np.flatnonzero(outside_domain(a, b, c, d)):
            last = MOVES[self.last[i]] if self.last[i] >= 0 else None
            moves, reduced = reduction_moves((a[i], b[i], c[i], d[i]), last)
            a[i], b[i], c[i], d[i] = reduced
            marking = self.markings[i]
            for move in moves:
                code = MOVE_CODES[move]
                if self.vectors is not None:
                    self.vectors[i] = self.matrices[code, marking] @ self.vectors[i]
                    self.pending[i] += 1
                    if self.pending[i] >= QR_MOVES:
                        self.renormalize(np.array([i]))
                marking = self.targets[code, marking]
            self.markings[i] = marking
            self.last[i] = MOVE_CODES[moves[-1]]
            self.word_length[i] += len(moves)
        # Keep the determinant at 1.
        scale = np.sqrt(a * d - b * c)
        self.frames = (a / scale, b / scale, c / scale, d / scale)

    def renormalize(self, rows: Optional[np.ndarray] = None) -> None:
        if self.vectors is None:
            return
        rows = np.arange(len(self)) if rows is None else rows
        q, r = np.linalg.qr(self.vectors[rows])
        diagonal = np.abs(np.diagonal(r, axis1=1, axis2=2))
        self.column_logs[rows] += np.log(diagonal)
        self.vectors[rows] = q
        self.pending[rows] = 0
        self.renormalizations += 1

    def sigma(self, rows: Optional[np.ndarray] = None) -> np.ndarray:
        rows = np.arange(len(self)) if rows is None else rows
        vectors = self.vectors[rows]
        gram = np.einsum("nij,nik->njk", vectors, vectors)
        return (
            self.column_logs[rows].sum(axis=1)
            + 0.5 * np.linalg.slogdet(gram)[1]
            + self.offset[rows]
        )

    def base_points(self) -> BasePoints:
        return BasePoints(
            frames=tuple(entry.copy() for entry in self.frames),
            markings=self.markings.copy(),
            last=self.last.copy(),
        )


@dataclass
class StoppedRecords:
    radius: float
    tau: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    sigma: np.ndarray
    tanh_integral: np.ndarray = None
    retries: int = 0


@dataclass
class Evolution:
    """σ per path at the record times, with cusp diagnostics."""

    times: np.ndarray
    sigma: np.ndarray
    max_height: np.ndarray
    excursions: np.ndarray
    word_length: np.ndarray
    stopped: Optional[StoppedRecords] = None
    exit_theta: Optional[np.ndarray] = None


def _record_steps(
    duration: float, step: float, record_times: Sequence[float]
) -> tuple[int, float, dict]:
    n_steps = max(1, int(math.ceil(duration / step - 1e-9)))
    step = duration / n_steps
    return n_steps, step, {int(round(time / step)): slot for slot, time in enumerate(record_times)}


def driver_increments(
    driver: DriverSpec, step: float, seed: int, indices: Sequence[int], stream: str = "paths"
) -> Callable[[], tuple]:
    """
    A function returning the next right increment (e00, e01, e11) of the driver. Geodesic
    frames must already be rotated by r_-θ.
    """
    if driver.kind == "geodesic":
        increment = (math.exp(step), 0.0, math.exp(-step))
        return lambda: increment
    return GroupBrownian(seed, indices, step, stream=stream).step


def evolve_geodesic(
    model: MonodromyModel,
    base: BasePoints,
    thetas: np.ndarray,
    duration: float,
    vectors: np.ndarray,
    record_times: Sequence[float] = (),
    ds: float = GEODESIC_STEP,
) -> Evolution:
    """Follow F·r_-θ·g_s for s up to duration, recording σ at the given times."""
    record_times = list(record_times) or [duration]
    n_steps, step, slots = _record_steps(duration, ds, record_times)
    base = BasePoints(rotate_frames(base.frames, thetas), base.markings, base.last)
    ensemble = CocycleEnsemble(model, base, vectors)
    sigma = np.zeros((len(ensemble), len(record_times)))
    if 0 in slots:
        sigma[:, slots[0]] = ensemble.sigma()
    grow, shrink = math.exp(step), math.exp(-step)
    for index in range(1, n_steps + 1):
        ensemble.multiply_symmetric(grow, 0.0, shrink, elapsed=step)
        if index in slots:
            sigma[:, slots[index]] = ensemble.sigma()
    return Evolution(
        times=np.asarray(record_times, dtype=float),
        sigma=sigma,
        max_height=ensemble.max_height,
        excursions=ensemble.excursions,
        word_length=ensemble.word_length,
    )


def evolve_brownian(
    model: MonodromyModel,
    base: BasePoints,
    duration: float,
    dt: float,
    vectors: np.ndarray,
    seed: int,
    indices: Sequence[int],
    record_times: Sequence[float] = (),
    stop_radius: Optional[float] = None,
    stream: str = "paths",
    exit_threshold: float = EXIT_RADIUS,
    max_extensions: int = 4,
) -> Evolution:
    """
    Drive the ensemble by group-chart Brownian motion. With stop_radius, also record σ, τ and
    both Wiener streams at the first time the relative radius reaches it, and the exit
    directions over the trailing window of the horizon.
    """
    record_times = list(record_times) or [duration]
    n_steps, step, slots = _record_steps(duration, dt, record_times)
    driver = GroupBrownian(seed, indices, step, stream=stream)
    ensemble = CocycleEnsemble(model, base, vectors)
    n = len(ensemble)
    sigma = np.zeros((n, len(record_times)))
    if 0 in slots:
        sigma[:, slots[0]] = ensemble.sigma()

    stopped = None
    if stop_radius is not None:
        stopped = StoppedRecords(
            radius=stop_radius,
            tau=np.full(n, np.nan),
            w1=np.zeros(n),
            w2=np.zeros(n),
            sigma=np.zeros(n),
            tanh_integral=np.zeros(n),
        )
    exit_start = int(math.ceil((1 - EXIT_WINDOW) * n_steps))
    exit_sin = np.zeros(n)
    exit_cos = np.zeros(n)

    def advance():
        radius_prev = driver.radius()
        w1_prev, w2_prev = driver.w1, driver.w2
        sigma_prev = ensemble.sigma() if stopped is not None else None
        s_prev = driver.s
        increment = driver.step()
        ensemble.multiply_symmetric(*increment, elapsed=step)
        if stopped is None:
            return
        radius = driver.radius()
        if s_prev < stop_radius:
            span = min(driver.s, stop_radius) - s_prev
            stopped.tanh_integral += 0.5 * (np.tanh(radius_prev) + np.tanh(radius)) * span
        crossing = np.isnan(stopped.tau) & (radius >= stop_radius)
        if crossing.any():
            rows = np.flatnonzero(crossing)
            weight = (stop_radius - radius_prev[rows]) / (radius[rows] - radius_prev[rows])
            stopped.tau[rows] = s_prev + weight * step
            stopped.w1[rows] = w1_prev[rows] + weight * (driver.w1[rows] - w1_prev[rows])
            stopped.w2[rows] = w2_prev[rows] + weight * (driver.w2[rows] - w2_prev[rows])
            sigma_now = ensemble.sigma(rows)
            stopped.sigma[rows] = sigma_prev[rows] + weight * (sigma_now - sigma_prev[rows])

    for index in range(1, n_steps + 1):
        advance()
        if index in slots:
            sigma[:, slots[index]] = ensemble.sigma()
        if index >= exit_start:
            angle = driver.angle()
            exit_sin += np.sin(angle)
            exit_cos += np.cos(angle)

    exit_theta = np.where(
        driver.radius() >= exit_threshold, np.arctan2(exit_sin, exit_cos) % TWO_PI, np.nan
    )

    if stopped is not None:
        extension = n_steps
        for _ in range(max_extensions):
            missing = np.isnan(stopped.tau)
            if not missing.any():
                break
            stopped.retries += int(missing.sum())
            logger.debug(f"{int(missing.sum())} paths extend the horizon by {extension} steps")
            for _ in range(extension):
                advance()
            extension *= 2
        missing = int(np.isnan(stopped.tau).sum())
        if missing:
            raise NotHit(
                f"{missing} paths never reached radius {stop_radius} after {max_extensions} "
                "horizon extensions"
            )

    return Evolution(
        times=np.asarray(record_times, dtype=float),
        sigma=sigma,
        max_height=ensemble.max_height,
        excursions=ensemble.excursions,
        word_length=ensemble.word_length,
        stopped=stopped,
        exit_theta=exit_theta,
    )


def burn_in(
    model: CocycleModel,
    n: int,
    duration: float,
    dt: float,
    seed: int,
    first_index: int = 0,
) -> BasePoints:
    """Base points from a group-chart Brownian segment started at the identity frame."""
    base = BasePoints.identity(n)
    if duration <= 0 or not isinstance(model, MonodromyModel):
        return base
    n_steps = max(1, int(math.ceil(duration / dt - 1e-9)))
    step = duration / n_steps
    driver = GroupBrownian(seed, range(first_index, first_index + n), step, stream="burn-in")
    ensemble = CocycleEnsemble(model, base)
    for _ in range(n_steps):
        ensemble.multiply_symmetric(*driver.step(), elapsed=step)
    logger.debug(
        f"Burn-in of {n} base points over s={duration}: "
        f"{int(ensemble.word_length.sum())} generator moves"
    )
    return ensemble.base_points()


def sigma_series(
    model: CocycleModel,
    driver: DriverSpec,
    v: Optional[np.ndarray],
    horizon: float,
    stride: float,
    seed: int = 0,
    base: Optional[BasePoint] = None,
    index: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    σ_k along one driver path, sampled every `stride` units of time. For the tautological model
    σ is the radius of the driver itself.
    """
    times = np.arange(0, int(round(horizon / stride)) + 1) * stride
    theta = driver.theta if driver.theta is not None else 0.0

    if isinstance(model, TautologicalModel):
        if driver.kind == "geodesic":
            return times, times.copy()
        path = simulate_path(seed, horizon, driver.dt, index=index, theta_init=theta)
        every = int(round(stride / driver.dt))
        return times, path.t[::every][: len(times)]

    base = base or BasePoint()
    start = BasePoints.single(base)
    vectors = np.asarray(v, dtype=float)[None, :, :]
    if driver.kind == "geodesic":
        evolution = evolve_geodesic(
            model, start, np.array([theta]), horizon, vectors, times, ds=min(stride, GEODESIC_STEP)
        )
    else:
        evolution = evolve_brownian(
            model, start, horizon, driver.dt, vectors, seed, [index], times
        )
    return times, evolution.sigma[0]


@dataclass
class ContinuedFractionGrowth:
    partial_quotients: list[int]
    times: np.ndarray
    log_norms: np.ndarray

    @property
    def slope(self) -> float:
        return float(np.polyfit(self.times, self.log_norms, 1)[0])


def geodesic_cf_oracle(theta: float, horizon: float) -> ContinuedFractionGrowth:
    """
    Growth of the continued fraction product of the geodesic r_-θ·g_s, whose forward endpoint
    is ξ = -cot(θ/2). Each partial quotient a contributes a block [[1, a], [0, 1]] or
    [[1, 0], [a, 1]], alternately, and takes geodesic time -log x for the Gauss map iterate x.
    """
    xi = Fraction(-math.cos(theta / 2) / math.sin(theta / 2))
    a0 = math.floor(xi)
    x = xi - a0
    product = np.array([[1, a0], [0, 1]], dtype=object)
    quotients = [a0]
    times, log_norms = [], []
    elapsed = 0.0
    upper = False
    while x != 0 and elapsed < horizon:
        elapsed -= math.log(x)
        x = 1 / x
        a = math.floor(x)
        x -= a
        quotients.append(a)
        block = [[1, a], [0, 1]] if upper else [[1, 0], [a, 1]]
        product = product @ np.array(block, dtype=object)
        upper = not upper
        times.append(elapsed)
        log_norms.append(math.log(max(abs(entry) for entry in product.flat)))
    return ContinuedFractionGrowth(quotients, np.array(times), np.array(log_norms))
