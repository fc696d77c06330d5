"""
Leafwise hyperbolic Brownian motion in polar coordinates.

The radial and angular parts solve

    dt = dW1 + coth(2t) ds
    dθ = 2 / sinh(2t) dW2

and the radial part splits as t(s) = W1(s) + s + η(s) with η increasing by 2 / (e^{4t} - 1) ds.
The polar scheme integrates exactly that split: W1 is the raw stream, η is advanced by Euler,
and t is their sum, so the identity holds by construction.

Below radius EPSILON the polar chart is stiff, and paths move in the disk chart instead:

    dz = (1 - |z|²) (dW1 + i dW2) e,   e = z / |z|

which has no drift since the disk metric is conformal. W1 is still the radial noise there.

Modes:
    ito-polar   the full process
    radial      θ pinned to its initial value; t is identical path by path to ito-polar
    ode-frozen  both streams zero, u = cosh(2t) integrated by explicit Euler (u' = 2u)
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from kzclt.common.errors import NonFinite, NotHit, TooShort
from kzclt.common.logging import get_logger
from kzclt.common.seeds import PathNoise

logger = get_logger(__file__)

MODES = ("ito-polar", "ode-frozen", "radial")
EPSILON = 0.05
EXIT_RADIUS = 10.0
EXIT_WINDOW = 0.1
TWO_PI = 2 * math.pi


@dataclass
class BrownianPath:
    s: np.ndarray
    t: np.ndarray
    theta: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    dt: float
    mode: str
    seed: int
    index: int
    # Raw angle increments per step, zero first.
    dtheta: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def eta(self) -> np.ndarray:
        return self.t - self.w1 - self.s


@dataclass
class StoppingRecord:
    radius: float
    tau: float
    step: int
    weight: float
    w1: float
    w2: float
    eta: float
    theta: float


class _PolarStepper:
    """Vectorized state of a batch of paths, advanced one step at a time."""

    def __init__(
        self,
        seed: int,
        indices: Sequence[int],
        dt: float,
        t_init: float,
        theta_init: float,
        mode: str,
        stream: str,
        epsilon: float,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"Unknown Brownian mode: {mode}")
        if dt <= 0:
            raise ValueError(f"The step size must be positive, got {dt}")
        if t_init < 0:
            raise ValueError(f"The initial radius must be nonnegative, got {t_init}")

        n = len(indices)
        self.dt = dt
        self.sqrt_dt = math.sqrt(dt)
        self.mode = mode
        self.epsilon = epsilon
        self.theta_init = theta_init
        self.noise = PathNoise(seed, stream, indices) if mode != "ode-frozen" else None

        self.steps = 0
        self.s = 0.0
        self.w1 = np.zeros(n)
        self.w2 = np.zeros(n)
        self.t = np.full(n, float(t_init))
        # Unwrapped angles.
        self.theta = np.full(n, float(theta_init))
        self.eta = np.full(n, float(t_init))
        self.polar = np.full(n, t_init >= epsilon)
        direction = complex(math.cos(theta_init), math.sin(theta_init))
        self.z = np.full(n, math.tanh(t_init) * direction)
        self.u = np.full(n, math.cosh(2 * t_init))
        # The angle and η increments of the last step, kept apart from θ and η so that increments
        # far below their float spacing are not lost.
        self.dtheta = np.zeros(n)
        self.deta = np.zeros(n)

    def step(self) -> None:
        dt = self.dt
        if self.mode == "ode-frozen":
            self.u = self.u * (1 + 2 * dt)
            self.steps += 1
            self.s = self.steps * dt
            self.t = 0.5 * np.arccosh(self.u)
            eta = self.t - self.s
            self.deta = eta - self.eta
            self.eta = eta
            self.dtheta = np.zeros_like(self.t)
            self._check_finite()
            return

        xi = self.noise.next()
        dw1 = xi[:, 0] * self.sqrt_dt
        dw2 = xi[:, 1] * self.sqrt_dt
        t_prev = self.t
        self.w1 = self.w1 + dw1
        self.w2 = self.w2 + dw2
        self.steps += 1
        self.s = self.steps * dt

        eta_prev = self.eta.copy()
        t_new = np.empty_like(t_prev)
        dtheta = np.zeros_like(t_prev)
        deta = np.zeros_like(t_prev)

        polar = self.polar
        if polar.any():
            tp = t_prev[polar]
            deta[polar] = 2.0 / np.expm1(4 * tp) * dt
            self.eta[polar] += deta[polar]
            t_new[polar] = self.w1[polar] + self.s + self.eta[polar]
            if self.mode == "ito-polar":
                dtheta[polar] = 2.0 / np.sinh(2 * tp) * dw2[polar]

        chart = ~polar
        if chart.any():
            z = self.z[chart]
            radius = np.abs(z)
            direction = np.where(
                radius > 0,
                z / np.where(radius > 0, radius, 1.0),
                np.exp(1j * self.theta[chart]),
            )
            z = z + (1 - radius) * (1 + radius) * (dw1[chart] + 1j * dw2[chart]) * direction
            self.z[chart] = z
            t_new[chart] = np.arctanh(np.abs(z))
            if self.mode == "ito-polar":
                # Keep the angle continuous across the branch cut.
                angle = np.angle(z)
                delta = (angle - self.theta[chart] + math.pi) % TWO_PI - math.pi
                dtheta[chart] = delta
            self.eta[chart] = t_new[chart] - self.w1[chart] - self.s

        # A polar step that overshoots the origin reflects through it.
        crossed = polar & (t_new < 0)
        if crossed.any():
            t_new[crossed] = -t_new[crossed]
            self.eta[crossed] = t_new[crossed] - self.w1[crossed] - self.s
            if self.mode == "ito-polar":
                dtheta[crossed] += math.pi
        steady = polar & ~crossed

        self.t = t_new
        self.theta = self.theta + dtheta
        self.dtheta = dtheta
        self._check_finite()

        # Chart switches.
        enter_polar = chart & (t_new >= self.epsilon)
        if enter_polar.any():
            self.polar[enter_polar] = True
            self.eta[enter_polar] = t_new[enter_polar] - self.w1[enter_polar] - self.s
        leave_polar = polar & (t_new < self.epsilon)
        if leave_polar.any():
            self.polar[leave_polar] = False
            self.z[leave_polar] = np.tanh(t_new[leave_polar]) * np.exp(
                1j * self.theta[leave_polar]
            )
            self.eta[leave_polar] = t_new[leave_polar] - self.w1[leave_polar] - self.s
        steady &= ~leave_polar
        self.deta = np.where(steady, deta, self.eta - eta_prev)

    def _check_finite(self) -> None:
        if not np.all(np.isfinite(self.t)):
            raise NonFinite(
                f"The radial process became non-finite after {self.steps} steps at dt={self.dt}; "
                "reduce the step size"
            )

    @property
    def eta_exact(self) -> np.ndarray:
        return self.t - self.w1 - self.s


def simulate_path(
    seed: int,
    horizon: float,
    dt: float = 1e-3,
    t_init: float = 0.0,
    mode: str = "ito-polar",
    theta_init: float = 0.0,
    index: int = 0,
    stream: str = "paths",
    epsilon: float = EPSILON,
) -> BrownianPath:
    """Simulate one path and keep every sample."""
    if horizon < dt:
        raise ValueError(f"The horizon {horizon} is shorter than one step {dt}")
    n_steps = int(round(horizon / dt))
    stepper = _PolarStepper(seed, [index], dt, t_init, theta_init, mode, stream, epsilon)

    t = np.empty(n_steps + 1)
    theta = np.empty(n_steps + 1)
    w1 = np.empty(n_steps + 1)
    w2 = np.empty(n_steps + 1)
    dtheta = np.zeros(n_steps + 1)
    t[0], theta[0], w1[0], w2[0] = t_init, theta_init, 0.0, 0.0
    for i in range(1, n_steps + 1):
        stepper.step()
        t[i] = stepper.t[0]
        theta[i] = stepper.theta[0]
        w1[i] = stepper.w1[0]
        w2[i] = stepper.w2[0]
        dtheta[i] = stepper.dtheta[0]

    return BrownianPath(
        s=np.arange(n_steps + 1) * dt,
        t=t,
        theta=theta % TWO_PI,
        w1=w1,
        w2=w2,
        dt=dt,
        mode=mode,
        seed=seed,
        index=index,
        dtheta=dtheta,
    )


def _unwrap(theta: np.ndarray) -> np.ndarray:
    return np.unwrap(theta)


def stopping_time(path: BrownianPath, radius: float) -> StoppingRecord:
    """The first time the path reaches hyperbolic radius T, linearly interpolated."""
    if path.t[0] >= radius:
        return StoppingRecord(
            radius, 0.0, 0, 0.0, path.w1[0], path.w2[0], path.eta[0], path.theta[0]
        )
    above = np.flatnonzero(path.t >= radius)
    if not len(above):
        raise NotHit(
            f"The path never reached radius {radius} within the horizon {path.s[-1]:.3f}; "
            "extend the horizon"
        )
    step = int(above[0])
    t0, t1 = path.t[step - 1], path.t[step]
    weight = (radius - t0) / (t1 - t0)
    theta = _unwrap(path.theta[step - 1 : step + 1])

    def lerp(values):
        return values[step - 1] + weight * (values[step] - values[step - 1])

    return StoppingRecord(
        radius=radius,
        tau=path.s[step - 1] + weight * path.dt,
        step=step,
        weight=weight,
        w1=lerp(path.w1),
        w2=lerp(path.w2),
        eta=lerp(path.eta),
        theta=float((theta[0] + weight * (theta[1] - theta[0])) % TWO_PI),
    )


def eta_series(path: BrownianPath) -> np.ndarray:
    """
    η_s = t(s) - W1(s) - s. It starts at t_init and is nondecreasing while the path stays in
    the polar chart.
    """
    return path.eta


def eta_tail_oscillation(
    horizons: Sequence[float],
    n_paths: int,
    dt: float = 1e-2,
    seed: int = 0,
    stream: str = "paths",
) -> dict[float, float]:
    """
    Median over paths of sup_{s ∈ [S/2, S]} |η_s - η_{S/2}| for each horizon S, from one batch
    of paths started at the origin.
    """
    horizons = sorted(float(horizon) for horizon in horizons)
    stepper = _PolarStepper(seed, range(n_paths), dt, 0.0, 0.0, "ito-polar", stream, EPSILON)
    windows = {
        horizon: (int(round(horizon / (2 * dt))), int(round(horizon / dt)))
        for horizon in horizons
    }
    moved = {horizon: np.zeros(n_paths) for horizon in horizons}
    largest = {horizon: np.zeros(n_paths) for horizon in horizons}
    for step in range(1, windows[horizons[-1]][1] + 1):
        stepper.step()
        for horizon, (start, end) in windows.items():
            if start < step <= end:
                moved[horizon] += stepper.deta
                np.maximum(largest[horizon], np.abs(moved[horizon]), out=largest[horizon])
    return {horizon: float(np.median(largest[horizon])) for horizon in horizons}


def circular_mean(theta: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.arctan2(np.sin(theta).sum(axis=axis), np.cos(theta).sum(axis=axis)) % TWO_PI


def exit_direction(path: BrownianPath, threshold: float = EXIT_RADIUS) -> float:
    """The circular mean of the angle over the trailing 10% of samples."""
    if path.t[-1] < threshold:
        raise TooShort(
            f"The final radius {path.t[-1]:.3f} is below the exit threshold {threshold}"
        )
    start = int(math.ceil((1 - EXIT_WINDOW) * (len(path.t) - 1)))
    return float(circular_mean(path.theta[start:]))


def ray_distance(radius, delta):
    """
    Distance from the point at hyperbolic radius t and angle δ off a geodesic ray from the
    origin: ½ asinh(sinh(2t)|sin δ|) when the foot point is on the ray, t otherwise.
    """
    delta = (np.asarray(delta) + math.pi) % TWO_PI - math.pi
    with np.errstate(over="ignore"):
        near = 0.5 * np.arcsinh(np.sinh(2 * np.asarray(radius)) * np.abs(np.sin(delta)))
    return np.where(np.abs(delta) <= math.pi / 2, near, radius)


def _offsets_from_tau(increments: np.ndarray, step: int, weight: float) -> np.ndarray:
    """θ_j - θ(τ) for every sample j, summed outward from τ."""
    offset = np.empty(len(increments))
    if step == 0:
        offset[0] = 0.0
        offset[1:] = np.cumsum(increments[1:])
        return offset
    offset[step] = (1 - weight) * increments[step]
    offset[step + 1 :] = offset[step] + np.cumsum(increments[step + 1 :])
    offset[step - 1] = -weight * increments[step]
    if step > 1:
        backward = np.cumsum(increments[step - 1 : 0 : -1])
        offset[: step - 1] = (offset[step - 1] - backward)[::-1]
    return offset


def tracking_deviation(path: BrownianPath, radius: float) -> float:
    """Hyperbolic distance from ρ(τ_T) to the geodesic ray toward the exit direction."""
    record = stopping_time(path, radius)
    direction = exit_direction(path)
    if path.dtheta is None:
        return float(ray_distance(radius, direction - record.theta))
    start = int(math.ceil((1 - EXIT_WINDOW) * (len(path.t) - 1)))
    offsets = _offsets_from_tau(path.dtheta, record.step, record.weight)
    return float(ray_distance(radius, np.mean(offsets[start:])))


@dataclass
class EnsembleResult:
    """Per-path summaries of a batch, computed online."""

    indices: np.ndarray
    horizon: float
    dt: float
    radii: list[float]
    tau: dict[float, np.ndarray] = field(default_factory=dict)
    w1_tau: dict[float, np.ndarray] = field(default_factory=dict)
    w2_tau: dict[float, np.ndarray] = field(default_factory=dict)
    eta_tau: dict[float, np.ndarray] = field(default_factory=dict)
    theta_tau: dict[float, np.ndarray] = field(default_factory=dict)
    tanh_integral: dict[float, np.ndarray] = field(default_factory=dict)
    # Exit direction minus θ(τ_T), resolved below the float spacing of θ.
    exit_offset: dict[float, np.ndarray] = field(default_factory=dict)
    t_final: np.ndarray = None
    w1_final: np.ndarray = None
    eta_final: np.ndarray = None
    exit_theta: np.ndarray = None
    eta_tail: np.ndarray = None
    retries: int = 0

    def hit(self, radius: float) -> np.ndarray:
        return np.isfinite(self.tau[radius])

    def require_hits(self, radius: float) -> None:
        missing = int((~self.hit(radius)).sum())
        if missing:
            raise NotHit(f"{missing} paths never reached radius {radius}")

    def tracking(self, radius: float) -> np.ndarray:
        return ray_distance(radius, self.exit_offset[radius])

    @staticmethod
    def merge(parts: list["EnsembleResult"]) -> "EnsembleResult":
        first = parts[0]
        merged = EnsembleResult(
            indices=np.concatenate([part.indices for part in parts]),
            horizon=first.horizon,
            dt=first.dt,
            radii=first.radii,
            retries=sum(part.retries for part in parts),
        )
        for name in (
            "tau",
            "w1_tau",
            "w2_tau",
            "eta_tau",
            "theta_tau",
            "tanh_integral",
            "exit_offset",
        ):
            getattr(merged, name).update(
                {
                    radius: np.concatenate([getattr(part, name)[radius] for part in parts])
                    for radius in first.radii
                }
            )
        for name in ("t_final", "w1_final", "eta_final", "exit_theta", "eta_tail"):
            setattr(merged, name, np.concatenate([getattr(part, name) for part in parts]))
        return merged


def _simulate_chunk(
    seed: int,
    indices: Sequence[int],
    horizon: float,
    dt: float,
    radii: list[float],
    t_init: float,
    theta_init: float,
    mode: str,
    stream: str,
    epsilon: float,
    exit_threshold: float,
    max_extensions: int,
) -> EnsembleResult:
    n = len(indices)
    stepper = _PolarStepper(seed, indices, dt, t_init, theta_init, mode, stream, epsilon)
    n_steps = int(round(horizon / dt))
    exit_start = int(math.ceil((1 - EXIT_WINDOW) * n_steps))
    half = n_steps // 2

    result = EnsembleResult(indices=np.asarray(indices), horizon=horizon, dt=dt, radii=radii)
    for radius in radii:
        result.tau[radius] = np.where(t_init >= radius, 0.0, np.nan) * np.ones(n)
        for name in ("w1_tau", "w2_tau", "theta_tau"):
            getattr(result, name)[radius] = np.zeros(n)
        result.eta_tau[radius] = np.full(n, float(t_init))
        result.theta_tau[radius] = np.full(n, float(theta_init))
        result.tanh_integral[radius] = np.zeros(n)

    exit_sin = np.zeros(n)
    exit_cos = np.zeros(n)
    eta_half = np.zeros(n)
    eta_tail = np.zeros(n)

    # Angles relative to the start of the exit window, summed from the raw increments. At
    # radius T the tracking distance resolves differences of order e^{-2T}, far below the float
    # spacing of θ itself.
    window = {"open": False, "offset": np.zeros(n), "sum": np.zeros(n), "count": 0}
    since_tau = {radius: np.zeros(n) for radius in radii}
    anchor = {radius: np.full(n, np.nan) for radius in radii}

    def open_window():
        window["open"] = True
        for radius in radii:
            done = ~np.isnan(result.tau[radius])
            anchor[radius][done] = -since_tau[radius][done]

    def sample_window():
        exit_sin[:] += np.sin(stepper.theta)
        exit_cos[:] += np.cos(stepper.theta)
        window["sum"] += window["offset"]
        window["count"] += 1

    if exit_start == 0:
        open_window()
        sample_window()

    def advance():
        t_prev = stepper.t
        s_prev = stepper.s
        w1_prev, w2_prev = stepper.w1, stepper.w2
        eta_prev = stepper.eta_exact
        theta_prev = stepper.theta
        offset_prev = window["offset"].copy()
        stepper.step()
        dtheta = stepper.dtheta
        if window["open"]:
            window["offset"] += dtheta
        for radius in radii:
            integral = result.tanh_integral[radius]
            if s_prev < radius:
                # Trapezoid rule over the part of the step before s = radius.
                span = min(stepper.s, radius) - s_prev
                integral += 0.5 * (np.tanh(t_prev) + np.tanh(stepper.t)) * span
            tau = result.tau[radius]
            if not window["open"]:
                done = ~np.isnan(tau)
                since_tau[radius][done] += dtheta[done]
            crossing = np.isnan(tau) & (stepper.t >= radius)
            if crossing.any():
                weight = (radius - t_prev[crossing]) / (stepper.t[crossing] - t_prev[crossing])
                tau[crossing] = s_prev + weight * dt
                result.w1_tau[radius][crossing] = w1_prev[crossing] + weight * (
                    stepper.w1[crossing] - w1_prev[crossing]
                )
                result.w2_tau[radius][crossing] = w2_prev[crossing] + weight * (
                    stepper.w2[crossing] - w2_prev[crossing]
                )
                result.eta_tau[radius][crossing] = eta_prev[crossing] + weight * (
                    stepper.eta_exact[crossing] - eta_prev[crossing]
                )
                result.theta_tau[radius][crossing] = (
                    theta_prev[crossing]
                    + weight * (stepper.theta[crossing] - theta_prev[crossing])
                ) % TWO_PI
                if window["open"]:
                    anchor[radius][crossing] = (
                        offset_prev[crossing] + weight * dtheta[crossing]
                    )
                else:
                    since_tau[radius][crossing] = (1 - weight) * dtheta[crossing]

    for step in range(1, n_steps + 1):
        advance()
        if step == exit_start:
            open_window()
        if step >= exit_start:
            sample_window()
        if step == half:
            eta_half = stepper.eta_exact.copy()
        elif step > half:
            np.maximum(eta_tail, np.abs(stepper.eta_exact - eta_half), out=eta_tail)

    result.t_final = stepper.t.copy()
    result.w1_final = stepper.w1.copy()
    result.eta_final = stepper.eta_exact.copy()
    result.eta_tail = eta_tail
    result.exit_theta = np.where(
        stepper.t >= exit_threshold, np.arctan2(exit_sin, exit_cos) % TWO_PI, np.nan
    )

    # Paths that have not reached every radius keep walking on the same streams.
    extension_steps = n_steps
    for _ in range(max_extensions):
        missing = np.zeros(n, dtype=bool)
        for radius in radii:
            missing |= np.isnan(result.tau[radius])
        if not missing.any():
            break
        result.retries += int(missing.sum())
        logger.debug(f"{int(missing.sum())} paths extend the horizon by {extension_steps} steps")
        for _ in range(extension_steps):
            advance()
        extension_steps *= 2

    mean_offset = window["sum"] / max(window["count"], 1)
    for radius in radii:
        result.exit_offset[radius] = np.where(
            np.isnan(result.exit_theta), np.nan, mean_offset - anchor[radius]
        )
    return result


def simulate_ensemble(
    seed: int,
    n_paths: int,
    horizon: float,
    dt: float = 1e-3,
    radii: Sequence[float] = (),
    t_init: float = 0.0,
    theta_init: float = 0.0,
    mode: str = "ito-polar",
    stream: str = "paths",
    epsilon: float = EPSILON,
    exit_threshold: float = EXIT_RADIUS,
    max_extensions: int = 4,
    chunk_size: int = 1024,
    threads: int = 1,
    first_index: int = 0,
) -> EnsembleResult:
    """
    Simulate paths first_index .. first_index + n_paths - 1 in chunks.

    The result does not depend on chunk_size or threads since every path owns its stream.
    """
    radii = sorted(float(radius) for radius in radii)
    indices = list(range(first_index, first_index + n_paths))
    chunks = [indices[i : i + chunk_size] for i in range(0, n_paths, chunk_size)]
    logger.info(
        f"Simulating {n_paths} paths to s={horizon} at dt={dt} ({mode}, {len(chunks)} chunks)"
    )

    def run(chunk):
        return _simulate_chunk(
            seed,
            chunk,
            horizon,
            dt,
            radii,
            t_init,
            theta_init,
            mode,
            stream,
            epsilon,
            exit_threshold,
            max_extensions,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            parts = list(executor.map(run, chunks))
    else:
        parts = [run(chunk) for chunk in chunks]

    result = EnsembleResult.merge(parts)
    if result.retries:
        logger.info(f"{result.retries} horizon extensions were needed to reach every radius")
    return result
