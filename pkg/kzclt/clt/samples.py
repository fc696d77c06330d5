"""
Monte Carlo samples of the normalized deviation (σ_k - λT)/√T.

Runs are keyed by (seed, run index). Base points come from a Brownian burn-in and fiber frames
are Haar distributed, both on their own random streams, so a rerun with the same seed is
bit-identical and adding runs never changes the existing ones.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from kzclt.brownian.sde import TWO_PI, simulate_ensemble
from kzclt.cocycles.evolve import (
    BasePoints,
    DriverSpec,
    burn_in,
    evolve_brownian,
    evolve_geodesic,
    random_frames,
)
from kzclt.cocycles.models import (
    BasePoint,
    CocycleModel,
    MonodromyModel,
    SyntheticGaussian,
    TautologicalModel,
)
from kzclt.common.errors import NonFinite, TooShort
from kzclt.common.logging import get_logger
from kzclt.common.seeds import generator
from kzclt.multilinear.lyapunov import BLOCKS, lyapunov_spectrum

logger = get_logger(__file__)

# Calibration paths are indexed from here on, away from every CLT run index.
CALIBRATION_INDEX = 1 << 40
CALIBRATION_PATHS = 64
CALIBRATION_DT = 1e-2
MIN_SAMPLES = 100
BURN_IN = 200.0
BURN_IN_DT = 1e-2
# Stopped runs simulate this multiple of the target radius before extending the horizon.
STOPPED_HORIZON = 1.25


@dataclass
class Calibration:
    value: float
    stderr: float
    horizon: float
    driver: str
    k: int

    def to_dict(self) -> dict:
        return {
            "lambda": self.value,
            "stderr": self.stderr,
            "t_long": self.horizon,
            "driver": self.driver,
            "k": self.k,
        }


def calibrate_lambda(
    model: CocycleModel,
    k: int,
    horizon: float,
    seed: int,
    driver: Optional[DriverSpec] = None,
    n_blocks: int = BLOCKS,
    burn: float = BURN_IN,
) -> Calibration:
    """
    λ_(k) = λ_1 + … + λ_k from one long orbit, with block-averaged error bars. The orbit is
    drawn from the calibration stream.
    """
    driver = driver or DriverSpec("geodesic")
    if horizon < n_blocks:
        raise TooShort(f"A calibration horizon of {horizon} is shorter than {n_blocks} blocks")

    if isinstance(model, SyntheticGaussian):
        return Calibration(model.exponent, 0.0, horizon, driver.kind, k)

    if isinstance(model, TautologicalModel):
        if driver.kind == "geodesic":
            return Calibration(1.0, 0.0, horizon, driver.kind, k)
        n_paths = CALIBRATION_PATHS
        result = simulate_ensemble(
            seed,
            n_paths,
            horizon,
            dt=min(driver.dt, CALIBRATION_DT),
            stream="calibration",
            chunk_size=n_paths,
        )
        slopes = result.t_final / horizon
        value = float(np.mean(slopes))
        stderr = float(np.std(slopes, ddof=1) / math.sqrt(n_paths))
        logger.info(f"Calibrated λ = {value:.4f} ± {stderr:.4f} from {n_paths} polar paths")
        return Calibration(value, stderr, horizon, driver.kind, k)

    start = burn_in(model, 1, burn, BURN_IN_DT, seed, first_index=CALIBRATION_INDEX)
    theta = driver.theta
    if theta is None:
        theta = float(generator(seed, "calibration").uniform(0, TWO_PI))
    spectrum = lyapunov_spectrum(
        model,
        DriverSpec("brownian" if driver.kind != "geodesic" else "geodesic", theta, driver.dt),
        horizon,
        k_max=k,
        seed=seed,
        base=start.point(0, theta),
        n_blocks=n_blocks,
        stream="calibration",
        index=CALIBRATION_INDEX,
    )
    sums = spectrum.block_rates.sum(axis=1)
    value = float(np.mean(sums))
    stderr = float(np.std(sums, ddof=1) / math.sqrt(len(sums)))
    logger.info(f"Calibrated λ_({k}) = {value:.4f} ± {stderr:.4f} over T={horizon}")
    return Calibration(value, stderr, horizon, driver.kind, k)


@dataclass
class CltSampleSet:
    """(σ_k - λ_ref·T)/√T per run, or (σ_k - λ_ref·τ)/√T for runs stopped at radius T."""

    values: np.ndarray
    driver: str
    horizon: float
    k: int
    lambda_ref: float
    seed: int
    sigma: np.ndarray = field(repr=False, default=None)
    tau: Optional[np.ndarray] = field(repr=False, default=None)
    w1: Optional[np.ndarray] = field(repr=False, default=None)
    w2: Optional[np.ndarray] = field(repr=False, default=None)
    exit_theta: Optional[np.ndarray] = field(repr=False, default=None)
    tanh_integral: Optional[np.ndarray] = field(repr=False, default=None)
    retries: int = 0
    burn_in: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    model: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise NonFinite(f"{int((~np.isfinite(self.values)).sum())} samples are not finite")

    @property
    def n(self) -> int:
        return len(self.values)

    def centered_at_radius(self) -> np.ndarray:
        """(σ_k - λ_ref·T)/√T, the statistic compared against fixed-time geodesic runs."""
        return (self.sigma - self.lambda_ref * self.horizon) / math.sqrt(self.horizon)

    def metadata(self) -> dict:
        return {
            "driver": self.driver,
            "model": self.model,
            "n": self.n,
            "t": self.horizon,
            "k": self.k,
            "lambda": self.lambda_ref,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "retries": self.retries,
        }


@dataclass
class _Runs:
    sigma: np.ndarray
    tau: Optional[np.ndarray] = None
    w1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    exit_theta: Optional[np.ndarray] = None
    tanh_integral: Optional[np.ndarray] = None
    retries: int = 0
    max_height: Optional[np.ndarray] = None
    excursions: Optional[np.ndarray] = None

    @staticmethod
    def merge(parts: list["_Runs"]) -> "_Runs":
        def join(name):
            arrays = [getattr(part, name) for part in parts]
            return None if arrays[0] is None else np.concatenate(arrays)

        merged = _Runs(sigma=join("sigma"), retries=sum(part.retries for part in parts))
        for name in ("tau", "w1", "w2", "exit_theta", "tanh_integral", "max_height", "excursions"):
            setattr(merged, name, join(name))
        return merged


def uniform_directions(seed: int, indices: Sequence[int]) -> np.ndarray:
    return np.array(
        [generator(seed, "sampling", index).uniform(0, TWO_PI) for index in indices]
    )


def _tautological_runs(
    driver: DriverSpec,
    n: int,
    horizon: float,
    seed: int,
    first_index: int,
    chunk_size: int = 1024,
    threads: int = 1,
) -> _Runs:
    if driver.kind == "geodesic":
        return _Runs(sigma=np.full(n, float(horizon)))
    radii = [horizon] if driver.kind == "brownian-stopped" else []
    result = simulate_ensemble(
        seed,
        n,
        STOPPED_HORIZON * horizon if radii else horizon,
        dt=driver.dt,
        radii=radii,
        first_index=first_index,
        exit_threshold=min(10.0, horizon / 2),
        chunk_size=chunk_size,
        threads=threads,
    )
    if not radii:
        return _Runs(sigma=result.t_final, exit_theta=result.exit_theta)
    result.require_hits(horizon)
    return _Runs(
        sigma=np.full(n, float(horizon)),
        tau=result.tau[horizon],
        w1=result.w1_tau[horizon],
        w2=result.w2_tau[horizon],
        exit_theta=result.exit_theta,
        tanh_integral=result.tanh_integral[horizon],
        retries=result.retries,
    )


def _monodromy_runs(
    model: MonodromyModel,
    driver: DriverSpec,
    indices: list[int],
    horizon: float,
    k: int,
    seed: int,
    burn: float,
    thetas: Optional[np.ndarray],
) -> _Runs:
    base = burn_in(model, len(indices), burn, BURN_IN_DT, seed, first_index=indices[0])
    vectors = random_frames(seed, indices, model.dimension, k)
    if driver.kind == "geodesic":
        if thetas is None:
            thetas = (
                np.full(len(indices), driver.theta)
                if driver.theta is not None
                else uniform_directions(seed, indices)
            )
        evolution = evolve_geodesic(model, base, thetas, horizon, vectors, [horizon])
        return _Runs(
            sigma=evolution.sigma[:, 0],
            exit_theta=np.asarray(thetas, dtype=float),
            max_height=evolution.max_height,
            excursions=evolution.excursions,
        )

    stopped = driver.kind == "brownian-stopped"
    evolution = evolve_brownian(
        model,
        base,
        STOPPED_HORIZON * horizon if stopped else horizon,
        driver.dt,
        vectors,
        seed,
        indices,
        stop_radius=horizon if stopped else None,
        exit_threshold=min(10.0, horizon / 2),
    )
    runs = _Runs(
        sigma=evolution.sigma[:, 0],
        exit_theta=evolution.exit_theta,
        max_height=evolution.max_height,
        excursions=evolution.excursions,
    )
    if stopped:
        record = evolution.stopped
        runs.sigma = record.sigma
        runs.tau, runs.w1, runs.w2 = record.tau, record.w1, record.w2
        runs.tanh_integral = record.tanh_integral
        runs.retries = record.retries
    return runs


def _synthetic_runs(model: SyntheticGaussian, indices: list[int], horizon: float, seed: int):
    noise = np.array([generator(seed, "synthetic", index).standard_normal() for index in indices])
    return _Runs(sigma=model.exponent * horizon + math.sqrt(model.variance * horizon) * noise)


def clt_samples(
    model: CocycleModel,
    driver: DriverSpec,
    n: int,
    horizon: float,
    lambda_ref: float,
    k: int = 1,
    seed: int = 0,
    burn: float = BURN_IN,
    thetas: Optional[np.ndarray] = None,
    first_index: int = 0,
    chunk_size: int = 256,
    threads: int = 1,
) -> CltSampleSet:
    """
    n independent runs of the driver for time T (or up to radius T for stopped runs). `thetas`
    fixes the geodesic directions per run.
    """
    if n < MIN_SAMPLES:
        raise TooShort(f"At least {MIN_SAMPLES} runs are needed, got {n}")
    if k > model.dimension:
        raise ValueError(f"k={k} exceeds the dimension {model.dimension} of {model.name}")
    indices = list(range(first_index, first_index + n))
    logger.info(f"Sampling {n} {driver.kind} runs of {model.name} to T={horizon}")

    if isinstance(model, TautologicalModel):
        runs = _tautological_runs(
            driver, n, horizon, seed, first_index, chunk_size=chunk_size, threads=threads
        )
    elif isinstance(model, SyntheticGaussian):
        runs = _synthetic_runs(model, indices, horizon, seed)
    else:
        chunks = [indices[i : i + chunk_size] for i in range(0, n, chunk_size)]

        def run(chunk):
            offset = chunk[0] - first_index
            chunk_thetas = None if thetas is None else thetas[offset : offset + len(chunk)]
            return _monodromy_runs(
                model, driver, chunk, horizon, k, seed, burn, chunk_thetas
            )

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                parts = list(executor.map(run, chunks))
        else:
            parts = [run(chunk) for chunk in chunks]
        runs = _Runs.merge(parts)

    scale = math.sqrt(horizon)
    if driver.kind == "brownian-stopped" and runs.tau is not None:
        values = (runs.sigma - lambda_ref * runs.tau) / scale
    else:
        values = (runs.sigma - lambda_ref * horizon) / scale

    diagnostics = {}
    if runs.max_height is not None:
        diagnostics = {
            "max_height": float(np.max(runs.max_height)),
            "mean_excursions": float(np.mean(runs.excursions)),
        }
    if runs.retries:
        logger.info(f"{runs.retries} stopped runs needed horizon extensions")
    return CltSampleSet(
        values=values,
        driver=driver.kind,
        horizon=horizon,
        k=k,
        lambda_ref=lambda_ref,
        seed=seed,
        sigma=runs.sigma,
        tau=runs.tau,
        w1=runs.w1,
        w2=runs.w2,
        exit_theta=runs.exit_theta,
        tanh_integral=runs.tanh_integral,
        retries=runs.retries,
        burn_in=burn if isinstance(model, MonodromyModel) else 0.0,
        diagnostics=diagnostics,
        model=model.name,
    )


@dataclass
class DriftProfile:
    radii: np.ndarray
    average: np.ndarray
    drift: np.ndarray


def circle_averaged_drift(
    model: CocycleModel,
    radii: Sequence[float],
    n_angles: int = 64,
    seed: int = 0,
    k: int = 1,
    base: Optional[BasePoint] = None,
) -> DriftProfile:
    """
    The average of σ_k over the circle of radius t around the base point, and its derivative
    in t. The derivative tends to λ_(k).
    """
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 2:
        raise TooShort("The drift needs at least two radii")
    if isinstance(model, TautologicalModel):
        average = radii.copy()
    else:
        offset = generator(seed, "sampling").uniform(0, TWO_PI / n_angles)
        thetas = offset + np.arange(n_angles) * TWO_PI / n_angles
        start = BasePoints.single(base or BasePoint())
        start = BasePoints(
            tuple(np.repeat(entry, n_angles) for entry in start.frames),
            np.repeat(start.markings, n_angles),
            np.repeat(start.last, n_angles),
        )
        vectors = np.repeat(random_frames(seed, [0], model.dimension, k), n_angles, axis=0)
        evolution = evolve_geodesic(model, start, thetas, float(radii[-1]), vectors, radii)
        average = evolution.sigma.mean(axis=0)
    return DriftProfile(radii, average, np.gradient(average, radii))
