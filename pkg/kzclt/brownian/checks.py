"""
Statistical checks on the Brownian layer: the Itô isometry on the raw streams, the chi-square
test of exit angles, and the log-fit of tracking medians.
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from kzclt.common.seeds import PathNoise


@dataclass
class IsometryCheck:
    mean: float
    target: float
    stderr: float

    @property
    def z_score(self) -> float:
        return abs(self.mean - self.target) / self.stderr if self.stderr > 0 else 0.0


def ito_isometry_check(
    f: Callable[[np.ndarray], np.ndarray],
    n_paths: int,
    horizon: float,
    dt: float,
    seed: int,
    stream: str = "paths",
    chunk_size: int = 4096,
) -> IsometryCheck:
    """
    Compare the sample mean of (∫f dW⁽¹⁾)² with ∫f² ds.

    The stochastic integral is the left-point sum, and the target is the matching Riemann sum,
    whose value is the exact expectation of the discrete integral.
    """
    n_steps = int(round(horizon / dt))
    times = np.arange(n_steps) * dt
    weights = np.asarray(f(times), dtype=float) * np.ones(n_steps)
    squares = []
    for start in range(0, n_paths, chunk_size):
        noise = PathNoise(seed, stream, range(start, min(start + chunk_size, n_paths)))
        integral = np.zeros(len(noise.indices))
        for step in range(n_steps):
            integral += weights[step] * noise.next()[:, 0] * math.sqrt(dt)
        squares.append(integral**2)
    squares = np.concatenate(squares)
    return IsometryCheck(
        mean=float(squares.mean()),
        target=float((weights**2).sum() * dt),
        stderr=float(squares.std(ddof=1) / math.sqrt(len(squares))),
    )


@dataclass
class UniformityCheck:
    statistic: float
    p_value: float
    bins: int


def exit_uniformity(angles: np.ndarray, bins: int = 32) -> UniformityCheck:
    """Chi-square test of the angles against the uniform law on the circle."""
    angles = np.asarray(angles)
    angles = angles[np.isfinite(angles)]
    counts, _ = np.histogram(angles % (2 * math.pi), bins=bins, range=(0.0, 2 * math.pi))
    result = stats.chisquare(counts)
    return UniformityCheck(float(result.statistic), float(result.pvalue), bins)


@dataclass
class LogFit:
    slope: float
    intercept: float
    residuals: np.ndarray

    def predict(self, radius):
        return self.slope * np.log(radius) + self.intercept


def tracking_regression(radii: Sequence[float], medians: Sequence[float]) -> LogFit:
    """Least squares fit of medians ≈ a·log T + b."""
    log_radii = np.log(np.asarray(radii, dtype=float))
    medians = np.asarray(medians, dtype=float)
    fit = stats.linregress(log_radii, medians)
    residuals = medians - (fit.slope * log_radii + fit.intercept)
    return LogFit(float(fit.slope), float(fit.intercept), residuals)
