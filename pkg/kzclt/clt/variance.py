"""
Variance estimators and the structural checks built on them.
"""

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
from scipy import stats

from kzclt.clt.samples import CltSampleSet, clt_samples, uniform_directions
from kzclt.cocycles.evolve import DriverSpec
from kzclt.cocycles.models import CocycleModel
from kzclt.common.logging import get_logger
from kzclt.common.seeds import generator

logger = get_logger(__file__)

RESAMPLES = 2000
LEVEL = 0.95
# Below this the fitted Gaussian is a point mass.
DEGENERATE_VARIANCE = 1e-12
DEGENERATE_ATOL = 1e-9
INTERVAL_GRID = np.linspace(-2.5, 2.5, 20)
Z_95 = stats.norm.ppf(0.975)


def _sample_variance(values, axis=-1):
    return np.var(values, axis=axis, ddof=1)


def _sample_covariance(x, y, axis=-1):
    dx = x - np.mean(x, axis=axis, keepdims=True)
    dy = y - np.mean(y, axis=axis, keepdims=True)
    return np.sum(dx * dy, axis=axis) / (x.shape[axis] - 1)


def _bootstrap(data: tuple, statistic, seed: int, resamples: int, level: float):
    result = stats.bootstrap(
        data,
        statistic,
        n_resamples=resamples,
        confidence_level=level,
        method="percentile",
        paired=len(data) > 1,
        vectorized=True,
        batch=100,
        random_state=generator(seed, "bootstrap"),
    )
    interval = result.confidence_interval
    return float(interval.low), float(interval.high)


@dataclass
class VarianceReport:
    variance: float
    ci_low: float
    ci_high: float
    ks: float
    ks_pvalue: float
    n: int
    horizon: float
    driver: str = ""
    seed: int = 0
    lambda_ref: float = 0.0
    degenerate: bool = False
    mean: float = 0.0
    # Distance to the Gaussian centered at zero rather than at the sample mean.
    ks_centered: float = 0.0

    @property
    def ci(self) -> tuple[float, float]:
        return self.ci_low, self.ci_high

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2

    def gaussian(self, level: float = 0.01) -> bool:
        return self.ks_pvalue >= level

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_ref,
            "mean": self.mean,
            "V": self.variance,
            "ci": [self.ci_low, self.ci_high],
            "ks": self.ks,
            "ks_pvalue": self.ks_pvalue,
            "ks_centered": self.ks_centered,
            "n": self.n,
            "t": self.horizon,
            "driver": self.driver,
            "seed": self.seed,
            "degenerate": self.degenerate,
        }

    @staticmethod
    def from_dict(data: dict) -> "VarianceReport":
        return VarianceReport(
            variance=data["V"],
            ci_low=data["ci"][0],
            ci_high=data["ci"][1],
            ks=data["ks"],
            ks_pvalue=data.get("ks_pvalue", 1.0),
            n=data["n"],
            horizon=data["t"],
            driver=data.get("driver", ""),
            seed=data.get("seed", 0),
            lambda_ref=data.get("lambda", 0.0),
            degenerate=data.get("degenerate", False),
            mean=data.get("mean", 0.0),
            ks_centered=data.get("ks_centered", data["ks"]),
        )


def variance_estimate(
    samples: CltSampleSet,
    resamples: int = RESAMPLES,
    level: float = LEVEL,
    seed: Optional[int] = None,
) -> VarianceReport:
    """
    Unbiased variance with a percentile bootstrap interval, and the Kolmogorov-Smirnov
    distance to the Gaussian fitted by the sample mean and that variance.

    At a finite horizon the samples carry an O(1/√T) bias from the reference exponent, which
    the fitted Gaussian absorbs. The distance to the Gaussian centered at zero is kept in
    `ks_centered`.
    """
    values = samples.values
    seed = samples.seed if seed is None else seed
    mean = float(np.mean(values))
    variance = float(_sample_variance(values))
    degenerate = variance < DEGENERATE_VARIANCE
    if degenerate:
        low = high = variance
        # The Gaussian is a point mass; its distance to the samples is their mass off it.
        ks = float(np.mean(np.abs(values - mean) > DEGENERATE_ATOL))
        ks_centered = float(np.mean(np.abs(values) > DEGENERATE_ATOL))
        pvalue = 1.0 if ks == 0 else 0.0
    else:
        low, high = _bootstrap((values,), _sample_variance, seed, resamples, level)
        low, high = min(low, variance), max(high, variance)
        scale = math.sqrt(variance)
        test = stats.kstest(values, "norm", args=(mean, scale))
        ks, pvalue = float(test.statistic), float(test.pvalue)
        ks_centered = float(stats.kstest(values, "norm", args=(0.0, scale)).statistic)
    report = VarianceReport(
        variance=variance,
        ci_low=low,
        ci_high=high,
        ks=ks,
        ks_pvalue=pvalue,
        n=samples.n,
        horizon=samples.horizon,
        driver=samples.driver,
        seed=samples.seed,
        lambda_ref=samples.lambda_ref,
        degenerate=degenerate,
        mean=mean,
        ks_centered=ks_centered,
    )
    logger.info(
        f"V = {variance:.4f} [{low:.4f}, {high:.4f}], mean = {mean:.4f}, KS = {ks:.4f} "
        f"({samples.driver}, N={samples.n}, T={samples.horizon})"
    )
    return report


@dataclass
class RelationCheck:
    """A residual that should vanish, with a 95% interval."""

    residual: float
    ci_low: float
    ci_high: float

    @property
    def violated(self) -> bool:
        return not self.ci_low <= 0 <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "ci": [self.ci_low, self.ci_high],
            "violated": self.violated,
        }


def _lambda_square_width(lam: float, lam_stderr: float) -> float:
    return Z_95 * 2 * abs(lam) * lam_stderr


def variance_relation(
    report_g: VarianceReport, report_rho: VarianceReport, lam: float, lam_stderr: float = 0.0
) -> RelationCheck:
    """V_g - (V_ρ - λ²), with interval half-widths combined in quadrature."""
    residual = report_g.variance - (report_rho.variance - lam**2)
    width = math.sqrt(
        report_g.half_width**2
        + report_rho.half_width**2
        + _lambda_square_width(lam, lam_stderr) ** 2
    )
    return RelationCheck(residual, residual - width, residual + width)


def positivity_check(
    report_rho: VarianceReport, lam: float, lam_stderr: float = 0.0
) -> RelationCheck:
    """V_ρ - λ², which must not be negative."""
    residual = report_rho.variance - lam**2
    width = math.sqrt(report_rho.half_width**2 + _lambda_square_width(lam, lam_stderr) ** 2)
    return RelationCheck(residual, residual - width, residual + width)


@dataclass
class CovarianceReport:
    covariance: float
    ci_low: float
    ci_high: float
    target: float
    predicted: Optional[float] = None

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "covariance": self.covariance,
            "ci": [self.ci_low, self.ci_high],
            "target": self.target,
            "predicted": self.predicted,
        }


def covariance_predictor(samples: CltSampleSet, lam: float) -> float:
    """The finite-T value -λ²·(1/T)·E∫₀ᵀ tanh(t(s)) ds of the covariance."""
    return float(-(lam**2) * np.mean(samples.tanh_integral) / samples.horizon)


def stopped_covariance(
    samples: CltSampleSet,
    lam: float,
    stream: str = "w1",
    resamples: int = RESAMPLES,
    level: float = LEVEL,
) -> CovarianceReport:
    """
    Cov((σ - λτ)/√T, -λW_τ/√T) for stopped runs. With stream "w2" the independent angular
    noise replaces W⁽¹⁾ and the covariance vanishes.
    """
    if samples.tau is None:
        raise ValueError("The covariance needs runs stopped at radius T")
    noise = samples.w1 if stream == "w1" else samples.w2
    other = -lam * noise / math.sqrt(samples.horizon)
    covariance = float(_sample_covariance(samples.values, other))
    low, high = _bootstrap(
        (samples.values, other), _sample_covariance, samples.seed, resamples, level
    )
    predicted = covariance_predictor(samples, lam) if samples.tanh_integral is not None else None
    return CovarianceReport(
        covariance=covariance,
        ci_low=min(low, covariance),
        ci_high=max(high, covariance),
        target=-(lam**2) if stream == "w1" else 0.0,
        predicted=predicted,
    )


def covariance_check(
    model: CocycleModel,
    n: int,
    horizon: float,
    lam: float,
    seed: int,
    k: int = 1,
    dt: float = 1e-2,
    stream: str = "w1",
    burn: Optional[float] = None,
) -> CovarianceReport:
    kwargs = {} if burn is None else {"burn": burn}
    samples = clt_samples(
        model, DriverSpec("brownian-stopped", dt=dt), n, horizon, lam, k, seed, **kwargs
    )
    return stopped_covariance(samples, lam, stream)


def interval_discrepancy(x: np.ndarray, y: np.ndarray, grid: np.ndarray = INTERVAL_GRID) -> float:
    """sup over grid intervals [a, b] of |P_x([a, b]) - P_y([a, b])|."""
    x, y = np.sort(x), np.sort(y)

    def mass(sorted_values, a, b):
        inside = np.searchsorted(sorted_values, b, side="right") - np.searchsorted(
            sorted_values, a, side="left"
        )
        return inside / len(sorted_values)

    return max(
        (abs(mass(x, a, b) - mass(y, a, b)) for a, b in combinations(grid, 2)), default=0.0
    )


@dataclass
class StoppedFixedCheck:
    discrepancy: float
    horizon: float
    n: int
    retries: int = 0

    def to_dict(self) -> dict:
        return {
            "discrepancy": self.discrepancy,
            "t": self.horizon,
            "n": self.n,
            "retries": self.retries,
        }


def stopped_vs_fixed_check(
    model: CocycleModel,
    n: int,
    horizon: float,
    seed: int,
    lam: float = 1.0,
    k: int = 1,
    dt: float = 1e-2,
    burn: Optional[float] = None,
) -> StoppedFixedCheck:
    """
    Compare (σ - λT)/√T for runs stopped at radius T against geodesic runs for time T from
    the same base points, each aimed at the exit direction of its Brownian twin.
    """
    kwargs = {} if burn is None else {"burn": burn}
    stopped = clt_samples(
        model, DriverSpec("brownian-stopped", dt=dt), n, horizon, lam, k, seed, **kwargs
    )
    thetas = stopped.exit_theta
    if thetas is not None:
        thetas = np.where(np.isnan(thetas), uniform_directions(seed, range(n)), thetas)
    fixed = clt_samples(
        model, DriverSpec("geodesic"), n, horizon, lam, k, seed, thetas=thetas, **kwargs
    )
    discrepancy = interval_discrepancy(stopped.centered_at_radius(), fixed.values)
    logger.info(f"Stopped against fixed-time discrepancy at T={horizon}: {discrepancy:.4f}")
    return StoppedFixedCheck(discrepancy, horizon, n, stopped.retries)


@dataclass
class CoverageResult:
    coverage: float
    repetitions: int
    level: float


def coverage_check(
    variance: float,
    n: int,
    repetitions: int = 200,
    seed: int = 0,
    resamples: int = RESAMPLES,
    level: float = LEVEL,
) -> CoverageResult:
    """How often the bootstrap interval of Gaussian(0, V) samples contains V."""
    hits = 0
    for repetition in range(repetitions):
        values = generator(seed, "synthetic", repetition).normal(0.0, math.sqrt(variance), n)
        samples = CltSampleSet(
            values=values, driver="synthetic", horizon=1.0, k=1, lambda_ref=0.0, seed=seed
        )
        report = variance_estimate(samples, resamples, level, seed=seed + repetition)
        hits += report.ci_low <= variance <= report.ci_high
    return CoverageResult(hits / repetitions, repetitions, level)
