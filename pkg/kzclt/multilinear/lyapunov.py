"""
Lyapunov spectra by QR deflation, and Oseledets unstable subspaces by backward iteration.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import subspace_angles

from kzclt.cocycles.evolve import (
    BasePoints,
    CocycleEnsemble,
    DriverSpec,
    driver_increments,
    random_frames,
    rotate_frames,
    sigma_series,
)
from kzclt.cocycles.models import BasePoint, CocycleModel, MonodromyModel, TautologicalModel
from kzclt.common.errors import Degenerate, GapTooSmall
from kzclt.common.logging import get_logger
from kzclt.multilinear.wedge import KFrame

logger = get_logger(__file__)

GAP_THRESHOLD = 0.02
BLOCKS = 20


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray
    stderr: np.ndarray
    horizon: float
    renormalizations: int = 0
    block_rates: Optional[np.ndarray] = field(default=None, repr=False)

    def gap(self, k: int) -> float:
        """λ_k - λ_{k+1}, 1-indexed."""
        return float(self.exponents[k - 1] - self.exponents[k])

    def to_dict(self) -> dict:
        return {
            "exponents": self.exponents.tolist(),
            "stderr": self.stderr.tolist(),
            "horizon": self.horizon,
            "renormalizations": self.renormalizations,
        }


def _block_statistics(rates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = rates.mean(axis=0)
    stderr = rates.std(axis=0, ddof=1) / math.sqrt(len(rates))
    return mean, stderr


def _tautological_spectrum(
    model: TautologicalModel, driver: DriverSpec, horizon: float, k_max: int, seed: int
) -> LyapunovSpectrum:
    block = horizon / BLOCKS
    times, sigma = sigma_series(model, driver, None, horizon, block, seed=seed)
    rates = np.diff(sigma)[:, None] / block
    # σ_2 vanishes identically, so λ_2 = -λ_1.
    rates = np.hstack([rates, -rates])[:, :k_max]
    mean, stderr = _block_statistics(rates)
    return LyapunovSpectrum(mean, stderr, horizon, block_rates=rates)


def lyapunov_spectrum(
    model: CocycleModel,
    driver: DriverSpec,
    horizon: float,
    k_max: Optional[int] = None,
    seed: int = 0,
    base: Optional[BasePoint] = None,
    n_blocks: int = BLOCKS,
    stream: str = "paths",
    index: int = 0,
) -> LyapunovSpectrum:
    """
    Estimate λ_1 ≥ … ≥ λ_k_max along one driver path. The logs of the R diagonals are split into
    n_blocks blocks of equal driver time, and the standard errors are those of the block rates.
    """
    k_max = k_max or model.dimension
    if k_max > model.dimension:
        raise ValueError(f"k_max={k_max} exceeds the dimension {model.dimension}")
    if isinstance(model, TautologicalModel):
        return _tautological_spectrum(model, driver, horizon, k_max, seed)

    base = base or BasePoint()
    start = BasePoints.single(base)
    step = driver.dt if driver.kind != "geodesic" else 0.1
    n_steps = max(n_blocks, int(math.ceil(horizon / step)))
    n_steps -= n_steps % n_blocks
    step = horizon / n_steps
    if driver.kind == "geodesic":
        theta = driver.theta if driver.theta is not None else base.theta
        start = BasePoints(rotate_frames(start.frames, [theta]), start.markings, start.last)

    ensemble = CocycleEnsemble(model, start, random_frames(seed, [index], model.dimension, k_max))
    increment = driver_increments(driver, step, seed, [index], stream=stream)
    rates = np.zeros((n_blocks, k_max))
    per_block = n_steps // n_blocks
    for block in range(n_blocks):
        before = ensemble.column_logs[0].copy()
        for _ in range(per_block):
            ensemble.multiply_symmetric(*increment(), elapsed=step)
        ensemble.renormalize()
        rates[block] = (ensemble.column_logs[0] - before) / (per_block * step)

    mean, stderr = _block_statistics(rates)
    order = np.argsort(-mean, kind="stable")
    logger.info(
        f"Lyapunov spectrum of {model.name} over T={horizon}: "
        + ", ".join(f"{value:.4f}" for value in mean[order])
    )
    return LyapunovSpectrum(
        mean[order], stderr[order], horizon, ensemble.renormalizations, rates[:, order]
    )


def projective_distance(u: np.ndarray, v: np.ndarray) -> float:
    """The largest principal angle between the column spans of u and v."""
    u = u.vectors if isinstance(u, KFrame) else u
    v = v.vectors if isinstance(v, KFrame) else v
    return float(np.max(subspace_angles(u, v)))


def isotropy_residual(frame: KFrame, form: np.ndarray) -> float:
    q = frame.orthonormalized().vectors
    return float(np.max(np.abs(q.T @ np.asarray(form, dtype=float) @ q)))


def oseledets_unstable(
    model: MonodromyModel,
    base: BasePoint,
    k: int,
    back: float,
    seed: int = 0,
    spectrum: Optional[LyapunovSpectrum] = None,
    gap_threshold: float = GAP_THRESHOLD,
) -> KFrame:
    """
    The unstable k-frame at the base point: a random k-frame pushed from g_-T·base to the base
    by the cocycle, re-orthonormalized after every matrix.
    """
    if k >= model.dimension:
        raise ValueError(f"k={k} leaves no complement in dimension {model.dimension}")
    if spectrum is None:
        spectrum = lyapunov_spectrum(
            model, DriverSpec("geodesic", theta=base.theta), max(back, 50.0), seed=seed, base=base
        )
    gap = spectrum.gap(k)
    if gap < gap_threshold:
        raise GapTooSmall(f"The gap λ_{k} - λ_{k + 1} = {gap:.4f} is below {gap_threshold}")

    vectors = random_frames(seed, [0], model.dimension, k)[0]
    for matrix in model.backward_products(base, back):
        vectors, r = np.linalg.qr(matrix @ vectors)
        if np.min(np.abs(np.diag(r))) == 0:
            raise Degenerate("The pushed frame lost rank")
    return KFrame(vectors)
