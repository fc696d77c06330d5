"""
Coercivity and truncated Poisson solves for 𝓛_c in one representation.

Norms and inner products are the representation's: ⟨f, g⟩ = Σ f_k ḡ_k ‖u_k‖². Linear algebra is
done in scaled coordinates f̃_k = f_k‖u_k‖, where that inner product is the Euclidean one.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from kzclt.common.errors import InadmissibleParams, Singular
from kzclt.common.logging import get_logger
from kzclt.poisson.operators import Ladder, build_operator, ladder
from kzclt.poisson.representation import RepresentationParams

logger = get_logger(__file__)

MAX_CONDITION = 1e14
# Coefficient vectors given as {index: value} or as an array over the window.
Coefficients = Union[Mapping[int, complex], Sequence[complex], np.ndarray]


def _scale(truncation: int) -> float:
    return float(max(truncation - 2, 1) ** 2)


def _interior_norm(matrix, mask: np.ndarray) -> float:
    dense = matrix.toarray() if hasattr(matrix, "toarray") else np.asarray(matrix)
    block = dense[np.ix_(mask, mask)]
    if block.size == 0:
        return 0.0
    return float(np.linalg.norm(block, 2))


def weighted_norm(coefficients: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(coefficients) ** 2 * weights)))


def coefficient_vector(
    params: RepresentationParams, truncation: int, values: Coefficients
) -> np.ndarray:
    """A coefficient array over the window, from a mapping {k: value} or an array."""
    indices = params.indices(truncation)
    if isinstance(values, Mapping):
        vector = np.zeros(len(indices), dtype=complex)
        position = {int(k): i for i, k in enumerate(indices)}
        for k, value in values.items():
            if int(k) not in position:
                raise InadmissibleParams(f"u_{k} is outside the window of {params}", field="rhs")
            vector[position[int(k)]] = complex(value)
        return vector
    vector = np.asarray(values, dtype=complex)
    if vector.shape != indices.shape:
        raise ValueError(f"Expected {len(indices)} coefficients, got {vector.shape}")
    return vector


def casimir_residual(params: RepresentationParams, truncation: int) -> float:
    """‖□ - (1 - s²)/4‖ on the interior, relative to (K - 2)²."""
    operator = build_operator(params, truncation, "Casimir")
    shifted = operator.dense() - params.casimir * np.eye(len(operator.indices))
    return _interior_norm(shifted, operator.interior) / _scale(truncation)


def commutator_residuals(params: RepresentationParams, truncation: int) -> dict[str, float]:
    """The sl(2,R) relations [Θ,X] = Y, [Θ,Y] = -X and [X,Y] = -Θ on the interior."""
    ops = ladder(params, truncation)
    mask = params.interior(truncation)
    scale = _scale(truncation)
    return {
        "theta_x": _interior_norm(ops.theta @ ops.x - ops.x @ ops.theta - ops.y, mask) / scale,
        "theta_y": _interior_norm(ops.theta @ ops.y - ops.y @ ops.theta + ops.x, mask) / scale,
        "x_y": _interior_norm(ops.x @ ops.y - ops.y @ ops.x + ops.theta, mask) / scale,
    }


def lc_identity_check(params: RepresentationParams, c: float, truncation: int) -> float:
    """
    Interior operator norm of the difference between the two assemblies of 𝓛_c,

        -(X² + Y² + c²Θ²) - 2cYΘ    and    -X² - (Y + cΘ)² - cX

    relative to (K - 2)².
    """
    ops = ladder(params, truncation)
    difference = ops.lc(c) - ops.lc_split(c)
    return _interior_norm(difference, params.interior(truncation)) / _scale(truncation)


def _check_nontrivial(params: RepresentationParams) -> None:
    if params.series == "complementary" and abs(params.s.real) >= 1:
        raise InadmissibleParams("The trivial representation has no Poisson problem", field="s")


def coercivity_constant(params: RepresentationParams, c: float, truncation: int) -> float:
    """
    The largest κ with Re⟨𝓛_c f, f⟩ ≥ κ(‖Xf‖² + ‖Yf‖² + ‖Θf‖²) for every f supported on the
    interior of the window, as the lowest generalized eigenvalue of the Hermitian part of 𝓛_c
    against X*X + Y*Y + Θ*Θ.
    """
    _check_nontrivial(params)
    operator = build_operator(params, truncation, "Lc", c)
    ops = ladder(params, truncation)
    mask = operator.interior
    root = np.sqrt(ops.weights)

    def scaled(matrix) -> np.ndarray:
        return root[:, None] * matrix.toarray() / root[None, :]

    lc = operator.scaled()[np.ix_(mask, mask)]
    hermitian = (lc + lc.conj().T) / 2
    gram = np.zeros_like(hermitian)
    for generator in (ops.x, ops.y, ops.theta):
        columns = scaled(generator)[:, mask]
        gram += columns.conj().T @ columns
    kappa = scipy.linalg.eigh(hermitian, gram, eigvals_only=True, subset_by_index=[0, 0])[0]
    logger.debug(f"κ = {kappa:.6g} for {params.series} s={params.s}, c={c}, K={truncation}")
    return float(kappa)


@dataclass
class SpectralSolution:
    params: RepresentationParams
    c: float
    truncation: int
    indices: np.ndarray
    coefficients: np.ndarray
    residual: float
    weights: np.ndarray = field(repr=False)

    def coefficient(self, k: int) -> complex:
        return complex(self.coefficients[int(np.flatnonzero(self.indices == k)[0])])

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "coefficients": {
                str(int(k)): {"re": value.real, "im": value.imag}
                for k, value in zip(self.indices, self.coefficients)
                if value != 0
            },
        }


def solve_poisson(
    params: RepresentationParams, c: float, rhs: Coefficients, truncation: int
) -> SpectralSolution:
    """
    Solve 𝓛_c U = F on the window [-K, K] ∩ N. The residual is taken over the interior rows,
    the only ones where the truncated operator is exact, relative to max(‖F‖, 1).
    """
    _check_nontrivial(params)
    operator = build_operator(params, truncation, "Lc", c)
    forcing = coefficient_vector(params, truncation, rhs)
    if np.any(forcing[~operator.interior] != 0):
        raise InadmissibleParams(
            f"The right hand side must vanish on the two boundary rows of K={truncation}",
            field="rhs",
        )
    root = np.sqrt(operator.weights)
    scaled = operator.scaled()
    condition = np.linalg.cond(scaled)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise Singular(
            f"The truncated 𝓛_c has condition number {condition:.3g} at K={truncation}",
            field="K",
        )
    try:
        solved = scipy.linalg.solve_banded((2, 2), operator.banded(2, 2), root * forcing)
    except (np.linalg.LinAlgError, ValueError) as error:
        raise Singular(f"The truncated 𝓛_c is singular at K={truncation}: {error}") from error
    coefficients = solved / root
    if not np.all(np.isfinite(coefficients)):
        raise Singular(f"The solve at K={truncation} produced non-finite coefficients")
    error = operator.apply(coefficients) - forcing
    mask = operator.interior
    residual = weighted_norm(error[mask], operator.weights[mask]) / max(
        weighted_norm(forcing, operator.weights), 1.0
    )
    logger.debug(f"Solved 𝓛_c U = F with {len(forcing)} modes, residual {residual:.3g}")
    return SpectralSolution(
        params=params,
        c=c,
        truncation=truncation,
        indices=operator.indices,
        coefficients=coefficients,
        residual=residual,
        weights=operator.weights,
    )


@dataclass
class QuadraticForms:
    x: float
    y: float
    theta: float
    lc: float
    norm: float

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "theta": self.theta,
            "lc": self.lc,
            "norm": self.norm,
        }


def _forms(ops: Ladder, c: float, vector: np.ndarray) -> QuadraticForms:
    weights = ops.weights

    def norm2(image):
        return weighted_norm(image, weights) ** 2

    image = ops.lc(c) @ vector
    return QuadraticForms(
        x=norm2(ops.x @ vector),
        y=norm2(ops.y @ vector),
        theta=norm2(ops.theta @ vector),
        lc=float(np.real(np.sum(image * vector.conj() * weights))),
        norm=norm2(vector),
    )


def quadratic_forms(
    params: RepresentationParams, c: float, f: Coefficients, truncation: int
) -> QuadraticForms:
    """‖Xf‖², ‖Yf‖², ‖Θf‖², Re⟨𝓛_c f, f⟩ and ‖f‖² in the representation's inner product."""
    return _forms(ladder(params, truncation), c, coefficient_vector(params, truncation, f))


@dataclass
class Certificate:
    bound: float
    value: float
    holds: bool

    def to_dict(self) -> dict:
        return {"bound": self.bound, "value": self.value, "holds": self.holds}


def lower_bound_certificate(
    params: RepresentationParams,
    c: float,
    rho: float,
    f: Coefficients,
    truncation: int,
    tolerance: float = 1e-9,
) -> Certificate:
    """
    Compare Re⟨𝓛_c f, f⟩ with the closed-form lower bound of the coercivity estimate:

        principal, complementary   (ρ-1)(1/(ρ-1) + 1/ρ - c²)‖Θf‖² + (1 - 1/ρ)(1 - s²)/4·‖f‖²
        discrete                   (7/16)‖Θf‖² + (s² - 1)/4·‖f‖²
    """
    if rho <= 1:
        raise InadmissibleParams(f"ρ must exceed 1, got {rho}", field="rho")
    forms = quadratic_forms(params, c, f, truncation)
    s_squared = float((params.s**2).real)
    if params.series == "discrete":
        bound = 7 / 16 * forms.theta + (s_squared - 1) / 4 * forms.norm
    else:
        bound = (rho - 1) * (1 / (rho - 1) + 1 / rho - c**2) * forms.theta + (
            1 - 1 / rho
        ) * params.casimir * forms.norm
    slack = tolerance * max(abs(bound), abs(forms.lc), 1.0)
    return Certificate(bound=bound, value=forms.lc, holds=forms.lc >= bound - slack)


def sobolev_norms(solution: SpectralSolution) -> dict[str, float]:
    """‖Θ²U‖ and ‖YΘU‖ of a solution."""
    ops = ladder(solution.params, solution.truncation)
    theta_u = ops.theta @ solution.coefficients
    return {
        "theta_theta": weighted_norm(ops.theta @ theta_u, ops.weights),
        "y_theta": weighted_norm(ops.y @ theta_u, ops.weights),
    }


@dataclass
class PoissonJob:
    params: RepresentationParams
    c: float
    truncation: int
    rhs: Optional[dict[int, complex]] = None

    @staticmethod
    def from_dict(data: dict) -> "PoissonJob":
        """{series, s, n, c, K, rhs: {index: coeff}}, with coefficients numbers or {re, im}."""
        rhs = data.get("rhs")
        if rhs is not None:
            rhs = {
                int(k): complex(v["re"], v.get("im", 0.0)) if isinstance(v, dict) else complex(v)
                for k, v in rhs.items()
            }
        return PoissonJob(
            params=RepresentationParams.from_dict(data),
            c=float(data.get("c", 1.0)),
            truncation=int(data["K"]),
            rhs=rhs,
        )


@dataclass
class PoissonResult:
    job: PoissonJob
    kappa: float
    solution: Optional[SpectralSolution] = None
    sobolev: Optional[dict[str, float]] = None

    def to_dict(self) -> dict:
        data = {
            **self.job.params.to_dict(),
            "c": self.job.c,
            "K": self.job.truncation,
            "kappa": self.kappa,
            "residual": None,
            "coefficients": {},
        }
        if self.solution is not None:
            data.update(self.solution.to_dict())
            data["sobolev"] = self.sobolev
        return data


def run_job(job: PoissonJob) -> PoissonResult:
    kappa = coercivity_constant(job.params, job.c, job.truncation)
    if job.rhs is None:
        return PoissonResult(job, kappa)
    solution = solve_poisson(job.params, job.c, job.rhs, job.truncation)
    return PoissonResult(job, kappa, solution, sobolev_norms(solution))


def sweep(jobs: Sequence[PoissonJob], threads: int = 1) -> list[PoissonResult]:
    """Run independent jobs, returning results in job order whatever the thread count."""
    logger.info(f"Running {len(jobs)} spectral jobs on {threads} thread(s)")
    if threads <= 1:
        return [run_job(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(run_job, jobs))

