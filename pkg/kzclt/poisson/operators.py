"""
Truncated matrices of sl(2,R) elements in the basis {u_k} of one representation.

Column k holds the coefficients of the image of u_k:

    Θ u_k = ik u_k
    X u_k = a_k u_{k+1} - b_k u_{k-1}
    Y u_k = i a_k u_{k+1} + i b_k u_{k-1}

with a_k = (2k + 1 + s)/4 and b_k = (2k - 1 - s)/4, and u_k = 0 off the index set. Products are
assembled on the window [-K, K]; only rows and columns with |k| <= K - 2 are exact.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from kzclt.common.errors import InadmissibleParams
from kzclt.poisson.representation import RepresentationParams, basis_weights

OPERATORS = (
    "Theta",
    "X",
    "Y",
    "Casimir",
    "Lc",
    "Lc_split",
    "symmetric_part",
    "adjoint",
)


@dataclass
class TruncatedOperator:
    name: str
    params: RepresentationParams
    truncation: int
    indices: np.ndarray
    matrix: sparse.csr_matrix
    weights: np.ndarray

    def __post_init__(self):
        if np.min(self.weights) <= 0:
            raise InadmissibleParams("The basis weights must be positive")

    @property
    def bandwidth(self) -> int:
        coo = self.matrix.tocoo()
        nonzero = coo.data != 0
        if not nonzero.any():
            return 0
        return int(np.max(np.abs(coo.row[nonzero] - coo.col[nonzero])))

    @property
    def interior(self) -> np.ndarray:
        return self.params.interior(self.truncation)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def scaled(self) -> np.ndarray:
        """The matrix in coordinates f̃_k = f_k‖u_k‖, where the inner product is Euclidean."""
        root = np.sqrt(self.weights)
        return root[:, None] * self.dense() / root[None, :]

    def apply(self, coefficients: np.ndarray) -> np.ndarray:
        return self.matrix @ coefficients

    def banded(self, lower: int = 2, upper: int = 2, scaled: bool = True) -> np.ndarray:
        """The (lower, upper) band storage used by scipy.linalg.solve_banded."""
        matrix = self.scaled() if scaled else self.dense()
        size = matrix.shape[0]
        bands = np.zeros((lower + upper + 1, size), dtype=complex)
        for offset in range(-lower, upper + 1):
            diagonal = np.diagonal(matrix, offset)
            if offset >= 0:
                bands[upper - offset, offset:] = diagonal
            else:
                bands[upper - offset, : size + offset] = diagonal
        return bands


@dataclass
class Ladder:
    """Θ, X and Y on one window, as sparse matrices."""

    params: RepresentationParams
    truncation: int
    indices: np.ndarray
    weights: np.ndarray
    theta: sparse.csr_matrix
    x: sparse.csr_matrix
    y: sparse.csr_matrix

    @property
    def identity(self) -> sparse.csr_matrix:
        return sparse.identity(len(self.indices), dtype=complex, format="csr")

    def casimir(self) -> sparse.csr_matrix:
        return -(self.x @ self.x) - (self.y @ self.y) + self.theta @ self.theta

    def lc(self, c: float) -> sparse.csr_matrix:
        """-(X² + Y² + c²Θ²) - 2cYΘ"""
        return (
            -(self.x @ self.x)
            - (self.y @ self.y)
            - c**2 * (self.theta @ self.theta)
            - 2 * c * (self.y @ self.theta)
        )

    def lc_split(self, c: float) -> sparse.csr_matrix:
        """-X² - (Y + cΘ)² - cX"""
        shifted = self.y + c * self.theta
        return -(self.x @ self.x) - shifted @ shifted - c * self.x

    def symmetric_part(self, c: float) -> sparse.csr_matrix:
        shifted = self.y + c * self.theta
        return -(self.x @ self.x) - shifted @ shifted

    def adjoint(self, c: float) -> sparse.csr_matrix:
        """The weighted adjoint -X² - (Y + cΘ)² + cX."""
        return self.symmetric_part(c) + c * self.x


def ladder(params: RepresentationParams, truncation: int) -> Ladder:
    indices = params.indices(truncation)
    weights = basis_weights(params, truncation)
    raising = params.raising(indices[:-1])
    lowering = params.lowering(indices[1:])
    size = len(indices)
    theta = sparse.diags(1j * indices.astype(complex), 0, shape=(size, size), format="csr")
    x = sparse.diags([raising, -lowering], [-1, 1], shape=(size, size), format="csr")
    y = sparse.diags([1j * raising, 1j * lowering], [-1, 1], shape=(size, size), format="csr")
    return Ladder(params, truncation, indices, weights, theta, x, y)


def build_operator(
    params: RepresentationParams,
    truncation: int,
    which: str,
    c: Optional[float] = None,
    lower_c: float = 1.0,
) -> TruncatedOperator:
    """Assemble one operator on [-K, K] ∩ N. The Lc family needs c >= 1."""
    if which not in OPERATORS:
        raise ValueError(f"Unknown operator {which!r}, choose from {OPERATORS}")
    operators = ladder(params, truncation)
    if which in ("Theta", "X", "Y"):
        matrix = getattr(operators, which.lower())
    elif which == "Casimir":
        matrix = operators.casimir()
    else:
        if c is None or c < lower_c:
            raise InadmissibleParams(f"{which} needs c >= {lower_c}, got {c}", field="c")
        matrix = {
            "Lc": operators.lc,
            "Lc_split": operators.lc_split,
            "symmetric_part": operators.symmetric_part,
            "adjoint": operators.adjoint,
        }[which](c)
    name = which if c is None or which in ("Theta", "X", "Y", "Casimir") else f"{which}(c={c})"
    return TruncatedOperator(
        name=name,
        params=params,
        truncation=truncation,
        indices=operators.indices,
        matrix=sparse.csr_matrix(matrix),
        weights=operators.weights,
    )
