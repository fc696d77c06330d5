"""
Log-norms of the action of a matrix on k-dimensional exterior vectors.

A k-frame V spans the decomposable vector v₁∧…∧v_k, whose norm is sqrt(det VᵀV). The log-norm
ratio of A on it is therefore a difference of Gram log-determinants, and agrees with the norm
of the k-th compound matrix applied to the Plücker coordinates of V.
"""

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np

from kzclt.common.errors import Degenerate

# Frames whose condition number exceeds this have numerically lost rank.
MAX_CONDITION = 1e12


def gram_logdet(vectors: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(vectors.T @ vectors)
    if sign <= 0:
        raise Degenerate("The Gram matrix of the frame is not positive definite")
    return float(logdet)


def _check_rank(vectors: np.ndarray, what: str) -> None:
    condition = np.linalg.cond(vectors)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise Degenerate(f"{what} has condition number {condition:.3g}")


@dataclass(frozen=True)
class KFrame:
    """k column vectors of dimension 2m."""

    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[1] > vectors.shape[0]:
            raise ValueError(f"A k-frame needs k <= d columns, got shape {vectors.shape}")
        _check_rank(vectors, "The frame")
        object.__setattr__(self, "vectors", vectors)

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[0]

    @cached_property
    def gram_logdet(self) -> float:
        return gram_logdet(self.vectors)

    def orthonormalized(self) -> "KFrame":
        q, _ = np.linalg.qr(self.vectors)
        return KFrame(q)

    def plucker(self) -> np.ndarray:
        """Coordinates of v₁∧…∧v_k on the basis e_I, I increasing."""
        return np.array(
            [
                np.linalg.det(self.vectors[list(rows), :])
                for rows in combinations(range(self.dimension), self.k)
            ]
        )


def wedge_lognorm(matrix: np.ndarray, frame: KFrame) -> float:
    image = np.asarray(matrix, dtype=float) @ frame.vectors
    _check_rank(image, "The image of the frame")
    return 0.5 * (gram_logdet(image) - frame.gram_logdet)


def compound_matrix(matrix: np.ndarray, k: int) -> np.ndarray:
    """The k-th compound: minors of `matrix` over increasing row and column index sets."""
    matrix = np.asarray(matrix, dtype=float)
    rows = list(combinations(range(matrix.shape[0]), k))
    columns = list(combinations(range(matrix.shape[1]), k))
    compound = np.empty((len(rows), len(columns)))
    for i, row_set in enumerate(rows):
        for j, column_set in enumerate(columns):
            compound[i, j] = np.linalg.det(matrix[np.ix_(row_set, column_set)])
    return compound


def compound_lognorm(matrix: np.ndarray, frame: KFrame) -> float:
    """wedge_lognorm evaluated through the compound matrix."""
    plucker = frame.plucker()
    image = compound_matrix(matrix, frame.k) @ plucker
    return float(np.log(np.linalg.norm(image)) - np.log(np.linalg.norm(plucker)))


def top_singular_logsum(matrix: np.ndarray, k: int) -> float:
    """log of the norm of the k-th compound, the sum of the k largest log singular values."""
    singular = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    return float(np.sum(np.log(singular[:k])))
