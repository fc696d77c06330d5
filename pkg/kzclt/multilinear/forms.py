"""
Second fundamental form layer.

B is a complex symmetric h×h matrix and H = B·B̄. On a k-dimensional subspace with orthonormal
frame W,

    Φ_k = 2 tr(W*HW) - tr(C·C̄),  Ψ_k = tr(C),  where C = WᵀBW

so that the Laplacian of σ_k along the Teichmüller disk is 2Φ_k.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from kzclt.common.seeds import generator

SYMMETRY_TOLERANCE = 1e-12
HERMITIAN_TOLERANCE = 1e-10


@dataclass(frozen=True)
class FormMatrix:
    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=complex)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"B must be square, got shape {b.shape}")
        asymmetry = np.max(np.abs(b - b.T)) if b.size else 0.0
        if asymmetry > SYMMETRY_TOLERANCE:
            raise ValueError(f"B is not symmetric: |B - Bᵀ| = {asymmetry:.3g}")
        object.__setattr__(self, "b", b)
        h = self.h
        if h.size:
            if np.max(np.abs(h - h.conj().T)) > HERMITIAN_TOLERANCE:
                raise ValueError("H = B·B̄ is not Hermitian")
            if np.min(np.linalg.eigvalsh(h)) < -HERMITIAN_TOLERANCE:
                raise ValueError("H = B·B̄ is not nonnegative")

    @property
    def size(self) -> int:
        return self.b.shape[0]

    @property
    def h(self) -> np.ndarray:
        return self.b @ self.b.conj()

    def rotate(self, theta: float) -> "FormMatrix":
        """The form along the rotated direction, B ↦ e^{-2iθ}B."""
        return FormMatrix(np.exp(-2j * theta) * self.b)

    def spectral_bound(self) -> float:
        return float(np.linalg.norm(self.b, 2)) if self.size else 0.0


Subspace = Union[Sequence[int], np.ndarray]


def _frame(form: FormMatrix, subspace: Subspace) -> np.ndarray:
    subspace = np.asarray(subspace)
    if subspace.ndim == 1:
        return np.eye(form.size)[:, subspace.astype(int)]
    return subspace


def phi_psi(form: FormMatrix, subspace: Subspace) -> tuple[float, complex]:
    """
    (Φ_k, Ψ_k) on a subspace given by basis indices or by an orthonormal h×k frame matrix.
    """
    w = _frame(form, subspace)
    restricted_b = w.T @ form.b @ w
    restricted_h = w.conj().T @ form.h @ w
    phi = 2 * np.trace(restricted_h) - np.trace(restricted_b @ restricted_b.conj())
    return float(phi.real), complex(np.trace(restricted_b))


def random_form(h: int, bound: float = 1.0, seed: int = 0, index: int = 0) -> FormMatrix:
    """A complex symmetric B with spectral norm at most `bound`."""
    rng = generator(seed, "synthetic", index)
    a = rng.standard_normal((h, h)) + 1j * rng.standard_normal((h, h))
    b = (a + a.T) / 2
    scale = bound * rng.uniform() / max(np.linalg.norm(b, 2), math.ulp(1.0))
    return FormMatrix(b * scale)


def diagonal_form(values: Sequence[complex]) -> FormMatrix:
    return FormMatrix(np.diag(np.asarray(values, dtype=complex)))


def random_orthonormal(h: int, k: int, seed: int = 0, index: int = 0) -> np.ndarray:
    rng = generator(seed, "synthetic", index)
    q, r = np.linalg.qr(rng.standard_normal((h, k)))
    return q * np.sign(np.diag(r))
