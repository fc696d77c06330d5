"""
Irreducible unitary representations of SL(2,R), described by their series and parameter s.

    principal      s ∈ iR, every k ∈ Z, orthonormal basis
    complementary  s ∈ (-1, 1), every k ∈ Z
    discrete       s = ±(2n - 1), k ≥ n for the + sign and k ≤ -n for the - sign

The Casimir acts by (1 - s²)/4.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from kzclt.common.errors import InadmissibleParams

SERIES = ("principal", "complementary", "discrete")
TOLERANCE = 1e-12


@dataclass(frozen=True)
class RepresentationParams:
    series: str
    s: complex
    # Lowest |k| of a discrete series representation, and which half it lives on.
    n: Optional[int] = None
    half: int = 1

    def __post_init__(self):
        if self.series not in SERIES:
            raise InadmissibleParams(f"Unknown series {self.series!r}", field="series")
        s = complex(self.s)
        if self.series == "principal":
            if abs(s.real) > TOLERANCE:
                raise InadmissibleParams(
                    f"The principal series needs an imaginary s, got {s}", field="s"
                )
            s = complex(0.0, s.imag)
        elif self.series == "complementary":
            if abs(s.imag) > TOLERANCE or not -1 < s.real < 1:
                raise InadmissibleParams(
                    f"The complementary series needs a real s in (-1, 1), got {s}", field="s"
                )
            s = complex(s.real, 0.0)
        else:
            n = (abs(s.real) + 1) / 2
            if abs(s.imag) > TOLERANCE or abs(n - round(n)) > TOLERANCE or round(n) < 1:
                raise InadmissibleParams(
                    f"The discrete series needs s = ±(2n - 1) with n >= 1, got {s}", field="s"
                )
            if self.n is not None and self.n != round(n):
                raise InadmissibleParams(f"s = {s} does not match n = {self.n}", field="n")
            object.__setattr__(self, "n", int(round(n)))
            object.__setattr__(self, "half", 1 if s.real > 0 else -1)
            # The ladder formulas close on either half with s = 2n - 1.
            s = complex(2 * self.n - 1, 0.0)
        object.__setattr__(self, "s", s)

    @staticmethod
    def principal(nu: float) -> "RepresentationParams":
        """s = iν."""
        return RepresentationParams("principal", complex(0.0, nu))

    @staticmethod
    def complementary(s: float) -> "RepresentationParams":
        return RepresentationParams("complementary", s)

    @staticmethod
    def discrete(n: int, half: int = 1) -> "RepresentationParams":
        return RepresentationParams("discrete", half * (2 * n - 1))

    @staticmethod
    def from_dict(data: dict) -> "RepresentationParams":
        series = data.get("series")
        if series == "discrete" and "s" not in data:
            if "n" not in data:
                raise InadmissibleParams("A discrete series job needs n or s", field="n")
            return RepresentationParams.discrete(int(data["n"]), int(data.get("half", 1)))
        s = data.get("s", 0.0)
        if isinstance(s, dict):
            s = complex(s.get("re", 0.0), s.get("im", 0.0))
        elif isinstance(s, str):
            s = complex(s.replace("i", "j"))
        return RepresentationParams(series, s)

    @property
    def casimir(self) -> float:
        return float(((1 - self.s**2) / 4).real)

    @property
    def lowest(self) -> int:
        """The index of lowest |k|, where the basis is normalized."""
        return 0 if self.series != "discrete" else self.half * self.n

    def indices(self, truncation: int) -> np.ndarray:
        """The index window [-K, K] ∩ N."""
        if self.series != "discrete":
            return np.arange(-truncation, truncation + 1)
        if truncation < self.n:
            raise InadmissibleParams(
                f"The truncation K={truncation} is below the lowest index {self.n}", field="K"
            )
        if self.half > 0:
            return np.arange(self.n, truncation + 1)
        return np.arange(-truncation, -self.n + 1)

    def interior(self, truncation: int) -> np.ndarray:
        """Mask of the window indices with |k| <= K - 2."""
        return np.abs(self.indices(truncation)) <= truncation - 2

    def raising(self, k: np.ndarray) -> np.ndarray:
        """(2k + 1 + s)/4, the u_{k+1} coefficient of X u_k."""
        return (2 * np.asarray(k) + 1 + self.s) / 4

    def lowering(self, k: np.ndarray) -> np.ndarray:
        """(2k - 1 - s)/4, minus the u_{k-1} coefficient of X u_k."""
        return (2 * np.asarray(k) - 1 - self.s) / 4

    def to_dict(self) -> dict:
        data = {"series": self.series, "s": {"re": self.s.real, "im": self.s.imag}}
        if self.series == "discrete":
            data.update(n=self.n, half=self.half)
        return data


def basis_weights(params: RepresentationParams, truncation: int) -> np.ndarray:
    """
    ‖u_k‖² over the window, from ‖u_k‖² = (2|k| - 1 - s)/(2|k| - 1 + s̄)·‖u_k'‖², where k' is
    the neighbor of k toward the lowest index, which has norm 1.
    """
    indices = params.indices(truncation)
    weights = np.ones(len(indices))
    start = int(np.flatnonzero(indices == params.lowest)[0])
    s = params.s
    for direction in (1, -1):
        position = start + direction
        while 0 <= position < len(indices):
            k = abs(int(indices[position]))
            ratio = (2 * k - 1 - s) / (2 * k - 1 + s.conjugate())
            if abs(ratio.imag) > 1e-9 or ratio.real <= 0:
                raise InadmissibleParams(f"‖u_{indices[position]}‖² is not positive for s = {s}")
            weights[position] = weights[position - direction] * ratio.real
            position += direction
    if not np.all(np.isfinite(weights)) or np.min(weights) <= 0:
        raise InadmissibleParams(f"The basis weights degenerate at K={truncation}", field="K")
    return weights
