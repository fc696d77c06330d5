"""
Cocycle backends.

    TautologicalModel  σ(z, ·) = d(0, z) in closed form, exponent 1
    MonodromyModel     the locally constant cocycle of an origami, on the full homology or on
                       the complement of the tautological plane
    ConstantCocycle    every generator move acts by one fixed matrix (test double)
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import sympy

from kzclt.cocycles.monodromy import (
    MOVE_CODES,
    MonodromyRep,
    build_monodromy,
    tautological_complement,
)
from kzclt.cocycles.origami import Origami, resolve_origami
from kzclt.cocycles.reduction import geodesic_word
from kzclt.common.logging import get_logger
from kzclt.hyperbolic.group import IDENTITY, GroupElement

logger = get_logger(__file__)

SUBSPACES = ("full", "complement")


@dataclass(frozen=True)
class BasePoint:
    """A reduced frame with its marking, and a direction for geodesic drivers."""

    frame: GroupElement = IDENTITY
    marking: int = 0
    theta: float = 0.0


class CocycleModel(ABC):
    name: str
    dimension: int
    # The top exponent when it is known in closed form.
    exponent: Optional[float] = None

    @abstractmethod
    def describe(self) -> dict:
        ...


class TautologicalModel(CocycleModel):
    name = "tautological"
    dimension = 2
    exponent = 1.0

    def sigma(self, radius):
        return radius

    def describe(self) -> dict:
        return {"kind": "tautological", "dimension": self.dimension, "exponent": self.exponent}


def tautological_model() -> TautologicalModel:
    return TautologicalModel()


def radial_laplacian_of_radius() -> sympy.Expr:
    """
    The hyperbolic Laplacian in polar coordinates applied to σ = t,

        (1 / sinh 2t) ∂_t (sinh 2t ∂_t σ) + (4 / sinh² 2t) ∂²_θ σ

    which simplifies to 2 coth(2t).
    """
    t, theta = sympy.symbols("t theta", positive=True)
    sigma = t
    radial = sympy.diff(sympy.sinh(2 * t) * sympy.diff(sigma, t), t) / sympy.sinh(2 * t)
    angular = 4 / sympy.sinh(2 * t) ** 2 * sympy.diff(sigma, theta, 2)
    return sympy.simplify(radial + angular)


class MonodromyModel(CocycleModel):
    def __init__(
        self,
        rep: MonodromyRep,
        origami: Optional[Origami] = None,
        subspace: str = "full",
        name: Optional[str] = None,
    ) -> None:
        self.rep = rep
        self.origami = origami
        self.subspace = subspace
        self.name = name or rep.name
        self.dimension = rep.dimension

    @cached_property
    def float_matrices(self) -> np.ndarray:
        return self.rep.matrices.astype(float)

    @property
    def targets(self) -> np.ndarray:
        return self.rep.targets

    def form(self, marking: int = 0) -> np.ndarray:
        return self.rep.form(marking)

    def backward_products(self, base: BasePoint, duration: float, ds: float = 0.1) -> list:
        """
        The cocycle matrices carrying a frame from g_-T·base back to base along the geodesic,
        in the order they are applied.
        """
        word, _, _ = geodesic_word(
            self.rep, base.frame, base.marking, base.theta + math.pi, duration, ds
        )
        return [
            np.linalg.inv(self.float_matrices[MOVE_CODES[move], marking])
            for move, marking in reversed(word)
        ]

    def describe(self) -> dict:
        description = {
            "kind": "origami",
            "name": self.name,
            "subspace": self.subspace,
            "dimension": self.dimension,
            "markings": self.rep.size,
        }
        if self.origami is not None:
            description.update(
                genus=self.origami.genus, stratum=self.origami.stratum, squares=self.origami.n
            )
        return description


class ConstantCocycle(MonodromyModel):
    """Every move acts by `matrix`; `backward_products` is one copy per unit of time."""

    def __init__(self, matrix: np.ndarray, form: Optional[np.ndarray] = None) -> None:
        super().__init__(MonodromyRep.constant(np.asarray(matrix), form), name="constant")

    def backward_products(self, base: BasePoint, duration: float, ds: float = 0.1) -> list:
        matrix = self.float_matrices[0, 0]
        return [matrix] * max(1, int(math.ceil(duration)))


class SyntheticGaussian(CocycleModel):
    """σ_T = λT + sqrt(V·T)·ξ with ξ standard normal, for validating the estimators."""

    name = "synthetic"
    dimension = 1

    def __init__(self, variance: float, exponent: float = 0.0) -> None:
        if variance < 0:
            raise ValueError(f"The variance must be nonnegative, got {variance}")
        self.variance = variance
        self.exponent = exponent

    def describe(self) -> dict:
        return {"kind": "synthetic", "variance": self.variance, "exponent": self.exponent}


def origami_model(origami: Origami, subspace: str = "full") -> MonodromyModel:
    if subspace not in SUBSPACES:
        raise ValueError(f"Unknown subspace {subspace!r}, choose from {SUBSPACES}")
    rep = build_monodromy(origami)
    if subspace == "complement":
        rep = tautological_complement(origami, rep).rep
    return MonodromyModel(rep, origami=origami, subspace=subspace, name=origami.name)


def build_model(
    kind: str,
    origami: Optional[str] = None,
    subspace: str = "full",
    variance: float = 1.0,
    exponent: float = 0.0,
) -> CocycleModel:
    """A model from its config description."""
    if kind == "tautological":
        return tautological_model()
    if kind == "synthetic":
        return SyntheticGaussian(variance, exponent)
    if kind == "origami":
        if origami is None:
            raise ValueError("An origami model needs an origami name or file")
        return origami_model(resolve_origami(origami), subspace)
    raise ValueError(f"Unknown model kind: {kind}")
