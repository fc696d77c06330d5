"""
SL(2,R) arithmetic with the conventions the rest of the toolkit depends on.

    g_t = diag(e^t, e^-t)
    r_θ = [[cos θ/2, -sin θ/2], [sin θ/2, cos θ/2]] = exp(θ·Θ)
    X = diag(1/2, -1/2),  Y = [[0, 1/2], [1/2, 0]],  Θ = [[0, -1/2], [1/2, 0]]

The generators satisfy [Θ, X] = Y, [Θ, Y] = -X and [X, Y] = -Θ.
"""

import math
from dataclasses import dataclass

import numpy as np
import sympy


@dataclass(frozen=True)
class GroupElement:
    a: float
    b: float
    c: float
    d: float

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "GroupElement":
        return GroupElement(
            float(matrix[0, 0]), float(matrix[0, 1]), float(matrix[1, 0]), float(matrix[1, 1])
        )

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def renormalized(self) -> "GroupElement":
        scale = math.sqrt(self.det())
        return GroupElement(self.a / scale, self.b / scale, self.c / scale, self.d / scale)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.d, -self.b, -self.c, self.a)

    def transpose(self) -> "GroupElement":
        return GroupElement(self.a, self.c, self.b, self.d)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)


IDENTITY = GroupElement(1.0, 0.0, 0.0, 1.0)


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    """The matrix product gh, renormalized to determinant 1."""
    return GroupElement(
        g.a * h.a + g.b * h.c,
        g.a * h.b + g.b * h.d,
        g.c * h.a + g.d * h.c,
        g.c * h.b + g.d * h.d,
    ).renormalized()


def diagonal(t: float) -> GroupElement:
    """The geodesic flow element g_t."""
    return GroupElement(math.exp(t), 0.0, 0.0, math.exp(-t))


def rotation(theta: float) -> GroupElement:
    """The half-angle rotation r_θ."""
    return GroupElement(
        math.cos(theta / 2), -math.sin(theta / 2), math.sin(theta / 2), math.cos(theta / 2)
    )


def expm_sym(a: float, b: float) -> GroupElement:
    """exp([[a, b], [b, -a]]) in closed form: cosh(ρ)·I + sinh(ρ)/ρ·M with ρ = |(a, b)|."""
    rho = math.hypot(a, b)
    scale = math.sinh(rho) / rho if rho > 1e-8 else 1.0 + rho * rho / 6
    cosh = math.cosh(rho)
    return GroupElement(cosh + scale * a, scale * b, scale * b, cosh - scale * a)


def lie_generators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.array([[0.5, 0.0], [0.0, -0.5]])
    y = np.array([[0.0, 0.5], [0.5, 0.0]])
    theta = np.array([[0.0, -0.5], [0.5, 0.0]])
    return x, y, theta


def lie_generators_exact() -> tuple[sympy.Matrix, sympy.Matrix, sympy.Matrix]:
    half = sympy.Rational(1, 2)
    x = sympy.Matrix([[half, 0], [0, -half]])
    y = sympy.Matrix([[0, half], [half, 0]])
    theta = sympy.Matrix([[0, -half], [half, 0]])
    return x, y, theta


def commutator(a, b):
    return a * b - b * a if isinstance(a, sympy.MatrixBase) else a @ b - b @ a


def commutation_residuals(x, y, theta) -> tuple:
    """[Θ,X] - Y, [Θ,Y] + X and [X,Y] + Θ, each of which vanishes."""
    return (
        commutator(theta, x) - y,
        commutator(theta, y) + x,
        commutator(x, y) + theta,
    )


def cartan(g: GroupElement) -> tuple[float, float, float]:
    """
    Decompose g = r_θ1 g_t r_θ2 with t >= 0.

    θ1 lies in [0, 2π) and θ2 in [0, 4π), since r_θ has period 4π as a matrix. When t = 0 the
    split is not unique and the whole rotation goes into θ1, so cartan(r_θ) = (θ, 0, 0).
    """
    u, singular, vt = np.linalg.svd(g.matrix())
    t = math.log(singular[0])
    if singular[0] - singular[1] < 1e-12:
        angle = 2 * math.atan2(g.c, g.a) % (4 * math.pi)
        if angle >= 2 * math.pi:
            return angle - 2 * math.pi, 0.0, 2 * math.pi
        return angle, 0.0, 0.0

    if np.linalg.det(u) < 0:
        flip = np.diag([1.0, -1.0])
        u = u @ flip
        vt = flip @ vt

    theta1 = 2 * math.atan2(u[1, 0], u[0, 0]) % (4 * math.pi)
    theta2 = 2 * math.atan2(vt[1, 0], vt[0, 0]) % (4 * math.pi)
    if theta1 >= 2 * math.pi:
        # r_(θ + 2π) = -r_θ, so the sign moves over to the right factor.
        theta1 -= 2 * math.pi
        theta2 = (theta2 + 2 * math.pi) % (4 * math.pi)
    return theta1, t, theta2
