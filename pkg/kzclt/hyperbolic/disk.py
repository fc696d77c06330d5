"""
The Poincaré disk with curvature -4, so that dist(0, r) = artanh(r) = ½ log((1+r)/(1-r)).

Group elements act on the upper half-plane by w ↦ (aw+b)/(cw+d) and the result is carried to
the disk by the Cayley map w ↦ (w-i)/(w+i).
"""

import cmath
import math
from dataclasses import dataclass

import numpy as np

from kzclt.hyperbolic.group import GroupElement


@dataclass(frozen=True)
class DiskPoint:
    z: complex

    @staticmethod
    def from_polar(t: float, theta: float) -> "DiskPoint":
        return DiskPoint(math.tanh(t) * cmath.exp(1j * theta))

    def polar(self) -> tuple[float, float]:
        """(t, θ) with t the hyperbolic radius and θ in [0, 2π)."""
        radius = abs(self.z)
        theta = math.atan2(self.z.imag, self.z.real) % (2 * math.pi) if radius > 0 else 0.0
        return math.atanh(radius), theta


ORIGIN = DiskPoint(0j)


def cayley(w: complex) -> complex:
    return (w - 1j) / (w + 1j)


def inverse_cayley(z: complex) -> complex:
    return 1j * (1 + z) / (1 - z)


def act_disk(g: GroupElement, point: DiskPoint) -> DiskPoint:
    w = inverse_cayley(point.z)
    return DiskPoint(cayley((g.a * w + g.b) / (g.c * w + g.d)))


def orbit_point(g: GroupElement) -> DiskPoint:
    """
    The point g·o of the orbit picture, act_disk(gᵀ, 0).

    For g = g_t r_θ this has polar coordinates exactly (t, θ).
    """
    return act_disk(g.transpose(), ORIGIN)


def frame_point(frame: GroupElement) -> DiskPoint:
    """The disk point of a cocycle frame F, which is F·i. F = r_-θ g_t sits at (t, θ)."""
    return act_disk(frame, ORIGIN)


def _one_minus_square(z):
    radius = np.abs(z)
    return (1 - radius) * (1 + radius)


def disk_distance(z1, z2):
    """Vectorized hyperbolic distance between disk coordinates."""
    gap = np.abs(np.asarray(z1) - np.asarray(z2))
    return np.arcsinh(gap / np.sqrt(_one_minus_square(z1) * _one_minus_square(z2)))


def dist(p: DiskPoint, q: DiskPoint) -> float:
    return float(disk_distance(p.z, q.z))
