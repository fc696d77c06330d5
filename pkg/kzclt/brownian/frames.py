"""
Brownian motion in the group chart.

Each path carries its frame in Cartan coordinates F = r_-θ g_t r_ψ and is right-multiplied
every step by

    δ = exp([[a, b], [b, -a]]),  a = dW1 cos ψ - dW2 sin ψ,  b = -(dW1 sin ψ + dW2 cos ψ)

so that F·δ = r_-θ g_t E r_ψ with E = exp([[dW1, -dW2], [-dW2, -dW1]]). The point F·i then
takes a geodesic step of length |dW| in which dW1 is the radial component and dW2 the
counterclockwise one, so the radial part is driven by the same W1 as the polar SDE. No drift is
added: the exponential steps realize the curvature correction on their own. Unlike the polar
chart this is regular at the origin.

The new coordinates come from the singular value decomposition of e^-t·g_t·E, whose entries
stay of order one at any radius, so t is updated additively and never through entries of
size e^t.
"""

import math
from typing import Optional, Sequence

import numpy as np

from kzclt.common.errors import NonFinite
from kzclt.common.seeds import PathNoise

FOUR_PI = 4 * math.pi


def expm_sym_batch(a: np.ndarray, b: np.ndarray):
    """Entries (e00, e01, e11) of exp([[a, b], [b, -a]]) for arrays a, b."""
    rho = np.hypot(a, b)
    safe = np.where(rho > 1e-8, rho, 1.0)
    scale = np.where(rho > 1e-8, np.sinh(safe) / safe, 1.0 + rho * rho / 6)
    cosh = np.cosh(rho)
    return cosh + scale * a, scale * b, cosh - scale * a


def right_multiply(frames: tuple, e00, e01, e11) -> tuple:
    """F·δ for a symmetric δ = [[e00, e01], [e01, e11]]."""
    a, b, c, d = frames
    return (
        a * e00 + b * e01,
        a * e01 + b * e11,
        c * e00 + d * e01,
        c * e01 + d * e11,
    )


def frame_radius(frames: tuple) -> np.ndarray:
    """Hyperbolic radius of F·i, which is log of the top singular value of F."""
    a, b, c, d = frames
    p = a * a + c * c
    r = b * b + d * d
    q = a * b + c * d
    top = 0.5 * (p + r) + np.sqrt(0.25 * (p - r) ** 2 + q * q)
    return 0.5 * np.log(top)


def frame_angle(frames: tuple) -> np.ndarray:
    """Polar angle of F·i in the disk, in [0, 2π)."""
    a, b, c, d = frames
    p = a * a + b * b
    r = c * c + d * d
    q = a * c + b * d
    return (-np.arctan2(2 * q, p - r)) % (2 * math.pi)


def cartan_frames(theta: np.ndarray, t: np.ndarray, psi: np.ndarray) -> tuple:
    """Entries of r_-θ g_t r_ψ. These overflow for t beyond a few hundred."""
    ct, st = np.cos(theta / 2), np.sin(theta / 2)
    cp, sp = np.cos(psi / 2), np.sin(psi / 2)
    grow, shrink = np.exp(t), np.exp(-t)
    # r_-θ = [[ct, st], [-st, ct]], r_ψ = [[cp, -sp], [sp, cp]].
    return (
        ct * grow * cp + st * shrink * sp,
        -ct * grow * sp + st * shrink * cp,
        -st * grow * cp + ct * shrink * sp,
        st * grow * sp + ct * shrink * cp,
    )


def svd_angles(m00, m01, m10, m11):
    """
    M = R(φ)·diag(σ1, σ2)·R(χ) for full-angle rotations R, with σ1 ≥ |σ2|. Returns (σ1, φ, χ).
    """
    e = (m00 + m11) / 2
    f = (m00 - m11) / 2
    g = (m10 + m01) / 2
    h = (m10 - m01) / 2
    top = np.hypot(e, h) + np.hypot(f, g)
    a1 = np.arctan2(g, f)
    a2 = np.arctan2(h, e)
    return top, (a2 + a1) / 2, (a2 - a1) / 2


class GroupBrownian:
    """
    Relative frames F_rel of a batch of Brownian paths, started at the identity.

    `step()` returns the increments δ that were applied, so a caller can apply the same
    increments to frames of its own.
    """

    def __init__(
        self,
        seed: int,
        indices: Sequence[int],
        dt: float,
        stream: str = "paths",
        noise: Optional[PathNoise] = None,
    ) -> None:
        n = len(indices)
        self.dt = dt
        self.sqrt_dt = math.sqrt(dt)
        self.noise = noise or PathNoise(seed, stream, indices)
        self.theta = np.zeros(n)
        self.t = np.zeros(n)
        self.psi = np.zeros(n)
        self.w1 = np.zeros(n)
        self.w2 = np.zeros(n)
        self.steps = 0
        self.s = 0.0

    def step(self):
        xi = self.noise.next()
        dw1 = xi[:, 0] * self.sqrt_dt
        dw2 = xi[:, 1] * self.sqrt_dt

        cos_psi, sin_psi = np.cos(self.psi), np.sin(self.psi)
        increment = expm_sym_batch(
            dw1 * cos_psi - dw2 * sin_psi, -(dw1 * sin_psi + dw2 * cos_psi)
        )

        e00, e01, e11 = expm_sym_batch(dw1, -dw2)
        shrink = np.exp(-2 * self.t)
        top, phi, chi = svd_angles(e00, e01, shrink * e01, shrink * e11)
        self.theta = (self.theta - 2 * phi) % FOUR_PI
        self.t = self.t + np.log(top)
        self.psi = (self.psi + 2 * chi) % FOUR_PI
        if not (np.isfinite(self.t).all() and np.isfinite(self.theta).all()):
            bad = int(np.count_nonzero(~np.isfinite(self.t) | ~np.isfinite(self.theta)))
            raise NonFinite(f"{bad} group-chart paths went non-finite at s={self.s:.4g}")

        self.w1 = self.w1 + dw1
        self.w2 = self.w2 + dw2
        self.steps += 1
        self.s = self.steps * self.dt
        return increment

    @property
    def frames(self) -> tuple:
        return cartan_frames(self.theta, self.t, self.psi)

    def radius(self) -> np.ndarray:
        return self.t

    def angle(self) -> np.ndarray:
        return self.theta % (2 * math.pi)
