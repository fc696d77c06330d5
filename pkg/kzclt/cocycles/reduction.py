"""
Reduction of frames to the standard fundamental domain {|Re z| <= 1/2, |z| >= 1}.

The point of a frame F is F·i in the upper half-plane. When it leaves the domain, F is
multiplied on the left by generators (translations first, then the inversion) until it is back.
Each applied generator advances the marking and multiplies the accumulated cocycle.

Boundary ties go to Re z = -1/2 and to the S-image. An inversion immediately after another
inversion is applied as Sinv, which cancels it, so reversing a path retraces its word.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from kzclt.cocycles.monodromy import MOVE_CODES, MonodromyRep
from kzclt.common.errors import ReductionDiverged
from kzclt.hyperbolic.group import GroupElement

MAX_MOVES = 10**6
CUSP_HEIGHT = 3.0


def half_plane_point(a, b, c, d):
    """(Re, Im) of F·i for F = [[a, b], [c, d]] of determinant 1."""
    scale = c * c + d * d
    return (a * c + b * d) / scale, 1.0 / scale


def outside_domain(a, b, c, d):
    """Vectorized test of whether F·i needs reduction."""
    x, y = half_plane_point(a, b, c, d)
    radius = x * x + y * y
    return (x < -0.5) | (x >= 0.5) | (radius < 1) | ((radius == 1) & (x > 0))


def apply_move(move: str, frame: tuple) -> tuple:
    """Left multiplication of F by a generator."""
    a, b, c, d = frame
    if move == "T":
        return a + c, b + d, c, d
    if move == "Tinv":
        return a - c, b - d, c, d
    if move == "S":
        return -c, -d, a, b
    if move == "Sinv":
        return c, d, -a, -b
    raise ValueError(f"Unknown generator: {move}")


def reduction_moves(frame: tuple, last: Optional[str] = None) -> tuple[list[str], tuple]:
    """The generators that bring F·i into the domain, in order, and the reduced frame."""
    moves: list[str] = []
    a, b, c, d = (float(entry) for entry in frame)
    while True:
        x, y = half_plane_point(a, b, c, d)
        shift = math.floor(x + 0.5)
        if shift:
            move = "Tinv" if shift > 0 else "T"
            if len(moves) + abs(shift) <= MAX_MOVES:
                moves.extend([move] * abs(shift))
            else:
                moves.append(move)
            a, b = a - shift * c, b - shift * d
            last = move
        else:
            radius = x * x + y * y
            if radius < 1 or (radius == 1 and x > 0):
                move = "Sinv" if last == "S" else "S"
                a, b, c, d = apply_move(move, (a, b, c, d))
                moves.append(move)
                last = move
            else:
                break
        if len(moves) > MAX_MOVES or abs(shift) > MAX_MOVES:
            raise ReductionDiverged(
                f"More than {MAX_MOVES} generator moves in one step at Re z = {x:.6g}, "
                f"Im z = {y:.6g}; the increment is malformed"
            )
    return moves, (a, b, c, d)


@dataclass(frozen=True)
class CocycleState:
    """
    A reduced frame with its marking and the exact accumulated cocycle (Python integers).
    """

    frame: GroupElement
    marking: int
    matrix: np.ndarray
    word_length: int = 0
    last_move: Optional[str] = None

    @staticmethod
    def start(rep: MonodromyRep, frame: GroupElement, marking: int = 0) -> "CocycleState":
        moves, reduced = reduction_moves((frame.a, frame.b, frame.c, frame.d))
        state = CocycleState(
            frame=GroupElement(*reduced),
            marking=marking,
            matrix=np.eye(rep.dimension, dtype=object) * 1,
        )
        return _accumulate(state, rep, moves, state.frame)

    @property
    def point(self) -> complex:
        x, y = half_plane_point(self.frame.a, self.frame.b, self.frame.c, self.frame.d)
        return complex(x, y)


def _accumulate(
    state: CocycleState, rep: MonodromyRep, moves: list[str], frame: GroupElement
) -> CocycleState:
    matrix = state.matrix
    marking = state.marking
    last = state.last_move
    for move in moves:
        code = MOVE_CODES[move]
        matrix = rep.matrices[code, marking].astype(object) @ matrix
        marking = int(rep.targets[code, marking])
        last = move
    return replace(
        state,
        frame=frame,
        marking=marking,
        matrix=matrix,
        word_length=state.word_length + len(moves),
        last_move=last,
    )


def reduce_and_accumulate(
    state: CocycleState, increment: GroupElement, rep: MonodromyRep
) -> CocycleState:
    """Right-multiply the frame by the increment and reduce back to the domain."""
    frame = state.frame @ increment
    moves, reduced = reduction_moves((frame.a, frame.b, frame.c, frame.d), state.last_move)
    if not moves:
        return replace(state, frame=frame)
    return _accumulate(state, rep, moves, GroupElement(*reduced).renormalized())


def geodesic_word(
    rep: MonodromyRep,
    frame: GroupElement,
    marking: int,
    theta: float,
    duration: float,
    ds: float = 0.1,
) -> tuple[list[tuple[str, int]], GroupElement, int]:
    """
    Follow F·r_-θ·g_s for s in [0, duration] and record every generator move together with the
    marking it was applied to. Returns the moves, the final reduced frame and marking.
    """
    current = frame @ GroupElement(
        math.cos(theta / 2), math.sin(theta / 2), -math.sin(theta / 2), math.cos(theta / 2)
    )
    moves, reduced = reduction_moves((current.a, current.b, current.c, current.d))
    word: list[tuple[str, int]] = []
    last = None

    def record(moves):
        nonlocal marking, last
        for move in moves:
            word.append((move, marking))
            marking = rep.target(move, marking)
            last = move

    record(moves)
    a, b, c, d = reduced
    n_steps = max(1, int(math.ceil(duration / ds - 1e-9)))
    step = duration / n_steps
    grow, shrink = math.exp(step), math.exp(-step)
    for index in range(1, n_steps + 1):
        a, b, c, d = a * grow, b * shrink, c * grow, d * shrink
        if outside_domain(a, b, c, d):
            moves, (a, b, c, d) = reduction_moves((a, b, c, d), last)
            record(moves)
        if index % 100 == 0:
            scale = math.sqrt(a * d - b * c)
            a, b, c, d = a / scale, b / scale, c / scale, d / scale
    return word, GroupElement(a, b, c, d), marking
