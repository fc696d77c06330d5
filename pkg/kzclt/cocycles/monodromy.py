"""
The action of SL(2,Z) generators on origami markings and on their homology.

A marking is a literal pair of permutations (h, v). A generator η sends the marked surface to
η·(h, v) and induces an integer matrix from the homology coordinates of the source marking to
those of the target. The generators are

    T    = [[1, 1], [0, 1]]    (h, v) ↦ (h, v∘h⁻¹)
    Tinv = [[1, -1], [0, 1]]   (h, v) ↦ (h, v∘h)
    S    = [[0, -1], [1, 0]]   (h, v) ↦ (v⁻¹, h)
    Sinv = [[0, 1], [-1, 0]]   (h, v) ↦ (v, h⁻¹)

Every marking in the orbit carries the basis of its canonical relabeling, transported along the
relabeling, so markings that differ only by names of squares share coordinates.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from kzclt.cocycles.integer_linalg import integer_kernel, pfaffian, solve_exact, standard_form
from kzclt.cocycles.origami import (
    Origami,
    build_from_zero_indexed,
    canonical_relabeling,
    compose_permutations,
    inverse_permutation,
    torus_projection,
)
from kzclt.common.errors import TrivialComplement
from kzclt.common.logging import get_logger

logger = get_logger(__file__)

MOVES = ("T", "Tinv", "S", "Sinv")
MOVE_CODES = {name: code for code, name in enumerate(MOVES)}
MOVE_MATRICES = {
    "T": ((1, 1), (0, 1)),
    "Tinv": ((1, -1), (0, 1)),
    "S": ((0, -1), (1, 0)),
    "Sinv": ((0, 1), (-1, 0)),
}
MAX_MARKINGS = 20000

Marking = tuple[tuple[int, ...], tuple[int, ...]]


def act_on_marking(move: str, marking: Marking) -> Marking:
    h, v = marking
    if move == "T":
        return h, compose_permutations(inverse_permutation(h), v)
    if move == "Tinv":
        return h, compose_permutations(h, v)
    if move == "S":
        return inverse_permutation(v), h
    if move == "Sinv":
        return v, inverse_permutation(h)
    raise ValueError(f"Unknown generator: {move}")


def chain_map(move: str, marking: Marking) -> np.ndarray:
    """
    The map on dual-graph chains induced by a generator, from the chains of the marking to the
    chains of its image. Column j is the image of edge j.
    """
    h, v = marking
    n = len(h)
    h_inv = inverse_permutation(h)
    matrix = np.zeros((2 * n, 2 * n), dtype=np.int64)
    for i in range(n):
        x, y = i, n + i
        if move == "T":
            # A vertical step becomes a step right then up.
            matrix[i, x] = 1
            matrix[i, y] += 1
            matrix[n + h[i], y] += 1
        elif move == "Tinv":
            matrix[i, x] = 1
            matrix[h_inv[i], y] -= 1
            matrix[n + h_inv[i], y] += 1
        elif move == "S":
            matrix[n + i, x] = 1
            matrix[v[i], y] = -1
        elif move == "Sinv":
            matrix[n + h[i], x] = -1
            matrix[i, y] = 1
        else:
            raise ValueError(f"Unknown generator: {move}")
    return matrix


@dataclass
class MarkingFrame:
    """Basis rows and coordinate rows of one marking, transported from its canonical class."""

    basis: np.ndarray
    coordinates: np.ndarray
    projection: np.ndarray


class _ClassCache:
    def __init__(self) -> None:
        self.classes: dict[Marking, tuple[Origami, np.ndarray]] = {}

    def frame(self, marking: Marking) -> MarkingFrame:
        canonical, relabel = canonical_relabeling(*marking)
        if canonical not in self.classes:
            origami = build_from_zero_indexed(*canonical)
            self.classes[canonical] = (origami, torus_projection(origami))
        origami, projection = self.classes[canonical]
        n = len(relabel)
        edges = list(relabel) + [n + square for square in relabel]
        return MarkingFrame(
            basis=origami.basis[:, edges],
            coordinates=origami.coordinates[:, edges],
            projection=projection,
        )


@dataclass
class MonodromyRep:
    """
    Generator matrices over a finite set of markings. `matrices[code][m]` maps the coordinates
    of marking m to those of `targets[code][m]`.
    """

    markings: list
    dimension: int
    matrices: np.ndarray
    targets: np.ndarray
    forms: list
    name: str = ""
    frames: list = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return len(self.markings)

    def matrix(self, move: str, marking: int) -> np.ndarray:
        return self.matrices[MOVE_CODES[move], marking]

    def target(self, move: str, marking: int) -> int:
        return int(self.targets[MOVE_CODES[move], marking])

    def form(self, marking: int = 0) -> np.ndarray:
        return self.forms[marking]

    def word(self, moves: Sequence[str], marking: int = 0) -> tuple[np.ndarray, int]:
        """The product along a word of moves applied left to right, and the final marking."""
        product = np.eye(self.dimension, dtype=np.int64)
        for move in moves:
            product = self.matrix(move, marking) @ product
            marking = self.target(move, marking)
        return product, marking

    @staticmethod
    def constant(matrix: np.ndarray, form: Optional[np.ndarray] = None, name: str = "constant"):
        """A single marking where every move acts by the same matrix."""
        matrix = np.asarray(matrix)
        dimension = matrix.shape[0]
        return MonodromyRep(
            markings=[None],
            dimension=dimension,
            matrices=np.stack([matrix] * len(MOVES))[:, None, :, :],
            targets=np.zeros((len(MOVES), 1), dtype=np.int64),
            forms=[form if form is not None else np.zeros((dimension, dimension))],
            name=name,
        )


def build_monodromy(origami: Origami, max_markings: int = MAX_MARKINGS) -> MonodromyRep:
    """Enumerate the orbit of the marking under the generators, with the homology action."""
    cache = _ClassCache()
    base: Marking = (origami.h, origami.v)
    markings = [base]
    index = {base: 0}
    frames = [cache.frame(base)]
    queue = deque([0])
    edges: list[tuple[int, str, int]] = []
    while queue:
        source = queue.popleft()
        for move in MOVES:
            image = act_on_marking(move, markings[source])
            if image not in index:
                if len(markings) >= max_markings:
                    raise ValueError(
                        f"The marking orbit exceeds {max_markings} markings; raise the cap"
                    )
                index[image] = len(markings)
                markings.append(image)
                frames.append(cache.frame(image))
                queue.append(index[image])
            edges.append((source, move, index[image]))

    dimension = 2 * origami.genus
    form = standard_form(origami.genus)
    matrices = np.zeros((len(MOVES), len(markings), dimension, dimension), dtype=np.int64)
    targets = np.zeros((len(MOVES), len(markings)), dtype=np.int64)
    for source, move, target in edges:
        chains = chain_map(move, markings[source]) @ frames[source].basis.T
        matrix = frames[target].coordinates @ chains
        if not np.array_equal(matrix.T @ form @ matrix, form):
            raise ValueError(f"The action of {move} on marking {source} is not symplectic")
        matrices[MOVE_CODES[move], source] = matrix
        targets[MOVE_CODES[move], source] = target

    logger.info(
        f"Marking orbit of {origami.name or 'origami'}: {len(markings)} markings over "
        f"{len(cache.classes)} relabeling classes, dimension {dimension}"
    )
    return MonodromyRep(
        markings=markings,
        dimension=dimension,
        matrices=matrices,
        targets=targets,
        forms=[form] * len(markings),
        name=origami.name,
        frames=frames,
    )


def homology_action(
    origami: Origami, move: str, rep: Optional[MonodromyRep] = None
) -> tuple[np.ndarray, Marking]:
    """The matrix of one generator on the origami's own marking, and the marking it lands on."""
    if move not in MOVE_CODES:
        raise ValueError(f"Unknown generator: {move}")
    rep = rep or build_monodromy(origami)
    return rep.matrix(move, 0), rep.markings[rep.target(move, 0)]


@dataclass
class Complement:
    """Kernels K (columns) and left inverses L per marking, with the restricted action."""

    kernels: list
    left_inverses: list
    rep: MonodromyRep


def tautological_complement(origami: Origami, rep: Optional[MonodromyRep] = None) -> Complement:
    """
    Restrict the action to the kernel of the projection to the torus homology, which is the
    symplectic complement of the tautological plane.
    """
    if origami.genus < 2:
        raise TrivialComplement(
            f"{origami.name or 'The origami'} has genus {origami.genus}; the tautological "
            "plane is everything"
        )
    rep = rep or build_monodromy(origami)
    form = standard_form(origami.genus)

    kernels, left_inverses, forms = [], [], []
    for frame in rep.frames:
        kernel, left = integer_kernel(frame.projection)
        restricted = kernel.T @ form @ kernel
        if pfaffian(restricted) < 0:
            kernel = kernel.copy()
            left = left.copy()
            kernel[:, -1] *= -1
            left[-1, :] *= -1
            restricted = kernel.T @ form @ kernel
        kernels.append(kernel)
        left_inverses.append(left)
        forms.append(restricted)

    dimension = kernels[0].shape[1]
    matrices = np.zeros((len(MOVES), rep.size, dimension, dimension), dtype=np.int64)
    for code in range(len(MOVES)):
        for source in range(rep.size):
            target = rep.targets[code, source]
            image = rep.matrices[code, source] @ kernels[source]
            restricted = left_inverses[target] @ image
            if not np.array_equal(kernels[target] @ restricted, image):
                raise ValueError(f"The complement is not invariant under {MOVES[code]}")
            matrices[code, source] = restricted

    return Complement(
        kernels=kernels,
        left_inverses=left_inverses,
        rep=MonodromyRep(
            markings=rep.markings,
            dimension=dimension,
            matrices=matrices,
            targets=rep.targets,
            forms=forms,
            name=f"{rep.name} complement",
            frames=rep.frames,
        ),
    )


@dataclass
class GroupClosure:
    finite: bool
    order: Optional[int]
    generators: int


def schreier_generators(rep: MonodromyRep) -> list[np.ndarray]:
    """Loops at the base marking: one per edge of the marking graph off a spanning tree."""
    paths = {0: np.eye(rep.dimension, dtype=np.int64)}
    queue = deque([0])
    while queue:
        source = queue.popleft()
        for code in range(len(MOVES)):
            target = int(rep.targets[code, source])
            if target not in paths:
                paths[target] = rep.matrices[code, source] @ paths[source]
                queue.append(target)

    generators = {}
    identity = np.eye(rep.dimension, dtype=np.int64)
    for source in range(rep.size):
        for code in range(len(MOVES)):
            target = int(rep.targets[code, source])
            loop = solve_exact(paths[target], rep.matrices[code, source] @ paths[source])
            if not np.array_equal(loop, identity):
                generators[loop.tobytes()] = loop
    return list(generators.values())


def monodromy_group(rep: MonodromyRep, max_elements: int = 100000) -> GroupClosure:
    """Close the Schreier generators under multiplication, up to max_elements elements."""
    generators = schreier_generators(rep)
    identity = np.eye(rep.dimension, dtype=np.int64)
    seen = {identity.tobytes()}
    queue = deque([identity])
    while queue:
        element = queue.popleft()
        for generator in generators:
            product = generator @ element
            key = product.tobytes()
            if key not in seen:
                if len(seen) >= max_elements:
                    logger.info(f"The monodromy group has more than {max_elements} elements")
                    return GroupClosure(finite=False, order=None, generators=len(generators))
                seen.add(key)
                queue.append(product)
    logger.info(f"The monodromy group is finite of order {len(seen)}")
    return GroupClosure(finite=True, order=len(seen), generators=len(generators))
