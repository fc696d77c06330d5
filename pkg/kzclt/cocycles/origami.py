"""
Square-tiled surfaces (origamis).

An origami with n squares is a pair of permutations (h, v): h(i) is the square to the right of
square i and v(i) the square on top. Squares are 0-indexed internally; files and the public
constructors use 1-indexed image arrays.

Homology is computed on the dual graph: its vertices are the square centers and its edges are
x_i (from the center of i to the center of h(i)) and y_i (from i to v(i)). A chain is an integer
vector of length 2n with x_i at position i and y_i at position n + i. Cycles are taken modulo
the boundaries of the faces around the cone points, which the intersection pairing kills.
"""

import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from kzclt.cocycles.integer_linalg import standard_form, symplectic_reduce
from kzclt.common.errors import MalformedPermutation, NotConnected
from kzclt.common.logging import get_logger

logger = get_logger(__file__)

DATA_DIR = Path(__file__).parent.parent / "data" / "origamis"

# Corner slots of a square.
BL, BR, TL, TR = range(4)


def _check_permutation(images: Sequence, n: int, name: str, line: Optional[int] = None) -> None:
    if len(images) != n:
        raise MalformedPermutation(
            f'"{name}" has {len(images)} entries but the origami has {n} squares',
            field=name,
            line=line,
        )
    for position, image in enumerate(images):
        if isinstance(image, bool) or not isinstance(image, int):
            raise MalformedPermutation(
                f'"{name}" entry {position + 1} is not an integer: {image!r}',
                field=name,
                line=line,
            )
        if not 1 <= image <= n:
            raise MalformedPermutation(
                f'"{name}" entry {position + 1} is {image}, outside 1..{n}',
                field=name,
                line=line,
            )
    if len(set(images)) != n:
        repeated = sorted({image for image in images if list(images).count(image) > 1})
        raise MalformedPermutation(
            f'"{name}" is not a permutation, it repeats {repeated}', field=name, line=line
        )


def inverse_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    inverse = [0] * len(perm)
    for i, image in enumerate(perm):
        inverse[image] = i
    return tuple(inverse)


def compose_permutations(first: Sequence[int], second: Sequence[int]) -> tuple[int, ...]:
    """The permutation i ↦ second(first(i))."""
    return tuple(second[first[i]] for i in range(len(first)))


def parse_cycles(text: str, n: int) -> list[int]:
    """
    Cycle notation to a 1-indexed image array, for example "(1 2 3)" or "(1,2)(3,4)".
    Squares that do not appear are fixed.
    """
    images = list(range(1, n + 1))
    for cycle in re.findall(r"\(([^)]*)\)", text):
        entries = [int(token) for token in re.split(r"[,\s]+", cycle.strip()) if token]
        for position, square in enumerate(entries):
            images[square - 1] = entries[(position + 1) % len(entries)]
    return images


@dataclass(frozen=True)
class Origami:
    h: tuple[int, ...]
    v: tuple[int, ...]
    name: str = ""
    # Derived data, filled in by origami_build.
    vertex_of_corner: np.ndarray = field(default=None, repr=False, compare=False)
    singularities: tuple[int, ...] = field(default=(), compare=False)
    genus: int = field(default=0, compare=False)
    # Rows a_1, b_1, ..., a_g, b_g as chains.
    basis: np.ndarray = field(default=None, repr=False, compare=False)
    # I(u, z) = uᵀ·pairing·z on chains.
    pairing: np.ndarray = field(default=None, repr=False, compare=False)
    # Rows map a cycle to its coordinates in the basis.
    coordinates: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.h)

    @property
    def stratum(self) -> str:
        orders = sorted((order for order in self.singularities if order > 0), reverse=True)
        return f"H({','.join(str(order) for order in orders) or '0'})"

    @property
    def form(self) -> np.ndarray:
        """The intersection form J on the stored basis."""
        return self.basis @ self.pairing @ self.basis.T

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "h": [image + 1 for image in self.h],
            "v": [image + 1 for image in self.v],
        }


def commutator(h: Sequence[int], v: Sequence[int]) -> tuple[int, ...]:
    """h·v·h⁻¹·v⁻¹ as a map, whose cycles correspond to the cone points."""
    h_inv = inverse_permutation(h)
    v_inv = inverse_permutation(v)
    return compose_permutations(compose_permutations(compose_permutations(v_inv, h_inv), v), h)


def count_cycles(perm: Sequence[int]) -> int:
    seen = [False] * len(perm)
    cycles = 0
    for start in range(len(perm)):
        if not seen[start]:
            cycles += 1
            i = start
            while not seen[i]:
                seen[i] = True
                i = perm[i]
    return cycles


def is_transitive(h: Sequence[int], v: Sequence[int]) -> bool:
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in (h[i], v[i]):
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == len(h)


def _corner_classes(h: Sequence[int], v: Sequence[int]) -> tuple[int, np.ndarray]:
    """Glue the 4n square corners into cone points."""
    n = len(h)

    def corner(square, slot):
        return 4 * square + slot

    rows, cols = [], []
    for i in range(n):
        for a, b in (
            (corner(i, BR), corner(h[i], BL)),
            (corner(i, TR), corner(h[i], TL)),
            (corner(i, TL), corner(v[i], BL)),
            (corner(i, TR), corner(v[i], BR)),
        ):
            rows.append(a)
            cols.append(b)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(4 * n, 4 * n))
    return connected_components(graph, directed=False)


def _dual_edges(h: Sequence[int], v: Sequence[int]) -> list[tuple[int, int]]:
    n = len(h)
    return [(i, h[i]) for i in range(n)] + [(i, v[i]) for i in range(n)]


def _primal_edges(h: Sequence[int], v: Sequence[int], vertex_of_corner) -> list[tuple[int, int]]:
    """The edge of the square tiling crossed by each dual edge, as a pair of cone points."""
    n = len(h)
    crossing_x = [
        (vertex_of_corner[4 * i + BR], vertex_of_corner[4 * i + TR]) for i in range(n)
    ]
    crossing_y = [
        (vertex_of_corner[4 * i + TL], vertex_of_corner[4 * i + TR]) for i in range(n)
    ]
    return crossing_x + crossing_y


def homology_generators(
    h: Sequence[int], v: Sequence[int], vertex_of_corner: np.ndarray, n_vertices: int
) -> np.ndarray:
    """
    A Z-basis of H_1 from a tree-cotree decomposition: a spanning tree of the dual graph, a
    spanning tree of the tiling's edges avoiding it, and one fundamental cycle per leftover
    dual edge.
    """
    n = len(h)
    dual = _dual_edges(h, v)
    primal = _primal_edges(h, v, vertex_of_corner)

    # Spanning tree of the dual graph, with the chain from the root to every square.
    tree = set()
    to_root = {0: np.zeros(2 * n, dtype=np.int64)}
    queue = deque([0])
    while queue:
        square = queue.popleft()
        for edge, (start, end) in enumerate(dual):
            for here, there, sign in ((start, end, 1), (end, start, -1)):
                if here == square and there not in to_root:
                    chain = to_root[square].copy()
                    chain[edge] += sign
                    to_root[there] = chain
                    tree.add(edge)
                    queue.append(there)

    # Spanning tree of the tiling avoiding the dual tree.
    cotree = set()
    reached = {primal[0][0]} if primal else set()
    changed = True
    while changed:
        changed = False
        for edge, (a, b) in enumerate(primal):
            if edge in tree or edge in cotree:
                continue
            if (a in reached) != (b in reached):
                cotree.add(edge)
                reached.update((a, b))
                changed = True
    if len(reached) != n_vertices:
        raise ValueError("The tiling's edges do not connect every cone point")

    cycles = []
    for edge, (start, end) in enumerate(dual):
        if edge in tree or edge in cotree:
            continue
        chain = to_root[start] - to_root[end]
        chain[edge] += 1
        cycles.append(chain)
    return np.array(cycles, dtype=np.int64).reshape(len(cycles), 2 * n)


def intersection_pairing(h: Sequence[int], v: Sequence[int]) -> np.ndarray:
    """
    The matrix Q with I(u, z) = uᵀQz on cycles: for u = (α, β) and z = (γ, δ),
    I(u, z) = Σ_i α_i δ_h(i) − β_i γ_v(i).
    """
    n = len(h)
    pairing = np.zeros((2 * n, 2 * n), dtype=np.int64)
    for i in range(n):
        pairing[i, n + h[i]] += 1
        pairing[n + i, v[i]] -= 1
    return pairing


def _coordinate_rows(basis: np.ndarray, pairing: np.ndarray) -> np.ndarray:
    """Rows p_k = I(·, b_k) and q_k = I(a_k, ·), so that z = Σ p_k a_k + q_k b_k."""
    rows = []
    for k in range(0, len(basis), 2):
        a, b = basis[k], basis[k + 1]
        rows.append(pairing @ b)
        rows.append(a @ pairing)
    return np.array(rows, dtype=np.int64).reshape(len(basis), -1)


def origami_build(h: Sequence[int], v: Sequence[int], name: str = "") -> Origami:
    """Build an origami from 1-indexed image arrays of h and v."""
    n = len(h)
    _check_permutation(list(h), n, "h")
    _check_permutation(list(v), n, "v")
    return build_from_zero_indexed(
        tuple(image - 1 for image in h), tuple(image - 1 for image in v), name
    )


def build_from_zero_indexed(h: tuple[int, ...], v: tuple[int, ...], name: str = "") -> Origami:
    n = len(h)
    if not is_transitive(h, v):
        raise NotConnected(f"The permutations do not act transitively on the {n} squares")

    n_vertices, vertex_of_corner = _corner_classes(h, v)
    if n_vertices != count_cycles(commutator(h, v)):
        raise ValueError("Cone points disagree with the cycles of the commutator")
    twice_genus = n - n_vertices + 2
    genus = twice_genus // 2

    corners = np.bincount(vertex_of_corner, minlength=n_vertices)
    singularities = tuple(int(count) // 4 - 1 for count in corners)

    pairing = intersection_pairing(h, v)
    generators = homology_generators(h, v, vertex_of_corner, n_vertices)
    if len(generators) != twice_genus:
        raise ValueError(f"Found {len(generators)} homology generators, expected {twice_genus}")
    basis = symplectic_reduce(generators, pairing)
    origami = Origami(
        h=h,
        v=v,
        name=name,
        vertex_of_corner=vertex_of_corner,
        singularities=singularities,
        genus=genus,
        basis=basis,
        pairing=pairing,
        coordinates=_coordinate_rows(basis, pairing),
    )
    if not np.array_equal(origami.form, standard_form(genus)):
        raise ValueError("The reduced basis is not symplectic")
    return origami


def torus_projection(origami: Origami) -> np.ndarray:
    """The 2 × 2g matrix of the covering map to the square torus on the stored basis."""
    n = origami.n
    return np.stack(
        [origami.basis[:, :n].sum(axis=1), origami.basis[:, n:].sum(axis=1)]
    ).astype(np.int64)


def canonical_relabeling(
    h: Sequence[int], v: Sequence[int]
) -> tuple[tuple[tuple[int, ...], tuple[int, ...]], tuple[int, ...]]:
    """
    The lexicographically smallest relabeling of (h, v) over breadth-first numberings from every
    start square. Returns ((h', v'), π) with h'(π(i)) = π(h(i)).
    """
    n = len(h)
    best = None
    for start in range(n):
        label = {start: 0}
        order = [start]
        position = 0
        while position < len(order):
            square = order[position]
            position += 1
            for neighbour in (h[square], v[square]):
                if neighbour not in label:
                    label[neighbour] = len(order)
                    order.append(neighbour)
        relabel = tuple(label[i] for i in range(n))
        new_h = [0] * n
        new_v = [0] * n
        for i in range(n):
            new_h[relabel[i]] = relabel[h[i]]
            new_v[relabel[i]] = relabel[v[i]]
        candidate = ((tuple(new_h), tuple(new_v)), relabel)
        if best is None or candidate[0] < best[0]:
            best = candidate
    return best


def _line_of(text: str, key: str) -> Optional[int]:
    match = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def load_origami(path: Path) -> Origami:
    """
    Read an origami file {"n": int, "h": [...], "v": [...]} with 1-indexed image arrays.
    An optional "name" is kept.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as error:
        raise MalformedPermutation(
            f"{path.name} is not valid JSON: {error.msg}", line=error.lineno
        ) from error
    if not isinstance(data, dict):
        raise MalformedPermutation(f"{path.name} must hold a JSON object")
    for key in ("n", "h", "v"):
        if key not in data:
            raise MalformedPermutation(f'{path.name} is missing "{key}"', field=key)
    n = data["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise MalformedPermutation(
            f'"n" must be a positive integer, got {n!r}', field="n", line=_line_of(text, "n")
        )
    for key in ("h", "v"):
        if not isinstance(data[key], list):
            raise MalformedPermutation(
                f'"{key}" must be an array', field=key, line=_line_of(text, key)
            )
        _check_permutation(data[key], n, key, line=_line_of(text, key))
    return origami_build(data["h"], data["v"], name=data.get("name", path.stem))


def builtin_origami(name: str) -> Origami:
    """One of the shipped origamis: torus, h2 or eierlegende-wollmilchsau."""
    path = DATA_DIR / f"{name}.json"
    if not path.exists():
        choices = sorted(candidate.stem for candidate in DATA_DIR.glob("*.json"))
        raise ValueError(f"Unknown built-in origami {name!r}, choose from {choices}")
    return load_origami(path)


def resolve_origami(reference: str) -> Origami:
    """A built-in name or a path to an origami file."""
    if (DATA_DIR / f"{reference}.json").exists():
        return builtin_origami(reference)
    return load_origami(Path(reference))
