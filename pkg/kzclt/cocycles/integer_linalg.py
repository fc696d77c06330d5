"""
Exact integer linear algebra for homology computations.

Everything here works on numpy int64 arrays of small entries (homology bases and generator
matrices of origamis). Long products are accumulated elsewhere with Python integers.
"""

import numpy as np


def standard_form(genus: int) -> np.ndarray:
    """Block diagonal J0 with blocks [[0, 1], [-1, 0]], so that I(a_k, b_k) = 1."""
    form = np.zeros((2 * genus, 2 * genus), dtype=np.int64)
    for k in range(genus):
        form[2 * k, 2 * k + 1] = 1
        form[2 * k + 1, 2 * k] = -1
    return form


def symplectic_reduce(vectors: np.ndarray, pairing: np.ndarray) -> np.ndarray:
    """
    Turn a Z-basis (rows of `vectors`) of a lattice with a unimodular antisymmetric pairing
    into a symplectic basis a_1, b_1, ..., a_g, b_g with I(a_k, b_k) = 1 and all other
    pairings zero. `pairing` is the matrix of I on the ambient space.

    Only unimodular column operations are used, so the result spans the same lattice.
    """
    remaining = [np.array(row, dtype=np.int64) for row in vectors]
    result = []

    def intersect(u, w):
        return int(u @ pairing @ w)

    while remaining:
        e = remaining.pop(0)
        # Euclid on the values I(e, b) until a single one is left, which is then ±1.
        while True:
            nonzero = [i for i, b in enumerate(remaining) if intersect(e, b) != 0]
            if not nonzero:
                raise ValueError("The intersection pairing is degenerate on the given basis")
            pivot = min(nonzero, key=lambda i: abs(intersect(e, remaining[i])))
            pivot_value = intersect(e, remaining[pivot])
            if len(nonzero) == 1:
                break
            for i in nonzero:
                if i != pivot:
                    quotient = intersect(e, remaining[i]) // pivot_value
                    remaining[i] = remaining[i] - quotient * remaining[pivot]
        if abs(pivot_value) != 1:
            raise ValueError(f"The intersection pairing is not unimodular (gcd {pivot_value})")
        f = remaining.pop(pivot)
        if pivot_value < 0:
            f = -f
        remaining = [b - intersect(b, f) * e + intersect(b, e) * f for b in remaining]
        result.extend([e, f])

    return np.array(result, dtype=np.int64).reshape(len(result), -1)


def column_reduce(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Unimodular U with matrix·U = [H | 0], H lower triangular of full column rank.

    Returns (U, U⁻¹, rank). The inverse is tracked alongside, so no rational arithmetic is
    needed.
    """
    work = np.array(matrix, dtype=np.int64)
    rows, cols = work.shape
    u = np.eye(cols, dtype=np.int64)
    u_inv = np.eye(cols, dtype=np.int64)
    rank = 0

    def add_column(target, source, factor):
        # col_target -= factor·col_source, and the inverse adds factor·row_target to row_source.
        work[:, target] -= factor * work[:, source]
        u[:, target] -= factor * u[:, source]
        u_inv[source, :] += factor * u_inv[target, :]

    def swap_columns(i, j):
        work[:, [i, j]] = work[:, [j, i]]
        u[:, [i, j]] = u[:, [j, i]]
        u_inv[[i, j], :] = u_inv[[j, i], :]

    for row in range(rows):
        if rank == cols:
            break
        while True:
            nonzero = [j for j in range(rank, cols) if work[row, j] != 0]
            if not nonzero:
                break
            pivot = min(nonzero, key=lambda j: abs(work[row, j]))
            for j in nonzero:
                if j != pivot:
                    add_column(j, pivot, work[row, j] // work[row, pivot])
            if len([j for j in range(rank, cols) if work[row, j] != 0]) == 1:
                swap_columns(rank, pivot)
                break
        if work[row, rank] != 0:
            rank += 1

    return u, u_inv, rank


def integer_kernel(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    A basis K of the integer kernel (as columns) and a left inverse L with L·K = I.

    K spans the whole kernel lattice, not just a finite index sublattice.
    """
    u, u_inv, rank = column_reduce(matrix)
    return u[:, rank:], u_inv[rank:, :]


def pfaffian(matrix: np.ndarray) -> int:
    """Pfaffian of an even antisymmetric integer matrix, by expansion along the first row."""
    matrix = [[int(entry) for entry in row] for row in np.asarray(matrix)]
    return _pfaffian(matrix)


def _pfaffian(matrix: list) -> int:
    size = len(matrix)
    if size == 0:
        return 1
    if size % 2:
        return 0
    total = 0
    for j in range(1, size):
        if matrix[0][j] == 0:
            continue
        keep = [i for i in range(size) if i not in (0, j)]
        minor = [[matrix[a][b] for b in keep] for a in keep]
        sign = 1 if j % 2 == 1 else -1
        total += sign * matrix[0][j] * _pfaffian(minor)
    return total


def solve_exact(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a·x = b for an integer x, checking that the solution is exact."""
    x = np.rint(np.linalg.solve(a.astype(float), b.astype(float))).astype(np.int64)
    if not np.array_equal(a @ x, b):
        raise ValueError("The system has no exact integer solution")
    return x


def is_symplectic(matrix: np.ndarray, form: np.ndarray, target_form: np.ndarray = None) -> bool:
    target_form = form if target_form is None else target_form
    return bool(np.array_equal(matrix.T @ target_form @ matrix, form))

