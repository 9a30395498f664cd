"""Exact linear algebra over the rationals for small verification problems.

Plain-list matrices of :class:`fractions.Fraction`.  Used by the oracle's
exact mode so that small instances with rational inputs can be checked
without any floating-point slack.  Everything here is O(n^3) schoolbook
Gauss-Jordan; keep the inputs small.
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational

__all__ = [
    "as_fraction",
    "fraction_matrix",
    "identity",
    "transpose",
    "matmul",
    "matvec",
    "invert",
    "rref",
    "solve_affine",
]


def as_fraction(x) -> Fraction:
    """Convert to Fraction.

    Floats convert via their exact binary value, so callers that care about
    decimal-looking constants (0.05 and friends) should pass Fractions or
    strings instead.
    """
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    return Fraction(x)


def fraction_matrix(rows) -> list[list[Fraction]]:
    return [[as_fraction(v) for v in row] for row in rows]


def identity(n: int) -> list[list[Fraction]]:
    return [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]


def transpose(A: list[list[Fraction]]) -> list[list[Fraction]]:
    return [list(col) for col in zip(*A)]


def matmul(A, B) -> list[list[Fraction]]:
    if not A:
        return []
    inner = len(B)
    if any(len(row) != inner for row in A):
        raise ValueError("dimension mismatch")
    Bt = list(zip(*B))
    return [[sum(a * b for a, b in zip(row, col)) for col in Bt] for row in A]


def matvec(A, v) -> list[Fraction]:
    return [sum(a * b for a, b in zip(row, v)) for row in A]


def invert(A: list[list[Fraction]]) -> list[list[Fraction]]:
    """Gauss-Jordan inverse; raises ValueError on a singular matrix."""
    n = len(A)
    aug = [list(row) + ident_row for row, ident_row in zip(fraction_matrix(A), identity(n))]
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if pivot is None:
            raise ValueError("singular matrix")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv_p = Fraction(1) / aug[col][col]
        aug[col] = [v * inv_p for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [v - factor * p for v, p in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def rref(A: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form and the pivot column indices."""
    M = fraction_matrix(A)
    if not M:
        return M, []
    rows, cols = len(M), len(M[0])
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        pivot = next((rr for rr in range(r, rows) if M[rr][c] != 0), None)
        if pivot is None:
            continue
        M[r], M[pivot] = M[pivot], M[r]
        inv_p = Fraction(1) / M[r][c]
        M[r] = [v * inv_p for v in M[r]]
        for rr in range(rows):
            if rr != r and M[rr][c] != 0:
                factor = M[rr][c]
                M[rr] = [v - factor * p for v, p in zip(M[rr], M[r])]
        pivots.append(c)
        r += 1
    return M, pivots


def solve_affine(A, b) -> tuple[list[Fraction], list[list[Fraction]]] | None:
    """Solve ``A x = b`` exactly.

    Returns ``(particular, nullspace_basis)`` with free variables set to 0,
    or ``None`` when the system is inconsistent.
    """
    A = fraction_matrix(A)
    bvec = [as_fraction(v) for v in b]
    if len(A) != len(bvec):
        raise ValueError("dimension mismatch")
    cols = len(A[0]) if A else 0
    aug = [row + [rhs] for row, rhs in zip(A, bvec)]
    R, pivots = rref(aug)
    # A pivot in the rhs column marks 0 = 1: inconsistent.
    if cols in pivots:
        return None
    x = [Fraction(0)] * cols
    for r, c in enumerate(pivots):
        x[c] = R[r][cols]
    free = [c for c in range(cols) if c not in pivots]
    basis: list[list[Fraction]] = []
    for f in free:
        v = [Fraction(0)] * cols
        v[f] = Fraction(1)
        for r, c in enumerate(pivots):
            v[c] = -R[r][f]
        basis.append(v)
    return x, basis
