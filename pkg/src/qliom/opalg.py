"""Interval-anchored operator algebra on a spin-1/2 chain.

Basis convention (used everywhere in the package): a support ``[lo, hi]``
carries the ``2**(hi - lo + 1)`` computational states ordered
lexicographically by bitstring, with site ``lo`` as the most significant
bit. Bit value 0 is the Z = +1 state, so ``Z = diag(1, -1)``.

Sites are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

__all__ = [
    "CapacityError",
    "Interval",
    "LocalOperator",
    "OperatorSum",
    "TailProfile",
    "PAULI",
    "pauli_string",
    "embed",
    "embed_matrix",
    "commutator",
    "spectral_norm",
    "matrix_norm",
    "diagonal_split",
    "to_dense",
    "partial_trace",
    "tail_profile",
    "hadamard_bound",
    "DEFAULT_DENSE_CAP",
]

DEFAULT_DENSE_CAP = 14
HERMITIAN_RTOL = 1e-12

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]]),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]]),
}


class CapacityError(RuntimeError):
    """Raised when an operation would materialize more sites than allowed."""

    def __init__(self, what: str, size: int, cap: int):
        super().__init__(f"{what}: {size} exceeds cap {cap}")
        self.size = size
        self.cap = cap


@dataclass(frozen=True, order=True)
class Interval:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 1 or self.hi < self.lo:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @classmethod
    def clipped(cls, lo: int, hi: int, n: int) -> "Interval":
        """``[lo, hi] ∩ {1..n}``; raises if the intersection is empty."""
        return cls(max(lo, 1), min(hi, n))

    @property
    def length(self) -> int:
        return self.hi - self.lo + 1

    @property
    def sites(self) -> range:
        return range(self.lo, self.hi + 1)

    def __contains__(self, site: int) -> bool:
        return self.lo <= site <= self.hi

    def contains(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def overlaps(self, other: "Interval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def distance_to(self, site: int) -> int:
        if site < self.lo:
            return self.lo - site
        if site > self.hi:
            return site - self.hi
        return 0

    def fatten(self, r: int, n: int) -> "Interval":
        return Interval.clipped(self.lo - r, self.hi + r, n)

    def check_in_chain(self, n: int) -> None:
        if self.hi > n:
            raise ValueError(f"{self} leaves the chain of length {n}")

    def __str__(self) -> str:
        return f"[{self.lo},{self.hi}]"


def _as_matrix(m) -> np.ndarray:
    arr = np.array(m, copy=True)
    if arr.dtype.kind not in "fc":
        arr = arr.astype(float)
    if arr.dtype.kind == "c" and not np.any(arr.imag):
        arr = arr.real.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LocalOperator:
    """A dense matrix acting on the tensor factor of ``support``."""

    support: Interval
    matrix: np.ndarray = field(repr=False)
    hermitian: bool = False

    def __post_init__(self):
        mat = _as_matrix(self.matrix)
        dim = 2**self.support.length
        if mat.shape != (dim, dim):
            raise ValueError(
                f"matrix shape {mat.shape} does not match support {self.support} (dim {dim})"
            )
        object.__setattr__(self, "matrix", mat)
        if self.hermitian:
            scale = np.linalg.norm(mat)
            if np.linalg.norm(mat - mat.conj().T) > HERMITIAN_RTOL * max(scale, 1e-300):
                raise ValueError("operator flagged Hermitian is not Hermitian")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm(self) -> float:
        return spectral_norm(self)

    def dagger(self) -> "LocalOperator":
        return LocalOperator(self.support, self.matrix.conj().T, self.hermitian)

    def is_zero(self) -> bool:
        return _is_zero(self.matrix)

    def __add__(self, other: "LocalOperator") -> "LocalOperator":
        target = self.support.hull(other.support)
        mat = embed_matrix(self.matrix, self.support, target) + embed_matrix(
            other.matrix, other.support, target
        )
        return LocalOperator(target, mat, self.hermitian and other.hermitian)

    def __neg__(self) -> "LocalOperator":
        return LocalOperator(self.support, -self.matrix, self.hermitian)

    def __sub__(self, other: "LocalOperator") -> "LocalOperator":
        return self + (-other)

    def __mul__(self, c) -> "LocalOperator":
        c = complex(c) if np.iscomplexobj(c) else float(c)
        return LocalOperator(self.support, c * self.matrix, self.hermitian and np.isreal(c))

    __rmul__ = __mul__


def _is_zero(mat: np.ndarray) -> bool:
    # canonical zero: ||M|| <= 1e-14 * dim; the Frobenius norm bounds the spectral one
    return float(np.linalg.norm(mat)) <= 1e-14 * mat.shape[0]


def pauli_string(paulis: str, lo: int, coef: complex = 1.0) -> LocalOperator:
    """``coef * P_lo P_lo+1 ...`` for a string such as ``"XZ"``."""
    mat = np.array([[1.0]])
    for p in paulis:
        mat = np.kron(mat, PAULI[p])
    mat = coef * mat
    herm = bool(np.isreal(coef))
    return LocalOperator(Interval(lo, lo + len(paulis) - 1), mat, hermitian=herm)


def embed_matrix(mat: np.ndarray, support: Interval, target: Interval) -> np.ndarray:
    if not target.contains(support):
        raise ValueError(f"target {target} does not contain support {support}")
    left = 2 ** (support.lo - target.lo)
    right = 2 ** (target.hi - support.hi)
    if left == 1 and right == 1:
        return mat
    out = mat
    if left > 1:
        out = np.kron(np.eye(left), out)
    if right > 1:
        out = np.kron(out, np.eye(right))
    return out


def embed(op: LocalOperator, target: Interval) -> LocalOperator:
    """Tensor ``op`` with the identity on ``target`` minus its support."""
    if not target.contains(op.support):
        raise ValueError(f"target {target} does not contain support {op.support}")
    return LocalOperator(target, embed_matrix(op.matrix, op.support, target), op.hermitian)


def commutator(a: LocalOperator, b: LocalOperator) -> LocalOperator | None:
    """``[a, b]`` on the hull of the supports, or ``None`` (canonical zero)."""
    if not a.support.overlaps(b.support):
        return None
    target = a.support.hull(b.support)
    am = embed_matrix(a.matrix, a.support, target)
    bm = embed_matrix(b.matrix, b.support, target)
    c = am @ bm - bm @ am
    if _is_zero(c):
        return None
    return LocalOperator(target, c)


def matrix_norm(mat: np.ndarray, hermitian: bool | None = None) -> float:
    """Spectral norm of a dense matrix.

    Hermitian and anti-Hermitian inputs go through ``eigvalsh``; anything
    else through the largest singular value. With ``hermitian=None`` the
    symmetry is detected.
    """
    if mat.size == 0:
        return 0.0
    scale = float(np.max(np.abs(mat)))
    if scale == 0.0:
        return 0.0
    if hermitian is None:
        tol = HERMITIAN_RTOL * scale
        if np.max(np.abs(mat - mat.conj().T)) <= tol:
            hermitian = True
        elif np.max(np.abs(mat + mat.conj().T)) <= tol:
            return float(np.max(np.abs(np.linalg.eigvalsh(1j * mat))))
    if hermitian:
        return float(np.max(np.abs(np.linalg.eigvalsh(mat))))
    return float(np.linalg.norm(mat, 2))


def spectral_norm(op: LocalOperator | np.ndarray) -> float:
    if isinstance(op, LocalOperator):
        return matrix_norm(op.matrix, True if op.hermitian else None)
    return matrix_norm(np.asarray(op))


def diagonal_split(op: LocalOperator) -> tuple[LocalOperator, LocalOperator]:
    """Split into the Z-basis diagonal and the off-diagonal remainder."""
    d = np.diag(np.diag(op.matrix))
    diag = LocalOperator(op.support, d, op.hermitian)
    off = LocalOperator(op.support, op.matrix - d, op.hermitian)
    # Schur: the diagonal of a matrix never has larger norm than the matrix
    assert spectral_norm(diag) <= spectral_norm(op) * (1 + 1e-10) + 1e-14
    return diag, off


class OperatorSum(Mapping):
    """Sum of local terms keyed by ``(anchor, tag)`` on a chain of ``n`` sites.

    Inserting a key twice adds the matrices (embedding into the hull of the
    two supports if they differ).
    """

    def __init__(self, n: int, terms: Iterable[tuple[tuple, LocalOperator]] = ()):
        self.n = n
        store: dict[tuple, LocalOperator] = {}
        for key, op in terms:
            op.support.check_in_chain(n)
            store[key] = store[key] + op if key in store else op
        self._terms = store

    def __getitem__(self, key) -> LocalOperator:
        return self._terms[key]

    def __iter__(self) -> Iterator[tuple]:
        return iter(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __add__(self, other: "OperatorSum") -> "OperatorSum":
        if other.n != self.n:
            raise ValueError("chain lengths differ")
        return OperatorSum(self.n, list(self.items()) + list(other.items()))

    def scaled(self, c: float) -> "OperatorSum":
        return OperatorSum(self.n, [(k, op * c) for k, op in self.items()])

    def max_support(self) -> int:
        return max((op.support.length for op in self.values()), default=0)

    def to_dense(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        return to_dense(self, cap)

    def __repr__(self) -> str:
        return f"OperatorSum(n={self.n}, terms={len(self)})"


def to_dense(terms: OperatorSum, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Sum of all terms embedded in the full ``2**n`` space."""
    n = terms.n
    if n > cap:
        raise CapacityError("dense chain", n, cap)
    full_iv = Interval(1, n)
    cplx = any(op.matrix.dtype.kind == "c" for op in terms.values())
    out = np.zeros((2**n, 2**n), dtype=complex if cplx else float)
    for op in terms.values():
        out += embed_matrix(op.matrix, op.support, full_iv)
    return out


def partial_trace(full: np.ndarray, keep: Interval, n: int, *, embedded: bool = True) -> np.ndarray:
    """Normalized partial trace of a full-chain matrix over the complement of ``keep``.

    With ``embedded`` the result is tensored back with the identity so that it
    acts on the full chain again.
    """
    keep.check_in_chain(n)
    left = 2 ** (keep.lo - 1)
    mid = 2**keep.length
    right = 2 ** (n - keep.hi)
    t = full.reshape(left, mid, right, left, mid, right)
    red = np.einsum("iakibk->ab", t) / (left * right)
    if not embedded:
        return red
    return embed_matrix(red, keep, Interval(1, n))


@dataclass(frozen=True)
class TailProfile:
    """Norms ``t_r`` of the telescoped pieces of an operator around ``base``."""

    base: Interval
    tail_norms: tuple[float, ...]
    reconstruction_error: float = 0.0

    def decay_rate(self) -> float | None:
        """Least-squares slope of ``-log t_r`` over the nonzero tail (r >= 1)."""
        r = np.arange(len(self.tail_norms))
        t = np.asarray(self.tail_norms)
        mask = (r >= 1) & (t > 1e-15)
        if mask.sum() < 2:
            return None
        slope = np.polyfit(r[mask], np.log(t[mask]), 1)[0]
        return float(-slope)


def tail_profile(full: np.ndarray, base: Interval, n: int) -> TailProfile:
    """Decompose ``full`` as ``sum_r A_r`` with ``A_r`` supported on the r-fattening of ``base``.

    Each ``A_r`` is handled on its own support, so norms cost ``2^|S_r|``
    rather than ``2^N``; the pieces are summed back on the full chain to
    report the reconstruction error.
    """
    whole = Interval(1, n)
    norms = []
    total = np.zeros_like(full)
    prev, prev_region = None, None
    r = 0
    while True:
        region = base.fatten(r, n)
        cur = partial_trace(full, region, n, embedded=False)
        piece = cur if prev is None else cur - embed_matrix(prev, prev_region, region)
        norms.append(matrix_norm(piece, hermitian=_hermitian_hint(full)))
        total += embed_matrix(piece, region, whole)
        prev, prev_region = cur, region
        if region == whole:
            break
        r += 1
    err = float(np.linalg.norm(full - total))
    return TailProfile(base, tuple(norms), err)


def _hermitian_hint(mat: np.ndarray) -> bool | None:
    scale = float(np.max(np.abs(mat))) if mat.size else 0.0
    return True if np.max(np.abs(mat - mat.conj().T)) <= 1e-10 * max(scale, 1e-300) else None


def hadamard_bound(b: np.ndarray, c: np.ndarray) -> tuple[float, float]:
    """Return ``(||B∘C||, ||B|| * max_i ||C_i,:||_2)`` for the Schur product bound."""
    lhs = matrix_norm(b * c, hermitian=False)
    rhs = matrix_norm(b, hermitian=False) * float(np.max(np.sqrt(np.sum(np.abs(c) ** 2, axis=1))))
    return lhs, rhs
