"""Disordered chain ``H = sum_i (h_i Z_i + J V_i)``, field sampling and resonances."""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .opalg import CapacityError, Interval, LocalOperator, OperatorSum, pauli_string, spectral_norm

__all__ = [
    "PRESETS",
    "PerturbationSpec",
    "ChainParams",
    "FieldRealization",
    "ResonanceCheck",
    "ResonanceMap",
    "RNG_ID",
    "sample_fields",
    "sample_field_batch",
    "build_hamiltonian",
    "classical_energy",
    "local_energies",
    "resonance_check",
    "resonance_map",
    "batch_min_sums",
    "scale_interval",
]

RNG_ID = "numpy.Philox(key=seed)"

# Pauli strings anchored at the left end of [i, i+R-1]
PRESETS: dict[str, tuple[tuple[float, str], ...]] = {
    "default": ((0.5, "X"), (0.5, "XX")),
    "transverse": ((1.0, "X"),),
    "xx_yy": ((0.5, "XX"), (0.5, "YY")),
}


@dataclass(frozen=True)
class PerturbationSpec:
    """Local perturbation ``V_i``.

    Either a preset name, a translation-invariant list of ``(coef, paulis)``
    strings starting at site ``i``, or explicit per-site Hermitian matrices
    already sized to the (clipped) support. Strings that would leave the
    chain at the right edge are dropped.
    """

    preset: str | None = "default"
    pauli_terms: tuple[tuple[float, str], ...] | None = None
    site_matrices: Mapping[int, np.ndarray] | None = field(default=None, compare=False)

    def terms(self) -> tuple[tuple[float, str], ...]:
        if self.pauli_terms is not None:
            return tuple((float(c), str(p)) for c, p in self.pauli_terms)
        if self.preset not in PRESETS:
            raise ValueError(f"unknown perturbation preset {self.preset!r}")
        return PRESETS[self.preset]

    def local_terms(self, n: int, r: int) -> dict[int, LocalOperator]:
        out = {}
        for i in range(1, n + 1):
            support = Interval.clipped(i, i + r - 1, n)
            if self.site_matrices is not None:
                if i not in self.site_matrices:
                    continue
                op = LocalOperator(support, self.site_matrices[i], hermitian=True)
            else:
                mat = np.zeros((2**support.length,) * 2)
                op = LocalOperator(support, mat)
                for coef, paulis in self.terms():
                    if len(paulis) > r:
                        raise ValueError(f"Pauli string {paulis!r} longer than range R={r}")
                    if i + len(paulis) - 1 > n:
                        continue
                    op = op + pauli_string(paulis, i, coef)
                op = LocalOperator(op.support, op.matrix, hermitian=True)
            if spectral_norm(op) > 1 + 1e-12:
                raise ValueError(f"||V_{i}|| = {spectral_norm(op):.6g} exceeds 1")
            out[i] = op
        return out

    def to_json(self):
        if self.site_matrices is not None:
            return "explicit"
        if self.pauli_terms is not None:
            return {"pauli_terms": [[c, p] for c, p in self.terms()]}
        return self.preset


@dataclass(frozen=True)
class ChainParams:
    N: int
    R: int = 2
    J: float = 0.05
    beta: float = 0.5
    epsilon: float = 0.5
    perturbation: PerturbationSpec = PerturbationSpec()
    n_star_override: int | None = None
    delta_override: float | None = None
    max_support: int = 14
    enum_cap: int = 16

    def __post_init__(self):
        if self.N < 1 or self.R < 1:
            raise ValueError("N and R must be positive")
        if not 0 <= self.J < 1:
            raise ValueError("J must lie in [0, 1)")
        for name in ("beta", "epsilon"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.n_star_override is not None and self.n_star_override < 1:
            raise ValueError("n_star override must be >= 1")
        if self.delta_override is not None and self.delta_override < 0:
            raise ValueError("delta override must be >= 0")

    @property
    def delta(self) -> float:
        if self.delta_override is not None:
            return float(self.delta_override)
        return self.J**self.beta

    @property
    def n_star(self) -> int:
        if self.n_star_override is not None:
            return int(self.n_star_override)
        if self.J == 0:
            return 1
        return max(1, math.floor(math.log(1 / self.J) ** (1 - self.epsilon)))

    @property
    def kappa(self) -> float:
        """Decay rate ``(1-beta)/2 * log(1/J)`` used by the cut-site profile."""
        return math.inf if self.J == 0 else (1 - self.beta) / 2 * math.log(1 / self.J)

    def replace(self, **kw) -> "ChainParams":
        from dataclasses import replace

        return replace(self, **kw)

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "R": self.R,
            "J": self.J,
            "beta": self.beta,
            "epsilon": self.epsilon,
            "perturbation": self.perturbation.to_json(),
            "n_star": self.n_star,
            "delta": self.delta,
            "n_star_override": self.n_star_override,
            "delta_override": self.delta_override,
            "max_support": self.max_support,
        }


@dataclass(frozen=True)
class FieldRealization:
    h: tuple[float, ...]
    seed: int
    rng_id: str = RNG_ID

    def __post_init__(self):
        h = tuple(float(x) for x in self.h)
        if any(not 0.0 <= x <= 1.0 for x in h):
            raise ValueError("fields must lie in [0, 1]")
        object.__setattr__(self, "h", h)

    @property
    def N(self) -> int:
        return len(self.h)

    def array(self) -> np.ndarray:
        return np.array(self.h)


def _generator(seed: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(key=seed))


def sample_fields(params: ChainParams, seed: int) -> FieldRealization:
    """Uniform(0,1) fields from a counter-based generator keyed by ``seed``."""
    return FieldRealization(tuple(_generator(seed).random(params.N)), seed)


def sample_field_batch(n: int, seeds: Sequence[int]) -> np.ndarray:
    """Rows identical to ``sample_fields(..., seed).h`` for each seed."""
    return np.stack([_generator(int(s)).random(n) for s in seeds]) if len(seeds) else np.zeros((0, n))


def build_hamiltonian(params: ChainParams, fields: FieldRealization) -> tuple[OperatorSum, OperatorSum]:
    """Return ``(H0, V)``; ``H = H0 + J V``."""
    if fields.N != params.N:
        raise ValueError("field realization length does not match N")
    h0 = OperatorSum(
        params.N,
        [((i, "h0"), pauli_string("Z", i, hi)) for i, hi in enumerate(fields.h, start=1)],
    )
    v_terms = params.perturbation.local_terms(params.N, params.R)
    v = OperatorSum(params.N, [((i, "V"), op) for i, op in v_terms.items()])
    return h0, v


def classical_energy(h: Sequence[float] | FieldRealization, sigma: Sequence[int]) -> float:
    """``E(sigma) = sum_i h_i sigma_i`` with ``sigma_i = ±1``."""
    hv = h.h if isinstance(h, FieldRealization) else tuple(h)
    if len(sigma) != len(hv):
        raise ValueError("sigma length does not match the chain")
    if any(s not in (1, -1) for s in sigma):
        raise ValueError("sigma entries must be +1 or -1")
    return float(sum(hi * s for hi, s in zip(hv, sigma)))


def local_energies(h_slice: Sequence[float]) -> np.ndarray:
    """Diagonal of ``sum_j h_j Z_j`` on a support, in lexicographic order."""
    e = np.zeros(1)
    for hj in h_slice:
        e = (e[:, None] + np.array([hj, -hj])[None, :]).ravel()
    return e


def scale_interval(i: int, m: int, r: int, n: int) -> Interval:
    """``S_i^(m) = [i, i+mR-1]`` clipped to the chain."""
    return Interval.clipped(i, i + m * r - 1, n)


class ResonanceCheck(NamedTuple):
    resonant: bool
    min_value: float
    eta: tuple[int, ...]


def _all_signed_sums(h: np.ndarray) -> np.ndarray:
    # index digits (base 3, last site least significant): 0 -> 0, 1 -> +1, 2 -> -1
    s = np.zeros(1)
    for hj in h:
        s = (s[:, None] + np.array([0.0, hj, -hj])[None, :]).ravel()
    return s


def _decode_eta(index: int, length: int) -> list[int]:
    digits = []
    for _ in range(length):
        digits.append((0, 1, -1)[index % 3])
        index //= 3
    return digits[::-1]


def _min_exhaustive(h: np.ndarray) -> tuple[float, tuple[int, ...]]:
    # eta and -eta give the same |sum|: enumerate only eta whose first nonzero
    # entry is +1, i.e. h_p + (all signed sums of the sites after p)
    length = len(h)
    best, best_eta = math.inf, None
    suffix = np.zeros(1)
    for p in range(length - 1, -1, -1):
        vals = np.abs(h[p] + suffix)
        k = int(np.argmin(vals))
        if vals[k] < best:
            best = float(vals[k])
            best_eta = tuple([0] * p + [1] + _decode_eta(k, length - p - 1))
        suffix = (np.array([0.0, h[p], -h[p]])[:, None] + suffix[None, :]).ravel()
    return best, best_eta


def _min_meet_in_middle(h: np.ndarray) -> tuple[float, tuple[int, ...]]:
    length = len(h)
    half = length // 2
    left = _all_signed_sums(h[:half])
    right = _all_signed_sums(h[half:])
    order = np.argsort(right, kind="stable")
    rs = right[order]
    best, best_pair = math.inf, None
    # left part zero: nonzero right vectors only
    nz = np.abs(right[1:])
    if nz.size:
        k = int(np.argmin(nz)) + 1
        best, best_pair = float(nz[k - 1]), (0, k)
    for a_idx in range(1, left.size):
        target = -left[a_idx]
        pos = bisect_left(rs, target)
        for q in (pos - 1, pos):
            if 0 <= q < rs.size:
                v = abs(left[a_idx] + rs[q])
                if v < best:
                    best, best_pair = float(v), (a_idx, int(order[q]))
    a_idx, b_idx = best_pair
    eta = _decode_eta(a_idx, half) + _decode_eta(b_idx, length - half)
    first = next(e for e in eta if e != 0)
    return best, tuple(first * e for e in eta)


def resonance_check(
    h: Sequence[float] | FieldRealization,
    i: int,
    m: int,
    delta: float,
    R: int,
    *,
    cap: int = 16,
    mode: str = "exhaustive",
) -> ResonanceCheck:
    """Is ``S_i^(m)`` resonant, i.e. ``min_{eta != 0} |sum eta_j h_j| < delta``?

    ``eta`` runs over ``{-1,0,1}`` on the in-chain sites of the interval. A
    value exactly equal to ``delta`` counts as resonant.
    """
    hv = np.array(h.h if isinstance(h, FieldRealization) else h, dtype=float)
    iv = scale_interval(i, m, R, len(hv))
    window = hv[iv.lo - 1 : iv.hi]
    if mode == "exhaustive":
        if len(window) > cap:
            raise CapacityError(
                "resonance enumeration length (use mode='meet_in_middle' up to 32)", len(window), cap
            )
        best, eta = _min_exhaustive(window)
    elif mode == "meet_in_middle":
        if len(window) > 32:
            raise CapacityError("meet-in-the-middle resonance enumeration", len(window), 32)
        best, eta = _min_meet_in_middle(window)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ResonanceCheck(bool(best <= delta), best, eta)


@lru_cache(maxsize=None)
def _canonical_etas(length: int) -> np.ndarray:
    """All ``eta`` in {-1,0,1}^length whose first nonzero entry is +1."""
    rows = []
    for p in range(length):
        rest = np.array(np.meshgrid(*[[0, 1, -1]] * (length - p - 1), indexing="ij")).reshape(
            length - p - 1, -1
        ).T if length - p - 1 else np.zeros((1, 0), dtype=int)
        block = np.zeros((rest.shape[0], length), dtype=np.int8)
        block[:, p] = 1
        block[:, p + 1 :] = rest
        rows.append(block)
    out = np.concatenate(rows)
    out.setflags(write=False)
    return out


def batch_min_sums(h_batch: np.ndarray, R: int, n_star: int) -> np.ndarray:
    """Minimal ``|sum eta h|`` for every sample, scale and anchor.

    Returns an array of shape ``(samples, n_star, N)``; vectorized over
    samples, intended for ensembles with ``n_star * R <= 10``.
    """
    samples, n = h_batch.shape
    out = np.empty((samples, n_star, n))
    for m in range(1, n_star + 1):
        for i in range(1, n + 1):
            iv = scale_interval(i, m, R, n)
            etas = _canonical_etas(iv.length).astype(float)
            sums = h_batch[:, iv.lo - 1 : iv.hi] @ etas.T
            out[:, m - 1, i - 1] = np.min(np.abs(sums), axis=1)
    return out


@dataclass(frozen=True)
class ResonanceMap:
    N: int
    R: int
    n_star: int
    delta: float
    resonant: np.ndarray = field(repr=False)  # bool (n_star, N); [m-1, i-1]
    min_value: np.ndarray = field(repr=False)
    argmin: tuple[tuple[tuple[int, ...], ...], ...] = field(repr=False, default=())

    def __post_init__(self):
        for name in ("resonant", "min_value"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def is_resonant(self, i: int, m: int) -> bool:
        return bool(self.resonant[m - 1, i - 1])

    def interval(self, i: int, m: int) -> Interval:
        return scale_interval(i, m, self.R, self.N)

    def resonant_intervals(self) -> list[tuple[int, int, Interval]]:
        return [
            (i, m, self.interval(i, m))
            for m in range(1, self.n_star + 1)
            for i in range(1, self.N + 1)
            if self.resonant[m - 1, i - 1]
        ]

    def monotonicity_violations(self) -> list[tuple[int, int, int, int]]:
        """Pairs (i, m, i', m') with S_i^(m) ⊂ S_i'^(m'), m' > m, resonant -> non-resonant."""
        bad = []
        for i, m, iv in self.resonant_intervals():
            for m2 in range(m + 1, self.n_star + 1):
                for i2 in range(1, self.N + 1):
                    if self.interval(i2, m2).contains(iv) and not self.is_resonant(i2, m2):
                        bad.append((i, m, i2, m2))
        return bad

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "R": self.R,
            "n_star": self.n_star,
            "delta": self.delta,
            "resonant": [[bool(x) for x in row] for row in self.resonant],
            "min_value": [[float(x) for x in row] for row in self.min_value],
        }


def resonance_map(fields: FieldRealization | Sequence[float], params: ChainParams) -> ResonanceMap:
    hv = np.array(fields.h if isinstance(fields, FieldRealization) else fields, dtype=float)
    n, r, ns, delta = len(hv), params.R, params.n_star, params.delta
    res = np.zeros((ns, n), dtype=bool)
    mins = np.zeros((ns, n))
    etas = []
    for m in range(1, ns + 1):
        row = []
        for i in range(1, n + 1):
            length = scale_interval(i, m, r, n).length
            mode = "exhaustive" if length <= params.enum_cap else "meet_in_middle"
            chk = resonance_check(hv, i, m, delta, r, cap=params.enum_cap, mode=mode)
            res[m - 1, i - 1] = chk.resonant
            mins[m - 1, i - 1] = chk.min_value
            row.append(chk.eta)
        etas.append(tuple(row))
    rmap = ResonanceMap(n, r, ns, delta, res, mins, tuple(etas))
    bad = rmap.monotonicity_violations()
    assert not bad, f"resonance monotonicity violated: {bad[:3]}"
    return rmap
