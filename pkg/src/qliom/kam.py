"""Inductive quasi-diagonalization of ``H = H0 + J V`` order by order in J.

At every scale ``m = 1..n`` the local terms ``F^(m)_i`` (supported on
``S_i^(m) = [i, i+mR-1]``) are assembled from nested commutators of the
lower-scale generators, split into a Z-diagonal part, a resonant part and a
non-resonant part, and the non-resonant part is eliminated by
``A^(m)_i``, the solution of ``W + [A, H0] = 0``. The generator of the full
transformation is ``A = sum_m J^m sum_i A^(m)_i``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .model import (
    ChainParams,
    FieldRealization,
    ResonanceMap,
    build_hamiltonian,
    local_energies,
    resonance_map,
    scale_interval,
)
from .opalg import (
    CapacityError,
    Interval,
    LocalOperator,
    OperatorSum,
    _is_zero,
    embed_matrix,
    matrix_norm,
    spectral_norm,
    to_dense,
)

log = logging.getLogger(__name__)

__all__ = [
    "C1",
    "ConsistencyError",
    "ScaleData",
    "KamOutput",
    "nested_terms",
    "compute_F",
    "split_F",
    "solve_elimination",
    "run_scheme",
    "remainder_exact",
    "conjugate_exact",
    "unitary_from_generator",
]

C1 = 2 / math.log(5 / 4)
ELIM_RTOL = 1e-10


class ConsistencyError(RuntimeError):
    """The resonance map and the elimination step disagree."""


@dataclass(frozen=True)
class ScaleData:
    m: int
    F: dict[int, LocalOperator]
    D: dict[int, LocalOperator]
    W_res: dict[int, LocalOperator]
    W_nonres: dict[int, LocalOperator]
    A: dict[int, LocalOperator]
    dropped: int = 0

    def anchors(self) -> list[int]:
        return sorted(self.F)

    def norm_table(self, resonance: ResonanceMap | None = None) -> list[dict]:
        rows = []
        for i in self.anchors():
            row = {"i": i}
            for name in ("F", "D", "W_res", "W_nonres", "A"):
                op = getattr(self, name).get(i)
                row[name] = 0.0 if op is None else spectral_norm(op)
            if resonance is not None:
                row["resonant"] = resonance.is_resonant(i, self.m)
            rows.append(row)
        return rows


def _add(acc: dict, key, mat: np.ndarray) -> None:
    if key in acc:
        acc[key] = acc[key] + mat
    else:
        acc[key] = mat


def nested_terms(
    starts: Sequence[tuple[int, int, Interval, np.ndarray]],
    target: int,
    cap: int,
    scales: Sequence[ScaleData],
) -> dict[tuple[int, Interval], np.ndarray]:
    """Sum nested commutators ``ad_{A_k} ... ad_{A_1} X`` over compatible anchors.

    ``starts`` holds ``(order, factors, support, matrix)`` seeds. Each step
    applies ``ad_{A^(m')_j}`` with ``m' <= cap`` and ``S_j^(m')`` touching the
    running support; contributions with the same (order, factors, support)
    are merged, which is exact because ``ad`` is linear. Returns
    ``(factors, support) -> matrix`` for states whose order reached ``target``.
    """
    frontier: dict[tuple[int, int, Interval], np.ndarray] = {}
    for s, k, iv, mat in starts:
        if s <= target:
            _add(frontier, (s, k, iv), mat)
    done: dict[tuple[int, Interval], np.ndarray] = {}
    while frontier:
        s_min = min(key[0] for key in frontier)
        current = sorted(key for key in frontier if key[0] == s_min)
        for key in current:
            s, k, iv = key
            mat = frontier.pop(key)
            if s == target:
                _add(done, (k, iv), mat)
                continue
            for mp in range(1, min(cap, target - s) + 1):
                for j, a in sorted(scales[mp - 1].A.items()):
                    if not a.support.overlaps(iv):
                        continue
                    union = iv.hull(a.support)
                    am = embed_matrix(a.matrix, a.support, union)
                    xm = embed_matrix(mat, iv, union)
                    c = am @ xm - xm @ am
                    if _is_zero(c):
                        continue
                    _add(frontier, (s + mp, k + 1, union), c)
    return done


def compute_F(
    m: int,
    scales: Sequence[ScaleData],
    H0: OperatorSum,
    V: OperatorSum,
    R: int,
    n: int,
    *,
    collapsed: bool = True,
) -> dict[int, LocalOperator]:
    """Local terms of the order-``m`` coefficient that remain once ``[A^(m), H0]`` is split off.

    For ``m <= n`` this is ``F^(m)_i``; for ``m > n`` (no generator at that
    order) it is the remainder coefficient ``G^(m)_i``. The anchor of a
    nested commutator is the smallest anchor among its factors, which is the
    left end of its support.

    With ``collapsed`` the innermost ``sum_{i0} [A^(m1)_{i1}, (H0)_{i0}]`` is
    replaced by ``-W^(m1),nonres_{i1}``; otherwise the commutators with the
    on-site field terms are formed explicitly.
    """
    N = H0.n
    cap = min(m - 1, n)
    if len(scales) < cap:
        raise ValueError(f"scale {m} needs scales 1..{cap}, got {len(scales)}")
    acc: dict[int, np.ndarray] = {}
    supports: dict[int, Interval] = {}

    def deposit(results, coef_sign=1.0):
        for (k, iv), mat in results.items():
            anchor = iv.lo
            target_iv = scale_interval(anchor, m, R, N)
            if not target_iv.contains(iv):
                raise AssertionError(f"term support {iv} escapes S_{anchor}^({m}) = {target_iv}")
            supports[anchor] = target_iv
            _add(acc, anchor, coef_sign * embed_matrix(mat, iv, target_iv) / math.factorial(k))

    # first sum: nested commutators ending on H0
    if cap >= 1:
        if collapsed:
            starts = [
                (m1, 1, w.support, -w.matrix)
                for m1 in range(1, cap + 1)
                for _, w in sorted(scales[m1 - 1].W_nonres.items())
            ]
        else:
            starts = [(0, 0, op.support, op.matrix) for _, op in sorted(H0.items())]
        deposit(nested_terms(starts, m, cap, scales))
    # second sum: nested commutators ending on V, total order m-1
    starts = [(0, 0, op.support, op.matrix) for _, op in sorted(V.items())]
    deposit(nested_terms(starts, m - 1, cap, scales))
    return {i: LocalOperator(supports[i], acc[i]) for i in sorted(acc)}


def split_F(F_i: LocalOperator, resonant: bool) -> tuple[LocalOperator | None, LocalOperator | None, LocalOperator | None]:
    """``F_i -> (D_i, W_res_i, W_nonres_i)``; absent parts are ``None``."""
    mat = F_i.matrix
    d = np.diag(np.diag(mat))
    off = mat - d
    D = None if _is_zero(d) else LocalOperator(F_i.support, d)
    W = None if _is_zero(off) else LocalOperator(F_i.support, off)
    nf = spectral_norm(F_i)
    if D is not None:
        assert spectral_norm(D) <= nf * (1 + 1e-10) + 1e-14, "||D|| > ||F||"
    if W is not None:
        assert spectral_norm(W) <= 2 * nf * (1 + 1e-10) + 1e-14, "||W|| > 2||F||"
    return (D, W, None) if resonant else (D, None, W)


def solve_elimination(W: LocalOperator | None, h: Sequence[float], delta: float) -> LocalOperator | None:
    """``<s|A|s'> = <s|W|s'> / (E(s) - E(s'))`` off the diagonal."""
    if W is None:
        return None
    iv = W.support
    e = local_energies(np.asarray(h)[iv.lo - 1 : iv.hi])
    gap = e[:, None] - e[None, :]
    w = W.matrix
    off = ~np.eye(len(e), dtype=bool)
    live = off & (np.abs(w) > 1e-14 * max(1.0, float(np.max(np.abs(w)))))
    # energy differences are 2 * sum eta h, so non-resonance means |gap| >= 2 delta
    small = live & (np.abs(gap) < 2 * delta - 1e-12)
    if np.any(small) or np.any(live & (gap == 0)):
        raise ConsistencyError(
            f"elimination on {iv}: nonzero element over an energy gap below 2*delta={2 * delta:.3g}"
        )
    a = np.zeros_like(w, dtype=np.result_type(w, float))
    a[live] = w[live] / gap[live]
    return LocalOperator(iv, a)


def _drop(op: LocalOperator, J: float, m: int) -> bool:
    return _is_zero(op.matrix) or (J**m) * spectral_norm(op) < 1e-16


def unitary_from_generator(a: np.ndarray) -> np.ndarray:
    """``e^{a}`` for an anti-Hermitian matrix, with a unitarity check."""
    u = scipy.linalg.expm(a)
    err = np.max(np.abs(u @ u.conj().T - np.eye(len(u))))
    if err > 1e-10:
        raise ArithmeticError(f"e^A is not unitary (max deviation {err:.2e})")
    return u


def conjugate_exact(op: np.ndarray, A: OperatorSum | np.ndarray, sign: int = 1, cap: int = 14) -> np.ndarray:
    """``e^{sign*A} op e^{-sign*A}`` on the full space."""
    a = A if isinstance(A, np.ndarray) else to_dense(A, cap)
    u = unitary_from_generator(sign * a)
    return u @ op @ u.conj().T


@dataclass
class KamOutput:
    params: ChainParams
    fields: FieldRealization
    H0: OperatorSum
    V: OperatorSum
    resonance: ResonanceMap
    scales: list[ScaleData]
    findings: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def n(self) -> int:
        return len(self.scales)

    def _weighted(self, attr: str) -> OperatorSum:
        J = self.params.J
        return OperatorSum(
            self.N,
            [((i, sd.m), op * J**sd.m) for sd in self.scales for i, op in sorted(getattr(sd, attr).items())],
        )

    @cached_property
    def generator(self) -> OperatorSum:
        """``A = sum_m J^m A^(m)`` keyed by ``(anchor, m)``."""
        return self._weighted("A")

    @cached_property
    def diagonal(self) -> OperatorSum:
        return self._weighted("D")

    @cached_property
    def resonant_part(self) -> OperatorSum:
        return self._weighted("W_res")

    # dense oracle ------------------------------------------------------
    def _cap(self) -> int:
        return self.params.max_support

    @cached_property
    def H_dense(self) -> np.ndarray:
        return to_dense(self.H0 + self.V.scaled(self.params.J), self._cap())

    @cached_property
    def A_dense(self) -> np.ndarray:
        a = to_dense(self.generator, self._cap())
        if a.dtype != self.H_dense.dtype and a.dtype.kind == "f":
            a = a.astype(self.H_dense.dtype)
        return a

    @cached_property
    def U(self) -> np.ndarray:
        """``e^A``."""
        return unitary_from_generator(self.A_dense)

    def dress(self, op: np.ndarray) -> np.ndarray:
        """``e^{ad_A} op = e^A op e^{-A}``."""
        return self.U @ op @ self.U.conj().T

    def undress(self, op: np.ndarray) -> np.ndarray:
        """``e^{-ad_A} op = e^{-A} op e^{A}``."""
        return self.U.conj().T @ op @ self.U

    @cached_property
    def Hprime_exact(self) -> np.ndarray:
        return self.dress(self.H_dense)

    @cached_property
    def hprime_pieces(self) -> np.ndarray:
        """``H0 + sum J^m D^(m) + sum J^m W^(m),res`` on the full space."""
        out = to_dense(self.H0, self._cap()).astype(np.result_type(self.H_dense, self.A_dense))
        out = out + to_dense(self.diagonal, self._cap()) + to_dense(self.resonant_part, self._cap())
        return out

    @cached_property
    def remainder(self) -> np.ndarray:
        return remainder_exact(self)

    def summary(self) -> dict:
        return {
            "params": self.params.to_json(),
            "seed": self.fields.seed,
            "h": list(self.fields.h),
            "resonance": self.resonance.to_json(),
            "scales": [
                {"m": sd.m, "dropped": sd.dropped, "terms": sd.norm_table(self.resonance)}
                for sd in self.scales
            ],
            "findings": self.findings,
        }


def remainder_exact(kam: KamOutput) -> np.ndarray:
    """``delta H = e^A H e^{-A} - (H0 + sum J^m D^(m) + sum J^m W^(m),res)``."""
    if kam.N > kam.params.max_support:
        raise CapacityError("dense chain", kam.N, kam.params.max_support)
    return kam.Hprime_exact - kam.hprime_pieces


def _f_bound(m: int, K: float) -> float:
    return math.factorial(m) ** 3 * K ** (m - 1)


def run_scheme(
    params: ChainParams,
    fields: FieldRealization,
    resonance: ResonanceMap | None = None,
    *,
    collapsed: bool = True,
) -> KamOutput:
    """Build the scales ``1..n*`` and record the norm surveillance findings."""
    H0, V = build_hamiltonian(params, fields)
    if resonance is None:
        resonance = resonance_map(fields, params)
    n, R, J, delta = params.n_star, params.R, params.J, params.delta
    h = fields.h
    K = 4 * C1 * R**2 / delta if delta > 0 else math.inf
    scales: list[ScaleData] = []
    a_bound_violations = []
    f_bound_terms = f_bound_violations = 0
    for m in range(1, n + 1):
        if m * R > params.max_support and m * R < params.N:
            log.warning("scale %d intervals (%d sites) exceed the support cap", m, m * R)
        raw = compute_F(m, scales, H0, V, R, n, collapsed=collapsed)
        F, D, Wr, Wn, A = {}, {}, {}, {}, {}
        dropped = 0
        for i, Fi in raw.items():
            if _drop(Fi, J, m):
                dropped += 1
                continue
            F[i] = Fi
            d, wr, wn = split_F(Fi, resonance.is_resonant(i, m))
            a = solve_elimination(wn, h, delta)
            for store, op in ((D, d), (Wr, wr), (Wn, wn), (A, a)):
                if op is not None:
                    store[i] = op
            nf = spectral_norm(Fi)
            f_bound_terms += 1
            if nf > _f_bound(m, K) * (1 + 1e-12):
                f_bound_violations += 1
            if a is not None and delta > 0 and spectral_norm(a) > 4 / delta * nf * (1 + 1e-10):
                a_bound_violations.append((m, i, spectral_norm(a), 4 / delta * nf))
        scales.append(ScaleData(m, F, D, Wr, Wn, A, dropped))
    findings = {
        "K": K,
        "C1": C1,
        "f_bound_terms": f_bound_terms,
        "f_bound_violations": f_bound_violations,
        "a_bound_violations": len(a_bound_violations),
    }
    return KamOutput(params, fields, H0, V, resonance, scales, findings)


def scale_invariant_errors(sd: ScaleData, h: Sequence[float]) -> dict[str, float]:
    """Worst relative violations of the per-scale identities at one scale."""
    worst = {"split": 0.0, "anti_hermitian": 0.0, "zero_diagonal": 0.0, "elimination": 0.0}
    for i, Fi in sd.F.items():
        total = np.zeros_like(Fi.matrix, dtype=complex)
        for part in (sd.D, sd.W_res, sd.W_nonres):
            if i in part:
                total = total + part[i].matrix
        scale = max(matrix_norm(Fi.matrix), 1e-300)
        worst["split"] = max(worst["split"], float(np.max(np.abs(total - Fi.matrix))) / scale)
        if i in sd.W_res and i in sd.W_nonres:
            worst["split"] = math.inf
    for i, a in sd.A.items():
        am = a.matrix
        na = max(matrix_norm(am), 1e-300)
        worst["anti_hermitian"] = max(worst["anti_hermitian"], matrix_norm(am + am.conj().T) / na)
        worst["zero_diagonal"] = max(worst["zero_diagonal"], float(np.max(np.abs(np.diag(am)))) / na)
    for i, w in sd.W_nonres.items():
        iv = w.support
        e = local_energies(np.asarray(h)[iv.lo - 1 : iv.hi])
        a = sd.A.get(i)
        am = np.zeros_like(w.matrix) if a is None else a.matrix
        resid = w.matrix + (am * e[None, :] - e[:, None] * am)
        worst["elimination"] = max(worst["elimination"], matrix_norm(resid) / max(matrix_norm(w.matrix), 1e-300))
    return worst
