"""Resonant clusters, cluster Hamiltonians and the dressed spin operators.

Sites covered by a resonant interval are grouped into clusters ``T_alpha``
(consecutive resonant sites closer than ``n* R`` share a cluster). Each
cluster carries a Hamiltonian on its fattened interval, diagonalized
jointly with the Z operators on the fattening. The primed spins are the
rotated Z's on clusters and the bare Z's elsewhere; dressing with ``e^{-A}``
gives the quasi-conserved ``tau_i``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kam import KamOutput
from .model import ChainParams, ResonanceMap
from .opalg import (
    Interval,
    LocalOperator,
    OperatorSum,
    TailProfile,
    embed_matrix,
    matrix_norm,
    pauli_string,
    tail_profile,
    to_dense,
)

log = logging.getLogger(__name__)

__all__ = [
    "Cluster",
    "ResonantSet",
    "LiomSet",
    "DegenerateClusterError",
    "cluster_sites",
    "build_resonant_set",
    "build_E_alpha",
    "joint_diagonalize_cluster",
    "assemble_and_dress",
    "quasi_conservation_report",
    "commutator_norm",
    "joint_labels",
    "conservation_bound",
]

GREEDY_THRESHOLD = 0.9
DEGENERACY_TOL = 1e-12
COMMUTE_TOL = 1e-10


class DegenerateClusterError(RuntimeError):
    def __init__(self, cluster: "Cluster", overlaps: np.ndarray):
        super().__init__(f"no usable eigenvector/bitstring matching on cluster {cluster.T}")
        self.cluster = cluster
        self.overlaps = overlaps


@dataclass(frozen=True)
class Cluster:
    T: Interval
    Ttilde: Interval
    E_alpha: LocalOperator | None = None

    @property
    def outer_sites(self) -> list[int]:
        return [s for s in self.Ttilde.sites if s not in self.T]


@dataclass(frozen=True)
class ResonantSet:
    N: int
    margin: int  # n* R
    Rtilde: frozenset[int]
    clusters: tuple[Cluster, ...]

    @property
    def sites(self) -> frozenset[int]:
        """The final resonant region: union of the cluster intervals."""
        return frozenset(s for c in self.clusters for s in c.T.sites)

    def cluster_of(self, site: int) -> Cluster | None:
        for c in self.clusters:
            if site in c.T:
                return c
        return None


def cluster_sites(sites: Sequence[int], margin: int) -> list[Interval]:
    """Cover the components of ``sites`` under ``|i - j| < margin`` by intervals."""
    out: list[Interval] = []
    ordered = sorted(set(sites))
    if not ordered:
        return out
    lo = prev = ordered[0]
    for s in ordered[1:]:
        if s - prev >= margin:
            out.append(Interval(lo, prev))
            lo = s
        prev = s
    out.append(Interval(lo, prev))
    return out


def build_resonant_set(resonance: ResonanceMap, params: ChainParams) -> ResonantSet:
    n, margin = resonance.N, params.n_star * params.R
    rtilde = frozenset(s for _, _, iv in resonance.resonant_intervals() for s in iv.sites)
    clusters = []
    for T in cluster_sites(rtilde, margin):
        Tt = Interval.clipped(T.lo - margin + 1, T.hi + margin - 1, n)
        clusters.append(Cluster(T, Tt))
    for a, b in zip(clusters, clusters[1:]):
        assert b.T.lo - a.T.hi >= margin, "clusters closer than n*R"
    return ResonantSet(n, margin, rtilde, tuple(clusters))


def build_E_alpha(cluster: Cluster, kam: KamOutput) -> LocalOperator:
    """Cluster Hamiltonian on the fattened interval."""
    J, h = kam.params.J, kam.fields.h
    Tt = cluster.Ttilde
    terms: list[tuple[tuple, LocalOperator]] = []
    for i in cluster.T.sites:
        terms.append(((i, "h0"), pauli_string("Z", i, h[i - 1])))
    for sd in kam.scales:
        for i, w in sd.W_res.items():
            if i in cluster.T:
                terms.append(((i, "W", sd.m), w * J**sd.m))
        for i, d in sd.D.items():
            if d.support.overlaps(cluster.T):
                terms.append(((i, "D", sd.m), d * J**sd.m))
    dim = 2**Tt.length
    mat = np.zeros((dim, dim))
    for _, op in terms:
        if not Tt.contains(op.support):
            raise AssertionError(f"term on {op.support} escapes {Tt}")
        mat = mat + embed_matrix(op.matrix, op.support, Tt)
    mat = 0.5 * (mat + mat.conj().T)
    return LocalOperator(Tt, mat, hermitian=True)


def _outer_blocks(cluster: Cluster) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays ``(outer_config, inner_config)`` for every basis state of the fattened interval."""
    Tt, T = cluster.Ttilde, cluster.T
    n_in = T.length
    n_right = Tt.hi - T.hi
    idx = np.arange(2**Tt.length)
    right = idx & ((1 << n_right) - 1)
    inner = (idx >> n_right) & ((1 << n_in) - 1)
    left = idx >> (n_right + n_in)
    outer = (left << n_right) | right
    return outer, inner


def _resolve_degenerate(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Rotate each degenerate eigenspace onto the projections of its heaviest bitstrings."""
    vecs = vecs.copy()
    scale = max(1.0, float(np.max(np.abs(vals))))
    start = 0
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and vals[stop] - vals[start] <= DEGENERACY_TOL * scale:
            stop += 1
        d = stop - start
        if d > 1:
            q = vecs[:, start:stop]
            weight = np.sum(np.abs(q) ** 2, axis=1)
            chosen: list[int] = []
            for s in np.argsort(-weight, kind="stable"):
                cand = chosen + [int(s)]
                p = q.conj().T[:, cand]
                if np.linalg.matrix_rank(p, tol=1e-8) == len(cand):
                    chosen = cand
                if len(chosen) == d:
                    break
            p = q @ q.conj().T[:, chosen]
            # Loewdin orthogonalization keeps each vector closest to its bitstring
            g = p.conj().T @ p
            w, u = np.linalg.eigh(g)
            vecs[:, start:stop] = p @ (u @ np.diag(w**-0.5) @ u.conj().T)
        start = stop
    return vecs


def _match(overlap: np.ndarray) -> tuple[np.ndarray, bool]:
    """Eigenvector index for each bitstring; greedy first, optimal assignment as fallback."""
    n = overlap.shape[0]
    order = np.argsort(-overlap, axis=None, kind="stable")
    vec_of = -np.ones(n, dtype=int)
    used = np.zeros(n, dtype=bool)
    for flat in order:
        s, v = divmod(int(flat), n)
        if vec_of[s] < 0 and not used[v]:
            vec_of[s] = v
            used[v] = True
    if np.min(overlap[np.arange(n), vec_of]) >= GREEDY_THRESHOLD:
        return vec_of, False
    rows, cols = linear_sum_assignment(-overlap)
    vec_of = np.empty(n, dtype=int)
    vec_of[rows] = cols
    return vec_of, True


def joint_diagonalize_cluster(cluster: Cluster) -> tuple[np.ndarray, list[LocalOperator], dict]:
    """Return ``(U_alpha, [tau'_{alpha,j}], diagnostics)`` on the fattened interval."""
    E = cluster.E_alpha
    if E is None:
        raise ValueError("cluster Hamiltonian not built")
    Tt, T = cluster.Ttilde, cluster.T
    mat = E.matrix
    outer, inner = _outer_blocks(cluster)
    # E must not connect different outer configurations
    mixing = np.abs(mat[outer[:, None] != outer[None, :]])
    leak = float(mixing.max()) if mixing.size else 0.0
    if leak > COMMUTE_TOL * max(1.0, matrix_norm(mat)):
        raise AssertionError(f"cluster Hamiltonian on {Tt} does not commute with the outer Z's ({leak:.2e})")
    dim_in = 2**T.length
    U = np.zeros_like(mat)
    worst = 1.0
    fallbacks = 0
    for c in range(2 ** (Tt.length - T.length)):
        idx = np.flatnonzero(outer == c)
        idx = idx[np.argsort(inner[idx])]
        block = mat[np.ix_(idx, idx)]
        vals, vecs = np.linalg.eigh(block)
        vecs = _resolve_degenerate(vals, vecs)
        overlap = np.abs(vecs) ** 2  # [bitstring, eigenvector]
        vec_of, fell_back = _match(overlap)
        fallbacks += fell_back
        got = overlap[np.arange(dim_in), vec_of]
        if np.min(got) < 1e-12:
            raise DegenerateClusterError(cluster, overlap)
        worst = min(worst, float(np.min(got)))
        U[np.ix_(idx, idx)] = vecs[:, vec_of]
    taus = []
    for j in range(1, T.length + 1):
        z = embed_matrix(pauli_string("Z", T.lo + j - 1).matrix, Interval(T.lo + j - 1, T.lo + j - 1), Tt)
        t = U @ z @ U.conj().T
        taus.append(LocalOperator(Tt, 0.5 * (t + t.conj().T), hermitian=True))
    diag = {"min_matched_overlap": worst, "hungarian_blocks": fallbacks}
    return U, taus, diag


def commutator_norm(a: np.ndarray, b: np.ndarray, tol: float = COMMUTE_TOL) -> float:
    """``||[a, b]||`` for Hermitian ``a``, ``b``.

    ``[a, b] = P - P^dagger`` with ``P = a b``, so one product suffices; the
    Frobenius norm bounds the spectral norm and the exact value is computed
    only when that bound exceeds ``tol``.
    """
    p = a @ b
    c = p - p.conj().T
    fro = float(np.linalg.norm(c))
    if fro <= tol:
        return fro
    return matrix_norm(c)


def joint_labels(taus: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Decode joint eigenvalue tuples of commuting ±1 operators.

    Returns the integer labels ``sum_i b_i 2^(N-i)`` (``b_i = 0`` for +1) of
    all eigenvalues of ``L = sum_i 2^-i tau_i``, and the worst distance of an
    eigenvalue from the label lattice in units of the lattice spacing.
    """
    n = len(taus)
    L = sum(t * 2.0 ** -(i + 1) for i, t in enumerate(taus))
    vals = np.linalg.eigvalsh(L)
    x = (1 - 2.0**-n - vals) / 2 * 2**n
    labels = np.rint(x).astype(np.int64)
    return np.sort(labels), float(np.max(np.abs(x - labels))) if len(x) else 0.0


def conservation_bound(params: ChainParams, m_size: int) -> float:
    J = params.J
    if J == 0:
        return 0.0
    return m_size * math.exp(-(1 - params.beta) / 4 * math.log(1 / J) ** (2 - params.epsilon))


@dataclass
class LiomSet:
    params: ChainParams
    resonant_set: ResonantSet
    clusters: tuple[Cluster, ...]
    M: tuple[Interval, ...]
    in_R: tuple[bool, ...]
    tau_prime: tuple[LocalOperator, ...]
    tau: tuple[np.ndarray, ...] | None = None
    tails: tuple[TailProfile, ...] | None = None
    oversized: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.params.N

    def tau_prime_dense(self, i: int) -> np.ndarray:
        op = self.tau_prime[i - 1]
        return embed_matrix(op.matrix, op.support, Interval(1, self.N))

    def summary(self) -> dict:
        rows = []
        for i in range(1, self.N + 1):
            row = {
                "i": i,
                "M_lo": self.M[i - 1].lo,
                "M_hi": self.M[i - 1].hi,
                "in_R": self.in_R[i - 1],
            }
            if self.tails is not None:
                tp = self.tails[i - 1]
                row["tail"] = list(tp.tail_norms)
                row["tail_reconstruction_error"] = tp.reconstruction_error
            rows.append(row)
        return {
            "oversized": self.oversized,
            "Rtilde": sorted(self.resonant_set.Rtilde),
            "clusters": [
                {"T": [c.T.lo, c.T.hi], "Ttilde": [c.Ttilde.lo, c.Ttilde.hi]} for c in self.clusters
            ],
            "sites": rows,
            "diagnostics": self.diagnostics,
        }


def assemble_and_dress(kam: KamOutput, resonant_set: ResonantSet | None = None, *, tails: bool = True) -> LiomSet:
    params = kam.params
    n = params.N
    if resonant_set is None:
        resonant_set = build_resonant_set(kam.resonance, params)
    oversized = any(c.Ttilde.length > params.max_support for c in resonant_set.clusters)
    oversized = oversized or n > params.max_support
    clusters = []
    tau_prime: list[LocalOperator | None] = [None] * n
    M: list[Interval] = [Interval(i, i) for i in range(1, n + 1)]
    in_R = [False] * n
    diag = {"min_matched_overlap": 1.0, "hungarian_blocks": 0}
    for c in resonant_set.clusters:
        for i in c.T.sites:
            M[i - 1] = c.Ttilde
            in_R[i - 1] = True
        if c.Ttilde.length > params.max_support:
            clusters.append(c)
            continue
        c = replace(c, E_alpha=build_E_alpha(c, kam))
        _, taus, d = joint_diagonalize_cluster(c)
        diag["min_matched_overlap"] = min(diag["min_matched_overlap"], d["min_matched_overlap"])
        diag["hungarian_blocks"] += d["hungarian_blocks"]
        for j, t in enumerate(taus, start=1):
            tau_prime[c.T.lo + j - 2] = t
        clusters.append(c)
    for i in range(1, n + 1):
        if tau_prime[i - 1] is None and not in_R[i - 1]:
            tau_prime[i - 1] = pauli_string("Z", i)
    lset = LiomSet(
        params,
        resonant_set,
        tuple(clusters),
        tuple(M),
        tuple(in_R),
        tuple(tau_prime),
        oversized=oversized,
        diagnostics=diag,
    )
    if oversized:
        log.warning("realization %s flagged oversized; dense dressing skipped", kam.fields.seed)
        return lset
    full = Interval(1, n)
    lset.tau = tuple(kam.undress(embed_matrix(t.matrix, t.support, full)) for t in tau_prime)
    if tails:
        lset.tails = tuple(tail_profile(t, M[i], n) for i, t in enumerate(lset.tau))
    return lset


def hprime_reassembly_error(kam: KamOutput, lset: LiomSet) -> float:
    """Relative mismatch of the cluster form of ``H'`` against ``e^A H e^{-A}``."""
    J, h, n = kam.params.J, kam.fields.h, kam.N
    region = lset.resonant_set.sites
    terms: list[tuple[tuple, LocalOperator]] = []
    for i in range(1, n + 1):
        if i not in region:
            terms.append(((i, "h0"), pauli_string("Z", i, h[i - 1])))
    for sd in kam.scales:
        for i, d in sd.D.items():
            if not any(s in region for s in d.support.sites):
                terms.append(((i, "D", sd.m), d * J**sd.m))
    for k, c in enumerate(lset.clusters):
        terms.append(((c.T.lo, "E", k), c.E_alpha))
    total = to_dense(OperatorSum(n, terms), kam.params.max_support) + kam.remainder
    ref = kam.Hprime_exact
    return matrix_norm(total - ref) / max(matrix_norm(ref), 1e-300)


def quasi_conservation_report(kam: KamOutput, lset: LiomSet) -> list[dict]:
    """Exact ``||[H, tau_i]||`` per site with the asymptotic bound for comparison."""
    if lset.tau is None:
        raise ValueError("dense dressing not available (oversized realization)")
    H = kam.H_dense
    Hp = kam.Hprime_exact
    rows = []
    for i, t in enumerate(lset.tau, start=1):
        norm = commutator_norm(H, t, tol=0.0)
        primed = commutator_norm(Hp, lset.tau_prime_dense(i), tol=0.0)
        bound = conservation_bound(kam.params, lset.M[i - 1].length)
        rows.append({
            "i": i,
            "commutator": norm,
            "primed_commutator": primed,
            "bound": bound,
            "ratio": norm / bound if bound > 0 else (0.0 if norm == 0 else math.inf),
        })
    return rows
