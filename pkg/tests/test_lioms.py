import numpy as np

from qliom.kam import run_scheme
from qliom.lioms import (
    Cluster,
    ResonantSet,
    assemble_and_dress,
    build_E_alpha,
    build_resonant_set,
    cluster_sites,
    commutator_norm,
    hprime_reassembly_error,
    joint_diagonalize_cluster,
    joint_labels,
    quasi_conservation_report,
)
from qliom.model import ChainParams, ResonanceMap, sample_fields
from qliom.opalg import PAULI, Interval, embed_matrix, matrix_norm, pauli_string


def _inject(kam, sites):
    """Resonant set whose cluster cores are ``sites`` (intervals of length 1)."""
    p = kam.params
    margin = p.n_star * p.R
    clusters = tuple(
        Cluster(T, Interval.clipped(T.lo - margin + 1, T.hi + margin - 1, p.N)) for T in cluster_sites(sites, margin)
    )
    return ResonantSet(p.N, margin, frozenset(sites), clusters)


class TestClustering:
    def test_separate(self):
        assert cluster_sites([3, 4, 9], 3) == [Interval(3, 4), Interval(9, 9)]

    def test_merged(self):
        assert cluster_sites([3, 4, 6], 3) == [Interval(3, 6)]

    def test_empty(self):
        assert cluster_sites([], 3) == []

    def test_no_resonances(self):
        p = ChainParams(N=6, J=0.01, delta_override=0.0)
        rmap = ResonanceMap(6, 2, 1, 0.0, np.zeros((1, 6), bool), np.ones((1, 6)))
        rs = build_resonant_set(rmap, p)
        assert rs.clusters == () and rs.sites == frozenset()

    def test_from_map(self):
        p = ChainParams(N=12, J=0.01, n_star_override=1, delta_override=0.1)
        res = np.zeros((1, 12), bool)
        res[0, 2] = True  # S_3 = [3, 4]
        res[0, 8] = True  # S_9 = [9, 10]
        rs = build_resonant_set(ResonanceMap(12, 2, 1, 0.1, res, np.ones((1, 12))), p)
        assert [c.T for c in rs.clusters] == [Interval(3, 4), Interval(9, 10)]
        assert rs.clusters[0].Ttilde == Interval(2, 5)
        assert rs.cluster_of(4) is rs.clusters[0] and rs.cluster_of(6) is None


class TestClusterHamiltonian:
    def test_zero_coupling(self):
        p = ChainParams(N=6, J=0.0)
        kam = run_scheme(p, sample_fields(p, 0))
        c = _inject(kam, [3]).clusters[0]
        E = build_E_alpha(c, kam)
        expect = embed_matrix(pauli_string("Z", 3, kam.fields.h[2]).matrix, Interval(3, 3), c.Ttilde)
        np.testing.assert_allclose(E.matrix, expect)

    def test_zero_coupling_diagonalization(self):
        p = ChainParams(N=6, J=0.0)
        kam = run_scheme(p, sample_fields(p, 0))
        rs = _inject(kam, [3, 4])
        c = rs.clusters[0]
        c = Cluster(c.T, c.Ttilde, build_E_alpha(c, kam))
        U, taus, _ = joint_diagonalize_cluster(c)
        np.testing.assert_allclose(U, np.eye(len(U)))
        for j, t in enumerate(taus):
            s = c.T.lo + j
            np.testing.assert_allclose(t.matrix, embed_matrix(PAULI["Z"], Interval(s, s), c.Ttilde))

    def test_cluster_factor_properties(self, golden_lioms):
        assert golden_lioms.clusters, "golden realization has clusters"
        for c in golden_lioms.clusters:
            U, taus, diag = joint_diagonalize_cluster(c)
            np.testing.assert_allclose(U.conj().T @ U, np.eye(len(U)), atol=1e-12)
            half = len(U) // 2
            for t in taus:
                np.testing.assert_allclose(np.linalg.eigvalsh(t.matrix), np.r_[-np.ones(half), np.ones(half)], atol=1e-10)
                assert commutator_norm(t.matrix, c.E_alpha.matrix, tol=0.0) <= 1e-10
                for t2 in taus:
                    assert commutator_norm(t.matrix, t2.matrix, tol=0.0) <= 1e-10

    def test_outer_spins_conserved(self, golden_lioms):
        region = golden_lioms.resonant_set.sites
        for c in golden_lioms.clusters:
            for s in c.Ttilde.sites:
                if s not in region:
                    z = embed_matrix(PAULI["Z"], Interval(s, s), c.Ttilde)
                    assert commutator_norm(z, c.E_alpha.matrix, tol=0.0) <= 1e-10


class TestAssembly:
    def test_zero_coupling(self):
        p = ChainParams(N=6, J=0.0)
        lset = assemble_and_dress(run_scheme(p, sample_fields(p, 0)))
        for i in range(1, 7):
            assert lset.M[i - 1] == Interval(i, i)
            np.testing.assert_allclose(lset.tau[i - 1], embed_matrix(PAULI["Z"], Interval(i, i), Interval(1, 6)))

    def test_golden_structure(self, golden_kam, golden_lioms):
        lset = golden_lioms
        n = lset.N
        taus = lset.tau
        for i in range(n):
            for j in range(i):
                assert commutator_norm(taus[i], taus[j]) <= 1e-10
        labels, dev = joint_labels(taus)
        assert len(np.unique(labels)) == 2**n and dev < 1e-6
        assert hprime_reassembly_error(golden_kam, lset) <= 1e-10
        for i in range(1, n + 1):
            c = lset.resonant_set.cluster_of(i)
            assert lset.M[i - 1] == (Interval(i, i) if c is None else c.Ttilde)
            assert lset.in_R[i - 1] == (c is not None)

    def test_tau_prime_outside_region(self, golden_lioms):
        for i in range(1, golden_lioms.N + 1):
            if not golden_lioms.in_R[i - 1]:
                np.testing.assert_array_equal(golden_lioms.tau_prime[i - 1].matrix, PAULI["Z"])

    def test_oversized_flag(self):
        p = ChainParams(N=8, J=0.05, delta_override=10.0, max_support=6)
        lset = assemble_and_dress(run_scheme(p, sample_fields(p, 0)), tails=False)
        assert lset.oversized and lset.tau is None

    def test_tails(self, small_kam):
        lset = assemble_and_dress(small_kam, tails=True)
        for i, tp in enumerate(lset.tails):
            assert tp.base == lset.M[i]
            assert tp.reconstruction_error < 1e-10


class TestLabels:
    def test_bare_spins(self):
        n = 3
        taus = [embed_matrix(PAULI["Z"], Interval(i, i), Interval(1, n)) for i in range(1, n + 1)]
        labels, dev = joint_labels(taus)
        assert list(labels) == list(range(8)) and dev < 1e-12

    def test_repeated_spin(self):
        z = embed_matrix(PAULI["Z"], Interval(1, 1), Interval(1, 2))
        labels, _ = joint_labels([z, z])
        assert len(np.unique(labels)) < 4


class TestConservation:
    def test_zero_coupling(self):
        p = ChainParams(N=5, J=0.0)
        kam = run_scheme(p, sample_fields(p, 0))
        rows = quasi_conservation_report(kam, assemble_and_dress(kam, tails=False))
        assert all(r["commutator"] == 0 for r in rows)

    def test_invariance(self, small_kam):
        lset = assemble_and_dress(small_kam, tails=False)
        for r in quasi_conservation_report(small_kam, lset):
            assert abs(r["commutator"] - r["primed_commutator"]) <= 1e-10
            assert r["commutator"] <= matrix_norm(small_kam.remainder) * 2 + 1e-12
