import numpy as np
import pytest
import scipy.linalg

from qliom.kam import run_scheme
from qliom.lioms import assemble_and_dress, commutator_norm
from qliom.model import ChainParams, sample_fields
from qliom.verify import (
    CheckResult,
    ScalingStudy,
    all_passed,
    corrupt_generator,
    dress_by_series,
    ensemble_statistics,
    find_nonresonant_seed,
    fit_loglog,
    hadamard_property,
    run_probability_suite,
    run_scaling_suite,
    run_theorem1_suite,
    shuffle_tau,
)


def _by_id(checks):
    return {c.check_id: c for c in checks}


class TestHelpers:
    def test_fit_exact_power(self):
        x = np.array([1e-3, 2e-3, 4e-3, 8e-3])
        slope, se = fit_loglog(x, 5 * x**3)
        assert slope == pytest.approx(3.0, abs=1e-12) and se < 1e-10

    def test_series_matches_expm(self, rng):
        a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        a = 0.3 * (a - a.conj().T)
        h = rng.normal(size=(6, 6))
        h = h + h.T
        u = scipy.linalg.expm(a)
        got, ok = dress_by_series(a, h)
        assert ok
        np.testing.assert_allclose(got, u @ h @ u.conj().T, atol=1e-12)

    def test_all_passed_ignores_info(self):
        checks = [CheckResult("a", "pass", 0, 0, 0, ""), CheckResult("b", "info", 1, 0, None, "")]
        assert all_passed(checks)
        assert not all_passed(checks + [CheckResult("c", "fail", 1, 0, 0, "")])

    def test_scaling_grid_validation(self):
        with pytest.raises(ValueError):
            ScalingStudy("remainder", 1, 0.01, 0, (1e-3, 2e-3, 4e-3), (1, 2, 3), 2.0, 0.0, 2)
        with pytest.raises(ValueError):
            ScalingStudy("remainder", 1, 0.01, 0, (1e-3, 1.5e-3, 2e-3, 3e-3), (1, 2, 3, 4), 2.0, 0.0, 2)


class TestStructuralSuite:
    def test_zero_coupling(self):
        p = ChainParams(N=6, J=0.0)
        checks = run_theorem1_suite(p, 0, locality_trials=10)
        assert all_passed(checks)
        ids = _by_id(checks)
        assert ids["kam.oracle_identity"].measured == 0.0
        assert ids["liom.commutation"].measured == 0.0

    def test_golden(self, golden_params, golden_kam):
        checks = run_theorem1_suite(golden_params, golden_kam.fields, locality_trials=50, kam=golden_kam)
        failed = [c.check_id for c in checks if c.failed]
        assert failed == []
        ids = _by_id(checks)
        assert ids["kam.oracle_identity"].measured <= 1e-10
        assert ids["liom.joint_labels"].measured["distinct"] == 2**golden_params.N

    def test_corrupted_generator_fails(self, small_params, small_kam):
        checks = run_theorem1_suite(small_params, small_kam.fields, locality_trials=0, conservation=False,
                                    kam=small_kam, corrupt="A_sign")
        ids = _by_id(checks)
        assert ids["kam.elimination_residual"].failed

    def test_corrupt_leaves_original(self, small_kam):
        before = {i: a.matrix.copy() for i, a in small_kam.scales[0].A.items()}
        corrupt_generator(small_kam)
        for i, a in small_kam.scales[0].A.items():
            assert np.array_equal(a.matrix, before[i])

    def test_shuffled_tau_breaks_commutation(self, small_kam):
        lset = assemble_and_dress(small_kam, tails=False)
        bad = shuffle_tau(lset, 3, seed=1)
        assert max(commutator_norm(bad.tau[2], t) for k, t in enumerate(bad.tau) if k != 2) > 1e-3
        assert lset.tau[2] is not bad.tau[2]

    def test_deterministic(self, small_params):
        a = [c.to_json() for c in run_theorem1_suite(small_params, 7, locality_trials=5)]
        b = [c.to_json() for c in run_theorem1_suite(small_params, 7, locality_trials=5)]
        assert a == b


class TestProbability:
    def test_no_threshold(self):
        p = ChainParams(N=8, J=1e-4, delta_override=0.0, n_star_override=2)
        st = ensemble_statistics(p, 200, 0)
        assert not st.rates.any() and not st.in_region.any()

    def test_small_ensemble(self):
        p = ChainParams(N=8, J=1e-4, delta_override=0.01, n_star_override=1)
        ids = _by_id(run_probability_suite(p, 2000, 0))
        assert not ids["prob.union_bound"].failed
        assert not ids["prob.single_eta_rate"].failed
        assert not ids["prob.per_eta_bound"].failed
        assert not ids["prob.cluster_tail_monotone"].failed

    def test_minimum_samples(self):
        with pytest.raises(ValueError):
            run_probability_suite(ChainParams(N=4), 10, 0)

    def test_survival_shape(self):
        p = ChainParams(N=8, J=1e-4, delta_override=0.02, n_star_override=1)
        st = ensemble_statistics(p, 500, 0)
        assert st.M_survival[0] == 1.0 and st.M_survival[1] == 1.0
        assert np.all(np.diff(st.M_survival) <= 0)


class TestScaling:
    @pytest.mark.parametrize("quantity,n_star", [("remainder", 1), ("commutator", 2), ("transport_residual", 1)])
    def test_slopes(self, quantity, n_star):
        p = ChainParams(N=6, J=1e-3, n_star_override=n_star, delta_override=0.01)
        study = run_scaling_suite(p, quantity)
        assert study.passed, study.to_json()
        assert study.slope == pytest.approx(n_star + 1, abs=0.3)

    def test_requires_overrides(self):
        with pytest.raises(ValueError):
            run_scaling_suite(ChainParams(N=6, J=1e-3), "remainder")

    def test_nonresonant_seed(self):
        p = ChainParams(N=6, J=1e-3, n_star_override=2, delta_override=0.01)
        seed = find_nonresonant_seed(p)
        kam = run_scheme(p, sample_fields(p, seed))
        assert not kam.resonance.resonant.any()


class TestHadamard:
    def test_no_violations(self):
        res = hadamard_property(100, 16, seed=3)
        assert res.status == "pass" and res.measured == 0

    def test_minimum_trials(self):
        with pytest.raises(ValueError):
            hadamard_property(10)
