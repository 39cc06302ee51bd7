"""Monte Carlo estimation, scans, certificates, shattering enumeration."""

import math

import numpy as np
import pytest

from rentlearn import (ClassifierRenter, ConstantPolicy,
                       ConstantThresholdRenter, DeterministicLinear,
                       FiniteMixture, NoiseLowerBound, PointMass,
                       RandomizedPolicy, common_threshold_instance,
                       cr_scan, lb_certify_core_grid, make_core_grid_lb,
                       monte_carlo_cr, realizability_check,
                       realizability_check_bruteforce, reduction_error_check,
                       robustness_bound, scaling_experiment, shatter_cost,
                       shattered_pair_instance, worst_case_density,
                       worst_case_scan)
from rentlearn.analysis import ShatterInstance
from rentlearn.core import FunctionPolicy
from rentlearn.learners import LinearHypothesis
from rentlearn.policies import TwoValuePolicy

E_RATIO = math.e / (math.e - 1.0)


class TestMonteCarloCr:
    def test_constant_policy_on_point_mass(self):
        est = monte_carlo_cr(ConstantPolicy(1.0), PointMass(2.0), 10_000, seed=1)
        assert est.mean == 2.0
        assert est.stderr == pytest.approx(0.0, abs=1e-12)

    def test_randomized_policy_is_exact_per_draw(self):
        policy = RandomizedPolicy(worst_case_density())
        est = monte_carlo_cr(policy, PointMass(1.0), 2_000, seed=2)
        assert est.mean == pytest.approx(E_RATIO, abs=0.005)
        assert est.stderr == pytest.approx(0.0, abs=1e-12)

    def test_mixture_matches_exact_expectation(self):
        dist = FiniteMixture((0.1, 0.7), (0.5, 0.5), seed=3)
        est = monte_carlo_cr(ConstantPolicy(0.5), dist, 100_000, seed=3)
        exact = dist.expected_ratio(0.5)
        assert exact == pytest.approx(1.5714285714285714, rel=1e-12)
        assert abs(est.mean - exact) <= 4.0 * est.stderr

    def test_exactness_on_closed_form_families(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            atoms = tuple(rng.uniform(0.0, 3.0, 3))
            weights = rng.dirichlet(np.ones(3))
            dist = FiniteMixture(atoms, tuple(weights), seed=11)
            theta = float(rng.uniform(0.1, 2.0))
            est = monte_carlo_cr(ConstantPolicy(theta), dist, 20_000, seed=5)
            assert abs(est.mean - dist.expected_ratio(theta)) <= \
                4.0 * max(est.stderr, 1e-9)

    def test_reproducible_across_calls(self):
        dist = FiniteMixture((0.2, 1.5), (0.4, 0.6), seed=9)
        a = monte_carlo_cr(ConstantPolicy(0.7), dist, 5_000, seed=42)
        b = monte_carlo_cr(ConstantPolicy(0.7), dist, 5_000, seed=42)
        assert a == b


class TestCrScan:
    def test_point_mass_long_season_curve(self):
        scan = cr_scan(PointMass(2.0), 0.1, 1.0, 0.05)
        assert np.allclose(scan.values, 1.0 + scan.thetas)
        assert scan.argmin_theta == pytest.approx(0.1)

    def test_point_mass_short_season_flat_tail(self):
        scan = cr_scan(PointMass(0.5), 0.6, 2.0, 0.1)
        assert np.allclose(scan.values, 1.0)

    def test_noise_lb_min_at_root_p(self):
        scan = cr_scan(NoiseLowerBound(0.25), 0.3, 0.7, 0.001)
        assert scan.argmin_theta == pytest.approx(0.5, abs=0.002)
        assert scan.min_value == pytest.approx(1.375, abs=1e-3)

    def test_noise_lb_decreasing_before_root_p(self):
        scan = cr_scan(NoiseLowerBound(0.25), 0.05, 0.5, 0.005)
        assert np.all(np.diff(scan.values) <= 1e-9)

    def test_mc_fallback_requires_declared_n(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=1)
        with pytest.raises(ValueError, match="n_mc"):
            cr_scan(dist, 0.1, 1.0, 0.1)
        scan = cr_scan(dist, 0.1, 1.0, 0.1, n_mc=20_000, seed=4)
        # y ~ U[0, 2]: E[g(theta, y)] has a closed form to compare against.
        for theta, val in zip(scan.thetas, scan.values):
            exact = _uniform02_expected_ratio(float(theta))
            assert val == pytest.approx(exact, abs=0.03)

    def test_density_source_scan(self):
        scan = cr_scan(worst_case_density(), 0.2, 0.8, 0.2)
        assert np.all(scan.values >= 1.0)


def _uniform02_expected_ratio(theta):
    """E[g(theta, Y)] for Y ~ U[0, 2], derived by direct integration.

    For theta <= 1: rent region [0, theta) contributes theta/2;
    buy region splits at 1: integral of (1+theta)/y on [theta, 1] plus
    (1+theta) on [1, 2], all halved.
    """
    assert 0 < theta <= 1
    rent = theta / 2.0
    buy_low = (1.0 + theta) * (math.log(1.0) - math.log(theta)) / 2.0
    buy_high = (1.0 + theta) * 1.0 / 2.0
    return rent + buy_low + buy_high


class TestWorstCaseScan:
    def test_matches_robustness_for_constant(self):
        report = worst_case_scan(ConstantPolicy(0.2))
        assert report.analytic == pytest.approx(6.0)
        assert report.max_ratio == pytest.approx(6.0, rel=1e-6)
        assert report.max_ratio <= report.analytic

    def test_unit_threshold(self):
        report = worst_case_scan(ConstantPolicy(1.0))
        assert report.max_ratio == pytest.approx(2.0, rel=1e-6)

    def test_margin_policy(self):
        h = LinearHypothesis(np.array([1.0]), -0.5)
        report = worst_case_scan(TwoValuePolicy(h, 0.1, 1.1))
        assert report.analytic == pytest.approx(11.0)
        assert report.max_ratio == pytest.approx(11.0, rel=1e-6)

    def test_scan_within_bound_window(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            theta_long = float(rng.uniform(0.05, 0.9))
            theta_short = float(rng.uniform(theta_long, 1.5))
            h = LinearHypothesis(np.array([1.0]), -0.5)
            policy = TwoValuePolicy(h, theta_long, theta_short)
            report = worst_case_scan(policy)
            bound = robustness_bound(policy)
            assert bound * (1.0 - 1e-6) <= report.max_ratio <= bound

    def test_randomized_policy_rejected(self):
        with pytest.raises(NotImplementedError):
            worst_case_scan(RandomizedPolicy(worst_case_density()))

    def test_function_policy_needs_probes(self):
        policy = FunctionPolicy(lambda x: np.full(x.shape[0], 0.5), 0.5)
        with pytest.raises(ValueError, match="x_probes"):
            worst_case_scan(policy)
        report = worst_case_scan(policy, x_probes=np.zeros((3, 1)))
        assert report.max_ratio == pytest.approx(3.0, rel=1e-6)


class TestScalingExperiment:
    def test_perfect_classifier_saturates_at_floor(self):
        # All seasons are long, so a constant-long classifier is exactly
        # right and the excess ratio sits at the clamped threshold floor.
        dist = DeterministicLinear((0.5,), 1.0, seed=6)
        result = scaling_experiment(
            lambda: ClassifierRenter(error_rate=0.0),
            dist, [64, 256, 1024], seeds=[0, 1], n_eval=2000)
        for row in result.rows:
            assert row["error"] == ""
            assert row["cr_mean"] == pytest.approx(1.0 + 1e-6, abs=1e-9)
        assert abs(result.slope) < 1e-6

    def test_constant_fit_not_worse_with_more_data(self):
        dist = FiniteMixture((0.3, 0.8, 2.0), (0.3, 0.3, 0.4), seed=13)
        result = scaling_experiment(lambda: ConstantThresholdRenter(0.1),
                                    dist, [100, 1600], seeds=[0, 1, 2],
                                    n_eval=40_000)
        means = {}
        errs = {}
        for row in result.rows:
            means.setdefault(row["n"], []).append(row["cr_mean"])
            errs.setdefault(row["n"], []).append(row["cr_stderr"])
        small = np.mean(means[100])
        big = np.mean(means[1600])
        slack = 2.0 * (np.mean(errs[100]) + np.mean(errs[1600]))
        assert big <= small + slack

    def test_fit_failures_recorded_not_fatal(self):
        dist = FiniteMixture((0.5, 2.0), (0.5, 0.5), seed=1)

        class Boom:
            def fit(self, x, y):
                raise RuntimeError("nope")

        result = scaling_experiment(lambda: Boom(), dist, [16], seeds=[0])
        assert result.rows[0]["error"].startswith("RuntimeError")
        assert result.slope is None

    def test_rejects_unsorted_n_list(self):
        with pytest.raises(ValueError):
            scaling_experiment(lambda: ConstantThresholdRenter(0.1),
                               PointMass(2.0), [100, 10], seeds=[0])


class TestCoreGridCertificate:
    def test_zero_samples_gives_exact_floor(self):
        eps = 1.0 / 90.0
        cert = lb_certify_core_grid(eps, 2, 0)
        assert cert.certified_bound == 1.0 + 2.0 * eps
        assert cert.unsampled_fraction == 1.0

    def test_nine_samples_leave_most_cores_unseen(self):
        eps = 1.0 / 90.0
        cert = lb_certify_core_grid(eps, 2, 9, seed=5)
        assert cert.n_cores == 100
        assert cert.n_sampled_cores <= 9
        assert cert.unsampled_fraction >= 0.91
        assert cert.certified_bound > 1.0 + eps

    def test_saturating_samples_certify_nothing(self):
        cert = lb_certify_core_grid(1.0 / 9.0, 1, 200, seed=2)
        assert cert.n_sampled_cores == 1
        assert cert.certified_bound == pytest.approx(1.0)

    def test_bound_monotone_on_nested_prefixes(self):
        eps = 1.0 / 90.0
        dist = make_core_grid_lb(eps, 2, seed=31)
        draws = dist.sample(400)
        idx = dist.core_index(draws.x)
        prev = math.inf
        for n in (0, 5, 40, 400):
            frac = 1.0 - np.unique(idx[:n]).size / dist.n_cores
            bound = 1.0 + 2.0 * eps * frac
            assert bound <= prev + 1e-15
            prev = bound


class TestReductionErrorCheck:
    def test_aligned_policy_has_no_disagreement(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=3)
        h = LinearHypothesis(np.array([1.0]), -0.5)  # true boundary x = 0.5
        policy = TwoValuePolicy(h, 0.2, 1.0)
        report = reduction_error_check(policy, dist, 2_000, seed=7)
        assert report.disagreement == 0.0
        assert report.passed

    def test_always_short_policy_on_long_data(self):
        dist = PointMass(2.0)  # every label is long
        report = reduction_error_check(ConstantPolicy(1.0), dist, 2_000, seed=8)
        assert report.disagreement == 1.0
        assert report.epsilon_hat >= 0.25
        assert report.passed  # 1 <= 4 * 1.0

    def test_misaligned_policy_stays_within_bound(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=5)
        # Boundary off by 0.05 in feature space: errs on x in [0.45, 0.5).
        h = LinearHypothesis(np.array([1.0]), -0.45)
        policy = TwoValuePolicy(h, 0.2, 1.0)
        report = reduction_error_check(policy, dist, 20_000, seed=9)
        assert 0.0 < report.disagreement < 0.1
        assert report.passed


class TestRealizability:
    def test_shattered_instance_realizes_all_labelings(self):
        inst = shattered_pair_instance(3)
        for bits in range(8):
            labeling = [(bits >> j) & 1 for j in range(3)]
            res = realizability_check(inst, labeling)
            assert res.feasible
            hyp, eta1, eta2 = res.witness
            for i, bit in enumerate(hyp):
                theta = eta2 if bit else eta1
                cost = shatter_cost(theta, float(inst.y[i]))
                assert (cost > inst.witnesses[i]) == bool(labeling[i])

    def test_witness_costs_bracket_the_witness_value(self):
        inst = shattered_pair_instance(2)
        res = realizability_check(inst, [1, 0])
        hyp, eta1, eta2 = res.witness
        season = float(inst.y[0])
        for i, bit in enumerate(hyp):
            theta = eta2 if bit else eta1
            cost = shatter_cost(theta, season)
            assert (cost > 1.5) == bool(bit)

    def test_alternating_five_points_unrealizable_with_common_threshold(self):
        inst = common_threshold_instance([0.2, 0.4, 0.6, 0.8, 0.9], [1.2] * 5)
        assert not realizability_check(inst, [1, 0, 1, 0, 1]).feasible

    def test_all_zero_labeling_with_generous_witnesses(self):
        inst = common_threshold_instance([0.01, 0.5, 1.2], [10.0] * 3)
        assert realizability_check(inst, [0, 0, 0]).feasible

    def test_agrees_with_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            m = int(rng.integers(2, 6))
            y = np.sort(rng.uniform(0.05, 2.0, m))
            r = rng.uniform(0.8, 2.5, m)
            n_hyp = int(rng.integers(1, 5))
            hyps = tuple(tuple(rng.integers(0, 2, m).tolist())
                         for _ in range(n_hyp))
            inst = ShatterInstance(y=y, witnesses=r, hypotheses=hyps,
                                   theta_grid=(0.05, 0.3, 1.0))
            labeling = rng.integers(0, 2, m)
            fast = realizability_check(inst, labeling)
            slow = realizability_check_bruteforce(inst, labeling)
            assert fast.feasible == slow.feasible

    def test_oversized_instance_rejected(self):
        with pytest.raises(NotImplementedError):
            ShatterInstance(y=np.linspace(0.1, 2.0, 13),
                            witnesses=np.ones(13), hypotheses=((0,) * 13,))

    def test_shatter_cost_cases(self):
        assert shatter_cost(2.0, 1.0) == 1.0        # season shorter than wait
        assert shatter_cost(1.0, 1.001) == pytest.approx(2.0)
        assert shatter_cost(0.001, 1.001) == pytest.approx(1.001)
        assert shatter_cost(0.5, 0.8) == pytest.approx(1.5 / 0.8)
