"""Fitting algorithms: grid argmin, cube tables, classifier policies, noisy
fallback, and the rent-to-classifier reduction."""

import math

import numpy as np
import pytest
from sklearn.base import clone

from rentlearn import (RANDOMIZED_BRANCH_CUTOFF, ClassifierRenter,
                       ConstantThresholdRenter, CubeGridRenter, CoreGrid,
                       DeterministicLinear, MarginRenter, NoisyRenter,
                       classifier_from_policy, cost_ratio, empirical_cr_curve,
                       fit_constant_threshold, monte_carlo_cr,
                       policy_from_json, prescribed_sample_counts,
                       rent_training_set, robustness_bound, threshold_grid,
                       worst_case_density)
from rentlearn.core import RandomizedPolicy
from rentlearn.learners import LinearHypothesis
from rentlearn.policies import CubeTablePolicy, TwoValuePolicy


def naive_grid_scan(y, epsilon):
    """Independent oracle: per-threshold loop over plain cost_ratio calls."""
    grid = threshold_grid(epsilon)
    means = []
    for theta in grid:
        means.append(sum(cost_ratio(float(theta), float(v)) for v in y) / len(y))
    best = int(np.argmin(means))
    return float(grid[best]), float(means[best])


class TestThresholdGrid:
    def test_point_count_at_tenth(self):
        grid = threshold_grid(0.1)
        assert len(grid) == 100
        assert grid[0] == pytest.approx(0.1)
        assert grid[-1] == pytest.approx(10.0)

    def test_grid_stays_in_declared_range(self):
        for eps in (0.1, 0.07, 0.03):
            grid = threshold_grid(eps)
            assert grid[0] >= eps - 1e-12
            assert grid[-1] <= 1.0 / eps + 1e-9

    def test_rejects_out_of_range(self):
        for eps in (0.0, -0.1, 0.2):
            with pytest.raises(ValueError):
                threshold_grid(eps)


class TestFitConstantThreshold:
    def test_all_long_seasons_pick_grid_minimum(self):
        theta, cr = fit_constant_threshold(np.full(50, 2.0), 0.1)
        assert theta == pytest.approx(0.1)
        assert cr == pytest.approx(1.1)

    def test_tie_break_toward_smaller_theta(self):
        theta, cr = fit_constant_threshold(np.full(50, 0.5), 0.1)
        assert theta == pytest.approx(0.6)
        assert cr == pytest.approx(1.0)

    def test_zero_seasons_cost_nothing(self):
        theta, cr = fit_constant_threshold(np.zeros(10), 0.1)
        assert theta == pytest.approx(0.1)
        assert cr == pytest.approx(1.0)

    def test_matches_naive_oracle_on_random_multisets(self):
        rng = np.random.default_rng(123)
        for _ in range(30):
            y = rng.uniform(0.0, 3.0, rng.integers(1, 40))
            theta, cr = fit_constant_threshold(y, 0.1)
            oracle_theta, oracle_cr = naive_grid_scan(y, 0.1)
            assert cr == pytest.approx(oracle_cr, rel=1e-12)
            # Equal minima may differ in argmin only through float noise.
            assert theta == pytest.approx(oracle_theta, rel=1e-12)

    def test_curve_matches_direct_evaluation(self):
        rng = np.random.default_rng(5)
        y = rng.uniform(0.0, 2.5, 30)
        grid = threshold_grid(0.1)
        curve = empirical_cr_curve(y, grid)
        for i in (0, 17, 55, 99):
            direct = np.mean([cost_ratio(float(grid[i]), v) for v in y])
            assert curve[i] == pytest.approx(direct, rel=1e-12)

    def test_estimator_surface(self):
        est = ConstantThresholdRenter(epsilon=0.1)
        est.fit(None, np.full(20, 2.0))
        assert est.theta_ == pytest.approx(0.1)
        x = np.zeros((4, 0))
        assert np.allclose(est.predict(x), 0.1)
        assert est.robustness_bound() == pytest.approx(11.0)

    def test_fitted_threshold_always_on_grid(self):
        rng = np.random.default_rng(99)
        grid = threshold_grid(0.1)
        for _ in range(10):
            y = rng.uniform(0.0, 5.0, 25)
            theta, _ = fit_constant_threshold(y, 0.1)
            assert np.min(np.abs(grid - theta)) < 1e-12
            assert 0.1 - 1e-12 <= theta <= 10.0 + 1e-9


class TestCubeGridRenter:
    def test_single_occupied_cube_gets_fit_others_default(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 0.25, (60, 1))  # all inside the first cell
        y = np.full(60, 2.0)
        est = CubeGridRenter(epsilon=0.1, cube_side=0.25).fit(x, y)
        assert est.predict(np.array([[0.1]]))[0] == pytest.approx(0.1)
        for probe in (0.3, 0.6, 0.99):
            assert est.predict(np.array([[probe]]))[0] == 1.0

    def test_occupancy_threshold_above_n_gives_safe_policy(self):
        rng = np.random.default_rng(1)
        x = rng.random((40, 2))
        y = rng.uniform(0.0, 2.0, 40)
        est = CubeGridRenter(epsilon=0.1, cube_side=0.5,
                             min_cube_samples=1000).fit(x, y)
        assert np.all(est.predict(x) == 1.0)
        assert est.robustness_bound() == pytest.approx(2.0)

    def test_lookup_is_a_partition_with_closed_top_face(self):
        policy = CubeTablePolicy(10, 1, {0: 0.5})
        idx = policy.cell_index(np.array([[0.0], [0.09999], [0.1], [0.5], [1.0]]))
        assert list(idx) == [0, 0, 1, 5, 9]
        rng = np.random.default_rng(3)
        x = rng.random((200, 1))
        assert np.all((policy.cell_index(x) >= 0) & (policy.cell_index(x) < 10))

    def test_learns_core_grid_conditionals(self):
        eps = 1.0 / 90.0
        dist = CoreGrid(eps, 2, seed=21)
        train = dist.sample(20000)
        est = CubeGridRenter(epsilon=0.1, cube_side=9.0 * eps).fit(train.x, train.y)
        cr = monte_carlo_cr(est.policy_, dist, 20000, seed=77)
        assert cr.mean <= 1.1 + 3 * cr.stderr

    def test_theta_min_accounts_for_default(self):
        policy = CubeTablePolicy(2, 1, {0: 0.3})
        assert policy.theta_min == 0.3  # default 1.0 still possible but larger
        full = CubeTablePolicy(2, 1, {0: 0.3, 1: 2.0})
        assert full.theta_min == 0.3
        assert set(full.threshold_values()) == {0.3, 2.0}

    def test_prescribed_counts_reported(self):
        counts = prescribed_sample_counts(0.1, 1.0, 2)
        assert counts["n_constant"] == pytest.approx(1e6)
        assert counts["n_cubes"] == pytest.approx((64.0 * math.sqrt(2) / 1e-3) ** 2)
        est = CubeGridRenter(epsilon=0.1, cube_side=0.5).fit(
            np.array([[0.1, 0.1]]), np.array([2.0]))
        assert est.prescribed_["cube_occupancy_threshold"] > 1e9


class TestClassifierRenter:
    def test_supplied_error_rate_sets_sqrt_threshold(self):
        est = ClassifierRenter(error_rate=0.04)
        est.fit(np.array([[0.2], [0.8]]), np.array([0.5, 2.0]))
        assert est.tau_ == pytest.approx(0.2)
        assert est.policy_.theta_long == pytest.approx(0.2)
        assert est.policy_.theta_short == 1.0

    def test_zero_error_clamps_to_floor(self):
        est = ClassifierRenter(error_rate=0.0)
        est.fit(np.array([[0.2], [0.8]]), np.array([0.5, 2.0]))
        assert est.tau_ == pytest.approx(1e-6)

    def test_full_error_degenerates_to_unit_policy(self):
        est = ClassifierRenter(error_rate=1.0)
        est.fit(np.array([[0.2], [0.8]]), np.array([0.5, 2.0]))
        assert est.policy_.theta_long == 1.0
        assert est.policy_.theta_short == 1.0

    def test_asymmetric_alpha_dominates(self):
        est = ClassifierRenter(asymmetric=True, error_rate=(0.09, 0.0001))
        est.fit(np.array([[0.2], [0.8]]), np.array([0.5, 2.0]))
        assert est.tau_ == pytest.approx(0.09)

    def test_asymmetric_beta_dominates(self):
        est = ClassifierRenter(asymmetric=True, error_rate=(0.0, 0.04))
        est.fit(np.array([[0.2], [0.8]]), np.array([0.5, 2.0]))
        assert est.tau_ == pytest.approx(0.2)

    def test_asymmetric_perfect_clamps(self):
        est = ClassifierRenter(asymmetric=True, error_rate=(0.0, 0.0))
        est.fit(np.array([[0.2], [0.8]]), np.array([0.5, 2.0]))
        assert est.tau_ == pytest.approx(1e-6)

    def test_measured_holdout_path(self):
        dist = DeterministicLinear((1.0, 1.0), 0.0, seed=9)
        s = dist.sample(3000)
        keep = np.abs(s.y - 1.0) >= 0.1  # perceptron needs a data margin
        est = ClassifierRenter(random_state=3, max_epochs=2000).fit(
            s.x[keep], s.y[keep])
        assert est.error_report_.overall <= 0.02
        assert est.tau_ == pytest.approx(
            max(math.sqrt(est.error_report_.overall), 1e-6))

    def test_two_value_invariants(self):
        h = LinearHypothesis(np.array([1.0]), -0.5)
        with pytest.raises(ValueError):
            TwoValuePolicy(h, 1.5, 1.0)  # long wait above short wait
        policy = TwoValuePolicy(h, 0.2, 1.0)
        assert policy.theta_min == 0.2
        assert robustness_bound(policy) == pytest.approx(6.0)


class TestMarginRenter:
    def test_band_and_thresholds(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=4)
        train = dist.sample(2000)
        est = MarginRenter(lipschitz=2.0, margin=0.05).fit(train.x, train.y)
        assert est.gamma_ == pytest.approx(0.1)
        assert est.policy_.theta_long == pytest.approx(0.1)
        assert est.policy_.theta_short == pytest.approx(1.1)
        kept = (train.y < 0.9) | (train.y > 1.1)
        assert est.n_survivors_ == int(np.sum(kept))

    def test_survivors_carry_the_margin(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=8)
        train = dist.sample(4000)
        est = MarginRenter(lipschitz=2.0, margin=0.05).fit(train.x, train.y)
        kept = (train.y < 0.9) | (train.y > 1.1)
        # Feature distance to the true boundary x = 0.5 is at least gamma/L.
        assert np.min(np.abs(train.x[kept, 0] - 0.5)) >= 0.05
        # And the centered learned boundary keeps that margin.
        assert est.train_margin_ >= 0.05 - 1e-12

    def test_gamma_at_least_one_rejected(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=4)
        train = dist.sample(100)
        with pytest.raises(ValueError, match="renting region"):
            MarginRenter(lipschitz=2.0, margin=0.5).fit(train.x, train.y)

    def test_all_samples_filtered_rejected(self):
        x = np.array([[0.5], [0.51]])
        y = np.array([1.0, 1.01])
        with pytest.raises(ValueError, match="discarded"):
            MarginRenter(lipschitz=1.0, margin=0.2).fit(x, y)

    def test_auto_margin_shrinks_with_n(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=4)
        gammas = []
        for n in (256, 4096):
            train = dist.sample(n)
            est = MarginRenter(lipschitz=2.0).fit(train.x, train.y)
            gammas.append(est.gamma_)
        assert gammas[1] < gammas[0]


class TestNoisyRenter:
    def _data(self, n=400, seed=2):
        return DeterministicLinear((1.0, 1.0), 0.0, seed=seed).sample(n)

    def test_high_noise_selects_randomized(self):
        s = self._data()
        est = NoisyRenter(noise_rate=0.1, error_rate=0.01).fit(s.x, s.y)
        assert est.branch_ == "randomized"
        assert est.policy_.is_randomized
        assert est.robustness_bound() == pytest.approx(math.e / (math.e - 1.0))

    def test_low_noise_selects_classifier(self):
        s = self._data()
        est = NoisyRenter(noise_rate=0.01, error_rate=0.01).fit(s.x, s.y)
        assert est.branch_ == "classifier"
        assert est.policy_.theta_long == pytest.approx(0.1)

    def test_zero_rates_clamp(self):
        s = self._data()
        est = NoisyRenter(noise_rate=0.0, error_rate=0.0).fit(s.x, s.y)
        assert est.branch_ == "classifier"
        assert est.policy_.theta_long == pytest.approx(1e-6)

    def test_branch_flips_at_cutoff(self):
        s = self._data()
        below = NoisyRenter(noise_rate=0.0376, error_rate=0.0).fit(s.x, s.y)
        above = NoisyRenter(noise_rate=0.0377, error_rate=0.0).fit(s.x, s.y)
        assert 0.0376 <= RANDOMIZED_BRANCH_CUTOFF <= 0.0377
        assert below.branch_ == "classifier"
        assert above.branch_ == "randomized"

    def test_randomized_predict_refuses(self):
        s = self._data()
        est = NoisyRenter(noise_rate=0.1, error_rate=0.0).fit(s.x, s.y)
        with pytest.raises(NotImplementedError):
            est.predict(s.x)


class TestReduction:
    def test_cautious_policy_predicts_short(self):
        from rentlearn import ConstantPolicy
        clf = classifier_from_policy(ConstantPolicy(1.0))
        assert np.all(clf.predict(np.random.default_rng(0).random((5, 1))) == 0)

    def test_eager_policy_predicts_long(self):
        from rentlearn import ConstantPolicy
        clf = classifier_from_policy(ConstantPolicy(0.2))
        assert np.all(clf.predict(np.random.default_rng(0).random((5, 1))) == 1)

    def test_randomized_policy_unsupported(self):
        with pytest.raises(NotImplementedError):
            classifier_from_policy(RandomizedPolicy(worst_case_density()))

    def test_training_transform(self):
        x = np.random.default_rng(1).random((200, 1))
        z = np.random.default_rng(2).integers(0, 2, 200)
        samples = rent_training_set(x, z, seed=5)
        assert np.all(samples.y[z == 1] == 10.0)
        shorts = samples.y[z == 0]
        assert set(np.unique(shorts)) <= {0.0, 0.5}
        # The coin should be roughly fair.
        assert abs(np.mean(shorts == 0.0) - 0.5) < 0.15
        # Seeded: same call, same seasons.
        again = rent_training_set(x, z, seed=5)
        assert np.array_equal(samples.y, again.y)


class TestSerialization:
    def test_two_value_round_trip(self):
        h = LinearHypothesis(np.array([0.4, -0.9]), 0.2)
        policy = TwoValuePolicy(h, 0.2, 1.0)
        again = policy_from_json(policy.to_json())
        x = np.random.default_rng(0).random((20, 2))
        assert np.array_equal(again.thresholds(x), policy.thresholds(x))

    def test_cube_table_round_trip(self):
        policy = CubeTablePolicy(4, 2, {0: 0.3, 7: 2.0}, 1.0)
        again = policy_from_json(policy.to_json())
        x = np.random.default_rng(0).random((50, 2))
        assert np.array_equal(again.thresholds(x), policy.thresholds(x))
        assert again.theta_min == policy.theta_min


class TestSklearnCompat:
    def test_get_params_and_clone(self):
        est = MarginRenter(lipschitz=2.0, margin=0.05, random_state=7)
        params = est.get_params()
        assert params["lipschitz"] == 2.0
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_score_is_negative_mean_ratio(self):
        dist = DeterministicLinear((2.0,), 0.0, seed=4)
        train = dist.sample(500)
        est = MarginRenter(lipschitz=2.0, margin=0.05).fit(train.x, train.y)
        test = dist.sample(500, seed=123)
        assert est.score(test.x, test.y) <= -1.0
