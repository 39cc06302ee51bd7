"""Threshold-policy fitting algorithms.

Five estimators, all sklearn-shaped (``fit(X, y)`` / ``predict(X)`` /
``get_params``):

- :class:`ConstantThresholdRenter`: grid argmin of the empirical ratio over
  observed season lengths (feature-free).
- :class:`CubeGridRenter`: partitions the feature cube and fits a constant
  threshold per occupied cell, defaulting to 1 elsewhere.
- :class:`ClassifierRenter`: trains a long-vs-short classifier and waits
  sqrt(error) on predicted-long inputs (or max(alpha, sqrt(beta)) with
  asymmetric error accounting).
- :class:`MarginRenter`: discards seasons near 1 to manufacture a margin,
  then classifies with thresholds gamma / 1 + gamma.
- :class:`NoisyRenter`: falls back to the classic randomized rule when the
  combined noise/error rate is too high, else waits sqrt(rate).

Plus the reduction in the other direction: a rent policy reused as a binary
classifier.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import (THETA_FLOOR, ConstantPolicy, RandomizedPolicy, SampleSet,
                   ThresholdPolicy, evaluate_policy, worst_case_density,
                   robustness_bound)
from .distributions import stream
from .learners import (ErrorReport, LinearHypothesis, center_bias,
                       label_from_season, measure_errors, train_margin_linear,
                       vc_dim_margin)
from .validation import check_features, check_seasons

# Above this combined noise/error rate the randomized fallback beats any
# deterministic two-level policy: 1/(9 (e-1)^2).
RANDOMIZED_BRANCH_CUTOFF = 1.0 / (9.0 * (math.e - 1.0) ** 2)

_SPLIT_TAG = 0x73706C69  # holdout-split stream tag
_RENT_TAG = 0x72656E74   # rent-training-set stream tag


# ---------------------------------------------------------------------------
# Grid fitting (feature-free)
# ---------------------------------------------------------------------------


def threshold_grid(epsilon: float) -> np.ndarray:
    """Candidate thresholds {epsilon, 2*epsilon, ..., <= 1/epsilon}.

    Restricting to this range costs at most a (1 + epsilon) factor against
    the unconstrained optimum, and keeps every candidate's ratio bounded.
    """
    if not (0.0 < epsilon <= 0.1):
        raise ValueError(f"grid epsilon must lie in (0, 0.1], got {epsilon!r}")
    count = 1.0 / epsilon ** 2
    k_max = int(round(count)) if abs(count - round(count)) < 1e-6 else int(count)
    return epsilon * np.arange(1, k_max + 1)


def empirical_cr_curve(y, thetas) -> np.ndarray:
    """Mean cost ratio over the samples at each candidate threshold.

    Sorting the seasons once lets every threshold's mean come from prefix
    sums of the rent-side ratios and suffix sums of the buy-side weights.
    """
    y = check_seasons(y)
    if y.size == 0:
        raise ValueError("need at least one season length")
    thetas = np.asarray(thetas, dtype=float)
    ys = np.sort(y)
    rent = np.maximum(ys, 1.0)            # y / min(1, y); 1 at y = 0
    with np.errstate(divide="ignore"):
        buy_coeff = np.where(ys > 0.0, 1.0 / np.minimum(ys, 1.0), 0.0)
    rent_prefix = np.concatenate([[0.0], np.cumsum(rent)])
    buy_suffix = np.concatenate([np.cumsum(buy_coeff[::-1])[::-1], [0.0]])
    split = np.searchsorted(ys, thetas, side="left")
    return (rent_prefix[split] + (1.0 + thetas) * buy_suffix[split]) / y.size


def fit_constant_threshold(y, epsilon: float) -> tuple[float, float]:
    """Grid argmin of the empirical mean ratio; ties go to the smaller
    threshold.  Returns (threshold, empirical ratio)."""
    grid = threshold_grid(epsilon)
    curve = empirical_cr_curve(y, grid)
    idx = int(np.argmin(curve))
    return float(grid[idx]), float(curve[idx])


def prescribed_sample_counts(epsilon: float, L: float, d: int,
                             delta: float = 1.0) -> dict:
    """Sample-count prescriptions behind the accuracy guarantees.

    These constants are astronomically conservative; they are reported for
    reference while the fitters accept whatever n the caller provides.
    """
    root_d = math.sqrt(d)
    return {
        "n_constant": delta / epsilon ** 6,
        "n_grid": (1024.0 * L * root_d / epsilon ** 6) ** (2 * d),
        "cube_occupancy_threshold": (64.0 * L * root_d / epsilon ** 8) ** d,
        "n_cubes": (64.0 * L * root_d / epsilon ** 3) ** d,
    }


# ---------------------------------------------------------------------------
# Policy kinds produced by the fitters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoValuePolicy(ThresholdPolicy):
    """Wait theta_long when the classifier predicts a long season, else
    theta_short."""

    hypothesis: LinearHypothesis
    theta_long: float
    theta_short: float
    kind = "two_value"

    def __post_init__(self):
        if not (0.0 < self.theta_long <= self.theta_short):
            raise ValueError("need 0 < theta_long <= theta_short")
        if not math.isfinite(self.theta_short):
            raise ValueError("thresholds must be finite")

    @property
    def theta_min(self) -> float:
        return self.theta_long

    def thresholds(self, x) -> np.ndarray:
        x = check_features(x)
        preds = self.hypothesis.predict(x)
        return np.where(preds == 1, self.theta_long, self.theta_short)

    def threshold_values(self):
        return sorted({self.theta_long, self.theta_short})

    def to_doc(self) -> dict:
        return {"kind": self.kind, "theta_long": self.theta_long,
                "theta_short": self.theta_short,
                "hypothesis": self.hypothesis.to_doc()}


@dataclass(frozen=True)
class CubeTablePolicy(ThresholdPolicy):
    """Per-cell constant thresholds on a cubic partition of [0, 1]^d.

    Cells are addressed by flooring each coordinate (the top face belongs to
    the last cell); cells absent from the table emit the default threshold.
    """

    cells_per_axis: int
    d: int
    table: dict
    default: float = 1.0
    kind = "cube_table"

    def __post_init__(self):
        if self.cells_per_axis < 1 or self.d < 1:
            raise ValueError("need at least one cell per axis and one dimension")
        if self.default <= 0.0:
            raise ValueError("default threshold must be positive")
        clean = {int(k): float(v) for k, v in self.table.items()}
        if any(v <= 0.0 or not math.isfinite(v) for v in clean.values()):
            raise ValueError("table thresholds must be positive and finite")
        object.__setattr__(self, "table", clean)

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis ** self.d

    def cell_index(self, x) -> np.ndarray:
        x = check_features(x)
        if x.shape[1] != self.d:
            raise ValueError(f"expected {self.d}-dimensional features")
        k = self.cells_per_axis
        cell = np.clip((x * k).astype(int), 0, k - 1)
        return np.ravel_multi_index(tuple(cell.T), (k,) * self.d)

    @property
    def theta_min(self) -> float:
        fitted = min(self.table.values()) if self.table else math.inf
        if len(self.table) == self.n_cells:
            return fitted
        return min(fitted, self.default)

    def thresholds(self, x) -> np.ndarray:
        flat = self.cell_index(x)
        uniq, inverse = np.unique(flat, return_inverse=True)
        vals = np.array([self.table.get(int(u), self.default) for u in uniq])
        return vals[inverse]

    def threshold_values(self):
        vals = set(self.table.values())
        if len(self.table) < self.n_cells:
            vals.add(self.default)
        return sorted(vals)

    def to_doc(self) -> dict:
        return {"kind": self.kind, "cells_per_axis": self.cells_per_axis,
                "d": self.d, "default": self.default,
                "table": {str(k): v for k, v in sorted(self.table.items())}}


def policy_from_doc(doc: dict) -> ThresholdPolicy:
    """Rebuild a serialized policy (constant, randomized, two-value, cube)."""
    kind = doc.get("kind")
    if kind == "constant":
        return ConstantPolicy(float(doc["theta"]))
    if kind == "randomized":
        from .core import Density
        return RandomizedPolicy(Density.from_doc(doc["density"]))
    if kind == "two_value":
        return TwoValuePolicy(LinearHypothesis.from_doc(doc["hypothesis"]),
                              float(doc["theta_long"]), float(doc["theta_short"]))
    if kind == "cube_table":
        table = {int(k): float(v) for k, v in doc["table"].items()}
        return CubeTablePolicy(int(doc["cells_per_axis"]), int(doc["d"]),
                               table, float(doc["default"]))
    raise ValueError(f"unknown policy kind {kind!r}")


def policy_from_json(text: str) -> ThresholdPolicy:
    return policy_from_doc(json.loads(text))


# ---------------------------------------------------------------------------
# Shared estimator plumbing
# ---------------------------------------------------------------------------


class _RenterMixin:
    """predict/score/robustness surface shared by the fitted estimators."""

    def predict(self, X) -> np.ndarray:
        """Per-row buy threshold."""
        check_is_fitted(self, "policy_")
        return self.policy_.thresholds(X)

    def score(self, X, y) -> float:
        """Negative mean cost ratio (greater is better, sklearn-style)."""
        check_is_fitted(self, "policy_")
        return -evaluate_policy(self.policy_, SampleSet(check_features(X),
                                                        check_seasons(y))).mean

    def robustness_bound(self) -> float:
        """Certified worst-case ratio of the fitted policy."""
        check_is_fitted(self, "policy_")
        return robustness_bound(self.policy_)


def _holdout_split(n: int, fraction: float, random_state: int):
    rng = stream(random_state, _SPLIT_TAG)
    order = rng.permutation(n)
    n_holdout = max(1, int(round(fraction * n))) if n > 1 else 0
    return order[n_holdout:], order[:n_holdout]


def _clamp_tau(tau: float) -> float:
    return min(max(tau, THETA_FLOOR), 1.0)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


class ConstantThresholdRenter(_RenterMixin, BaseEstimator):
    """Best single threshold for the observed season lengths.

    Scans the grid {epsilon, ..., 1/epsilon} for the empirical-ratio argmin;
    features are ignored (X may be None).
    """

    def __init__(self, epsilon: float = 0.1):
        self.epsilon = epsilon

    def fit(self, X, y):
        y = check_seasons(y)
        if y.size == 0:
            raise ValueError("cannot fit on an empty sample set")
        theta, cr = fit_constant_threshold(y, self.epsilon)
        self.theta_ = theta
        self.empirical_cr_ = cr
        self.policy_ = ConstantPolicy(theta)
        return self


class CubeGridRenter(_RenterMixin, BaseEstimator):
    """Constant-threshold table over a cubic partition of the feature space.

    The default cell side is epsilon^3 / (64 L sqrt(d)), rounded down to an
    exact divisor of 1 so the grid tiles; pass ``cube_side`` to override
    (desk-scale runs want far coarser cells than the prescription).  Cells
    with at most ``min_cube_samples`` training points fall back to the safe
    threshold 1.
    """

    def __init__(self, epsilon: float = 0.1, lipschitz: float = 1.0,
                 cube_side: Optional[float] = None, min_cube_samples: int = 0):
        self.epsilon = epsilon
        self.lipschitz = lipschitz
        self.cube_side = cube_side
        self.min_cube_samples = min_cube_samples

    def _cells_per_axis(self, d: int) -> int:
        if self.cube_side is not None:
            if not (0.0 < self.cube_side <= 1.0):
                raise ValueError("cube side must lie in (0, 1]")
            return max(1, int(round(1.0 / self.cube_side)))
        side = self.epsilon ** 3 / (64.0 * self.lipschitz * math.sqrt(d))
        return int(math.ceil(1.0 / side))

    def fit(self, X, y):
        X = check_features(X)
        y = check_seasons(y)
        if X.shape[0] != y.size or y.size == 0:
            raise ValueError("need matching nonempty feature and season arrays")
        d = X.shape[1]
        if d < 1:
            raise ValueError("cube partition needs at least one feature dimension")
        k = self._cells_per_axis(d)
        if d * math.log(k) > 62 * math.log(2):
            raise ValueError(
                f"{k}^{d} cells overflow the index space; pass a coarser cube_side")
        self.prescribed_ = prescribed_sample_counts(self.epsilon, self.lipschitz, d)
        probe = CubeTablePolicy(k, d, {})
        flat = probe.cell_index(X)
        table = {}
        for cell in np.unique(flat):
            mask = flat == cell
            if int(np.sum(mask)) > self.min_cube_samples:
                theta, _ = fit_constant_threshold(y[mask], self.epsilon)
                table[int(cell)] = theta
        self.cells_per_axis_ = k
        self.cube_side_ = 1.0 / k
        self.n_fitted_cells_ = len(table)
        self.policy_ = CubeTablePolicy(k, d, table)
        return self


class ClassifierRenter(_RenterMixin, BaseEstimator):
    """Black-box classifier policy: wait sqrt(error) on predicted-long inputs.

    With ``asymmetric=True`` the wait becomes max(alpha, sqrt(beta)), which
    reflects that false longs are the costly mistake.  ``error_rate`` may be
    supplied (a float, or an (alpha, beta) pair when asymmetric); otherwise
    it is measured on a seeded holdout split.
    """

    def __init__(self, asymmetric: bool = False, error_rate=None,
                 holdout_fraction: float = 0.3, max_epochs: int = 200,
                 feature_map: str = "identity", random_state: int = 0):
        self.asymmetric = asymmetric
        self.error_rate = error_rate
        self.holdout_fraction = holdout_fraction
        self.max_epochs = max_epochs
        self.feature_map = feature_map
        self.random_state = random_state

    def _train(self, X, labels):
        result = train_margin_linear(X, labels, max_epochs=self.max_epochs,
                                     feature_map_name=self.feature_map)
        return result.hypothesis

    def fit(self, X, y):
        X = check_features(X)
        y = check_seasons(y)
        labels = label_from_season(y)
        if self.error_rate is not None:
            self.hypothesis_ = self._train(X, labels)
            if self.asymmetric:
                try:
                    alpha, beta = self.error_rate
                except TypeError:
                    raise ValueError(
                        "asymmetric mode takes an (alpha, beta) pair") from None
                self.error_report_ = ErrorReport(float(alpha), float(beta),
                                                 float(alpha) + float(beta))
            else:
                rate = float(self.error_rate)
                self.error_report_ = ErrorReport(rate, 0.0, rate)
        else:
            train_idx, holdout_idx = _holdout_split(len(y), self.holdout_fraction,
                                                    self.random_state)
            if train_idx.size == 0 or holdout_idx.size == 0:
                raise ValueError("too few samples for a holdout split")
            self.hypothesis_ = self._train(X[train_idx], labels[train_idx])
            self.error_report_ = measure_errors(self.hypothesis_, X[holdout_idx],
                                                labels[holdout_idx])
        rep = self.error_report_
        if self.asymmetric:
            tau = max(rep.alpha, math.sqrt(rep.beta))
        else:
            tau = math.sqrt(rep.overall)
        self.tau_ = _clamp_tau(tau)
        self.policy_ = TwoValuePolicy(self.hypothesis_, self.tau_, 1.0)
        return self


class MarginRenter(_RenterMixin, BaseEstimator):
    """Margin-filtered classifier policy.

    Training samples with season length in [1 - gamma, 1 + gamma]
    (gamma = lipschitz * margin) are discarded: under a Lipschitz season
    function the survivors sit at feature distance >= margin from the true
    boundary, so a simple linear learner suffices.  Predicted-long inputs
    wait gamma, others 1 + gamma.  ``margin=None`` balances estimation and
    filtering loss for the sample size via sqrt(capacity / n) = gamma.
    """

    def __init__(self, lipschitz: float = 1.0, margin: Optional[float] = None,
                 max_epochs: int = 200, feature_map: str = "identity",
                 random_state: int = 0):
        self.lipschitz = lipschitz
        self.margin = margin
        self.max_epochs = max_epochs
        self.feature_map = feature_map
        self.random_state = random_state

    def fit(self, X, y):
        X = check_features(X)
        y = check_seasons(y)
        if y.size == 0:
            raise ValueError("cannot fit on an empty sample set")
        if self.lipschitz <= 0.0:
            raise ValueError("lipschitz modulus must be positive")
        d = max(X.shape[1], 1)
        radius = float(np.max(np.linalg.norm(X, axis=1))) if X.shape[1] else 1.0
        radius = max(radius, 1e-9)
        alpha = (self.margin if self.margin is not None
                 else margin_width_for_samples(self.lipschitz, y.size,
                                               radius=radius, d=d))
        if alpha <= 0.0:
            raise ValueError("margin width must be positive")
        gamma = self.lipschitz * alpha
        if gamma >= 1.0:
            raise ValueError(
                f"gamma = lipschitz * margin = {gamma!r} >= 1 would discard "
                "the whole renting region")
        keep = (y < 1.0 - gamma) | (y > 1.0 + gamma)
        if not np.any(keep):
            raise ValueError("margin filter discarded every training sample")
        labels = label_from_season(y[keep])
        result = train_margin_linear(X[keep], labels, max_epochs=self.max_epochs,
                                     feature_map_name=self.feature_map)
        hypothesis = center_bias(result.hypothesis, X[keep], labels)
        margins = (2.0 * labels - 1.0) * hypothesis.geometric_margins(X[keep])
        self.alpha_ = float(alpha)
        self.gamma_ = float(gamma)
        self.n_survivors_ = int(np.sum(keep))
        self.hypothesis_ = hypothesis
        self.train_margin_ = float(np.min(margins))
        self.converged_ = result.zero_training_error
        self.policy_ = TwoValuePolicy(hypothesis, gamma, 1.0 + gamma)
        return self


def margin_width_for_samples(L: float, n: int, radius: float = 1.0,
                             d: int = 1) -> float:
    """Margin width balancing classifier capacity against filtering loss.

    Solves sqrt(D(alpha) / n) = L * alpha for the margin-capacity bound
    D(alpha) = min(radius^2/alpha^2, d) + 1, capped so gamma = L * alpha
    stays at most 1/2.
    """
    if L <= 0.0 or n < 1:
        raise ValueError("need positive modulus and at least one sample")

    def gap(alpha):
        return math.sqrt(vc_dim_margin(radius, alpha, d) / n) - L * alpha

    hi = 0.5 / L
    if gap(hi) >= 0.0:
        return hi
    lo = 1e-9
    if gap(lo) <= 0.0:
        return lo
    return float(brentq(gap, lo, hi, xtol=1e-12))


class NoisyRenter(_RenterMixin, BaseEstimator):
    """Noise-aware policy with a randomized fallback.

    Let p0 = max(noise rate, classifier error).  Above the cutoff
    1/(9 (e-1)^2) no two-level policy beats the classic randomized rule, so
    the fit returns it; below, a classifier is trained and predicted-long
    inputs wait sqrt(p0).
    """

    def __init__(self, noise_rate: float, error_rate: Optional[float] = None,
                 holdout_fraction: float = 0.3, max_epochs: int = 200,
                 feature_map: str = "identity", random_state: int = 0):
        self.noise_rate = noise_rate
        self.error_rate = error_rate
        self.holdout_fraction = holdout_fraction
        self.max_epochs = max_epochs
        self.feature_map = feature_map
        self.random_state = random_state

    def fit(self, X, y):
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ValueError("noise rate must lie in [0, 1]")
        if self.error_rate is not None:
            epsilon_hat = float(self.error_rate)
        elif self.noise_rate > RANDOMIZED_BRANCH_CUTOFF:
            epsilon_hat = 0.0  # branch already decided; no training needed
        else:
            X = check_features(X)
            y = check_seasons(y)
            labels = label_from_season(y)
            train_idx, holdout_idx = _holdout_split(len(y), self.holdout_fraction,
                                                    self.random_state)
            if train_idx.size == 0 or holdout_idx.size == 0:
                raise ValueError("too few samples for a holdout split")
            result = train_margin_linear(X[train_idx], labels[train_idx],
                                         max_epochs=self.max_epochs,
                                         feature_map_name=self.feature_map)
            self.hypothesis_ = result.hypothesis
            self.error_report_ = measure_errors(result.hypothesis,
                                                X[holdout_idx],
                                                labels[holdout_idx])
            epsilon_hat = self.error_report_.overall
        if not (0.0 <= epsilon_hat <= 1.0):
            raise ValueError("classifier error must lie in [0, 1]")
        self.epsilon_hat_ = epsilon_hat
        self.p0_ = max(self.noise_rate, epsilon_hat)
        if self.p0_ > RANDOMIZED_BRANCH_CUTOFF:
            self.branch_ = "randomized"
            self.policy_ = RandomizedPolicy(worst_case_density())
            return self
        self.branch_ = "classifier"
        if not hasattr(self, "hypothesis_"):
            X = check_features(X)
            y = check_seasons(y)
            result = train_margin_linear(X, label_from_season(y),
                                         max_epochs=self.max_epochs,
                                         feature_map_name=self.feature_map)
            self.hypothesis_ = result.hypothesis
        tau = _clamp_tau(math.sqrt(self.p0_))
        self.policy_ = TwoValuePolicy(self.hypothesis_, tau, 1.0)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        if self.policy_.is_randomized:
            raise NotImplementedError(
                "the randomized branch has no deterministic thresholds; "
                "use policy_.density or policy_.expected_ratio")
        return self.policy_.thresholds(X)


# ---------------------------------------------------------------------------
# Rent-policy-to-classifier reduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyClassifier:
    """Reads a binary prediction off a deterministic rent policy.

    A threshold of at least 1/2 means the policy is not committing to buy
    early, so the season is predicted short (label 0).
    """

    policy: ThresholdPolicy

    def __post_init__(self):
        if self.policy.is_randomized:
            raise NotImplementedError(
                "only deterministic policies reduce to classifiers")

    def predict(self, x) -> np.ndarray:
        return (self.policy.thresholds(x) < 0.5).astype(int)


def classifier_from_policy(policy: ThresholdPolicy) -> PolicyClassifier:
    return PolicyClassifier(policy)


def rent_training_set(x, z, seed: int = 0) -> SampleSet:
    """Season lengths that force a rent fitter to solve a classification task.

    Positive labels become long seasons (y = 10); negative labels become a
    fair coin between y = 0 and y = 1/2, either of which punishes an early
    buy threshold.
    """
    x = check_features(x)
    from .validation import check_labels
    z = check_labels(z)
    if x.shape[0] != z.shape[0]:
        raise ValueError("feature and label counts disagree")
    rng = stream(seed, _RENT_TAG)
    coin = rng.integers(0, 2, size=z.shape[0]) * 0.5
    y = np.where(z == 1, 10.0, coin)
    return SampleSet(x, y)
