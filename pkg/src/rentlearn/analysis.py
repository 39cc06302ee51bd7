"""Evaluation and verification machinery.

Monte Carlo competitive-ratio estimation, exact threshold scans, worst-case
probes, scaling sweeps, lower-bound certificates, and the small-instance
shattering enumeration for the two-threshold policy class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .core import (CrEstimate, Density, ThresholdPolicy, cost_ratio,
                   evaluate_policy, per_sample_ratios, robustness_bound)
from .distributions import CoreGrid, JointDistribution, unseen_core_strategies
from .learners import label_from_season
from .policies import classifier_from_policy, rent_training_set

_MC_BLOCK = 65536
_TRAIN_BLOCK = 1 << 40  # keeps training draws disjoint from evaluation blocks


def monte_carlo_cr(policy: ThresholdPolicy, dist: JointDistribution, n: int,
                   seed: int, block_size: int = _MC_BLOCK) -> CrEstimate:
    """Empirical competitive ratio over n seeded draws.

    Draws are generated in fixed blocks of ``block_size``, each from its own
    (seed, block) stream, so the result is identical however blocks are
    scheduled.  Randomized policies contribute their exact per-draw
    expectation.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    chunks = []
    remaining, block = n, 0
    while remaining > 0:
        take = min(block_size, remaining)
        samples = dist.sample(take, seed=seed, block=block)
        chunks.append(per_sample_ratios(policy, samples))
        remaining -= take
        block += 1
    ratios = np.concatenate(chunks)
    mean = float(np.sum(ratios) / n)
    stderr = 0.0 if n == 1 else float(np.std(ratios, ddof=1) / math.sqrt(n))
    return CrEstimate(mean=mean, stderr=stderr, n_samples=n, seed=seed)


# ---------------------------------------------------------------------------
# Threshold scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanResult:
    """CR(theta) evaluated on a threshold grid."""

    thetas: np.ndarray
    values: np.ndarray
    argmin_theta: float
    min_value: float
    argmax_theta: float
    max_value: float

    def rows(self):
        return [{"theta": float(t), "cr": float(v)}
                for t, v in zip(self.thetas, self.values)]


def _theta_grid(start: float, stop: float, step: float) -> np.ndarray:
    if step <= 0.0 or stop < start or start <= 0.0:
        raise ValueError("need 0 < start <= stop and a positive step")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def _density_expected_ratio(density: Density, theta: float) -> float:
    lo, hi = density.support
    if density.family == "point_mass":
        return cost_ratio(theta, lo)
    bp = [theta] if lo < theta < hi else None
    val, _ = integrate.quad(lambda z: cost_ratio(theta, z) * float(density.pdf(z)),
                            lo, hi, points=bp, epsabs=1e-9, limit=200)
    return val


def cr_scan(source, theta_start: float, theta_stop: float, step: float,
            n_mc: Optional[int] = None, seed: int = 0) -> ScanResult:
    """Competitive ratio as a function of the threshold.

    ``source`` may be a joint distribution (exact expectation when the
    family provides one, otherwise Monte Carlo over ``n_mc`` shared draws)
    or a bare season-length density (exact quadrature per point).
    """
    thetas = _theta_grid(theta_start, theta_stop, step)
    if isinstance(source, Density):
        values = np.array([_density_expected_ratio(source, float(t))
                           for t in thetas])
    elif isinstance(source, JointDistribution):
        exact = source.expected_ratio(float(thetas[0]))
        if exact is not None:
            values = np.array([source.expected_ratio(float(t)) for t in thetas])
        else:
            if n_mc is None:
                raise ValueError(
                    f"family {source.family!r} has no exact expectation; "
                    "declare n_mc for the per-point Monte Carlo fallback")
            y = source.sample(n_mc, seed=seed).y
            from .policies import empirical_cr_curve
            values = empirical_cr_curve(y, thetas)
    else:
        raise TypeError("source must be a JointDistribution or a Density")
    lo = int(np.argmin(values))
    hi = int(np.argmax(values))
    return ScanResult(thetas=thetas, values=values,
                      argmin_theta=float(thetas[lo]), min_value=float(values[lo]),
                      argmax_theta=float(thetas[hi]), max_value=float(values[hi]))


@dataclass(frozen=True)
class WorstCaseScan:
    """Probe-based worst case next to the analytic certificate."""

    max_ratio: float
    analytic: float
    probe_rho: float


def worst_case_scan(policy: ThresholdPolicy, y_grid=None, x_probes=None,
                    rho: float = 1e-9) -> WorstCaseScan:
    """Largest observed ratio over season probes for a deterministic policy.

    The supremum is approached (never attained) just past each threshold, so
    each emitted threshold contributes the probe y = theta + rho alongside
    the season grid; the analytic bound 1 + 1/theta_min is reported with it.
    """
    if policy.is_randomized:
        raise NotImplementedError(
            "randomized policies are certified analytically by robustness_bound")
    values = policy.threshold_values()
    if values is None:
        if x_probes is None:
            raise ValueError(
                "policy does not enumerate its thresholds; pass x_probes")
        values = sorted(set(float(t) for t in policy.thresholds(x_probes)))
    if y_grid is None:
        y_grid = np.linspace(0.01, 10.0, 1000)
    y_grid = np.asarray(y_grid, dtype=float)
    best = 1.0
    for theta in values:
        probes = np.concatenate([[theta + rho], y_grid])
        ratios = [cost_ratio(theta, float(y)) for y in probes]
        best = max(best, max(ratios))
    return WorstCaseScan(max_ratio=best, analytic=robustness_bound(policy),
                         probe_rho=rho)


# ---------------------------------------------------------------------------
# Scaling experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingResult:
    rows: list
    slope: Optional[float]


def scaling_experiment(fit_factory: Callable[[], object],
                       dist: JointDistribution, n_list: Sequence[int],
                       seeds: Sequence[int], n_eval: int = 20000) -> ScalingResult:
    """Fit at growing sample sizes and track the excess ratio.

    Each (n, seed) cell fits a fresh estimator on fresh training draws and
    evaluates on an independent Monte Carlo stream.  The summary slope is a
    least-squares fit of log(CR - 1) against log(n); cells whose fit raised
    are recorded with the error and excluded from the slope.
    """
    n_list = list(n_list)
    if sorted(n_list) != n_list:
        raise ValueError("n_list must be ascending")
    rows = []
    for n in n_list:
        for seed in seeds:
            row = {"n": int(n), "seed": int(seed), "cr_mean": "",
                   "cr_stderr": "", "error": ""}
            try:
                train = dist.sample(int(n), seed=seed, block=_TRAIN_BLOCK)
                est = fit_factory().fit(train.x, train.y)
                cr = monte_carlo_cr(est.policy_, dist, n_eval, seed=seed)
                row["cr_mean"] = cr.mean
                row["cr_stderr"] = cr.stderr
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    good = [(r["n"], r["cr_mean"]) for r in rows
            if r["error"] == "" and r["cr_mean"] != ""]
    slope = None
    if len({n for n, _ in good}) >= 2:
        log_n = np.log([n for n, _ in good])
        log_excess = np.log([max(cr - 1.0, 1e-12) for _, cr in good])
        slope = float(np.polyfit(log_n, log_excess, 1)[0])
    return ScalingResult(rows=rows, slope=slope)


# ---------------------------------------------------------------------------
# Lower-bound certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoreGridCertificate:
    epsilon: float
    d: int
    n_cores: int
    n_train: int
    n_sampled_cores: int
    unsampled_fraction: float
    certified_bound: float
    strategies: dict


def lb_certify_core_grid(epsilon: float, d: int, n_train: int,
                         seed: int = 0) -> CoreGridCertificate:
    """Best expected ratio any learner can reach after n_train draws.

    Cores that were sampled give their season away, so ratio 1 is
    achievable there; an unseen core's coin is unknown and no strategy
    beats 1 + 2*epsilon on it.  The certificate averages over the uniform
    core weights.
    """
    dist = CoreGrid(epsilon=epsilon, d=d, seed=seed)
    if n_train < 0:
        raise ValueError("n_train must be nonnegative")
    if n_train == 0:
        sampled = 0
    else:
        draws = dist.sample(n_train, block=0)
        sampled = int(np.unique(dist.core_index(draws.x)).size)
    frac_unsampled = (dist.n_cores - sampled) / dist.n_cores
    bound = 1.0 + 2.0 * epsilon * frac_unsampled
    return CoreGridCertificate(
        epsilon=epsilon, d=d, n_cores=dist.n_cores, n_train=n_train,
        n_sampled_cores=sampled, unsampled_fraction=frac_unsampled,
        certified_bound=bound, strategies=unseen_core_strategies(epsilon))


@dataclass(frozen=True)
class ReductionReport:
    disagreement: float
    epsilon_hat: float
    bound: float
    binomial_stderr: float
    passed: bool
    n_test: int


def reduction_error_check(policy: ThresholdPolicy, dist: JointDistribution,
                          n_test: int, seed: int = 0) -> ReductionReport:
    """Classification error extracted from a rent policy vs its CR excess.

    Labels come from the distribution (long season = 1); seasons are then
    replaced by the reduction's construction (10 for positives, a seeded
    fair coin over {0, 1/2} for negatives).  The decision rule predicts
    short whenever the policy waits at least 1/2.  Disagreement must stay
    within 4x the measured CR excess plus binomial slack.
    """
    draws = dist.sample(n_test, seed=seed, block=0)
    z = label_from_season(draws.y)
    transformed = rent_training_set(draws.x, z, seed=seed)
    estimate = evaluate_policy(policy, transformed, seed=seed)
    epsilon_hat = max(estimate.mean - 1.0, 0.0)
    z_hat = classifier_from_policy(policy).predict(draws.x)
    rate = float(np.mean(z_hat != z))
    stderr = math.sqrt(rate * (1.0 - rate) / n_test)
    bound = 4.0 * epsilon_hat + 3.0 * stderr
    return ReductionReport(disagreement=rate, epsilon_hat=epsilon_hat,
                           bound=bound, binomial_stderr=stderr,
                           passed=rate <= bound + 1e-12, n_test=n_test)


# ---------------------------------------------------------------------------
# Shattering enumeration for the two-threshold policy class
# ---------------------------------------------------------------------------

_MAX_SHATTER_POINTS = 12
_DEFAULT_THETA_GRID = (1e-6, 1e-3, 0.01, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0,
                       5.0, 10.0)


@dataclass(frozen=True)
class ShatterInstance:
    """Points, witnesses, and a finite hypothesis set for realizability checks.

    ``hypotheses`` lists each classifier as its 0/1 values on the points
    (ascending-season order is required by the infeasibility arguments).
    """

    y: np.ndarray
    witnesses: np.ndarray
    hypotheses: tuple
    theta_grid: tuple = _DEFAULT_THETA_GRID

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        r = np.asarray(self.witnesses, dtype=float).reshape(-1)
        if y.size == 0 or y.size != r.size:
            raise ValueError("need matching nonempty seasons and witnesses")
        if y.size > _MAX_SHATTER_POINTS:
            raise NotImplementedError(
                f"instance has {y.size} points; enumeration supports at most "
                f"{_MAX_SHATTER_POINTS}")
        if np.any(np.diff(y) < 0.0):
            raise ValueError("seasons must be ascending")
        hyps = tuple(tuple(int(v) for v in h) for h in self.hypotheses)
        if not hyps or any(len(h) != y.size for h in hyps):
            raise ValueError("each hypothesis must label every point")
        if any(v not in (0, 1) for h in hyps for v in h):
            raise ValueError("hypothesis values must be 0 or 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "witnesses", r)
        object.__setattr__(self, "hypotheses", hyps)

    @property
    def n_points(self) -> int:
        return int(self.y.size)

    def candidate_thetas(self) -> np.ndarray:
        """Declared grid plus every cost-critical value, with midpoints.

        The cost is piecewise monotone in theta with breakpoints only at the
        seasons and at r * min(y, 1) - 1, so one representative per interval
        decides feasibility exactly.
        """
        crit = set()
        for yi, ri in zip(self.y, self.witnesses):
            crit.add(float(yi))
            crit.add(float(ri * min(yi, 1.0) - 1.0))
        delta = 1e-9
        cands = set(float(t) for t in self.theta_grid)
        ordered = sorted(c for c in crit)
        for c in ordered:
            for t in (c - delta, c, c + delta):
                cands.add(t)
        for a, b in zip(ordered, ordered[1:]):
            cands.add((a + b) / 2.0)
        if ordered:
            cands.add(max(ordered) * 2.0 + 1.0)
        return np.array(sorted(t for t in cands if t > 0.0))


def shatter_cost(theta: float, y: float) -> float:
    """Performance measure used by the capacity arguments.

    Unlike the ratio g, seasons shorter than the threshold count cost 1
    outright (the policy never buys).
    """
    if y < theta:
        return 1.0
    return (1.0 + theta) / min(y, 1.0)


@dataclass(frozen=True)
class RealizabilityResult:
    feasible: bool
    witness: Optional[tuple]  # (hypothesis, eta_short, eta_long)


def _side_ok(theta: float, ys, rs, labs) -> bool:
    for yi, ri, li in zip(ys, rs, labs):
        if (shatter_cost(theta, yi) > ri) != bool(li):
            return False
    return True


def realizability_check(instance: ShatterInstance, labeling) -> RealizabilityResult:
    """Search (hypothesis, eta_1, eta_2) triples realizing a labeling.

    Labeling bit i must equal [cost at point i exceeds witness r_i].  For a
    fixed hypothesis the two sides are independent, so each is solved by a
    one-dimensional sweep over the candidate thresholds.
    """
    labeling = _check_labeling(instance, labeling)
    cands = instance.candidate_thetas()
    y, r = instance.y, instance.witnesses
    for hyp in instance.hypotheses:
        hyp_arr = np.asarray(hyp)
        sides = []
        for bit in (0, 1):
            idx = np.flatnonzero(hyp_arr == bit)
            if idx.size == 0:
                sides.append(float(cands[0]))
                continue
            found = None
            for theta in cands:
                if _side_ok(float(theta), y[idx], r[idx], labeling[idx]):
                    found = float(theta)
                    break
            sides.append(found)
        if sides[0] is not None and sides[1] is not None:
            return RealizabilityResult(True, (hyp, sides[0], sides[1]))
    return RealizabilityResult(False, None)


def realizability_check_bruteforce(instance: ShatterInstance,
                                   labeling) -> RealizabilityResult:
    """Straight enumeration over (eta_1, eta_2, hypothesis) triples.

    Same candidate grid as :func:`realizability_check` but loops thresholds
    outermost and checks every point directly; kept as an independent
    cross-check of the decomposed search.
    """
    labeling = _check_labeling(instance, labeling)
    cands = instance.candidate_thetas()
    y, r = instance.y, instance.witnesses
    for eta1 in cands:
        for eta2 in cands:
            for hyp in instance.hypotheses:
                ok = True
                for i, bit in enumerate(hyp):
                    theta = eta2 if bit == 1 else eta1
                    if (shatter_cost(float(theta), y[i]) > r[i]) != bool(labeling[i]):
                        ok = False
                        break
                if ok:
                    return RealizabilityResult(True, (hyp, float(eta1), float(eta2)))
    return RealizabilityResult(False, None)


def _check_labeling(instance: ShatterInstance, labeling) -> np.ndarray:
    lab = np.asarray(labeling).reshape(-1).astype(int)
    if lab.size != instance.n_points or np.any((lab != 0) & (lab != 1)):
        raise ValueError("labeling must be one bit per point")
    return lab


def common_threshold_instance(y, witnesses) -> ShatterInstance:
    """Instance whose hypothesis set forces one threshold on every point."""
    m = len(np.asarray(y).reshape(-1))
    return ShatterInstance(y=np.asarray(y, dtype=float),
                           witnesses=np.asarray(witnesses, dtype=float),
                           hypotheses=((0,) * m, (1,) * m))


def shattered_pair_instance(d: int, season: float = 1.0 + 1e-3,
                            witness: float = 1.5) -> ShatterInstance:
    """d points at a just-long season with a hypothesis set shattering them.

    Waiting eta_2 in (witness * 1 - 1, season] costs 2 > witness on its
    points while eta_1 below that costs about 1, so every labeling is
    realizable; used as the capacity lower-bound witness.
    """
    if d < 1 or d > _MAX_SHATTER_POINTS:
        raise ValueError("d out of range for enumeration")
    hyps = tuple(tuple((i >> j) & 1 for j in range(d)) for i in range(2 ** d))
    return ShatterInstance(y=np.full(d, season), witnesses=np.full(d, witness),
                           hypotheses=hyps)
