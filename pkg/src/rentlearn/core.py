"""Ski-rental cost model.

Costs are normalized so that buying costs 1 and renting costs 1 per unit
time.  A deterministic strategy rents until its threshold ``theta`` and buys
at that point; the offline optimum pays ``min(1, y)`` for a season of length
``y``.  This module provides the per-instance cost ratio, threshold-policy
objects (deterministic and randomized), empirical evaluation, and worst-case
robustness certificates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .validation import check_features, check_seasons

# Expected ratio of the classic randomized strategy, optimal without advice.
E_RATIO = math.e / (math.e - 1.0)

# Absolute tolerance for all density integrations; every downstream
# acceptance tolerance is >= 1e-2, so this leaves ample headroom.
INTEGRATION_ABS_TOL = 1e-6

# Smallest threshold a fitted policy may emit; ratios stay finite.
THETA_FLOOR = 1e-6


def cost_ratio(theta: float, y: float) -> float:
    """Cost of the threshold strategy relative to the offline optimum.

    Renting until ``theta`` and then buying pays ``1 + theta`` if the season
    reaches the threshold and ``y`` otherwise; the optimum pays
    ``min(1, y)``.  A season of length 0 costs both parties nothing and is
    assigned ratio 1.
    """
    if not (math.isfinite(theta) and theta > 0.0):
        raise ValueError(f"threshold must be positive and finite, got {theta!r}")
    if not (math.isfinite(y) and y >= 0.0):
        raise ValueError(f"season length must be nonnegative and finite, got {y!r}")
    if y == 0.0:
        return 1.0
    opt = min(1.0, y)
    if y >= theta:
        return (1.0 + theta) / opt
    return y / opt


def cost_ratio_array(theta, y) -> np.ndarray:
    """Vectorized :func:`cost_ratio` over matching arrays."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(theta)) or np.any(theta <= 0.0):
        raise ValueError("all thresholds must be positive and finite")
    if np.any(~np.isfinite(y)) or np.any(y < 0.0):
        raise ValueError("all season lengths must be nonnegative and finite")
    shape = np.broadcast(theta, y).shape
    theta_b = np.broadcast_to(theta, shape)
    y_b = np.broadcast_to(y, shape)
    opt = np.minimum(1.0, y_b)
    out = np.ones(shape, dtype=float)
    buy = y_b >= theta_b
    out[buy] = (1.0 + theta_b[buy]) / opt[buy]
    rent = ~buy & (y_b > 0.0)  # y = 0 keeps ratio 1
    out[rent] = y_b[rent] / opt[rent]
    return out


def worst_case_ratio(theta: float) -> float:
    """Supremum of the cost ratio over all season lengths.

    The worst season ends right at the buy point: the strategy pays
    ``1 + theta`` against an optimum of ``min(1, theta)``, i.e.
    ``1 + 1/theta`` for theta <= 1 and ``1 + theta`` beyond.
    """
    if not (math.isfinite(theta) and theta > 0.0):
        raise ValueError(f"threshold must be positive and finite, got {theta!r}")
    return (1.0 + theta) / min(1.0, theta)


# ---------------------------------------------------------------------------
# Randomized threshold densities
# ---------------------------------------------------------------------------

_DENSITY_FAMILIES = ("exp_ratio", "point_mass", "truncated_gamma2", "uniform")


@dataclass(frozen=True)
class Density:
    """A named analytic density over a scalar on a bounded interval.

    Families:

    - ``exp_ratio``: pdf ``e^z / (e - 1)`` on [0, 1], the classic randomized
      rent-or-buy rule.
    - ``point_mass``: all mass at ``at`` (degenerate).
    - ``truncated_gamma2``: pdf proportional to ``z * exp(-z)`` on
      [0, ``upper``], normalized exactly; the adversarial season-length law
      used by the noise lower bound.
    - ``uniform``: flat on [``lower``, ``upper``].

    Keeping densities as named families rather than callables lets
    normalization and expectations integrate deterministically.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _DENSITY_FAMILIES:
            raise ValueError(f"unknown density family {self.family!r}")
        lo, hi = self.support
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise ValueError(f"invalid support [{lo}, {hi}]")

    @property
    def support(self) -> tuple[float, float]:
        if self.family == "exp_ratio":
            return (0.0, 1.0)
        if self.family == "point_mass":
            at = float(self.params["at"])
            return (at, at)
        if self.family == "truncated_gamma2":
            return (0.0, float(self.params["upper"]))
        return (float(self.params["lower"]), float(self.params["upper"]))

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        lo, hi = self.support
        inside = (z >= lo) & (z <= hi)
        if self.family == "exp_ratio":
            vals = np.exp(z) / (math.e - 1.0)
        elif self.family == "truncated_gamma2":
            k = self.norm_constant()
            vals = k * z * np.exp(-z)
        elif self.family == "uniform":
            vals = np.full_like(z, 1.0 / (hi - lo))
        else:
            raise ValueError("point masses have no density function")
        return np.where(inside, vals, 0.0)

    def norm_constant(self) -> float:
        """Exact normalization constant for families that need one."""
        if self.family == "truncated_gamma2":
            b = float(self.params["upper"])
            return 1.0 / (1.0 - (1.0 + b) * math.exp(-b))
        return 1.0

    def total_mass(self) -> float:
        """Numerically integrated mass over the support (1 for point masses)."""
        if self.family == "point_mass":
            return 1.0
        lo, hi = self.support
        mass, _ = integrate.quad(lambda z: float(self.pdf(z)), lo, hi,
                                 epsabs=1e-12, limit=200)
        return mass

    def mean(self) -> float:
        if self.family == "point_mass":
            return float(self.params["at"])
        lo, hi = self.support
        m, _ = integrate.quad(lambda z: z * float(self.pdf(z)), lo, hi,
                              epsabs=1e-12, limit=200)
        return m

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.support
        if self.family == "point_mass":
            return np.full(n, lo)
        if self.family == "uniform":
            return rng.uniform(lo, hi, size=n)
        if self.family == "exp_ratio":
            # Inverse CDF: F(z) = (e^z - 1)/(e - 1).
            u = rng.random(n)
            return np.log1p(u * (math.e - 1.0))
        # truncated_gamma2: pdf increases on [0, upper] for upper <= 1,
        # so rejection against the box [0, upper] x [0, pdf(upper)] works.
        out = np.empty(n)
        peak = float(self.pdf(hi))
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 16)
            z = rng.uniform(lo, hi, size=m)
            v = rng.uniform(0.0, peak, size=m)
            keep = z[v <= self.pdf(z)]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out

    def to_doc(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    @staticmethod
    def from_doc(doc: dict) -> "Density":
        return Density(doc["family"], dict(doc.get("params", {})))


def worst_case_density() -> Density:
    """The ``e^z/(e-1)`` threshold density on [0, 1]."""
    return Density("exp_ratio")


def expected_ratio_randomized(density: Density, y: float) -> float:
    """Expected cost ratio of a randomized threshold against season ``y``.

    Integrates ``cost_ratio(z, y)`` against the density by adaptive
    quadrature (absolute error <= 1e-6).  Point masses reduce to the
    deterministic ratio.
    """
    if not (math.isfinite(y) and y >= 0.0):
        raise ValueError(f"season length must be nonnegative and finite, got {y!r}")
    if density.family == "point_mass":
        return cost_ratio(float(density.params["at"]), y)
    mass = density.total_mass()
    if abs(mass - 1.0) > 1e-9:
        raise ValueError(f"density integrates to {mass!r}, not 1")
    if y == 0.0:
        return 1.0
    lo, hi = density.support
    breakpoints = [y] if lo < y < hi else None

    def integrand(z):
        # g(., y) extends continuously to a zero threshold; clamp so the
        # domain check never trips on an endpoint node.
        return cost_ratio(max(z, 1e-300), y) * float(density.pdf(z))

    val, _ = integrate.quad(integrand, lo, hi, points=breakpoints,
                            epsabs=INTEGRATION_ABS_TOL, limit=200)
    return val


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSet:
    """A batch of (feature vector, season length) pairs.

    Features live in the unit hypercube [0, 1]^d (d may be 0) and season
    lengths are finite and nonnegative.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = check_features(self.x)
        y = check_seasons(self.y)
        if x.shape[0] != y.shape[0]:
            raise ValueError("feature and season arrays disagree on length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


# ---------------------------------------------------------------------------
# Threshold policies
# ---------------------------------------------------------------------------


class ThresholdPolicy:
    """Base class: maps features to a buy threshold (or a threshold density).

    ``theta_min`` is the infimum of emitted thresholds over the declared
    feature domain; it is exact for the finitely-parameterized policies built
    here, and user-supplied policies must declare it.
    """

    kind = "abstract"
    is_randomized = False

    @property
    def theta_min(self) -> float:
        raise NotImplementedError

    def thresholds(self, x: np.ndarray) -> np.ndarray:
        """Per-row threshold for a (n, d) feature array."""
        raise NotImplementedError

    def threshold_values(self):
        """The finite set of thresholds this policy can emit, or None."""
        return None

    def to_doc(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_doc())


@dataclass(frozen=True)
class ConstantPolicy(ThresholdPolicy):
    """Rent until a fixed time, then buy, regardless of features."""

    theta: float
    kind = "constant"

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta > 0.0):
            raise ValueError("threshold must be positive and finite")

    @property
    def theta_min(self) -> float:
        return self.theta

    def thresholds(self, x) -> np.ndarray:
        x = check_features(x)
        return np.full(x.shape[0], self.theta)

    def threshold_values(self):
        return [self.theta]

    def to_doc(self) -> dict:
        return {"kind": self.kind, "theta": self.theta}


@dataclass(frozen=True)
class FunctionPolicy(ThresholdPolicy):
    """Arbitrary user threshold function with a declared infimum."""

    func: Callable[[np.ndarray], np.ndarray]
    declared_theta_min: float
    kind = "function"

    @property
    def theta_min(self) -> float:
        return self.declared_theta_min

    def thresholds(self, x) -> np.ndarray:
        x = check_features(x)
        out = np.asarray(self.func(x), dtype=float).reshape(-1)
        if out.shape[0] != x.shape[0]:
            raise ValueError("policy function returned wrong number of thresholds")
        if np.any(out <= 0.0) or np.any(~np.isfinite(out)):
            raise ValueError("policy function emitted a non-positive threshold")
        return out

    def to_doc(self) -> dict:
        raise NotImplementedError("function policies are not serializable")


@dataclass(frozen=True)
class RandomizedPolicy(ThresholdPolicy):
    """Threshold drawn from a density, independent of features."""

    density: Density
    kind = "randomized"
    is_randomized = True

    def __post_init__(self):
        mass = self.density.total_mass()
        if abs(mass - 1.0) > 1e-9:
            raise ValueError(f"density integrates to {mass!r}, not 1")

    @property
    def theta_min(self) -> float:
        return max(self.density.support[0], THETA_FLOOR)

    def thresholds(self, x) -> np.ndarray:
        raise NotImplementedError("randomized policies have no deterministic thresholds")

    def expected_ratio(self, y: float) -> float:
        return expected_ratio_randomized(self.density, y)

    def to_doc(self) -> dict:
        return {"kind": self.kind, "density": self.density.to_doc()}


# ---------------------------------------------------------------------------
# Evaluation and robustness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrEstimate:
    """An empirical competitive-ratio record."""

    mean: float
    stderr: float
    n_samples: int
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("estimate needs at least one sample")
        if self.mean < 1.0 - 1e-9:
            raise ValueError(f"competitive ratio {self.mean!r} below 1")
        if self.stderr < 0.0:
            raise ValueError("standard error must be nonnegative")


def per_sample_ratios(policy: ThresholdPolicy, samples: SampleSet) -> np.ndarray:
    """Cost ratio of the policy on each sample.

    Randomized policies contribute their exact per-draw expectation over the
    threshold density (computed once per distinct season length).
    """
    if policy.is_randomized:
        # g(z, y) depends on y only through min(1, y), so cache on that.
        keys = np.minimum(1.0, samples.y)
        uniq, inverse = np.unique(keys, return_inverse=True)
        vals = np.array([policy.expected_ratio(float(k)) for k in uniq])
        return vals[inverse]
    thetas = policy.thresholds(samples.x)
    return cost_ratio_array(thetas, samples.y)


def evaluate_policy(policy: ThresholdPolicy, samples: SampleSet,
                    seed: int = 0) -> CrEstimate:
    """Empirical mean and standard error of the cost ratio over samples."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate a policy on an empty sample set")
    ratios = per_sample_ratios(policy, samples)
    n = len(ratios)
    mean = float(np.sum(ratios) / n)
    stderr = 0.0 if n == 1 else float(np.std(ratios, ddof=1) / math.sqrt(n))
    return CrEstimate(mean=mean, stderr=stderr, n_samples=n, seed=seed)


def robustness_bound(policy: ThresholdPolicy) -> float:
    """Certified worst-case cost ratio over all features and season lengths.

    Deterministic policies are certified through their emitted thresholds:
    the max of worst_case_ratio over them, which is 1 + 1/theta_min whenever
    no threshold exceeds 1/theta_min (true of every fitted policy here).
    Policies that cannot enumerate their thresholds fall back to that
    formula.  The classic randomized rule guarantees e/(e-1) on every input;
    any other randomized density is bounded through the infimum of its
    support.
    """
    if policy.is_randomized:
        density = policy.density
        if density.family == "exp_ratio":
            return E_RATIO
        lo = density.support[0]
        if lo <= 0.0:
            return math.inf
        return 1.0 + 1.0 / lo
    theta0 = policy.theta_min
    if not (math.isfinite(theta0) and theta0 > 0.0):
        raise ValueError("policy has no positive finite theta_min")
    values = policy.threshold_values()
    if values is not None:
        return max(worst_case_ratio(t) for t in values)
    return 1.0 + 1.0 / theta0
