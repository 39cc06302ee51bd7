"""Seeded joint distributions over (feature, season-length) pairs.

Every family draws as a pure function of (parameters, seed, block index), so
parallel workers that partition draws by block id reproduce the serial
stream exactly.  The module also provides one-dimensional earth-mover
distance, a statistical Lipschitz verifier, and the two adversarial
lower-bound constructions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .core import Density, SampleSet, cost_ratio

_MASK64 = (1 << 64) - 1
_COIN_TAG = 0x636F696E  # distinct stream for construction-time coin flips


def stream(seed: int, block: int = 0) -> np.random.Generator:
    """Deterministic generator for worker ``block`` of a seeded source."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & _MASK64, int(block) & _MASK64]))


# ---------------------------------------------------------------------------
# Empirical one-dimensional distributions and EMD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Empirical1D:
    """A finite distribution on the line: sorted unique atoms with weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if values.shape != weights.shape or values.size == 0:
            raise ValueError("values and weights must be matching nonempty arrays")
        if not np.all(np.isfinite(values)):
            raise ValueError("atom values must be finite")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        total = float(np.sum(weights))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, not 1")
        # Deduplicate and sort so CDF sweeps are exact.
        uniq, inverse = np.unique(values, return_inverse=True)
        merged = np.zeros_like(uniq)
        np.add.at(merged, inverse, weights)
        keep = merged > 0.0
        object.__setattr__(self, "values", uniq[keep])
        object.__setattr__(self, "weights", merged[keep])

    @staticmethod
    def from_samples(y) -> "Empirical1D":
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size == 0:
            raise ValueError("cannot build an empirical distribution from no samples")
        return Empirical1D(y, np.full(y.size, 1.0 / y.size))

    @staticmethod
    def point(value: float) -> "Empirical1D":
        return Empirical1D(np.array([value]), np.array([1.0]))

    def cdf_at(self, points: np.ndarray) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        idx = np.searchsorted(self.values, points, side="right")
        return cum[idx]

    def expected_ratio(self, theta: float) -> float:
        """Exact E[g(theta, Y)] over the atoms."""
        vals = [w * cost_ratio(theta, v) for v, w in zip(self.values, self.weights)]
        return float(sum(vals))


def emd_1d(p: Empirical1D, q: Empirical1D) -> float:
    """Earth-mover distance between two distributions on the line.

    In one dimension the optimal transport cost equals the L1 distance
    between the CDFs, computed here exactly by a merged-grid sweep.
    """
    grid = np.union1d(p.values, q.values)
    if grid.size < 2:
        return 0.0
    fp = p.cdf_at(grid[:-1])
    fq = q.cdf_at(grid[:-1])
    return float(np.sum(np.abs(fp - fq) * np.diff(grid)))


@dataclass(frozen=True)
class ClosenessReport:
    """Both sides of the EMD-perturbation inequality for shifted thresholds."""

    lhs: float
    rhs: float
    delta: float
    passed: bool


def closeness_check(d1: Empirical1D, d2: Empirical1D, theta: float,
                    epsilon: float) -> ClosenessReport:
    """Check E_{d1}[g(theta+eps, Y)] <= (1+eps)(1 + EMD/eps^2) E_{d2}[g(theta, Y)].

    Evaluated exactly on the atom sets; the bound controls how much the
    optimal ratio can move between nearby conditional distributions.
    """
    if theta <= 0.0 or epsilon <= 0.0:
        raise ValueError("theta and epsilon must be positive")
    delta = emd_1d(d1, d2)
    lhs = d1.expected_ratio(theta + epsilon)
    rhs = (1.0 + epsilon) * (1.0 + delta / epsilon ** 2) * d2.expected_ratio(theta)
    return ClosenessReport(lhs=lhs, rhs=rhs, delta=delta,
                           passed=lhs <= rhs * (1.0 + 1e-12) + 1e-12)


# ---------------------------------------------------------------------------
# Joint distribution families
# ---------------------------------------------------------------------------


class JointDistribution:
    """Base class for seeded (x, y) samplers.

    Subclasses implement ``_draw`` against a provided generator; ``sample``
    wires the generator from (seed, block) so identical inputs give
    bit-identical output.
    """

    family = "abstract"
    seed: int = 0

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def _draw(self, rng: np.random.Generator, n: int) -> SampleSet:
        raise NotImplementedError

    def sample(self, n: int, seed: Optional[int] = None, block: int = 0) -> SampleSet:
        if n < 1:
            raise ValueError("need at least one draw")
        rng = stream(self.seed if seed is None else seed, block)
        return self._draw(rng, int(n))

    def conditional_samples(self, x: np.ndarray, m: int,
                            rng: np.random.Generator) -> np.ndarray:
        """Draw m season lengths conditioned on a single feature vector."""
        raise NotImplementedError(
            f"family {self.family!r} does not support conditional sampling")

    def exact_conditional(self, x: np.ndarray) -> Optional[Empirical1D]:
        """Exact conditional y | x when it is finitely supported."""
        return None

    def expected_ratio(self, theta: float) -> Optional[float]:
        """Exact CR(theta) when the family admits one, else None."""
        return None

    def lipschitz_modulus(self) -> Optional[float]:
        return None

    # -- serialization ------------------------------------------------------

    def params(self) -> dict:
        raise NotImplementedError

    def to_doc(self) -> dict:
        return {"family": self.family, "params": self.params(), "seed": int(self.seed)}

    def to_json(self) -> str:
        return json.dumps(self.to_doc())


def sample_joint(dist: JointDistribution, n: int, seed: Optional[int] = None,
                 block: int = 0) -> SampleSet:
    """Draw n (x, y) pairs from a distribution; see ``JointDistribution.sample``."""
    return dist.sample(n, seed=seed, block=block)


@dataclass(frozen=True)
class PointMass(JointDistribution):
    """Every draw has the same season length; no features (d = 0)."""

    y0: float
    seed: int = 0
    family = "point_mass"

    def __post_init__(self):
        if not (math.isfinite(self.y0) and self.y0 >= 0.0):
            raise ValueError("point mass location must be nonnegative and finite")

    @property
    def dim(self) -> int:
        return 0

    def _draw(self, rng, n):
        return SampleSet(np.zeros((n, 0)), np.full(n, self.y0))

    def conditional_samples(self, x, m, rng):
        return np.full(m, self.y0)

    def exact_conditional(self, x=None):
        return Empirical1D.point(self.y0)

    def expected_ratio(self, theta):
        return cost_ratio(theta, self.y0)

    def params(self):
        return {"y0": self.y0}


@dataclass(frozen=True)
class FiniteMixture(JointDistribution):
    """Season length drawn from finitely many atoms; no features (d = 0)."""

    values: tuple
    weights: tuple
    seed: int = 0
    family = "finite_mixture"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        atoms = self.atoms()  # validates
        if np.any(np.asarray(self.values) < 0.0):
            raise ValueError("season-length atoms must be nonnegative")
        del atoms

    def atoms(self) -> Empirical1D:
        return Empirical1D(np.asarray(self.values), np.asarray(self.weights))

    @property
    def dim(self) -> int:
        return 0

    def _draw(self, rng, n):
        idx = rng.choice(len(self.values), size=n, p=np.asarray(self.weights))
        return SampleSet(np.zeros((n, 0)), np.asarray(self.values)[idx])

    def conditional_samples(self, x, m, rng):
        idx = rng.choice(len(self.values), size=m, p=np.asarray(self.weights))
        return np.asarray(self.values)[idx]

    def exact_conditional(self, x=None):
        return self.atoms()

    def expected_ratio(self, theta):
        return self.atoms().expected_ratio(theta)

    def params(self):
        return {"values": list(self.values), "weights": list(self.weights)}


@dataclass(frozen=True)
class DeterministicLinear(JointDistribution):
    """y is an exact affine function of uniform features.

    The conditional law at x is the point mass at coef . x + intercept, so
    the joint distribution is ||coef||_2-Lipschitz.
    """

    coef: tuple
    intercept: float = 0.0
    seed: int = 0
    family = "deterministic_linear"

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        if len(self.coef) == 0:
            raise ValueError("need at least one feature coefficient")
        lowest = self.intercept + sum(min(c, 0.0) for c in self.coef)
        if lowest < 0.0:
            raise ValueError("season length would go negative on [0, 1]^d")

    @property
    def dim(self) -> int:
        return len(self.coef)

    def f(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.asarray(self.coef) + self.intercept

    def _draw(self, rng, n):
        x = rng.random((n, self.dim))
        return SampleSet(x, self.f(x))

    def conditional_samples(self, x, m, rng):
        return np.full(m, float(self.f(np.atleast_2d(x))[0]))

    def exact_conditional(self, x):
        return Empirical1D.point(float(self.f(np.atleast_2d(x))[0]))

    def lipschitz_modulus(self):
        return float(np.linalg.norm(self.coef))

    def params(self):
        return {"coef": list(self.coef), "intercept": self.intercept}


@dataclass(frozen=True)
class LipschitzUniform(JointDistribution):
    """Affine center with a uniform band of noise around it.

    y | x is Uniform[f(x) - halfwidth, f(x) + halfwidth]; moving x shifts the
    band without reshaping it, so conditional EMD is exactly |f(x1) - f(x2)|
    and the declared modulus is ||coef||_2.
    """

    coef: tuple
    intercept: float
    halfwidth: float
    seed: int = 0
    family = "lipschitz_uniform"

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        if self.halfwidth <= 0.0:
            raise ValueError("halfwidth must be positive")
        lowest = self.intercept + sum(min(c, 0.0) for c in self.coef) - self.halfwidth
        if lowest < 0.0:
            raise ValueError("season length would go negative on [0, 1]^d")

    @property
    def dim(self) -> int:
        return len(self.coef)

    def center(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.asarray(self.coef) + self.intercept

    def _draw(self, rng, n):
        x = rng.random((n, self.dim))
        y = self.center(x) + rng.uniform(-self.halfwidth, self.halfwidth, size=n)
        return SampleSet(x, y)

    def conditional_samples(self, x, m, rng):
        c = float(self.center(np.atleast_2d(x))[0])
        return c + rng.uniform(-self.halfwidth, self.halfwidth, size=m)

    def lipschitz_modulus(self):
        return float(np.linalg.norm(self.coef))

    def params(self):
        return {"coef": list(self.coef), "intercept": self.intercept,
                "halfwidth": self.halfwidth}


def _core_grid_cells(epsilon: float) -> int:
    cells = 1.0 / (9.0 * epsilon)
    nearest = max(1, int(round(cells)))
    if abs(cells - nearest) > 1e-9:
        suggestion = 1.0 / (9.0 * nearest)
        raise ValueError(
            f"core-grid epsilon must make 1/(9*epsilon) an integer; "
            f"got {cells:.6g} for epsilon={epsilon!r}; "
            f"nearest valid epsilon is 1/{9 * nearest} = {suggestion!r}")
    return nearest


@dataclass(frozen=True)
class CoreGrid(JointDistribution):
    """Hard instance for feature-space discretization.

    [0, 1]^d splits into sub-hypercubes of side 9*epsilon; features fall
    uniformly on small central cores of side epsilon, and each core carries a
    construction-time fair coin fixing its season length at 1 - 4*epsilon or
    1 + 4*epsilon.  Distinct cores are >= 8*epsilon apart, so a 1-Lipschitz
    conditional law reveals nothing across cores.
    """

    epsilon: float
    d: int
    seed: int = 0
    family = "core_grid"

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0 / 9.0):
            raise ValueError("core-grid epsilon must lie in (0, 1/9]")
        if self.d < 1:
            raise ValueError("core grid needs at least one dimension")
        cells = _core_grid_cells(self.epsilon)
        coins = stream(self.seed, _COIN_TAG).integers(0, 2, size=cells ** self.d)
        object.__setattr__(self, "_cells", cells)
        object.__setattr__(self, "_coins", coins)

    @property
    def dim(self) -> int:
        return self.d

    @property
    def n_cores(self) -> int:
        return int(self._cells ** self.d)

    @property
    def y_low(self) -> float:
        return 1.0 - 4.0 * self.epsilon

    @property
    def y_high(self) -> float:
        return 1.0 + 4.0 * self.epsilon

    def core_center(self, flat_index) -> np.ndarray:
        idx = np.unravel_index(np.asarray(flat_index), (self._cells,) * self.d)
        side = 9.0 * self.epsilon
        return np.stack([(i + 0.5) * side for i in idx], axis=-1)

    def core_season(self, flat_index) -> np.ndarray:
        return np.where(np.asarray(self._coins)[flat_index] == 1,
                        self.y_high, self.y_low)

    def core_index(self, x: np.ndarray) -> np.ndarray:
        """Flat core index per row, or -1 for points outside every core."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        side = 9.0 * self.epsilon
        cell = np.clip((x // side).astype(int), 0, self._cells - 1)
        centers = (cell + 0.5) * side
        inside = np.all(np.abs(x - centers) <= self.epsilon / 2.0 + 1e-12, axis=1)
        flat = np.ravel_multi_index(tuple(cell.T), (self._cells,) * self.d)
        return np.where(inside, flat, -1)

    def _draw(self, rng, n):
        core = rng.integers(0, self.n_cores, size=n)
        offset = rng.uniform(-self.epsilon / 2.0, self.epsilon / 2.0,
                             size=(n, self.d))
        x = self.core_center(core) + offset
        return SampleSet(x, self.core_season(core))

    def conditional_samples(self, x, m, rng):
        idx = self.core_index(x)
        if idx[0] < 0:
            raise ValueError("feature vector lies outside every core")
        return np.full(m, float(self.core_season(idx[0])))

    def exact_conditional(self, x):
        idx = self.core_index(x)
        if idx[0] < 0:
            return None
        return Empirical1D.point(float(self.core_season(idx[0])))

    def expected_ratio(self, theta):
        frac_high = float(np.mean(self._coins))
        return (frac_high * cost_ratio(theta, self.y_high)
                + (1.0 - frac_high) * cost_ratio(theta, self.y_low))

    def lipschitz_modulus(self):
        return 1.0

    def params(self):
        return {"epsilon": self.epsilon, "d": self.d}


def make_core_grid_lb(epsilon: float, d: int, seed: int = 0) -> CoreGrid:
    """Construct the core-grid lower-bound distribution (validates tiling)."""
    return CoreGrid(epsilon=epsilon, d=d, seed=seed)


def unseen_core_strategies(epsilon: float) -> dict:
    """Expected ratios of the two dominant strategies on an unseen core.

    With the core's coin unknown, buying immediately averages
    (1/(1-4e) + 1)/2 and renting throughout averages 1 + 2e; both are at
    least 1 + 2e, which is the certified floor per unseen core.
    """
    buy_now = 0.5 * (1.0 / (1.0 - 4.0 * epsilon) + 1.0)
    rent_always = 0.5 * (1.0 + (1.0 + 4.0 * epsilon))
    return {"buy_at_zero": buy_now, "rent_always": rent_always,
            "best": min(buy_now, rent_always)}


def make_noise_lb(p: float) -> Density:
    """Adversarial season-length density for noise rate p.

    Mass rises like y * exp(-y) on [0, sqrt(p)] with exact normalization
    1 / (1 - (1 + sqrt(p)) exp(-sqrt(p))).  The adversary plays this density
    with probability p and the true season otherwise; the composition is the
    ``NoiseLowerBound`` family.
    """
    if not (0.0 < p <= 0.5):
        raise ValueError(f"noise rate must lie in (0, 0.5], got {p!r}")
    return Density("truncated_gamma2", {"upper": math.sqrt(p)})


@dataclass(frozen=True)
class NoiseLowerBound(JointDistribution):
    """Season law no algorithm beats under noise rate p.

    With probability 1 - p the season is a long one (y_long > 1, the value a
    perfect classifier predicts); with probability p the adversary draws
    from the rising density on [0, sqrt(p)].
    """

    p: float
    y_long: float = 2.0
    seed: int = 0
    family = "noise_lower_bound"

    def __post_init__(self):
        if self.y_long <= 1.0:
            raise ValueError("the non-adversarial season must exceed 1")
        object.__setattr__(self, "_density", make_noise_lb(self.p))

    @property
    def density(self) -> Density:
        return self._density

    @property
    def dim(self) -> int:
        return 0

    def _draw(self, rng, n):
        flips = rng.random(n) < self.p
        y = np.full(n, self.y_long)
        k = int(np.sum(flips))
        if k:
            y[flips] = self._density.sample(rng, k)
        return SampleSet(np.zeros((n, 0)), y)

    def conditional_samples(self, x, m, rng):
        return self._draw(rng, m).y

    def expected_ratio(self, theta):
        lo, hi = self._density.support
        bp = [theta] if 0.0 < theta < hi else None
        adv, _ = integrate.quad(
            lambda z: cost_ratio(theta, z) * float(self._density.pdf(z)),
            0.0, hi, points=bp, epsabs=1e-9, limit=200)
        return (1.0 - self.p) * cost_ratio(theta, self.y_long) + self.p * adv

    def params(self):
        return {"p": self.p, "y_long": self.y_long}


@dataclass(frozen=True)
class NoisyChannel(JointDistribution):
    """Wraps a base distribution, corrupting each season independently.

    With probability ``p`` the drawn y is replaced by a uniformly chosen
    flip target.  Default targets sit just above a probe threshold and far
    out at 10, the two placements that hurt a two-level policy most.
    """

    base: JointDistribution
    p: float
    flip_targets: Optional[tuple] = None
    theta_probe: Optional[float] = None
    seed: int = 0
    family = "noisy_channel"

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"flip probability must lie in [0, 1], got {self.p!r}")
        targets = self.flip_targets
        if targets is None:
            if self.theta_probe is None:
                raise ValueError("provide flip_targets or theta_probe")
            targets = (self.theta_probe + 1e-3, 10.0)
        targets = tuple(float(t) for t in targets)
        if len(targets) == 0 or any(t < 0.0 or not math.isfinite(t) for t in targets):
            raise ValueError("flip targets must be nonnegative finite seasons")
        object.__setattr__(self, "flip_targets", targets)

    @property
    def dim(self) -> int:
        return self.base.dim

    def _corrupt(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        flips = rng.random(y.shape[0]) < self.p
        choice = rng.integers(0, len(self.flip_targets), size=y.shape[0])
        return np.where(flips, np.asarray(self.flip_targets)[choice], y)

    def _draw(self, rng, n):
        base = self.base._draw(rng, n)
        return SampleSet(base.x, self._corrupt(base.y, rng))

    def conditional_samples(self, x, m, rng):
        y = self.base.conditional_samples(x, m, rng)
        return self._corrupt(y, rng)

    def exact_conditional(self, x):
        base = self.base.exact_conditional(x)
        if base is None:
            return None
        values = np.concatenate([base.values, np.asarray(self.flip_targets)])
        share = self.p / len(self.flip_targets)
        weights = np.concatenate([base.weights * (1.0 - self.p),
                                  np.full(len(self.flip_targets), share)])
        return Empirical1D(values, weights)

    def expected_ratio(self, theta):
        base = self.base.expected_ratio(theta)
        if base is None:
            return None
        adv = float(np.mean([cost_ratio(theta, t) for t in self.flip_targets]))
        return (1.0 - self.p) * base + self.p * adv

    def lipschitz_modulus(self):
        return self.base.lipschitz_modulus()

    def params(self):
        return {"base": self.base.to_doc(), "p": self.p,
                "flip_targets": list(self.flip_targets)}


# ---------------------------------------------------------------------------
# Lipschitz verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzReport:
    """Outcome of the sampled conditional-EMD Lipschitz check."""

    max_ratio: float
    limit: float
    slack: float
    passed: bool
    n_pairs: int
    m_per_point: int


def verify_lipschitz(dist: JointDistribution, L: float, n_pairs: int = 50,
                     m_per_point: int = 200, seed: int = 0,
                     min_separation: float = 0.05) -> LipschitzReport:
    """Estimate max conditional EMD / feature distance over sampled pairs.

    Conditional EMDs come from m_per_point draws per feature, so the check
    is one-sided statistical: the pass limit is L * (1 + 2/sqrt(m_per_point)),
    and pairs closer than min_separation are skipped (their EMD sampling
    noise would swamp the signal after dividing by the gap).
    """
    if L <= 0.0:
        raise ValueError("Lipschitz modulus must be positive")
    rng = stream(seed, 0)
    xs = dist.sample(2 * n_pairs, seed=seed, block=1).x
    max_ratio = 0.0
    for i in range(n_pairs):
        x1, x2 = xs[2 * i], xs[2 * i + 1]
        gap = float(np.linalg.norm(x1 - x2))
        if gap < max(min_separation, 1e-12):
            continue
        d1 = Empirical1D.from_samples(dist.conditional_samples(x1, m_per_point, rng))
        d2 = Empirical1D.from_samples(dist.conditional_samples(x2, m_per_point, rng))
        max_ratio = max(max_ratio, emd_1d(d1, d2) / gap)
    slack = 2.0 / math.sqrt(m_per_point)
    limit = L * (1.0 + slack)
    return LipschitzReport(max_ratio=max_ratio, limit=limit, slack=slack,
                           passed=max_ratio <= limit, n_pairs=n_pairs,
                           m_per_point=m_per_point)


# ---------------------------------------------------------------------------
# Serialization registry
# ---------------------------------------------------------------------------

_FAMILIES = {
    "point_mass": PointMass,
    "finite_mixture": FiniteMixture,
    "deterministic_linear": DeterministicLinear,
    "lipschitz_uniform": LipschitzUniform,
    "core_grid": CoreGrid,
    "noise_lower_bound": NoiseLowerBound,
    "noisy_channel": NoisyChannel,
}


def from_doc(doc: dict) -> JointDistribution:
    """Rebuild a distribution from its serialized document."""
    family = doc.get("family")
    if family not in _FAMILIES:
        raise ValueError(f"unknown distribution family {family!r}")
    params = dict(doc.get("params", {}))
    seed = int(doc.get("seed", 0))
    cls = _FAMILIES[family]
    if family == "finite_mixture":
        return cls(values=tuple(params["values"]), weights=tuple(params["weights"]),
                   seed=seed)
    if family in ("deterministic_linear", "lipschitz_uniform"):
        params["coef"] = tuple(params["coef"])
        return cls(seed=seed, **params)
    if family == "noisy_channel":
        base = from_doc(params.pop("base"))
        params["flip_targets"] = tuple(params["flip_targets"])
        return cls(base=base, seed=seed, **params)
    return cls(seed=seed, **params)


def from_json(text: str) -> JointDistribution:
    return from_doc(json.loads(text))
