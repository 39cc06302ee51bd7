"""Binary classifiers consumed as black boxes by the policy fitters.

The only trainer is a margin perceptron over an optional fixed feature map:
on data separable with geometric margin gamma and radius R it reaches zero
training error within (R / gamma)^2 updates, which is all the downstream
policies require of their learner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .validation import check_labels


def label_from_season(y):
    """Long-season indicator: 1 iff y >= 1 (buying would have paid off)."""
    arr = np.asarray(y, dtype=float)
    out = (arr >= 1.0).astype(int)
    return int(out) if np.isscalar(y) or arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------


def _poly2(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    n, d = x.shape
    cross = [x[:, i] * x[:, j] for i in range(d) for j in range(i, d)]
    return np.column_stack([x] + cross) if cross else x


# name -> (map, expansion constant nu); nu bounds how much the map can
# shrink distances.  Both built-ins keep the identity coordinates, so nu = 1.
_FEATURE_MAPS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float]] = {
    "identity": (lambda x: np.atleast_2d(x), 1.0),
    "poly2": (_poly2, 1.0),
}


def register_feature_map(name: str, func: Callable[[np.ndarray], np.ndarray],
                         nu: float) -> None:
    """Register a user feature map with its declared (unverified) nu."""
    if nu <= 0.0:
        raise ValueError("expansion constant must be positive")
    _FEATURE_MAPS[name] = (func, float(nu))


def feature_map(name: str) -> Callable[[np.ndarray], np.ndarray]:
    if name not in _FEATURE_MAPS:
        raise ValueError(f"unknown feature map {name!r}")
    return _FEATURE_MAPS[name][0]


def feature_map_nu(name: str) -> float:
    if name not in _FEATURE_MAPS:
        raise ValueError(f"unknown feature map {name!r}")
    return _FEATURE_MAPS[name][1]


# ---------------------------------------------------------------------------
# Hypotheses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearHypothesis:
    """A linear separator, optionally after a named feature map.

    Predicts 1 when the linear form is >= 0; the closed boundary matches the
    y >= 1 -> label 1 convention.
    """

    weights: np.ndarray
    bias: float
    feature_map: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if np.linalg.norm(w) == 0.0:
            raise ValueError("hypothesis weights must be nonzero")
        object.__setattr__(self, "weights", w)

    def decision_function(self, x) -> np.ndarray:
        phi = feature_map(self.feature_map)(np.atleast_2d(np.asarray(x, dtype=float)))
        return phi @ self.weights + self.bias

    def predict(self, x) -> np.ndarray:
        return (self.decision_function(x) >= 0.0).astype(int)

    def geometric_margins(self, x) -> np.ndarray:
        return self.decision_function(x) / np.linalg.norm(self.weights)

    def to_doc(self) -> dict:
        return {"weights": [float(w) for w in self.weights],
                "bias": float(self.bias), "feature_map": self.feature_map}

    def to_json(self) -> str:
        return json.dumps(self.to_doc())

    @staticmethod
    def from_doc(doc: dict) -> "LinearHypothesis":
        return LinearHypothesis(np.asarray(doc["weights"], dtype=float),
                                float(doc["bias"]),
                                doc.get("feature_map", "identity"))

    @staticmethod
    def from_json(text: str) -> "LinearHypothesis":
        return LinearHypothesis.from_doc(json.loads(text))


@dataclass(frozen=True)
class ErrorReport:
    """Asymmetric holdout error rates of a hypothesis.

    alpha counts missed long seasons (predict 0, label 1), beta counts
    false longs (predict 1, label 0); overall is their sum.
    """

    alpha: float
    beta: float
    overall: float


@dataclass(frozen=True)
class TrainResult:
    hypothesis: LinearHypothesis
    zero_training_error: bool
    n_updates: int
    train_margin: float


def train_margin_linear(x, labels, margin_target: float = 0.0,
                        max_epochs: int = 1000,
                        feature_map_name: str = "identity") -> TrainResult:
    """Perceptron with an optional functional-margin target.

    Iterates the data in fixed order, updating on prediction mistakes (or,
    for margin_target > 0, on points whose geometric margin falls short).
    Single-class data converges immediately to a constant predictor.
    Returns the best-found hypothesis with a zero-training-error flag; on
    inseparable data the flag is False after max_epochs.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = check_labels(labels)
    if x.shape[0] == 0:
        raise ValueError("training data must be nonempty")
    if x.shape[0] != labels.shape[0]:
        raise ValueError("feature and label counts disagree")
    if margin_target < 0.0:
        raise ValueError("margin target must be nonnegative")

    phi = feature_map(feature_map_name)(x)
    sign = 2.0 * labels - 1.0
    w = np.zeros(phi.shape[1])
    b = 0.0
    n_updates = 0
    # Pocket: inseparable data makes the iterates oscillate, so keep the
    # best hypothesis seen at any epoch boundary.
    best_w, best_b = w, b
    best_wrong = np.inf

    stall_cap = 32
    cursor = 0
    for _ in range(max_epochs):
        scores = phi @ w + b
        wrong = int(np.sum(((scores >= 0.0).astype(int)) != labels))
        if wrong < best_wrong and np.linalg.norm(w) > 0.0:
            best_w, best_b, best_wrong = w, b, wrong
        norm = np.linalg.norm(w)
        if margin_target > 0.0 and norm > 0.0:
            violating = np.flatnonzero(sign * scores <= margin_target * norm)
        else:
            violating = np.flatnonzero(((scores >= 0.0).astype(int)) != labels)
        if violating.size == 0:
            break
        # Walk the violators round-robin (continuing past the last update,
        # as the classical cyclic scan does), re-checking each against the
        # current weights; once the stale list stops yielding updates,
        # refresh the scores instead of skipping through the rest.
        pos = int(np.searchsorted(violating, cursor, side="right"))
        order = np.concatenate([violating[pos:], violating[:pos]])
        stale_skips = 0
        for i in order:
            s_i = float(phi[i] @ w + b)
            norm = np.linalg.norm(w)
            if margin_target > 0.0 and norm > 0.0:
                bad = sign[i] * s_i <= margin_target * norm
            else:
                bad = (1 if s_i >= 0.0 else 0) != labels[i]
            if bad:
                w = w + sign[i] * phi[i]
                b = b + sign[i]
                n_updates += 1
                stale_skips = 0
                cursor = int(i)
            else:
                stale_skips += 1
                if stale_skips > stall_cap:
                    break

    final_wrong = int(np.sum((((phi @ w + b) >= 0.0).astype(int)) != labels))
    if final_wrong > best_wrong:
        w, b = best_w, best_b

    if np.linalg.norm(w) == 0.0:
        # No update ever fired: all-ones data is predicted correctly by a
        # constant.  Orient a degenerate separator accordingly.
        if phi.shape[1] == 0:
            raise ValueError("cannot train on zero-dimensional features")
        w = np.zeros(phi.shape[1])
        w[0] = 1e-12
        b = 1.0 if labels[0] == 1 else -1.0

    hypothesis = LinearHypothesis(w, b, feature_map_name)
    preds = hypothesis.predict(x)
    zero_err = bool(np.all(preds == labels))
    margins = sign * hypothesis.geometric_margins(x)
    return TrainResult(hypothesis=hypothesis, zero_training_error=zero_err,
                       n_updates=n_updates, train_margin=float(np.min(margins)))


def center_bias(hypothesis: LinearHypothesis, x, labels) -> LinearHypothesis:
    """Shift the bias to the midpoint of the class gap along the weights.

    Leaves predictions on separated training data unchanged while maximizing
    the geometric margin achievable in the learned direction.  Data that is
    not separated along the direction (or single-class data) is returned
    with the original bias.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = check_labels(labels)
    phi = feature_map(hypothesis.feature_map)(x)
    scores = phi @ hypothesis.weights
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return hypothesis
    lo, hi = float(np.max(neg)), float(np.min(pos))
    if lo >= hi:
        return hypothesis
    return replace(hypothesis, bias=-(lo + hi) / 2.0)


def measure_errors(hypothesis: LinearHypothesis, x, labels) -> ErrorReport:
    """Asymmetric error rates of a hypothesis on a holdout set."""
    labels = check_labels(labels)
    if labels.shape[0] == 0:
        raise ValueError("holdout must be nonempty")
    preds = hypothesis.predict(x)
    alpha = float(np.sum((preds == 0) & (labels == 1))) / labels.shape[0]
    beta = float(np.sum((preds == 1) & (labels == 0))) / labels.shape[0]
    return ErrorReport(alpha=alpha, beta=beta, overall=alpha + beta)


def vc_dim_margin(radius: float, alpha: float, d: int) -> float:
    """Capacity bound for separators with geometric margin alpha:
    min(radius^2 / alpha^2, d) + 1."""
    if radius <= 0.0 or alpha <= 0.0 or d < 1:
        raise ValueError("radius, margin, and dimension must be positive")
    return min(radius ** 2 / alpha ** 2, float(d)) + 1.0
