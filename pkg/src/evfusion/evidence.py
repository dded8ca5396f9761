"""Subjective-logic opinions over H classes.

Evidence ``e`` parameterises a Dirichlet with ``alpha = e + 1``. The opinion
assigns belief ``b_h = e_h / S`` to every class and keeps the residual
``u = H / S`` as uncertainty, where ``S = sum(alpha)``. Two opinions from
different sensors are merged with Dempster's rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateOpinionError,
    DimensionError,
    InvalidEvidenceError,
    TotalConflictError,
)

CONFLICT_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Opinion:
    belief: np.ndarray
    uncertainty: float
    alpha: np.ndarray
    strength: float

    @property
    def num_classes(self) -> int:
        return int(self.belief.shape[0])

    @property
    def label(self) -> int:
        return int(np.argmax(self.belief))

    def evidence(self) -> np.ndarray:
        return evidence_from_opinion(self)

    @classmethod
    def vacuous(cls, num_classes: int) -> "Opinion":
        return opinion_from_evidence(np.zeros(num_classes), num_classes)

    @classmethod
    def from_belief(cls, belief, uncertainty: float) -> "Opinion":
        """Build an opinion from masses directly (``alpha`` and ``S`` derived)."""
        belief = np.array(belief, dtype=np.float64)
        belief.setflags(write=False)
        if belief.ndim != 1 or belief.shape[0] < 2:
            raise DimensionError("belief must be a vector with at least 2 classes")
        uncertainty = float(uncertainty)
        if not 0.0 < uncertainty <= 1.0:
            raise DegenerateOpinionError(f"uncertainty must lie in (0, 1], got {uncertainty}")
        strength = belief.shape[0] / uncertainty
        alpha = belief * strength + 1.0
        alpha.setflags(write=False)
        return cls(belief, uncertainty, alpha, strength)

    def __repr__(self):
        b = ", ".join(f"{v:.4g}" for v in self.belief)
        return f"Opinion(belief=[{b}], uncertainty={self.uncertainty:.4g})"


def _check_evidence(e, num_classes):
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1 or e.shape[0] != num_classes:
        raise DimensionError(f"expected evidence of length {num_classes}, got shape {e.shape}")
    if not np.all(np.isfinite(e)):
        raise InvalidEvidenceError("evidence must be finite")
    if np.any(e < 0):
        raise InvalidEvidenceError("evidence must be non-negative")
    return e


def opinion_from_evidence(e, num_classes: int | None = None) -> Opinion:
    """Convert a non-negative evidence vector into a Dirichlet opinion.

    >>> round(opinion_from_evidence([22.29, 0.01, 0.01]).uncertainty, 4)
    0.1185
    """
    if num_classes is None:
        num_classes = len(e)
    if num_classes < 2:
        raise DimensionError("at least two classes are required")
    e = _check_evidence(e, num_classes)
    alpha = e + 1.0
    strength = float(alpha.sum())
    belief = e / strength
    belief.setflags(write=False)
    alpha.setflags(write=False)
    return Opinion(belief, num_classes / strength, alpha, strength)


def conflict(a: Opinion, b: Opinion) -> float:
    """Belief mass the two opinions assign to differing classes."""
    if a.num_classes != b.num_classes:
        raise DimensionError(f"class count mismatch: {a.num_classes} vs {b.num_classes}")
    return float(a.belief.sum() * b.belief.sum() - np.dot(a.belief, b.belief))


def combine_opinions(a: Opinion, b: Opinion) -> Opinion:
    """Dempster's combination of two opinions over the same classes.

    Raises
    ------
    TotalConflictError
        If the conflict is within ``1e-12`` of one.
    """
    c = conflict(a, b)
    scale = 1.0 - c
    if scale <= CONFLICT_EPS:
        raise TotalConflictError(f"total conflict between opinions (C={c})")
    belief = (a.belief * b.belief + a.belief * b.uncertainty + b.belief * a.uncertainty) / scale
    uncertainty = a.uncertainty * b.uncertainty / scale
    h = a.num_classes
    strength = h / uncertainty
    alpha = belief * strength + 1.0
    belief.setflags(write=False)
    alpha.setflags(write=False)
    return Opinion(belief, uncertainty, alpha, strength)


def evidence_from_opinion(o: Opinion) -> np.ndarray:
    if o.uncertainty <= 0.0:
        raise DegenerateOpinionError("opinion with zero uncertainty has unbounded evidence")
    return o.belief * (o.num_classes / o.uncertainty)
