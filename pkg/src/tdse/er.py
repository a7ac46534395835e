"""Evidential reasoning (ER) fusion of the per-provider classifiers.

Each provider is one piece of evidence on the frame {Up, Down}. Evidence i
with weight w, reliability r and belief (p_up, p_down) is turned into masses

    m(Up) = w * p_up,  m(Down) = w * p_down,  m(Theta) = w * (1 - p_up - p_down),
    m(P)  = 1 - r      (support left unassigned because of unreliability)

and pieces are combined pairwise:

    m(A) = sum_{B & C = A} m1(B) m2(C) + m1(A) m2(P) + m1(P) m2(A)
    m(P) = m1(P) m2(P)

Conflicting products (Up & Down) are discarded by renormalising. The final
probability is the singleton mass renormalised over {Up, Down}, i.e. the
global-ignorance mass is shared out proportionally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyEvidenceList, EmptyValidation, InvalidMass

UP, DOWN, THETA, RESID = range(4)


@dataclass(frozen=True)
class ProbabilityPair:
    up: float
    down: float

    def __post_init__(self):
        if abs(self.up + self.down - 1.0) > 1e-9 or min(self.up, self.down) < -1e-12:
            raise InvalidMass(f"not a probability pair: {self.up}, {self.down}")


@dataclass(frozen=True)
class Evidence:
    belief_up: float
    belief_down: float
    weight: float = 1.0
    reliability: float = 1.0

    def __post_init__(self):
        vals = (self.belief_up, self.belief_down, self.weight, self.reliability)
        if not all(np.isfinite(vals)) or min(vals) < 0 or max(vals) > 1 + 1e-12:
            raise InvalidMass(f"evidence values must lie in [0, 1]: {vals}")
        if self.belief_up + self.belief_down > 1 + 1e-9:
            raise InvalidMass(f"belief mass exceeds 1: {self.belief_up + self.belief_down}")


def _masses(up, down, weight, reliability) -> np.ndarray:
    """Stack (..., 4) masses for Up, Down, Theta, residual."""
    up, down = np.broadcast_arrays(np.asarray(up, dtype=float), np.asarray(down, dtype=float))
    theta = np.clip(1.0 - up - down, 0.0, None)
    return np.stack([weight * up, weight * down, weight * theta,
                     np.full(up.shape, 1.0 - reliability)], axis=-1)


def _combine(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    u1, d1, t1, p1 = np.moveaxis(m1, -1, 0)
    u2, d2, t2, p2 = np.moveaxis(m2, -1, 0)
    up = u1 * u2 + u1 * t2 + t1 * u2 + u1 * p2 + p1 * u2
    down = d1 * d2 + d1 * t2 + t1 * d2 + d1 * p2 + p1 * d2
    theta = t1 * t2 + t1 * p2 + p1 * t2
    resid = p1 * p2
    out = np.stack([up, down, theta, resid], axis=-1)
    total = out.sum(axis=-1, keepdims=True)
    return np.divide(out, total, out=np.zeros_like(out), where=total > 0)


def _fused(masses: Sequence[np.ndarray]) -> np.ndarray:
    acc = masses[0]
    total = acc.sum(axis=-1, keepdims=True)
    acc = np.divide(acc, total, out=np.zeros_like(acc), where=total > 0)
    for m in masses[1:]:
        acc = _combine(acc, m)
    return acc


def _singletons(acc: np.ndarray, outcome: int) -> np.ndarray:
    single = acc[..., UP] + acc[..., DOWN]
    return np.where(single > 0, acc[..., outcome] / np.where(single > 0, single, 1.0), 0.5)


def er_combine_masses(masses: Sequence[np.ndarray]) -> np.ndarray:
    """Recursive combination of mass arrays (..., 4); returns P(Up) (...)."""
    return _singletons(_fused(masses), UP)


def er_combine(evidence: Sequence[Evidence]) -> ProbabilityPair:
    if not evidence:
        raise EmptyEvidenceList("er_combine needs at least one evidence")
    masses = [_masses(e.belief_up, e.belief_down, e.weight, e.reliability) for e in evidence]
    acc = _fused(masses)
    return ProbabilityPair(float(_singletons(acc, UP)), float(_singletons(acc, DOWN)))


def effective_weights(weights: Sequence[float], reliabilities: Sequence[float]) -> np.ndarray:
    """w_hat_i = r_i * w_i / max_j w_j, used as both weight and reliability.

    Scaling by the largest weight keeps the strongest provider's discount
    governed by its reliability alone, and r_i -> 0 makes evidence i neutral.
    """
    w = np.asarray(weights, dtype=float)
    r = np.asarray(reliabilities, dtype=float)
    if np.any(w < 0) or np.any((r < 0) | (r > 1)):
        raise InvalidMass("weights must be >= 0 and reliabilities in [0, 1]")
    top = w.max() if w.size and w.max() > 0 else 1.0
    return np.clip(r * w / top, 0.0, 1.0)


def fuse_providers(provider_up: Mapping[str, np.ndarray], weights: Mapping[str, float] | None = None,
                   reliabilities: Mapping[str, float] | None = None) -> np.ndarray:
    """Per-sample ER fusion of the providers' P(Up) arrays; returns (N, 2) [down, up].

    Providers are combined in name order; the result does not depend on it.
    """
    names = sorted(provider_up)
    if not names:
        raise EmptyEvidenceList("no provider outputs to fuse")
    w = [1.0 / len(names) if weights is None else weights[n] for n in names]
    r = [1.0 if reliabilities is None else reliabilities[n] for n in names]
    eff = effective_weights(w, r)
    masses = []
    for name, e in zip(names, eff):
        up = np.asarray(provider_up[name], dtype=float)
        if np.any((up < -1e-12) | (up > 1 + 1e-12)):
            raise InvalidMass(f"{name}: probabilities outside [0, 1]")
        masses.append(_masses(np.clip(up, 0, 1), np.clip(1 - up, 0, 1), e, e))
    up = er_combine_masses(masses)
    return np.stack([1.0 - up, up], axis=-1)


def estimate_reliability(y_true, y_pred, lo: float = 0.05, hi: float = 0.95) -> float:
    """Validation accuracy clipped to [lo, hi]."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise EmptyValidation("reliability needs a non-empty validation segment")
    return float(np.clip(np.mean(y_true == y_pred), lo, hi))
