"""Neighbor scoring: sampling probabilities, adaptive thresholds, coresets.

All maps are keyed by neighbor id. A client's own id never appears in its
similarity or probability rows; selection adds the client itself to the
coreset unconditionally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ShapeMismatchError


@dataclass
class SimilarityRow:
    """One client's view of its reachable neighbors."""

    owner: int
    sims: dict[int, float]

    def refined(self) -> dict[int, float]:
        """Affine rescale of cosine values from [-1, 1] onto [0, 1]."""
        return {j: (s + 1.0) / 2.0 for j, s in self.sims.items()}


def sampling_probs(sims: dict[int, float], upsilon: float) -> dict[int, float]:
    """Temperature softmax over similarity scores.

    Lower `upsilon` sharpens the distribution toward the most similar
    neighbors; the result sums to 1 over the given neighbor set. An empty
    row maps to an empty row.
    """
    if upsilon <= 0:
        raise ValueError(f"upsilon must be > 0, got {upsilon}")
    if not sims:
        return {}
    ids = sorted(sims)
    z = np.array([sims[j] / upsilon for j in ids])
    z -= z.max()
    e = np.exp(z)
    e /= e.sum()
    return {j: float(p) for j, p in zip(ids, e)}


def restricted_probs(sims: dict[int, float], upsilon: float,
                     coreset: set[int], owner: int) -> dict[int, float]:
    """Post-selection distribution over the chosen neighbors.

    The full-row softmax mass of the unselected neighbors is removed: the
    selected neighbors are re-normalized among themselves and scaled by
    (1 - unselected mass), so the restricted row sums to exactly the mass
    the selection retained.
    """
    full = sampling_probs(sims, upsilon)
    chosen = sorted(j for j in coreset if j != owner and j in full)
    if not chosen:
        return {}
    kept = 1.0 - sum(p for j, p in full.items() if j not in coreset)
    inner = sampling_probs({j: sims[j] for j in chosen}, upsilon)
    return {j: inner[j] * kept for j in chosen}


def entropy_score(refined: dict[int, float]) -> float:
    """Shannon-style dispersion of the refined similarity row (natural log).

    The row is used as-is, without normalizing to a distribution, so the
    score grows with both the spread and the count of neighbors. Endpoint
    values 0 and 1 contribute 0, matching the x*ln(x) limit.
    """
    h = 0.0
    for e in refined.values():
        if not 0.0 <= e <= 1.0:
            raise ValueError(f"refined similarity {e} outside [0, 1]")
        if 0.0 < e < 1.0:
            h -= e * math.log(e)
    return h


def confidence(h: float) -> float:
    """Map the dispersion score through a flipped sigmoid onto (0, 1].

    Zero dispersion (no neighbors, or all similarities pinned at the
    endpoints) gives 0.5; large dispersion drives confidence toward 0.
    """
    if h < 0:
        raise ValueError(f"dispersion must be >= 0, got {h}")
    # 1 - sigmoid(h), computed in the stable direction
    return 1.0 / (1.0 + math.exp(h))


def threshold(tau: float, conf: float) -> float:
    """Participation bar: the ceiling `tau` scaled by current confidence."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    return tau * conf


def select_coreset(probs: dict[int, float], theta: float, owner: int) -> set[int]:
    """Neighbors whose sampling probability clears the bar, plus the owner."""
    chosen = {j for j, p in probs.items() if p >= theta}
    chosen.discard(owner)
    chosen.add(owner)
    return chosen


def top_k_by_sim(sims: dict[int, float], k: int) -> set[int]:
    """The k most similar neighbor ids; ties go to the lower id."""
    ranked = sorted(sims.items(), key=lambda kv: (-kv[1], kv[0]))
    return {j for j, _ in ranked[:k]}


def coreset_oracle(grads: dict[int, np.ndarray], target: int, budget: int) -> set[int]:
    """Reference selector: the `budget` neighbors whose gradients sit closest
    to the target's in Euclidean distance (ties to the lower id). Used to
    sanity-check that similarity-driven selection tracks gradient proximity.
    """
    if target not in grads:
        raise KeyError(f"target {target} missing from gradient table")
    g0 = np.asarray(grads[target], dtype=np.float64).ravel()
    cand = []
    for j in sorted(grads):
        if j == target:
            continue
        gj = np.asarray(grads[j], dtype=np.float64).ravel()
        if gj.shape != g0.shape:
            raise ShapeMismatchError(f"shape-mismatch: gradient {j} has shape {gj.shape}")
        cand.append((float(np.sum((g0 - gj) ** 2)), j))
    if budget > len(cand):
        raise ValueError(f"budget {budget} exceeds {len(cand)} candidates")
    cand.sort()
    return {j for _, j in cand[:budget]}
