"""Loss smoothing and weighted aggregation of shared parameter blocks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ShapeMismatchError


@dataclass
class LossReport:
    """What one coreset member hands back after its local work."""

    member: int
    loss_start: float
    loss_end: float
    smoothed: float


def smooth_loss(loss_end: float, loss_start: float, gamma: float) -> float:
    """Convex blend leaning on the pre-update loss by weight `gamma`."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return (1.0 - gamma) * loss_end + gamma * loss_start


def boltzmann_weights(losses: dict[int, float], t_agg: float = 1.0) -> dict[int, float]:
    """Softmin of reported losses: weight_j = exp(-loss_j / T) / sum.

    Lower loss earns a larger weight; T -> inf flattens toward uniform.
    """
    if t_agg <= 0:
        raise ValueError(f"t_agg must be > 0, got {t_agg}")
    if not losses:
        raise ValueError("no loss reports to weight")
    for j, l in losses.items():
        if not math.isfinite(l):
            raise ValueError(f"diverged: non-finite loss report from member {j}")
    ids = sorted(losses)
    z = np.array([-losses[j] / t_agg for j in ids])
    z -= z.max()
    e = np.exp(z)
    e /= e.sum()
    return {j: float(w) for j, w in zip(ids, e)}


def uniform_weights(members: set[int] | list[int]) -> dict[int, float]:
    ids = sorted(members)
    if not ids:
        raise ValueError("no members to weight")
    w = 1.0 / len(ids)
    return {j: w for j in ids}


def aggregate(blocks: dict[int, np.ndarray], weights: dict[int, float]) -> np.ndarray:
    """Weighted average of equal-length parameter blocks.

    Member sets must match exactly, weights must sum to 1 within 1e-9, and
    accumulation runs in ascending member order so the result does not depend
    on dict insertion order.
    """
    if set(blocks) != set(weights):
        raise ShapeMismatchError(
            f"shape-mismatch: members {sorted(blocks)} vs weights {sorted(weights)}")
    if not blocks:
        raise ValueError("nothing to aggregate")
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {total}, expected 1")
    ids = sorted(blocks)
    first = np.asarray(blocks[ids[0]], dtype=np.float64).ravel()
    out = np.zeros_like(first)
    for j in ids:
        b = np.asarray(blocks[j], dtype=np.float64).ravel()
        if b.shape != first.shape:
            raise ShapeMismatchError(
                f"shape-mismatch: block {j} has length {b.size}, expected {first.size}")
        out += weights[j] * b
    return out
