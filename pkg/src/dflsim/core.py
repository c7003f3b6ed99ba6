"""Shared domain types, error taxonomy, and deterministic RNG plumbing."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterator

import numpy as np

log = logging.getLogger("dflsim")

# Vectors with a norm below this are treated as degenerate: an untrained or
# converged model can emit an all-zero gradient, and similarity against it is
# defined as neutral (0) rather than NaN.
DEGENERATE_NORM = 1e-12


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    """A bad or missing configuration value. ``key`` names the offender."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class PartitionError(RuntimeError):
    """A partition protocol could not satisfy its feasibility floor."""


class DataFormatError(ValueError):
    """A dataset file failed to parse; the message names the line."""


class ShapeMismatchError(ValueError):
    """Operands disagree on shape or on participant sets."""


class DivergedError(RuntimeError):
    """A parameter or loss value left the finite range."""

    def __init__(self, where: str, round_index: int | None = None):
        self.where = where
        self.round_index = round_index
        at = f" at round {round_index}" if round_index is not None else ""
        super().__init__(f"diverged: non-finite values in {where}{at}")


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------
# Every random draw in the simulator comes from a generator created by
# `substream(seed, *key)`. Streams are identified by integer key tuples, so a
# consumer never shares generator state with another consumer and the order in
# which work is scheduled cannot change what any one stream produces.

def seeded_rng(seed: int) -> np.random.Generator:
    """Root generator for a run."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream identified by `key` under `seed`."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def stream_seed(seed: int, *key: int) -> int:
    """Collapse a stream key into a plain integer seed (for per-client seeds)."""
    return int(substream(seed, *key).integers(0, 2**63 - 1))


# ---------------------------------------------------------------------------
# parameters and similarity
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    """Two-block parameter vector: shared featurizer `w`, personal head `beta`."""

    w: np.ndarray
    beta: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(self.w.copy(), self.beta.copy())


def check_finite(params: ModelParams, where: str, round_index: int | None = None) -> None:
    """Raise DivergedError if either block contains a non-finite value."""
    if not np.all(np.isfinite(params.w)) or not np.all(np.isfinite(params.beta)):
        raise DivergedError(where, round_index)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; degenerate inputs score 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape-mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        log.debug("degenerate-proxy: norm below %g, similarity set to 0", DEGENERATE_NORM)
        return 0.0
    s = float(np.dot(a, b) / (na * nb))
    # guard against rounding drift outside the closed interval
    return max(-1.0, min(1.0, s))


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

@dataclass
class Topology:
    """Undirected communication graph plus an optional availability rule.

    `adjacency` is a symmetric boolean matrix with a zero diagonal. The
    availability callable takes (client, round) and may hide a client for a
    round without changing the underlying graph.
    """

    adjacency: np.ndarray
    availability: Callable[[int, int], bool] | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeMismatchError("shape-mismatch: adjacency must be square")
        if np.any(np.diag(a)):
            raise ValueError("adjacency diagonal must be zero")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        self.adjacency = a

    @property
    def m(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def available_neighbors(self, i: int, t: int) -> list[int]:
        """Neighbors of i reachable in round t, in ascending id order."""
        out = self.neighbors(i)
        if self.availability is not None:
            out = [j for j in out if self.availability(j, t)]
        return out


def fully_connected(m: int) -> Topology:
    a = np.ones((m, m), dtype=bool)
    np.fill_diagonal(a, False)
    return Topology(a)


def partially_connected(m: int, density: float, rng: np.random.Generator) -> Topology:
    """Random symmetric graph; each unordered pair is an edge w.p. `density`."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    a = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < density:
                a[i, j] = a[j, i] = True
    return Topology(a)


def topology_from_edges(m: int, edges: list[tuple[int, int]]) -> Topology:
    a = np.zeros((m, m), dtype=bool)
    for i, j in edges:
        if i == j:
            raise ValueError("self edges are not allowed")
        a[i, j] = a[j, i] = True
    return Topology(a)


# ---------------------------------------------------------------------------
# per-client state and round records
# ---------------------------------------------------------------------------

@dataclass
class ClientState:
    """Everything a client carries between rounds.

    `prob_row` and `sim_row` are keyed by neighbor id and describe the
    sampling distribution computed at the end of the previous round (they are
    one round stale by construction). `threshold` and `confidence` follow the
    same convention. Before the first round the row is uniform and the
    confidence is neutral (0.5).
    """

    id: int
    params: ModelParams
    proxy: np.ndarray | None = None
    loss_smoothed: float = 0.0
    threshold: float = 0.0
    confidence: float = 0.5
    prob_row: dict[int, float] = field(default_factory=dict)
    sim_row: dict[int, float] = field(default_factory=dict)


@dataclass
class ClientPlan:
    """Record of one client's collaboration decisions in one round."""

    client: int
    coreset: set[int]
    sims: dict[int, float]
    probs: dict[int, float]
    agg_weights: dict[int, float]
    confidence: float
    threshold: float
    restricted: dict[int, float] = field(default_factory=dict)


@dataclass
class RoundPlan:
    """All clients' collaboration records for one round."""

    round_index: int
    clients: dict[int, ClientPlan] = field(default_factory=dict)

    def audit_rows(self) -> Iterator[tuple]:
        """Yield (round, client, neighbor, sim, prob, selected, weight) rows."""
        for i in sorted(self.clients):
            p = self.clients[i]
            others = set(p.sims) | set(p.probs) | (p.coreset - {i})
            for j in sorted(others):
                yield (
                    self.round_index, i, j,
                    p.sims.get(j, float("nan")),
                    p.probs.get(j, float("nan")),
                    int(j in p.coreset),
                    p.agg_weights.get(j, 0.0),
                )
            # self row carries the self-aggregation weight
            yield (self.round_index, i, i, float("nan"), float("nan"),
                   int(i in p.coreset), p.agg_weights.get(i, 0.0))


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Flat configuration for a run; sections map onto the module layout."""

    # experiment
    m: int = 8
    rounds: int = 20
    seed: int = 0
    algorithm: str = "afind_plus"
    out_dir: str = "runs"
    # data
    dataset: str = "synthetic"          # "synthetic" or "csv:<path>"
    partition: str = "cluster:2"        # dirichlet:<a> | pathological:<c> | iid | cluster:<k>
    num_classes: int = 8
    d_in: int = 20
    n_per_client: int = 100
    class_scale: float = 3.0
    sep: float = 3.0
    cluster_mode: str = "label_permutation"   # or "mean_shift"
    feature_noise: float = 1.0
    min_per_client: int = 10
    test_frac: float = 0.2
    # model
    d_hidden: int = 16
    k_w: int = 5
    k_beta: int = 5
    eta_w: float = 0.05
    eta_beta: float = 0.05
    momentum: float = 0.0
    batch_size: int = 32
    eval_batch: int = 32
    # collaboration
    tau: float = 0.5
    upsilon: float = 0.1
    theta_override: float | None = None
    # aggregation
    gamma: float = 0.9
    t_agg: float = 1.0
    loss_ema: bool = False
    # engine
    topology: str = "full"              # "full" or "partial:<density>"
    share_once: bool = False
    max_coreset: int | None = None
    noise_sigma2: float | None = None
    noise_clip: float = 10.0
    noise_batch: int | None = None

    def validate(self) -> None:
        if self.m < 1:
            raise ConfigError("experiment.m", "need at least one client")
        if self.rounds < 0:
            raise ConfigError("experiment.rounds", "must be >= 0")
        if self.num_classes < 2:
            raise ConfigError("data.num_classes", "need at least two classes")
        if self.d_in < 1:
            raise ConfigError("data.d_in", "must be >= 1")
        if not 0.0 < self.test_frac < 1.0:
            raise ConfigError("data.test_frac", "must lie in (0, 1)")
        if self.d_hidden < 1:
            raise ConfigError("model.d_hidden", "must be >= 1")
        if self.k_w < 0 or self.k_beta < 0:
            raise ConfigError("model.k_w", "step counts must be >= 0")
        if self.eta_w <= 0 or self.eta_beta <= 0:
            raise ConfigError("model.eta_w", "learning rates must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("model.momentum", "must lie in [0, 1)")
        if self.batch_size < 1 or self.eval_batch < 1:
            raise ConfigError("model.batch_size", "batch sizes must be >= 1")
        if self.tau <= 0:
            raise ConfigError("collaboration.tau", "must be > 0")
        if self.upsilon <= 0:
            raise ConfigError("collaboration.upsilon", "must be > 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("aggregation.gamma", "must lie in [0, 1]")
        if self.t_agg <= 0:
            raise ConfigError("aggregation.t_agg", "must be > 0")
        if self.noise_sigma2 is not None and self.noise_sigma2 < 0:
            raise ConfigError("engine.noise_sigma2", "must be >= 0")
        if self.noise_clip <= 0:
            raise ConfigError("engine.noise_clip", "must be > 0")
        if self.noise_batch is not None and self.noise_batch < 1:
            raise ConfigError("engine.noise_batch", "must be >= 1")
        if self.max_coreset is not None and self.max_coreset < 1:
            raise ConfigError("engine.max_coreset", "must be >= 1")

    def as_flat_dict(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def run_id(self) -> str:
        """Short stable id over config contents and seed."""
        blob = repr(sorted(self.as_flat_dict().items())).encode()
        return hashlib.sha256(blob).hexdigest()[:12]
