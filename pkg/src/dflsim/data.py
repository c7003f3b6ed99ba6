"""Datasets, non-IID partition protocols, and dataset file I/O."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .core import DataFormatError, PartitionError

log = logging.getLogger("dflsim")

MAX_PARTITION_RETRIES = 100


@dataclass
class Dataset:
    """Dense labeled examples. Labels are contiguous ints in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    label_map: dict | None = None   # original label -> contiguous id, set by load_csv

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) == 0:
            raise DataFormatError("empty-dataset")
        if len(self.features) != len(self.labels):
            raise DataFormatError(
                f"features/labels length mismatch: {len(self.features)} vs {len(self.labels)}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataFormatError("labels out of range for num_classes")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.label_map)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def synthetic_dataset(n: int, d: int, num_classes: int, rng: np.random.Generator,
                      class_scale: float = 3.0, noise: float = 1.0) -> Dataset:
    """Gaussian mixture with one spherical component per class."""
    means = rng.normal(0.0, 1.0, (num_classes, d))
    means *= class_scale / np.sqrt(d)
    labels = np.repeat(np.arange(num_classes), -(-n // num_classes))[:n]
    rng.shuffle(labels)
    features = means[labels] + rng.normal(0.0, noise, (n, d))
    return Dataset(features, labels.astype(np.int64), num_classes)


def synthetic_clusters(k: int, m: int, d: int, n_per_client: int,
                       sep: float, rng: np.random.Generator,
                       mode: str = "label_permutation", num_classes: int = 8,
                       class_scale: float = 3.0, noise: float = 1.0):
    """Per-client datasets drawn from k latent client clusters.

    Client i belongs to cluster i % k. In "label_permutation" mode every
    cluster shares the same feature mixture but cluster j relabels component
    c as (c + j) % num_classes, so feature marginals are identical across
    clusters while the conditionals differ (with k=2 the labelings are
    swapped relative to each other). In "mean_shift" mode labels are shared
    and cluster j offsets all class means by a direction of norm `sep`;
    sep=0 makes the clusters identical in distribution.

    Returns (list of m Datasets, cluster id per client).
    """
    if mode not in ("label_permutation", "mean_shift"):
        raise ValueError(f"unknown cluster mode: {mode}")
    if k < 1 or k > m:
        raise PartitionError(f"infeasible-partition: need 1 <= k <= m, got k={k}, m={m}")
    means = rng.normal(0.0, 1.0, (num_classes, d)) * (class_scale / np.sqrt(d))
    if mode == "mean_shift":
        offsets = rng.normal(0.0, 1.0, (k, d))
        norms = np.linalg.norm(offsets, axis=1, keepdims=True)
        offsets = sep * offsets / np.maximum(norms, 1e-12)
    cluster_of = np.arange(m) % k
    shards = []
    for i in range(m):
        g = cluster_of[i]
        comp = np.repeat(np.arange(num_classes), -(-n_per_client // num_classes))[:n_per_client]
        rng.shuffle(comp)
        X = means[comp] + rng.normal(0.0, noise, (n_per_client, d))
        if mode == "mean_shift":
            X = X + offsets[g]
            y = comp
        else:
            y = (comp + g) % num_classes
        shards.append(Dataset(X, y.astype(np.int64), num_classes))
    return shards, cluster_of


# ---------------------------------------------------------------------------
# partition protocols
# ---------------------------------------------------------------------------

def iid_partition(ds: Dataset, m: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle and deal into m near-equal shards."""
    if len(ds) < m:
        raise PartitionError(f"infeasible-partition: {len(ds)} examples for {m} clients")
    idx = rng.permutation(len(ds))
    return [np.sort(part) for part in np.array_split(idx, m)]


def dirichlet_partition(ds: Dataset, m: int, alpha: float, rng: np.random.Generator,
                        min_per_client: int = 10) -> list[np.ndarray]:
    """Classwise Dirichlet split: for each class, client shares are drawn from
    Dir(alpha * 1_m) and the class's examples are dealt accordingly. Redraws
    everything when some client lands below `min_per_client`; gives up after
    a bounded number of attempts.
    """
    if alpha <= 0:
        raise PartitionError(f"infeasible-partition: alpha must be > 0, got {alpha}")
    if len(ds) < m * min_per_client:
        raise PartitionError(
            f"infeasible-partition: {len(ds)} examples cannot give {m} clients "
            f"{min_per_client} each")
    for _ in range(MAX_PARTITION_RETRIES):
        parts: list[list[np.ndarray]] = [[] for _ in range(m)]
        for c in range(ds.num_classes):
            members = np.flatnonzero(ds.labels == c)
            if len(members) == 0:
                continue
            members = members[rng.permutation(len(members))]
            props = rng.dirichlet(np.full(m, alpha))
            # largest-remainder rounding keeps the counts summing to the class size
            raw = props * len(members)
            counts = np.floor(raw).astype(int)
            short = len(members) - counts.sum()
            if short > 0:
                order = np.argsort(-(raw - counts), kind="stable")
                counts[order[:short]] += 1
            stop = np.cumsum(counts)
            start = stop - counts
            for i in range(m):
                parts[i].append(members[start[i]:stop[i]])
        shards = [np.sort(np.concatenate(p)) if p else np.empty(0, dtype=int) for p in parts]
        if all(len(s) >= min_per_client for s in shards):
            return shards
    raise PartitionError(
        f"infeasible-partition: could not give every client {min_per_client} "
        f"examples in {MAX_PARTITION_RETRIES} attempts")


def pathological_partition(ds: Dataset, m: int, classes_per_client: int,
                           rng: np.random.Generator) -> list[np.ndarray]:
    """Each client sees at most `classes_per_client` distinct labels.

    Class slots are dealt from a balanced deck of m * c tokens, so every class
    is claimed by roughly the same number of clients; a client never claims
    the same class twice. Each class's examples are then split evenly among
    its claimants. Impossible decks (m * c < num_classes) and empty shards
    raise; a client that ends up with fewer distinct classes than requested
    (class rarer than its claimants) is only logged.
    """
    c = classes_per_client
    if c < 1 or m * c < ds.num_classes:
        raise PartitionError(
            f"infeasible-partition: {m} clients x {c} classes cannot cover "
            f"{ds.num_classes} labels")
    deck = np.tile(np.arange(ds.num_classes), -(-m * c // ds.num_classes))[: m * c]
    for _ in range(MAX_PARTITION_RETRIES):
        rng.shuffle(deck)
        claims = [set() for _ in range(m)]
        ok = True
        for pos, tok in enumerate(deck):
            i = pos % m
            if tok in claims[i]:
                ok = False
                break
            claims[i].add(int(tok))
        if ok:
            break
    else:
        raise PartitionError(
            "infeasible-partition: could not deal distinct class slots "
            f"in {MAX_PARTITION_RETRIES} shuffles")
    parts: list[list[np.ndarray]] = [[] for _ in range(m)]
    for cls in range(ds.num_classes):
        claimants = sorted(i for i in range(m) if cls in claims[i])
        members = np.flatnonzero(ds.labels == cls)
        if not claimants:
            continue
        members = members[rng.permutation(len(members))]
        chunks = np.array_split(members, len(claimants))
        for i, chunk in zip(claimants, chunks):
            if len(chunk) == 0:
                log.warning("client %d claimed class %d but got no examples", i, cls)
            parts[i].append(chunk)
    shards = [np.sort(np.concatenate(p)) if p else np.empty(0, dtype=int) for p in parts]
    for i, s in enumerate(shards):
        if len(s) == 0:
            raise PartitionError(f"infeasible-partition: client {i} received no examples")
        got = len(np.unique(ds.labels[s]))
        if got < c:
            log.warning("client %d holds %d distinct classes, requested %d", i, got, c)
    return shards


def train_test_split(n: int, test_frac: float, rng: np.random.Generator):
    """Shuffled index split with at least one example on each side."""
    if n < 2:
        raise PartitionError("infeasible-partition: need at least 2 examples to split")
    idx = rng.permutation(n)
    n_test = min(max(1, int(round(n * test_frac))), n - 1)
    return np.sort(idx[n_test:]), np.sort(idx[:n_test])


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def load_csv(path: str) -> Dataset:
    """Read a dataset from CSV with header f0,...,f{d-1},label.

    Labels may be arbitrary integers; they are remapped to a contiguous range
    in sorted order and the mapping is kept on the Dataset.
    """
    rows = []
    labels = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"empty-dataset: {path}") from None
        d = len(header) - 1
        expected = [f"f{i}" for i in range(d)] + ["label"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise DataFormatError(
                f"parse-error at line 1: header must be f0,...,f{{d-1}},label")
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataFormatError(
                    f"parse-error at line {ln}: expected {d + 1} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:d]])
                labels.append(int(row[d]))
            except ValueError as e:
                raise DataFormatError(f"parse-error at line {ln}: {e}") from None
    if not rows:
        raise DataFormatError(f"empty-dataset: {path}")
    raw = np.asarray(labels, dtype=np.int64)
    uniq = np.unique(raw)
    label_map = {int(v): i for i, v in enumerate(uniq)}
    remapped = np.searchsorted(uniq, raw)
    return Dataset(np.asarray(rows), remapped, num_classes=len(uniq), label_map=label_map)


def save_csv(path: str, ds: Dataset) -> None:
    """Inverse of load_csv (labels written as their contiguous ids)."""
    d = ds.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(d)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def write_partition_manifest(path: str, shards: list[np.ndarray]) -> None:
    """Persist a partition as (client_id, example_index) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "example_index"])
        for i, shard in enumerate(shards):
            for idx in shard:
                writer.writerow([i, int(idx)])


def read_partition_manifest(path: str, m: int | None = None) -> list[np.ndarray]:
    parts: dict[int, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["client_id", "example_index"]:
            raise DataFormatError("parse-error at line 1: bad manifest header")
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                parts.setdefault(int(row[0]), []).append(int(row[1]))
            except (ValueError, IndexError) as e:
                raise DataFormatError(f"parse-error at line {ln}: {e}") from None
    count = m if m is not None else (max(parts) + 1 if parts else 0)
    return [np.asarray(sorted(parts.get(i, [])), dtype=int) for i in range(count)]
