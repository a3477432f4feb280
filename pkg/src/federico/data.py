"""Synthetic client datasets and non-IID partitioners.

Every generator takes an explicit seed and builds its own
``np.random.Generator``, so identical arguments give bit-identical output.
``Dataset.distribution_id`` is bookkeeping for evaluation; training code only
ever receives ``Dataset.samples``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

TRAIN_FRAC = 0.8


class Samples(NamedTuple):
    """Features and targets without any generator metadata."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    distribution_id: int = -1

    def __post_init__(self):
        if self.x.ndim != 2:
            raise ConfigError("features must be a 2-D array")
        if self.x.shape[0] != self.y.shape[0]:
            raise ConfigError("feature and target counts differ")

    def __len__(self):
        return self.x.shape[0]

    @property
    def samples(self) -> Samples:
        return Samples(self.x, self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.distribution_id)


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    test: Dataset

    @property
    def distribution_id(self):
        return self.train.distribution_id


def train_test_split(d: Dataset, frac: float = TRAIN_FRAC, seed: int = 0) -> SplitDataset:
    if not 0.0 < frac < 1.0:
        raise ConfigError("train fraction must lie in (0, 1)", key="data.train_frac")
    n = len(d)
    if n < 2:
        raise ConfigError("need at least two samples to split")
    n_train = int(round(frac * n))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitDataset(d.subset(np.sort(perm[:n_train])), d.subset(np.sort(perm[n_train:])))


def _child_seeds(seed, count):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def gen_sine_clients(K: int, n_per_client: int, noise_std: float = 0.1, seed: int = 0,
                     train_frac: float = TRAIN_FRAC) -> list[SplitDataset]:
    """Client ``i`` samples x uniformly from the i-th of K equal slices of [0, 2*pi)."""
    if K < 2:
        raise ConfigError("need at least two clients", key="K")
    if n_per_client < 4:
        raise ConfigError("need at least four samples per client", key="data.n_per_client")
    rng = np.random.default_rng(seed)
    width = 2.0 * np.pi / K
    split_seeds = _child_seeds(seed, K)
    clients = []
    for i in range(K):
        x = rng.uniform(i * width, (i + 1) * width, size=n_per_client)
        y = np.sin(x)
        if noise_std > 0:
            y = y + rng.normal(0.0, noise_std, size=n_per_client)
        d = Dataset(x.reshape(-1, 1), y.reshape(-1, 1), distribution_id=i)
        clients.append(train_test_split(d, train_frac, split_seeds[i]))
    return clients


def _spread_centers(count, dims, sep, rng, max_tries=10_000):
    """Draw ``count`` points with pairwise distance >= sep by rejection."""
    if count == 1:
        return rng.normal(0.0, sep, size=(1, dims))
    radius = sep * max(1.0, count ** (1.0 / dims))
    centers = []
    tries = 0
    while len(centers) < count:
        c = rng.uniform(-radius, radius, size=dims)
        if all(np.linalg.norm(c - o) >= sep for o in centers):
            centers.append(c)
        tries += 1
        if tries % max_tries == 0:
            radius *= 1.5
    return np.array(centers)


def gen_cluster_classification(G: int, K: int, dims: int = 2, classes_per_dist: int = 2,
                               n_per_client: int = 50, sep: float = 3.0, seed: int = 0,
                               noise_std: float = 1.0, shared_layout: bool = True,
                               train_frac: float = TRAIN_FRAC) -> list[SplitDataset]:
    """Gaussian-cluster classification with disjoint label groups.

    Distribution ``g`` owns labels ``g*classes_per_dist ... (g+1)*classes_per_dist - 1``
    and one unit-covariance (times ``noise_std``) Gaussian per label. Centers
    within a distribution are at least ``sep`` apart. With ``shared_layout``
    every distribution reuses the same center positions under its own labels,
    so no single classifier can serve two distributions; otherwise each
    distribution draws its own layout over the same region. Client ``i``
    belongs to distribution ``i % G``.
    """
    if not K >= G >= 2:
        raise ConfigError("need K >= G >= 2", key="G")
    if classes_per_dist < 1 or dims < 1:
        raise ConfigError("classes_per_dist and dims must be positive", key="data")
    rng = np.random.default_rng(seed)
    if shared_layout:
        layout = _spread_centers(classes_per_dist, dims, sep, rng)
        centers = [layout] * G
    else:
        centers = [_spread_centers(classes_per_dist, dims, sep, rng) for _ in range(G)]
    split_seeds = _child_seeds(seed, K)
    clients = []
    for i in range(K):
        g = i % G
        local = rng.integers(0, classes_per_dist, size=n_per_client)
        x = centers[g][local] + rng.normal(0.0, noise_std, size=(n_per_client, dims))
        y = g * classes_per_dist + local
        d = Dataset(x, y.astype(np.int64), distribution_id=g)
        clients.append(train_test_split(d, train_frac, split_seeds[i]))
    return clients


def _label_groups(labels, G, rng):
    if G > len(labels):
        raise ConfigError(f"cannot split {len(labels)} labels into {G} groups", key="G")
    shuffled = rng.permutation(labels)
    return [np.sort(g) for g in np.array_split(shuffled, G)]


def partition_by_labels(pool: Dataset, G: int, K: int, seed: int = 0,
                        train_frac: float = TRAIN_FRAC) -> list[SplitDataset]:
    """Disjoint label groups; client ``i`` draws from group ``i % G``.

    A group's samples are shuffled and dealt out in equal shares to the
    clients it backs, so nothing is duplicated.
    """
    if K < G:
        raise ConfigError("need at least as many clients as groups", key="K")
    rng = np.random.default_rng(seed)
    labels = np.unique(pool.y)
    groups = _label_groups(labels, G, rng)
    split_seeds = _child_seeds(seed, K)
    clients = [None] * K
    for g, group in enumerate(groups):
        members = list(range(g, K, G))
        idx = rng.permutation(np.flatnonzero(np.isin(pool.y, group)))
        for i, part in zip(members, np.array_split(idx, len(members))):
            if len(part) < 2:
                raise ConfigError(f"label group {g} has too few samples for its clients")
            d = Dataset(pool.x[np.sort(part)], pool.y[np.sort(part)], distribution_id=g)
            clients[i] = train_test_split(d, train_frac, split_seeds[i])
    return clients


def partition_dirichlet(pool: Dataset, G: int, K: int, alpha: float = 0.4, seed: int = 0,
                        train_frac: float = TRAIN_FRAC, max_retries: int = 100) -> list[SplitDataset]:
    """Label clusters spread over all clients by symmetric Dirichlet shares.

    Each cluster's samples are divided among the K clients with proportions
    drawn from Dirichlet(alpha). Draws that leave a client with fewer than
    two samples overall are rejected. ``distribution_id`` records the cluster
    contributing most of a client's data.
    """
    if not alpha > 0:
        raise ConfigError("alpha must be positive", key="data.alpha")
    rng = np.random.default_rng(seed)
    groups = _label_groups(np.unique(pool.y), G, rng)
    group_idx = [rng.permutation(np.flatnonzero(np.isin(pool.y, g))) for g in groups]
    for _ in range(max_retries):
        assign = [[] for _ in range(K)]
        counts = np.zeros((K, G), dtype=np.int64)
        for g, idx in enumerate(group_idx):
            props = rng.dirichlet(np.full(K, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for i, part in enumerate(np.split(idx, cuts)):
                assign[i].extend(part.tolist())
                counts[i, g] = len(part)
        if min(len(a) for a in assign) >= 2:
            break
    else:
        raise ConfigError(f"no Dirichlet draw gave every client two samples in {max_retries} tries",
                          key="data.alpha")
    split_seeds = _child_seeds(seed, K)
    clients = []
    for i in range(K):
        idx = np.sort(np.array(assign[i], dtype=np.int64))
        d = Dataset(pool.x[idx], pool.y[idx], distribution_id=int(np.argmax(counts[i])))
        clients.append(train_test_split(d, train_frac, split_seeds[i]))
    return clients


def load_csv_pool(path) -> Dataset:
    """Header row, numeric feature columns, integer label in the last column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path} is empty", key="data.csv_path") from None
        rows = [r for r in reader if r]
    if len(header) < 2:
        raise ConfigError("CSV needs at least one feature column and a label column",
                          key="data.csv_path")
    if not rows:
        raise ConfigError(f"{path} has no data rows", key="data.csv_path")
    try:
        table = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in {path}: {exc}", key="data.csv_path") from None
    if table.shape[1] != len(header):
        raise ConfigError("ragged CSV rows", key="data.csv_path")
    labels = table[:, -1]
    if np.any(labels != np.round(labels)) or np.any(labels < 0):
        raise ConfigError("last column must hold non-negative integer labels", key="data.csv_path")
    return Dataset(table[:, :-1], labels.astype(np.int64))
