"""Population fiber bundles from mini-batch K-means on endpoint pairs.

A fiber is the 6-vector ``(a, b)`` of its endpoints and carries no
direction, so every distance takes the better of the two endpoint orderings.
Centroid updates follow Sculley's mini-batch scheme with a per-centroid
learning rate of ``1 / count``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import EmptyBundleWarning, InsufficientData, InvalidConfig

MODEL_FORMAT_VERSION = 1
DEFAULT_BATCH = 1000
DEFAULT_EPOCHS = 100


def _as_z(data) -> np.ndarray:
    z = data.z if hasattr(data, "z") else data
    return np.ascontiguousarray(z, dtype=np.float64)


def flip_distance2(pair, centroid) -> tuple[float, bool]:
    """Squared distance between a fiber and a centroid under the better ordering.

    Returns ``(distance, flipped)``; ``flipped`` is True only when matching the
    fiber's ``a`` to the centroid's second endpoint is strictly closer.
    """
    labels, flipped, dist = kernels.flip_assign(
        np.ascontiguousarray(np.reshape(pair, (1, 6)), dtype=np.float64),
        np.ascontiguousarray(np.reshape(centroid, (1, 6)), dtype=np.float64),
    )
    return float(dist[0]), bool(flipped[0])


def default_iterations(m: int, batch_size: int, epochs: int = DEFAULT_EPOCHS) -> int:
    return max(1, math.ceil(epochs * m / batch_size))


def init_centroids(data, k: int, seed) -> np.ndarray:
    """k-means++ seeding under the flip-aware distance.

    The first centroid is a uniformly drawn fiber; each further one is drawn
    with probability proportional to the current minimum squared distance.
    """
    z = _as_z(data)
    m = z.shape[0]
    if k < 1:
        raise InvalidConfig("k must be at least 1")
    if k > m:
        raise InsufficientData(f"k={k} exceeds the number of fibers m={m}")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, 6))
    centroids[0] = z[rng.integers(m)]
    _, _, closest = kernels.flip_assign(z, centroids[:1])
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            cum = np.cumsum(closest)
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            idx = min(idx, m - 1)
            # never land on a zero-weight row through rounding at the edges
            while closest[idx] == 0:
                idx -= 1
        else:
            idx = int(rng.integers(m))
        centroids[j] = z[idx]
        _, _, d = kernels.flip_assign(z, centroids[j:j + 1])
        np.minimum(closest, d, out=closest)
    return centroids


@dataclass(frozen=True, eq=False)
class BundleModel:
    """Fitted fiber-bundle basis: K centroids in endpoint space."""

    centroids: np.ndarray
    counts: np.ndarray
    seed: int
    batch_size: int
    iterations: int
    empty_bundles: tuple = field(default=())

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BundleModel):
            return NotImplemented
        return (
            np.array_equal(self.centroids, other.centroids)
            and np.array_equal(self.counts, other.counts)
            and (self.seed, self.batch_size, self.iterations)
            == (other.seed, other.batch_size, other.iterations)
        )

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "k": self.k,
            "centroids": self.centroids.ravel().tolist(),
            "counts": self.counts.tolist(),
            "seed": self.seed,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BundleModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise InvalidConfig(f"unsupported model format {d.get('format_version')!r}")
        k = int(d["k"])
        centroids = np.asarray(d["centroids"], dtype=np.float64)
        if centroids.size != 6 * k:
            raise InvalidConfig("centroid array does not match k")
        counts = np.asarray(d["counts"], dtype=np.int64)
        if counts.shape != (k,):
            raise InvalidConfig("counts do not match k")
        empty = tuple(int(j) for j in np.flatnonzero(counts == 0))
        return cls(centroids.reshape(k, 6), counts, int(d["seed"]),
                   int(d["batch_size"]), int(d["iterations"]), empty)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BundleModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit(data, k: int, batch_size: int = DEFAULT_BATCH, iterations: int | None = None,
        seed: int = 0, init: np.ndarray | None = None) -> BundleModel:
    """Fit K bundle centroids by mini-batch K-means.

    Each iteration samples ``batch_size`` fibers with replacement, assigns
    them against the current centroids, then folds them in one by one:
    ``c <- (1 - 1/n) c + (1/n) x`` with ``x`` in the winning orientation and
    ``n`` the centroid's running count. ``iterations=None`` runs the
    equivalent of 100 epochs. Centroids that never receive a fiber are kept
    and reported through :class:`EmptyBundleWarning`.
    """
    z = _as_z(data)
    m = z.shape[0]
    if batch_size < 1:
        raise InvalidConfig("batch_size must be at least 1")
    if iterations is None:
        iterations = default_iterations(m, batch_size)
    if iterations < 1:
        raise InvalidConfig("iterations must be at least 1")
    if k > m:
        raise InsufficientData(f"k={k} exceeds the number of fibers m={m}")
    seq = np.random.SeedSequence(seed)
    init_seq, batch_seq = seq.spawn(2)
    if init is None:
        centroids = init_centroids(z, k, init_seq)
    else:
        centroids = np.array(init, dtype=np.float64).reshape(k, 6)
    counts = np.zeros(k, dtype=np.int64)
    rng = np.random.default_rng(batch_seq)
    # bounded chunks keep the index buffer small for long runs
    chunk = max(1, 2_000_000 // batch_size)
    done = 0
    while done < iterations:
        n = min(chunk, iterations - done)
        batches = rng.integers(0, m, size=(n, batch_size), dtype=np.int64)
        kernels.minibatch_run(z, centroids, counts, batches)
        done += n
    empty = tuple(int(j) for j in np.flatnonzero(counts == 0))
    if empty:
        warnings.warn(f"{len(empty)} bundles received no fibers: {list(empty)}",
                      EmptyBundleWarning, stacklevel=2)
    return BundleModel(centroids, counts, int(seed), int(batch_size), int(iterations), empty)


@dataclass(frozen=True)
class Assignment:
    """Bundle index and winning orientation for every fiber."""

    bundle_index: np.ndarray
    flipped: np.ndarray
    distance2: np.ndarray

    def __len__(self):
        return self.bundle_index.shape[0]


def assign(model: BundleModel | np.ndarray, data) -> Assignment:
    """Map every fiber to its nearest centroid (lowest index on ties)."""
    centroids = model.centroids if isinstance(model, BundleModel) else model
    labels, flipped, dist = kernels.flip_assign(
        _as_z(data), np.ascontiguousarray(centroids, dtype=np.float64)
    )
    return Assignment(labels, flipped.astype(bool), dist)


def objective(model: BundleModel | np.ndarray, data) -> float:
    """Sum over fibers of the squared flip distance to the assigned centroid."""
    return float(assign(model, data).distance2.sum())


def lloyd(data, k: int, seed: int = 0, max_iter: int = 300,
          init: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch flip-aware Lloyd iterations; the reference for :func:`fit`.

    Runs until the assignment stops changing. Returns ``(centroids, labels)``.
    """
    z = _as_z(data)
    if init is None:
        centroids = init_centroids(z, k, np.random.SeedSequence(seed).spawn(2)[0])
    else:
        centroids = np.array(init, dtype=np.float64).reshape(k, 6)
    labels = None
    for _ in range(max_iter):
        new_labels, flipped, _ = kernels.flip_assign(z, centroids)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        oriented = np.where(flipped[:, None].astype(bool), np.roll(z, 3, axis=1), z)
        for j in range(k):
            members = oriented[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return centroids, labels
