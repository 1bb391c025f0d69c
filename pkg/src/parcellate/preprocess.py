"""Fiber lengths, resampling, endpoint extraction and outlier removal."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import AllFibersRemoved, DegenerateLength, InvalidConfig, MismatchedPointCount
from .tracts_io import Cohort, SubjectTract

DEFAULT_RESAMPLE = 12
DEFAULT_QB_THRESHOLD = 20.0
DEFAULT_QB_MIN_FRACTION = 0.01


def fiber_length(streamline) -> float:
    """Arc length of a polyline in mm."""
    pts = np.asarray(streamline, dtype=np.float64)
    seg = np.diff(pts, axis=0)
    return float(np.sqrt((seg * seg).sum(axis=1)).sum())


def resample(streamline, q: int = DEFAULT_RESAMPLE) -> np.ndarray:
    """Return ``q`` points equally spaced in arc length along the streamline.

    The first and last points are copied exactly from the input.
    """
    if q < 2:
        raise InvalidConfig("q must be at least 2")
    pts = np.asarray(streamline, dtype=np.float64)
    seg = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = cum[-1]
    if not total > 0:
        raise DegenerateLength("streamline has zero arc length")
    targets = np.linspace(0.0, total, q)
    out = np.empty((q, 3))
    for d in range(3):
        out[:, d] = np.interp(targets, cum, pts[:, d])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def mdf_distance(x, y) -> float:
    """Minimum average direct-flip distance between two resampled streamlines."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MismatchedPointCount(f"{x.shape} vs {y.shape}")
    direct = np.sqrt(((x - y) ** 2).sum(axis=1)).mean()
    flipped = np.sqrt(((x - y[::-1]) ** 2).sum(axis=1)).mean()
    return float(min(direct, flipped))


def quickbundles_labels(tract: SubjectTract, threshold: float,
                        q: int = DEFAULT_RESAMPLE) -> np.ndarray:
    tracks = np.stack([resample(s, q) for s in tract.streamlines])
    return kernels.quickbundles(np.ascontiguousarray(tracks), float(threshold))


def filter_outliers(tract: SubjectTract, threshold: float = DEFAULT_QB_THRESHOLD,
                    min_cluster_fraction: float = DEFAULT_QB_MIN_FRACTION,
                    q: int = DEFAULT_RESAMPLE) -> SubjectTract:
    """Drop streamlines that fall in small QuickBundles clusters.

    One sequential QuickBundles pass (input order, first cluster within
    ``threshold`` mm wins) groups the streamlines; every cluster holding
    fewer than ``min_cluster_fraction * m_i`` streamlines is removed. The
    survivors keep their original order.
    """
    if not threshold > 0:
        raise InvalidConfig("threshold must be positive")
    if not 0 < min_cluster_fraction < 1:
        raise InvalidConfig("min_cluster_fraction must lie in (0, 1)")
    labels = quickbundles_labels(tract, threshold, q)
    sizes = np.bincount(labels)
    keep = sizes[labels] >= min_cluster_fraction * tract.n_fibers
    if not keep.any():
        raise AllFibersRemoved(
            f"subject {tract.subject_id!r}: every cluster is below the size cutoff"
        )
    if keep.all():
        return tract
    return tract.subset(np.flatnonzero(keep))


def filter_cohort(cohort: Cohort, threshold: float = DEFAULT_QB_THRESHOLD,
                  min_cluster_fraction: float = DEFAULT_QB_MIN_FRACTION,
                  q: int = DEFAULT_RESAMPLE, threads: int = 1) -> Cohort:
    def run(tract):
        return filter_outliers(tract, threshold, min_cluster_fraction, q)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(run, cohort.subjects))
    else:
        out = [run(t) for t in cohort.subjects]
    return Cohort(tuple(out))


@dataclass(frozen=True)
class EndpointDataset:
    """Endpoint pairs of every fiber, subject-major and fiber-minor.

    ``z`` is the (m, 6) matrix whose rows are ``(a, b)``: the first and last
    point of each fiber. It is the transpose of the usual 6 x m layout.
    """

    z: np.ndarray
    subject_index: np.ndarray
    fiber_index: np.ndarray
    fiber_length: np.ndarray
    subject_ids: tuple

    def __post_init__(self):
        for arr in (self.z, self.subject_index, self.fiber_index, self.fiber_length):
            arr.setflags(write=False)

    @property
    def a(self) -> np.ndarray:
        return self.z[:, :3]

    @property
    def b(self) -> np.ndarray:
        return self.z[:, 3:]

    @property
    def n_fibers(self) -> int:
        return self.z.shape[0]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def __len__(self):
        return self.z.shape[0]

    def fibers_per_subject(self) -> np.ndarray:
        return np.bincount(self.subject_index, minlength=self.n_subjects)


def extract_endpoints(cohort: Cohort) -> EndpointDataset:
    m = cohort.total_fibers
    z = np.empty((m, 6))
    subj = np.empty(m, dtype=np.int64)
    fib = np.empty(m, dtype=np.int64)
    length = np.empty(m)
    row = 0
    for i, tract in enumerate(cohort.subjects):
        for k, s in enumerate(tract.streamlines):
            z[row, :3] = s[0]
            z[row, 3:] = s[-1]
            subj[row] = i
            fib[row] = k
            length[row] = fiber_length(s)
            row += 1
    return EndpointDataset(z, subj, fib, length, tuple(cohort.subject_ids))
