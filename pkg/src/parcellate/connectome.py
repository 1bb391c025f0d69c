"""Compositional connectomes: each subject's share of fibers per bundle."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MalformedRow, MisalignedAssignment


@dataclass(frozen=True, eq=False)
class ConnectomeMatrix:
    """One row of bundle proportions per subject, in cohort order."""

    subject_ids: tuple
    omega: np.ndarray

    @property
    def k(self) -> int:
        return self.omega.shape[1]

    @property
    def n_subjects(self) -> int:
        return self.omega.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ConnectomeMatrix):
            return NotImplemented
        return (tuple(self.subject_ids) == tuple(other.subject_ids)
                and np.array_equal(self.omega, other.omega))

    def row(self, subject_id: str) -> np.ndarray:
        return self.omega[list(self.subject_ids).index(subject_id)]


def compose(assignment, data, k: int) -> ConnectomeMatrix:
    """Histogram each subject's fibers over the K bundles and divide by m_i."""
    labels = np.asarray(getattr(assignment, "bundle_index", assignment))
    if labels.shape[0] != data.n_fibers:
        raise MisalignedAssignment(
            f"{labels.shape[0]} labels for {data.n_fibers} fibers"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise MisalignedAssignment(f"bundle labels outside 0..{k - 1}")
    n = data.n_subjects
    counts = np.zeros((n, k), dtype=np.int64)
    np.add.at(counts, (data.subject_index, labels), 1)
    per_subject = counts.sum(axis=1)
    if (per_subject == 0).any():
        empty = [data.subject_ids[i] for i in np.flatnonzero(per_subject == 0)]
        raise MisalignedAssignment(f"subjects without fibers: {empty}")
    omega = counts / per_subject[:, None]
    return ConnectomeMatrix(tuple(data.subject_ids), omega)


def bundle_sizes(assignment, k: int) -> np.ndarray:
    """Population fiber count of every bundle, empty bundles included."""
    labels = np.asarray(getattr(assignment, "bundle_index", assignment))
    return np.bincount(labels, minlength=k).astype(np.int64)


def write_omega_csv(conn: ConnectomeMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id"] + [f"omega_{j}" for j in range(conn.k)])
        for sid, row in zip(conn.subject_ids, conn.omega):
            w.writerow([sid] + [format(v, ".17g") for v in row.tolist()])


def read_omega_csv(path) -> ConnectomeMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "subject_id":
            raise MalformedRow(f"{path}: expected a subject_id header")
        k = len(header) - 1
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != k + 1:
                raise MalformedRow(f"{path}:{lineno}: expected {k + 1} fields")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from exc
            ids.append(row[0])
    return ConnectomeMatrix(tuple(ids), np.asarray(rows, dtype=np.float64).reshape(len(ids), k))


def write_sizes_csv(sizes, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bundle", "fibers"])
        for j, c in enumerate(np.asarray(sizes).tolist()):
            w.writerow([j, c])


def read_sizes_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        rows = [(int(r[0]), int(r[1])) for r in reader if r]
    sizes = np.zeros(len(rows), dtype=np.int64)
    for j, c in rows:
        sizes[j] = c
    return sizes
