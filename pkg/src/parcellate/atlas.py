"""Atlas label volumes and ROI-by-ROI connectivity matrices.

ATL1 layout (little-endian): ``b"ATL1"``, u16 version (=1), u32 nx, ny, nz,
16 float64 voxel-to-world affine entries (row-major), u16 ROI count p, p
names each as u16 byte length + UTF-8, then nx*ny*nz u16 labels with x
varying fastest. Label 0 is background; labels 1..p index ``roi_names``.

Fibers connect the ROIs containing their two endpoints (nearest voxel).
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    FormatError,
    InvalidConfig,
    IoFailure,
    LabelOutOfRange,
    MisalignedAssignment,
    SingularAffine,
    TruncatedFile,
)
from .preprocess import EndpointDataset, extract_endpoints, fiber_length
from .tracts_io import Cohort, SubjectTract

ATL1_MAGIC = b"ATL1"
ATL1_VERSION = 1
SUMMARY_KINDS = ("count", "ncount", "ncount2")

_HEAD = struct.Struct("<4sHIII16dH")
_U16 = struct.Struct("<H")


@dataclass(frozen=True, eq=False)
class Atlas:
    labels: np.ndarray
    affine: np.ndarray
    roi_names: tuple

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise FormatError(f"label volume must be 3-D, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > len(self.roi_names)):
            raise LabelOutOfRange(
                f"labels span {labels.min()}..{labels.max()} but only "
                f"{len(self.roi_names)} ROIs are named"
            )
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4) or not np.isfinite(affine).all():
            raise SingularAffine("affine must be a finite 4x4 matrix")
        if abs(np.linalg.det(affine)) < 1e-12 or np.linalg.cond(affine) > 1e12:
            raise SingularAffine("affine is not invertible")
        object.__setattr__(self, "labels", labels.astype(np.uint16))
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "roi_names", tuple(self.roi_names))
        object.__setattr__(self, "_inverse", np.linalg.inv(affine))

    @property
    def dims(self) -> tuple:
        return self.labels.shape

    @property
    def num_rois(self) -> int:
        return len(self.roi_names)

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.num_rois + 1)

    def __eq__(self, other):
        if not isinstance(other, Atlas):
            return NotImplemented
        return (self.roi_names == other.roi_names
                and np.array_equal(self.affine, other.affine)
                and np.array_equal(self.labels, other.labels))


def encode_atlas(atlas: Atlas) -> bytes:
    nx, ny, nz = atlas.dims
    parts = [_HEAD.pack(ATL1_MAGIC, ATL1_VERSION, nx, ny, nz,
                        *atlas.affine.ravel().tolist(), atlas.num_rois)]
    for name in atlas.roi_names:
        raw = name.encode("utf-8")
        parts.append(_U16.pack(len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(atlas.labels.ravel(order="F"), dtype="<u2").tobytes())
    return b"".join(parts)


def decode_atlas(data: bytes) -> Atlas:
    if data[:4] != ATL1_MAGIC:
        raise BadMagic("not an ATL1 file")
    if len(data) < _HEAD.size:
        raise TruncatedFile("ATL1 header is truncated")
    fields = _HEAD.unpack_from(data, 0)
    magic, version, nx, ny, nz = fields[:5]
    if magic != ATL1_MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != ATL1_VERSION:
        raise FormatError(f"unsupported ATL1 version {version}")
    affine = np.asarray(fields[5:21], dtype=np.float64).reshape(4, 4)
    p = fields[21]
    pos = _HEAD.size
    names = []
    for _ in range(p):
        if pos + 2 > len(data):
            raise TruncatedFile("ROI name table is truncated")
        (n,) = _U16.unpack_from(data, pos)
        pos += 2
        if pos + n > len(data):
            raise TruncatedFile("ROI name table is truncated")
        try:
            names.append(data[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("ROI name is not valid UTF-8") from exc
        pos += n
    nvox = nx * ny * nz
    if len(data) - pos != 2 * nvox:
        raise TruncatedFile(f"expected {2 * nvox} label bytes, found {len(data) - pos}")
    flat = np.frombuffer(data, dtype="<u2", count=nvox, offset=pos)
    labels = flat.reshape((nx, ny, nz), order="F")
    return Atlas(labels, affine, tuple(names))


def load_atlas(path) -> Atlas:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return decode_atlas(data)


def save_atlas(atlas: Atlas, path) -> None:
    try:
        Path(path).write_bytes(encode_atlas(atlas))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def voxel_of(atlas: Atlas, points) -> np.ndarray:
    """Nearest voxel index (i, j, k) of world points; halves round up."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    homo = np.column_stack([pts, np.ones(len(pts))])
    vox = homo @ atlas._inverse.T
    return np.floor(vox[:, :3] + 0.5).astype(np.int64)


def roi_of(atlas: Atlas, points) -> np.ndarray | int:
    """ROI label at each world point; 0 (background) outside the volume."""
    scalar = np.asarray(points).ndim == 1
    ijk = voxel_of(atlas, points)
    inside = np.all((ijk >= 0) & (ijk < np.asarray(atlas.dims)), axis=1)
    out = np.zeros(len(ijk), dtype=np.int64)
    i, j, k = ijk[inside].T
    out[inside] = atlas.labels[i, j, k]
    return int(out[0]) if scalar else out


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Symmetric p x p matrix; entry [r-1, s-1] holds ROI pair (r, s)."""

    weights: np.ndarray
    kind: str
    roi_names: tuple
    skipped: int = 0

    @property
    def p(self) -> int:
        return self.weights.shape[0]

    def get(self, roi_a: int, roi_b: int) -> float:
        return float(self.weights[roi_a - 1, roi_b - 1])

    def __eq__(self, other):
        if not isinstance(other, ConnectivityMatrix):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.weights, other.weights)


def _endpoint_rois(atlas, a, b):
    return roi_of(atlas, a), roi_of(atlas, b)


def connectivity_from_endpoints(atlas: Atlas, a, b, lengths=None,
                                kind: str = "count") -> ConnectivityMatrix:
    """Accumulate fibers with endpoints ``a``, ``b`` into a p x p summary."""
    if kind not in SUMMARY_KINDS:
        raise FormatError(f"unknown summary kind {kind!r}")
    p = atlas.num_rois
    ra, rb = _endpoint_rois(atlas, a, b)
    hit = (ra > 0) & (rb > 0)
    skipped = int((~hit).sum())
    lo = np.minimum(ra[hit], rb[hit]) - 1
    hi = np.maximum(ra[hit], rb[hit]) - 1
    w = np.zeros((p, p))
    if kind == "count":
        np.add.at(w, (lo, hi), 1.0)
    else:
        if lengths is None:
            raise FormatError(f"{kind} needs fiber lengths")
        ln = np.asarray(lengths, dtype=np.float64)[hit]
        if kind == "ncount2":
            np.add.at(w, (lo, hi), 1.0 / ln)
        else:
            order = np.lexsort((hi, lo))
            pairs = np.column_stack([lo[order], hi[order]])
            ln = ln[order]
            if len(pairs):
                starts = np.flatnonzero(np.r_[True, np.any(pairs[1:] != pairs[:-1], axis=1)])
                ends = np.r_[starts[1:], len(pairs)]
                for s0, s1 in zip(starts, ends):
                    r, c = pairs[s0]
                    w[r, c] = (s1 - s0) / float(np.median(ln[s0:s1]))
    upper = np.triu(w, 1)
    w = upper + upper.T + np.diag(np.diag(w))
    return ConnectivityMatrix(w, kind, atlas.roi_names, skipped)


def build_apa(tract: SubjectTract, atlas: Atlas, kind: str = "count") -> ConnectivityMatrix:
    """One subject's connectivity matrix under the chosen summary.

    ``count`` counts connecting fibers, ``ncount`` divides that count by the
    median length of the connecting fibers, ``ncount2`` sums their inverse
    lengths. Fibers with an endpoint in background are skipped.
    """
    a = np.array([s[0] for s in tract.streamlines])
    b = np.array([s[-1] for s in tract.streamlines])
    lengths = None if kind == "count" else [fiber_length(s) for s in tract.streamlines]
    return connectivity_from_endpoints(atlas, a, b, lengths, kind)


def build_active_matrix(data: Cohort | EndpointDataset, atlas: Atlas, assignment,
                        report) -> ConnectivityMatrix:
    """Population count matrix over the fibers of the active bundles."""
    if isinstance(data, Cohort):
        data = extract_endpoints(data)
    labels = np.asarray(getattr(assignment, "bundle_index", assignment))
    if labels.shape[0] != data.n_fibers:
        raise MisalignedAssignment(f"{labels.shape[0]} labels for {data.n_fibers} fibers")
    active = np.asarray(getattr(report, "active_indices", report), dtype=np.int64)
    mask = np.isin(labels, active)
    return connectivity_from_endpoints(atlas, data.a[mask], data.b[mask], None, "count")


def threshold_matrix(w: ConnectivityMatrix | np.ndarray, ratio: float = 0.5):
    """Zero every entry below ``ratio`` times the largest entry."""
    if not 0 < ratio <= 1:
        raise InvalidConfig("ratio must lie in (0, 1]")
    mat = np.asarray(getattr(w, "weights", w), dtype=np.float64)
    out = np.where(mat < ratio * mat.max(initial=0.0), 0.0, mat)
    if isinstance(w, ConnectivityMatrix):
        return ConnectivityMatrix(out, w.kind, w.roi_names, w.skipped)
    return out


def write_matrix_csv(w: ConnectivityMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow([""] + list(w.roi_names))
        for name, row in zip(w.roi_names, w.weights):
            out.writerow([name] + [format(v, ".17g") for v in row.tolist()])


def write_edge_list(w: ConnectivityMatrix, path) -> int:
    """Write the non-zero upper-triangle entries; returns the edge count."""
    rows, cols = np.nonzero(np.triu(w.weights))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["roi_a", "roi_b", "weight"])
        for r, c in zip(rows.tolist(), cols.tolist()):
            out.writerow([w.roi_names[r], w.roi_names[c], format(w.weights[r, c], ".17g")])
    return len(rows)
