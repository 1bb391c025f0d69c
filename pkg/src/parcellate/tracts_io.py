"""Streamline containers and their on-disk formats.

Two encodings are supported:

PPAF (binary, little-endian)
    ``b"PPAF"`` magic, u16 version (=1), u16 subject-id length L, L bytes of
    UTF-8 subject id, u64 streamline count S, then per streamline a u32 point
    count P (P >= 2) followed by P*3 float32 coordinates (x, y, z).

CSV
    Header ``streamline_id,point_index,x,y,z``; rows grouped by streamline id
    with increasing point index. The subject id is taken from the file stem.

Coordinates are stored in float32 and held in memory as float64, so a file
round-trips exactly through :func:`read_ppaf` / :func:`write_ppaf`.
"""
from __future__ import annotations

import csv
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    EmptyFile,
    FormatError,
    InvalidStreamline,
    IoFailure,
    MalformedRow,
    NonFiniteCoordinate,
    TruncatedFile,
    UnsortedPoints,
)

PPAF_MAGIC = b"PPAF"
PPAF_VERSION = 1
CSV_HEADER = ("streamline_id", "point_index", "x", "y", "z")
FORMATS = ("ppaf", "csv")

_HEAD = struct.Struct("<4sHH")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


def as_streamline(points) -> np.ndarray:
    """Validate ``points`` as a streamline and return it as a (P, 3) float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidStreamline(f"expected (P, 3) points, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise InvalidStreamline(f"streamline needs at least 2 points, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise NonFiniteCoordinate("streamline contains non-finite coordinates")
    if not np.any(arr[1:] != arr[:-1]):
        raise InvalidStreamline("streamline has zero arc length")
    return arr


@dataclass(frozen=True, eq=False)
class SubjectTract:
    """All streamlines tracked for one subject."""

    subject_id: str
    streamlines: tuple

    def __post_init__(self):
        if not isinstance(self.subject_id, str) or not self.subject_id:
            raise InvalidStreamline("subject_id must be a non-empty string")
        lines = tuple(as_streamline(s) for s in self.streamlines)
        for s in lines:
            s.setflags(write=False)
        object.__setattr__(self, "streamlines", lines)

    @property
    def n_fibers(self) -> int:
        return len(self.streamlines)

    def __len__(self):
        return len(self.streamlines)

    def __eq__(self, other):
        if not isinstance(other, SubjectTract):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and len(self.streamlines) == len(other.streamlines)
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in zip(self.streamlines, other.streamlines)
            )
        )

    def subset(self, keep: Iterable[int]) -> "SubjectTract":
        return SubjectTract(self.subject_id, tuple(self.streamlines[i] for i in keep))


@dataclass(frozen=True)
class Cohort:
    """Subjects in a fixed order; subject ids are unique."""

    subjects: tuple

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise InvalidStreamline("a cohort needs at least one subject")
        ids = [s.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise InvalidStreamline("duplicate subject ids in cohort")
        object.__setattr__(self, "subjects", subjects)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def total_fibers(self) -> int:
        return sum(s.n_fibers for s in self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def sorted(self) -> "Cohort":
        return Cohort(tuple(sorted(self.subjects, key=lambda s: s.subject_id)))

    def __iter__(self):
        return iter(self.subjects)

    def __len__(self):
        return len(self.subjects)


# -- PPAF --------------------------------------------------------------------

def encode_ppaf(tract: SubjectTract) -> bytes:
    if tract.n_fibers == 0:
        raise EmptyFile(f"subject {tract.subject_id!r} has no streamlines")
    sid = tract.subject_id.encode("utf-8")
    if len(sid) > 0xFFFF:
        raise FormatError("subject id longer than 65535 bytes")
    parts = [_HEAD.pack(PPAF_MAGIC, PPAF_VERSION, len(sid)), sid, _U64.pack(tract.n_fibers)]
    for s in tract.streamlines:
        parts.append(_U32.pack(s.shape[0]))
        parts.append(np.ascontiguousarray(s, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_ppaf(data: bytes) -> SubjectTract:
    if not data:
        raise EmptyFile("empty PPAF stream")
    if len(data) < _HEAD.size:
        if not PPAF_MAGIC.startswith(data[:4]):
            raise BadMagic("not a PPAF file")
        raise TruncatedFile("header is truncated")
    magic, version, id_len = _HEAD.unpack_from(data, 0)
    if magic != PPAF_MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != PPAF_VERSION:
        raise FormatError(f"unsupported PPAF version {version}")
    pos = _HEAD.size
    if pos + id_len + _U64.size > len(data):
        raise TruncatedFile("header is truncated")
    try:
        subject_id = data[pos:pos + id_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("subject id is not valid UTF-8") from exc
    pos += id_len
    (count,) = _U64.unpack_from(data, pos)
    pos += _U64.size
    if count == 0:
        raise EmptyFile(f"subject {subject_id!r} declares no streamlines")
    # every streamline needs at least its 4-byte point count
    if count > (len(data) - pos) // 4:
        raise TruncatedFile(f"declared {count} streamlines exceed the remaining bytes")
    lines = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise TruncatedFile("streamline header is truncated")
        (npts,) = _U32.unpack_from(data, pos)
        pos += 4
        if npts < 2:
            raise InvalidStreamline(f"streamline with {npts} points")
        nbytes = npts * 12
        if pos + nbytes > len(data):
            raise TruncatedFile(f"declared {npts} points exceed the remaining bytes")
        pts = np.frombuffer(data, dtype="<f4", count=npts * 3, offset=pos)
        pos += nbytes
        lines.append(pts.reshape(npts, 3).astype(np.float64))
    if pos != len(data):
        raise TruncatedFile(f"{len(data) - pos} trailing bytes after the declared streamlines")
    if not subject_id:
        raise FormatError("empty subject id")
    return SubjectTract(subject_id, tuple(lines))


def read_ppaf(path) -> SubjectTract:
    """Read one subject's streamlines from a PPAF file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return decode_ppaf(data)


def write_ppaf(tract: SubjectTract, path) -> None:
    """Write ``tract`` as PPAF. Coordinates are rounded to float32."""
    payload = encode_ppaf(tract)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# -- CSV ---------------------------------------------------------------------

def read_csv_tract(path, subject_id: str | None = None) -> SubjectTract:
    """Read a CSV tract; the subject id defaults to the file stem."""
    path = Path(path)
    sid = subject_id or path.stem
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path} is empty")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedRow(f"unexpected header {header}")
        lines = []
        seen = set()
        current = None
        last_index = -1
        points: list = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise MalformedRow(f"line {lineno}: expected 5 fields, got {len(row)}")
            try:
                sl_id = int(row[0])
                idx = int(row[1])
                xyz = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise MalformedRow(f"line {lineno}: {exc}") from exc
            if not all(np.isfinite(xyz)):
                raise NonFiniteCoordinate(f"line {lineno}: non-finite coordinate")
            if sl_id != current:
                if sl_id in seen:
                    raise UnsortedPoints(f"line {lineno}: streamline {sl_id} is not contiguous")
                if points:
                    lines.append(points)
                seen.add(sl_id)
                current = sl_id
                points = []
                last_index = -1
            if idx <= last_index:
                raise UnsortedPoints(f"line {lineno}: point index {idx} after {last_index}")
            last_index = idx
            points.append(xyz)
        if points:
            lines.append(points)
    if not lines:
        raise EmptyFile(f"{path} has no streamlines")
    arrays = tuple(np.asarray(p, dtype=np.float32).astype(np.float64) for p in lines)
    return SubjectTract(sid, arrays)


def write_csv_tract(tract: SubjectTract, path) -> None:
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, s in enumerate(tract.streamlines):
            pts = s.astype(np.float32)
            for j, (x, y, z) in enumerate(pts.tolist()):
                w.writerow((i, j, repr(x), repr(y), repr(z)))


# -- cohorts -----------------------------------------------------------------

def sniff_format(path, override: str | None = None) -> str:
    if override:
        if override not in FORMATS:
            raise FormatError(f"unknown tract format {override!r}")
        return override
    ext = Path(path).suffix.lower().lstrip(".")
    if ext not in FORMATS:
        raise FormatError(f"cannot infer tract format from {path}")
    return ext


def read_tract(path, fmt: str | None = None) -> SubjectTract:
    if sniff_format(path, fmt) == "ppaf":
        return read_ppaf(path)
    return read_csv_tract(path)


def tract_files(directory, fmt: str | None = None) -> list[Path]:
    directory = Path(directory)
    if fmt:
        pattern = "*.ppaf" if fmt == "ppaf" else "*.csv"
        files = directory.glob(pattern)
    else:
        files = (p for p in directory.iterdir() if p.suffix.lower() in (".ppaf", ".csv"))
    return sorted(p for p in files if p.is_file())


def load_cohort(paths: Sequence | str | os.PathLike, fmt: str | None = None,
                threads: int = 1) -> Cohort:
    """Load every tract file (a directory or explicit list), ordered by subject id."""
    if isinstance(paths, (str, os.PathLike)):
        files = tract_files(paths, fmt)
    else:
        files = [Path(p) for p in paths]
    if not files:
        raise EmptyFile(f"no tract files found in {paths}")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            tracts = list(pool.map(lambda p: read_tract(p, fmt), files))
    else:
        tracts = [read_tract(p, fmt) for p in files]
    return Cohort(tuple(tracts)).sorted()


def write_cohort(cohort: Cohort, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for tract in cohort:
        path = directory / f"{tract.subject_id}.ppaf"
        write_ppaf(tract, path)
        out.append(path)
    return out
