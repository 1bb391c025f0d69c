"""Synthetic cohorts with planted bundles and sparse trait effects.

Every subject draws bundle proportions from a Dirichlet, a fiber count, and
multinomial bundle memberships. A fiber's endpoints are its bundle center
plus isotropic Gaussian noise, and its orientation is reversed with
probability ``flip_probability``. Traits are linear in the realized
proportions of the first ``k_true - 1`` bundles plus Gaussian noise.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .atlas import Atlas
from .errors import InvalidConfig, LengthMismatch
from .hcp842 import HCP842_ROI_NAMES
from .regress import TraitTable
from .seeds import derive_seed
from .tracts_io import Cohort, SubjectTract


@dataclass
class SynthConfig:
    n_subjects: int = 50
    k_true: int = 20
    bundle_centers: list | None = None
    endpoint_noise_sigma: float = 1.0
    min_center_separation: float | None = None
    center_box: float = 80.0
    fibers_per_subject: tuple = (200, 400)
    dirichlet_concentration: float | list = 1.0
    beta_true: list | None = None
    intercept: float = 0.0
    trait_noise_sigma: float = 1.0
    trait_name: str = "trait"
    flip_probability: float = 0.5
    midpoints: int = 0
    midpoint_jitter: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.fibers_per_subject = tuple(int(v) for v in self.fibers_per_subject)
        self.validate()

    def validate(self):
        if self.n_subjects < 1:
            raise InvalidConfig("n_subjects must be positive")
        if self.k_true < 1:
            raise InvalidConfig("k_true must be positive")
        lo, hi = self.fibers_per_subject
        if not 1 <= lo <= hi:
            raise InvalidConfig("fibers_per_subject must be a range (lo, hi) with 1 <= lo <= hi")
        if self.endpoint_noise_sigma < 0 or self.trait_noise_sigma < 0:
            raise InvalidConfig("noise levels must be non-negative")
        if not 0 <= self.flip_probability <= 1:
            raise InvalidConfig("flip_probability must lie in [0, 1]")
        if self.midpoints < 0 or self.midpoint_jitter < 0:
            raise InvalidConfig("midpoints and midpoint_jitter must be non-negative")
        conc = self.concentration
        if conc.shape != (self.k_true,) or not np.all(conc > 0):
            raise InvalidConfig("dirichlet_concentration must be positive, one per bundle")
        if self.beta_true is not None and len(self.beta_true) != self.k_true - 1:
            raise InvalidConfig(f"beta_true needs k_true - 1 = {self.k_true - 1} entries")
        if self.bundle_centers is not None:
            centers = np.asarray(self.bundle_centers, dtype=float)
            if centers.shape != (self.k_true, 6) or not np.isfinite(centers).all():
                raise InvalidConfig("bundle_centers must be a finite k_true x 6 array")

    @property
    def concentration(self) -> np.ndarray:
        c = np.asarray(self.dirichlet_concentration, dtype=float)
        return np.full(self.k_true, float(c)) if c.ndim == 0 else c

    @property
    def beta(self) -> np.ndarray:
        if self.beta_true is None:
            return np.zeros(self.k_true - 1)
        return np.asarray(self.beta_true, dtype=float)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown synth config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "SynthConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fibers_per_subject"] = list(self.fibers_per_subject)
        return d


@dataclass(eq=False)
class SynthTruth:
    labels: np.ndarray
    omega_star: np.ndarray
    omega: np.ndarray
    centers: np.ndarray
    traits: np.ndarray
    subject_ids: tuple
    flipped: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        return {
            "subject_ids": list(self.subject_ids),
            "centers": self.centers.tolist(),
            "omega_star": self.omega_star.tolist(),
            "omega": self.omega.tolist(),
            "labels": self.labels.tolist(),
            "traits": self.traits.tolist(),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")


def flip_sq_distance(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    direct = np.sum((x - y) ** 2)
    flipped = np.sum((x - np.r_[y[3:], y[:3]]) ** 2)
    return float(min(direct, flipped))


def planted_centers(k: int, separation: float, box: float, seed) -> np.ndarray:
    """Rejection-sample k endpoint-pair centers at least ``separation`` mm apart.

    Distances are orientation-free, and each center's own endpoints are also
    kept ``separation`` apart so no fiber is close to its own reversal.
    """
    rng = np.random.default_rng(seed)
    centers = []
    tries = 0
    while len(centers) < k:
        tries += 1
        if tries > 10_000 * k:
            raise InvalidConfig(f"cannot place {k} centers {separation} mm apart in the box")
        cand = rng.uniform(-box, box, size=6)
        if np.linalg.norm(cand[:3] - cand[3:]) < separation:
            continue
        if all(flip_sq_distance(cand, c) >= separation ** 2 for c in centers):
            centers.append(cand)
    return np.asarray(centers)


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _subject(config, centers, conc, seq, index):
    rng = np.random.default_rng(seq)
    lo, hi = config.fibers_per_subject
    omega_star = rng.dirichlet(conc)
    m = int(rng.integers(lo, hi + 1))
    counts = rng.multinomial(m, omega_star)
    labels = rng.permutation(np.repeat(np.arange(config.k_true), counts))
    sigma = config.endpoint_noise_sigma
    ends = centers[labels] + sigma * rng.standard_normal((m, 6))
    # drawn unconditionally so the flip probability does not shift other draws
    flip = rng.random(m) < config.flip_probability
    ends[flip] = np.roll(ends[flip], 3, axis=1)
    q = config.midpoints
    jitter = rng.standard_normal((m, q, 3)) * config.midpoint_jitter if q else None
    lines = []
    for f in range(m):
        a, b = ends[f, :3], ends[f, 3:]
        if q:
            t = (np.arange(1, q + 1) / (q + 1))[:, None]
            inner = a + t * (b - a) + jitter[f]
            pts = np.vstack([a, inner, b])
        else:
            pts = np.vstack([a, b])
        lines.append(_f32(pts))
    tract = SubjectTract(f"sub-{index:04d}", tuple(lines))
    return tract, labels, flip, omega_star, counts / m


def generate(config: SynthConfig, threads: int = 1):
    """Build ``(cohort, traits, truth)`` for ``config``; fully determined by its seed."""
    config.validate()
    root = np.random.SeedSequence(derive_seed(config.seed, "synth"))
    center_seq, trait_seq, subject_root = root.spawn(3)
    if config.bundle_centers is not None:
        centers = np.asarray(config.bundle_centers, dtype=float)
    else:
        sep = config.min_center_separation
        if sep is None:
            sep = max(50.0 * config.endpoint_noise_sigma, 10.0)
        centers = planted_centers(config.k_true, sep, config.center_box, center_seq)
    conc = config.concentration
    seqs = subject_root.spawn(config.n_subjects)

    def run(i):
        return _subject(config, centers, conc, seqs[i], i)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(config.n_subjects)))
    else:
        parts = [run(i) for i in range(config.n_subjects)]
    tracts, labels, flips, omega_star, omega = zip(*parts)
    omega = np.vstack(omega)
    beta = config.beta
    signal = config.intercept + omega[:, :config.k_true - 1] @ beta
    noise = np.random.default_rng(trait_seq).standard_normal(config.n_subjects)
    y = signal + config.trait_noise_sigma * noise
    cohort = Cohort(tuple(tracts))
    ids = tuple(cohort.subject_ids)
    traits = TraitTable(ids, (config.trait_name,), y[:, None].copy())
    truth = SynthTruth(np.concatenate(labels), np.vstack(omega_star), omega, centers,
                       y, ids, np.concatenate(flips))
    return cohort, traits, truth


def adjusted_rand_index(labels_true, labels_pred) -> float:
    """Adjusted Rand Index between two partitions given as label arrays."""
    a = np.asarray(labels_true)
    b = np.asarray(labels_pred)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"label arrays differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        return 1.0
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def pairs(x):
        x = x.astype(np.float64)
        return float((x * (x - 1) / 2).sum())

    index = pairs(table.ravel())
    rows = pairs(table.sum(axis=1))
    cols = pairs(table.sum(axis=0))
    expected = rows * cols / (n * (n - 1) / 2)
    top = (rows + cols) / 2
    if top == expected:
        return 1.0
    return (index - expected) / (top - expected)


def recovery_score(truth: SynthTruth | np.ndarray, assignment) -> float:
    """ARI between planted fiber labels and inferred bundle labels."""
    true = getattr(truth, "labels", truth)
    pred = getattr(assignment, "bundle_index", assignment)
    return adjusted_rand_index(true, pred)


def block_atlas(box: float = 100.0, voxel: float = 4.0, grid=(4, 4, 5),
                names=HCP842_ROI_NAMES) -> Atlas:
    """Cube atlas over ``[-box, box]^3`` split into a grid of labelled blocks.

    The default 4 x 4 x 5 grid carries the 80 HCP842 ROI names.
    """
    gx, gy, gz = grid
    if gx * gy * gz != len(names):
        raise InvalidConfig("grid size must match the number of ROI names")
    n = int(round(2 * box / voxel))
    idx = np.arange(n)
    bx = idx * gx // n
    by = idx * gy // n
    bz = idx * gz // n
    labels = (bx[:, None, None] + gx * by[None, :, None] + gx * gy * bz[None, None, :]) + 1
    affine = np.diag([voxel, voxel, voxel, 1.0])
    affine[:3, 3] = -box + voxel / 2
    return Atlas(labels.astype(np.uint16), affine, tuple(names))
