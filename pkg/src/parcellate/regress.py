"""Sparse trait regression on compositional connectomes.

The elastic net objective, on standardized predictors and centered response,
is::

    (1/2n) |y - X b|^2 + lam * (alpha |b|_1 + (1 - alpha)/2 |b|^2)

and is minimised by cyclic coordinate descent in covariance form. Fitted
coefficients are reported on the original predictor scale.
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import (
    AlphaZeroPath,
    DegenerateResponseWarning,
    InvalidConfig,
    KTooSmall,
    MalformedRow,
    NoConvergence,
    NonSquare,
    SizeMismatch,
    TooFewSubjects,
)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_CYCLES = 100_000
DEFAULT_N_LAMBDA = 100
DEFAULT_EPS = 1e-3
DEFAULT_FOLDS = 5


# -- design -------------------------------------------------------------------

def design_matrix(connectome, reference: int | None = None) -> np.ndarray:
    """Predictors for the trait regression: omega with one bundle column dropped.

    The proportions sum to one, so one column is redundant with the
    intercept. By default the last bundle is the reference.
    """
    omega = np.asarray(getattr(connectome, "omega", connectome), dtype=np.float64)
    k = omega.shape[1]
    if k < 2:
        raise KTooSmall("at least two bundles are needed for a regression")
    ref = k - 1 if reference is None else reference
    return np.delete(omega, ref, axis=1)


def vectorize_apa(w) -> np.ndarray:
    """Strict upper triangle of a connectivity matrix, row-major."""
    mat = np.asarray(getattr(w, "weights", w))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise NonSquare(f"connectivity matrix has shape {mat.shape}")
    return mat[np.triu_indices(mat.shape[0], k=1)]


# -- traits -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TraitTable:
    subject_ids: tuple
    names: tuple
    values: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def aligned(self, subject_ids) -> "TraitTable":
        """Reorder rows to ``subject_ids``; every id must be present."""
        index = {sid: i for i, sid in enumerate(self.subject_ids)}
        missing = [s for s in subject_ids if s not in index]
        if missing:
            raise MalformedRow(f"no trait values for subjects {missing[:5]}")
        rows = [index[s] for s in subject_ids]
        return TraitTable(tuple(subject_ids), self.names, self.values[rows])


def read_traits_csv(path) -> TraitTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "subject_id" or len(header) < 2:
            raise MalformedRow(f"{path}: expected header subject_id,<trait>,...")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from exc
            if not np.all(np.isfinite(vals)):
                raise MalformedRow(f"{path}:{lineno}: missing or non-finite trait value")
            ids.append(row[0])
            rows.append(vals)
    if len(set(ids)) != len(ids):
        raise MalformedRow(f"{path}: duplicate subject ids")
    values = np.asarray(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)
    return TraitTable(tuple(ids), tuple(header[1:]), values)


def write_traits_csv(table: TraitTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("subject_id",) + tuple(table.names))
        for sid, row in zip(table.subject_ids, table.values):
            w.writerow([sid] + [format(v, ".17g") for v in row.tolist()])


# -- elastic net ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseLinearModel:
    intercept: float
    coefficients: np.ndarray
    lam: float
    alpha: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    trait_name: str = ""
    n_cycles: int = 0

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients != 0)

    @property
    def standardized_coefficients(self) -> np.ndarray:
        return self.coefficients * self.x_scale

    def predict(self, x) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=np.float64) @ self.coefficients


class _Problem:
    """Standardized data shared by every fit on the same (X, y)."""

    def __init__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise SizeMismatch(f"X {x.shape} and y {y.shape} do not align")
        n = x.shape[0]
        if n < 2:
            raise TooFewSubjects("at least two observations are required")
        self.n = n
        self.x_mean = x.mean(axis=0)
        centered = x - self.x_mean
        scale = np.sqrt((centered * centered).mean(axis=0))
        # only exactly-constant columns are dropped
        self.usable = (x.max(axis=0) > x.min(axis=0)) & (scale > 0)
        self.x_scale = np.where(self.usable, scale, 1.0)
        xs = centered / self.x_scale
        xs[:, ~self.usable] = 0.0
        self.xs = xs
        self.y_mean = float(y.mean())
        self.yc = y - self.y_mean
        self.degenerate_y = not bool(y.max() > y.min())
        self.gram = np.ascontiguousarray(xs.T @ xs / n)
        self.corr = np.ascontiguousarray(xs.T @ self.yc / n)

    def lambda_max(self, alpha: float) -> float:
        if alpha <= 0:
            raise AlphaZeroPath("alpha=0 has no finite lambda_max; pass an explicit grid")
        top = float(np.abs(self.corr[self.usable]).max()) if self.usable.any() else 0.0
        lam = top / alpha
        # smallest value whose l1 threshold still zeroes every coordinate
        while lam * alpha < top:
            lam = np.nextafter(lam, np.inf)
        return float(lam)

    def solve(self, lam, alpha, beta=None, tol=DEFAULT_TOL, max_cycles=DEFAULT_MAX_CYCLES):
        p = self.corr.shape[0]
        beta = np.zeros(p) if beta is None else np.array(beta, dtype=np.float64)
        if self.degenerate_y or not self.usable.any():
            return np.zeros(p), 0
        l1 = lam * alpha
        l2 = lam * (1.0 - alpha)
        cycles = kernels.cd_gram(self.gram, self.corr, beta, l1, l2, tol,
                                 int(max_cycles), self.usable.astype(np.uint8))
        if cycles < 0:
            raise NoConvergence(f"no convergence within {max_cycles} cycles at lambda={lam:g}")
        return self._polish(beta, l1, l2), cycles

    def _polish(self, beta, l1, l2):
        """Solve the stationarity equations exactly on the active set found by CD.

        The result replaces ``beta`` only if it keeps the same signs and still
        satisfies the subgradient condition on every inactive coordinate.
        """
        active = np.flatnonzero(beta != 0)
        if active.size == 0:
            return beta
        signs = np.sign(beta[active])
        g_aa = self.gram[np.ix_(active, active)] + l2 * np.eye(active.size)
        if np.linalg.cond(g_aa) > 1e10:
            return beta
        sol = np.linalg.solve(g_aa, self.corr[active] - l1 * signs)
        if not np.all(np.sign(sol) == signs):
            return beta
        candidate = np.zeros_like(beta)
        candidate[active] = sol
        grad = self.corr - self.gram @ candidate
        inactive = self.usable.copy()
        inactive[active] = False
        slack = 1e-12 * max(1.0, float(np.abs(self.corr).max()))
        if np.any(np.abs(grad[inactive]) > l1 + slack):
            return beta
        return candidate

    def to_model(self, beta_std, lam, alpha, name="", cycles=0) -> SparseLinearModel:
        coef = np.where(self.usable, beta_std / self.x_scale, 0.0)
        intercept = self.y_mean - float(self.x_mean @ coef)
        return SparseLinearModel(intercept, coef, float(lam), float(alpha),
                                 self.x_mean.copy(), self.x_scale.copy(), name, cycles)

    def fit_path(self, lambdas, alpha, tol=DEFAULT_TOL, max_cycles=DEFAULT_MAX_CYCLES):
        """Warm-started fits along ``lambdas``; returns standardized coefficient rows."""
        out = np.zeros((len(lambdas), self.corr.shape[0]))
        beta = None
        for i, lam in enumerate(lambdas):
            beta, _ = self.solve(lam, alpha, beta, tol, max_cycles)
            out[i] = beta
        return out


def _check_penalty(lam, alpha):
    if lam < 0:
        raise InvalidConfig("lambda must be non-negative")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfig("alpha must lie in [0, 1]")


def fit_enet(x, y, lam: float, alpha: float = 1.0, *, tol: float = DEFAULT_TOL,
             max_cycles: int = DEFAULT_MAX_CYCLES, name: str = "") -> SparseLinearModel:
    """Fit one elastic net (``alpha=1`` is the LASSO) at penalty ``lam``."""
    _check_penalty(lam, alpha)
    prob = _Problem(x, y)
    if prob.degenerate_y:
        warnings.warn("response has zero variance; returning the intercept-only model",
                      DegenerateResponseWarning, stacklevel=2)
    beta, cycles = prob.solve(lam, alpha, tol=tol, max_cycles=max_cycles)
    return prob.to_model(beta, lam, alpha, name, cycles)


def _path_from_max(lam_max, n_lambda, eps):
    if n_lambda < 1:
        raise InvalidConfig("n_lambda must be at least 1")
    if lam_max == 0:
        return np.zeros(n_lambda)
    path = np.geomspace(lam_max, eps * lam_max, n_lambda) if n_lambda > 1 else np.array([lam_max])
    path[0] = lam_max
    return path


def lambda_path(x, y, alpha: float = 1.0, n_lambda: int = DEFAULT_N_LAMBDA,
                eps: float = DEFAULT_EPS) -> np.ndarray:
    """Log-spaced penalties from lambda_max down to ``eps * lambda_max``."""
    return _path_from_max(_Problem(x, y).lambda_max(alpha), n_lambda, eps)


# -- cross-validation --------------------------------------------------------

def fold_assignment(n: int, folds: int, seed) -> np.ndarray:
    """Seeded shuffle, then contiguous split into ``folds`` near-equal parts."""
    if folds < 2:
        raise InvalidConfig("at least two folds are required")
    if n < folds:
        raise TooFewSubjects(f"{n} subjects cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    for f, part in enumerate(np.array_split(perm, folds)):
        fold_of[part] = f
    return fold_of


@dataclass(frozen=True, eq=False)
class CvResult:
    fold_mse: np.ndarray
    mean_mse: float
    lambdas: np.ndarray
    path_mse: np.ndarray
    chosen_lambda: float
    seed: object
    fold_of: np.ndarray
    model: SparseLinearModel | None = None
    extra: dict = field(default_factory=dict)

    @property
    def folds(self) -> int:
        return int(self.fold_of.max()) + 1


def _fold_path_mse(x, y, train, test, lambdas, alpha, tol, max_cycles):
    prob = _Problem(x[train], y[train])
    betas = prob.fit_path(lambdas, alpha, tol, max_cycles)
    mse = np.empty(len(lambdas))
    for i, beta in enumerate(betas):
        model = prob.to_model(beta, lambdas[i], alpha)
        resid = y[test] - model.predict(x[test])
        mse[i] = float(np.mean(resid * resid))
    return mse


def cross_validate(x, y, alpha: float = 1.0, folds: int = DEFAULT_FOLDS, seed=0, *,
                   lambdas=None, n_lambda: int = DEFAULT_N_LAMBDA, eps: float = DEFAULT_EPS,
                   tol: float = DEFAULT_TOL, max_cycles: int = DEFAULT_MAX_CYCLES,
                   threads: int = 1, name: str = "") -> CvResult:
    """K-fold CV over a penalty path, then a full-data refit at the best penalty.

    The path is computed once on the full data and shared by every fold. The
    chosen penalty minimises mean held-out MSE; exact ties go to the larger
    penalty.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fold_of = fold_assignment(len(y), folds, seed)
    full = _Problem(x, y)
    if lambdas is None:
        lambdas = _path_from_max(full.lambda_max(alpha), n_lambda, eps)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if np.any(np.diff(lambdas) > 0):
        raise InvalidConfig("lambda grid must be non-increasing")

    def run(f):
        return _fold_path_mse(x, y, fold_of != f, fold_of == f, lambdas, alpha, tol, max_cycles)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_fold = list(pool.map(run, range(folds)))
    else:
        per_fold = [run(f) for f in range(folds)]
    path_mse = np.column_stack(per_fold)
    mean_path = path_mse.mean(axis=1)
    best = int(np.argmin(mean_path))
    betas = full.fit_path(lambdas[:best + 1], alpha, tol, max_cycles)
    model = full.to_model(betas[-1], lambdas[best], alpha, name)
    return CvResult(path_mse[best].copy(), float(mean_path[best]), lambdas, path_mse,
                    float(lambdas[best]), seed, fold_of, model)


def null_model_mse(y, folds: int = DEFAULT_FOLDS, seed=0) -> CvResult:
    """CV error of predicting every held-out value by the training-fold mean."""
    y = np.asarray(y, dtype=np.float64)
    fold_of = fold_assignment(len(y), folds, seed)
    mse = np.empty(folds)
    for f in range(folds):
        train = y[fold_of != f]
        resid = y[fold_of == f] - train.mean()
        mse[f] = float(np.mean(resid * resid))
    return CvResult(mse, float(mse.mean()), np.empty(0), mse[None, :], float("nan"),
                    seed, fold_of)


# -- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class ActiveBundleReport:
    trait_name: str
    active_indices: tuple
    active_fiber_count: int

    @property
    def n_active(self) -> int:
        return len(self.active_indices)


def active_report(model: SparseLinearModel, sizes) -> ActiveBundleReport:
    """Active bundles of a fitted model and the population fibers they hold."""
    sizes = np.asarray(sizes, dtype=np.int64)
    p = model.coefficients.shape[0]
    # K sizes with the reference bundle last, or exactly one per predictor
    if sizes.ndim != 1 or sizes.shape[0] not in (p, p + 1):
        raise SizeMismatch(
            f"{sizes.shape[0]} bundle sizes for {p} predictors"
        )
    active = tuple(int(j) for j in model.active_indices)
    return ActiveBundleReport(model.trait_name, active, int(sizes[list(active)].sum()))
