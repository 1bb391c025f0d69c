"""End-to-end acceptance criteria, one test per criterion.

The terminal summary prints one PASS/FAIL line per test in this module.
"""
import time

import numpy as np
import pytest

from conftest import output_files, random_tract, run_full_pipeline
from parcellate.atlas import (
    Atlas,
    build_apa,
    decode_atlas,
    encode_atlas,
    load_atlas,
    save_atlas,
    threshold_matrix,
)
from parcellate.bundler import assign, fit, flip_distance2, lloyd, objective
from parcellate.connectome import bundle_sizes, compose
from parcellate.preprocess import extract_endpoints
from parcellate.regress import (
    cross_validate,
    design_matrix,
    fit_enet,
    lambda_path,
    null_model_mse,
)
from parcellate.seeds import derive_seed
from parcellate.synth import SynthConfig, generate, recovery_score
from parcellate.tracts_io import Cohort, SubjectTract, encode_ppaf, read_ppaf, write_ppaf

pytestmark = pytest.mark.slow


def _ppa(data, k, traits_y, seed):
    """Bundle, compose and cross-validate one trait; mirrors the CLI chain."""
    model = fit(data, k, seed=derive_seed(seed, "bundle"))
    labels = assign(model, data)
    conn = compose(labels, data, k)
    cv_seed = derive_seed(seed, "cv")
    cv = cross_validate(design_matrix(conn), traits_y, seed=cv_seed)
    null = null_model_mse(traits_y, seed=cv_seed)
    return labels, cv, null


def test_flip_invariance():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    tract = random_tract(rng, "s", n_fibers=10_000, max_points=5, scale=80)
    reversed_tract = SubjectTract("s", tuple(s[::-1] for s in tract.streamlines))
    data = extract_endpoints(Cohort((tract,)))
    rdata = extract_endpoints(Cohort((reversed_tract,)))
    model = fit(data, 20, batch_size=500, iterations=200, seed=1)
    a, b = assign(model, data), assign(model, rdata)
    assert np.array_equal(a.bundle_index, b.bundle_index)
    assert np.array_equal(a.distance2, b.distance2)
    for i in range(data.n_fibers):
        c = model.centroids[a.bundle_index[i]]
        assert flip_distance2(data.z[i], c)[0] == flip_distance2(rdata.z[i], c)[0]
    assert time.perf_counter() - start < 5


def test_clustering_recovery(record_property):
    start = time.perf_counter()
    cfg = SynthConfig(n_subjects=50, k_true=20, seed=0)
    assert cfg.min_center_separation is None  # default is 50 sigma
    cohort, _, truth = generate(cfg)
    data = extract_endpoints(cohort)
    model = fit(data, 20, seed=derive_seed(0, "bundle"))
    ari = recovery_score(truth, assign(model, data))
    elapsed = time.perf_counter() - start
    record_property("detail", f"ARI={ari:.4f} m={data.n_fibers} t={elapsed:.1f}s")
    assert ari >= 0.95
    assert elapsed < 60


def test_minibatch_vs_lloyd(record_property):
    ratios = []
    for seed in range(5):
        cfg = SynthConfig(n_subjects=10, k_true=5, fibers_per_subject=(200, 200),
                          endpoint_noise_sigma=8.0, min_center_separation=25.0, seed=seed)
        cohort, _, _ = generate(cfg)
        data = extract_endpoints(cohort)
        assert data.n_fibers == 2000
        model = fit(data, 5, seed=seed)
        centroids, _ = lloyd(data, 5, seed=seed)
        ratios.append(objective(model, data) / objective(centroids, data))
    record_property("detail", f"objective ratios {np.round(ratios, 4).tolist()}")
    assert max(ratios) <= 1.2


def _kkt_violation(model, x, y):
    xs = (x - model.x_mean) / model.x_scale
    b = model.coefficients * model.x_scale
    g = xs.T @ ((y - y.mean()) - xs @ b) / len(y)
    l1, l2 = model.lam * model.alpha, model.lam * (1 - model.alpha)
    on = b != 0
    worst = np.max(np.abs(g[on] - l1 * np.sign(b[on]) - l2 * b[on]), initial=0.0)
    return max(worst, np.max(np.abs(g[~on]) - l1, initial=0.0))


def _lasso_problem(seed):
    rng = np.random.default_rng(1000 + seed)
    x = rng.normal(size=(50, 10)) * rng.uniform(0.5, 2, size=10)
    beta = np.where(rng.random(10) < 0.4, rng.normal(scale=2, size=10), 0.0)
    y = rng.normal() + x @ beta + rng.normal(size=50)
    return x, y


def test_lasso_correctness():
    for seed in range(20):
        _check_lasso(*_lasso_problem(seed))


def _check_lasso(x, y):
    design = np.column_stack([np.ones(50), x])
    ols = np.linalg.solve(design.T @ design, design.T @ y)
    model = fit_enet(x, y, 0.0)
    assert np.max(np.abs(model.coefficients - ols[1:])) <= 1e-8
    assert abs(model.intercept - ols[0]) <= 1e-8
    path = lambda_path(x, y)
    for lam in path:
        assert _kkt_violation(fit_enet(x, y, lam), x, y) <= 1e-6
    for lam in (path[0], 1.5 * path[0], 1e3 * path[0]):
        assert fit_enet(x, y, lam).active_indices.size == 0


def test_composition_closure():
    for seed in range(10):
        _check_closure(np.random.default_rng(seed))


def _check_closure(rng):
    subjects = tuple(random_tract(rng, f"s{i}", n_fibers=int(rng.integers(1, 200)))
                     for i in range(int(rng.integers(1, 30))))
    data = extract_endpoints(Cohort(subjects))
    k = int(rng.integers(1, 50))
    centroids = rng.uniform(-50, 50, size=(k, 6))
    labels = assign(centroids, data)
    omega = compose(labels, data, k).omega
    assert np.all(np.abs(omega.sum(axis=1) - 1.0) <= 1e-12)
    assert bundle_sizes(labels, k).sum() == data.n_fibers


def _signal_config(seed):
    beta = np.zeros(19)
    beta[[1, 4, 7, 10, 13]] = [30.0, -30.0, 25.0, -25.0, 20.0]
    base = dict(n_subjects=500, k_true=20, fibers_per_subject=(100, 200),
                beta_true=beta.tolist(), seed=seed)
    _, _, truth = generate(SynthConfig(trait_noise_sigma=0.0, **base))
    # SNR = var(signal) / var(noise) = 2
    sigma = float(np.sqrt(truth.traits.var() / 2.0))
    return SynthConfig(trait_noise_sigma=sigma, **base), [1, 4, 7, 10, 13]


def test_end_to_end_signal_detection(record_property):
    start = time.perf_counter()
    cfg, true_active = _signal_config(seed=11)
    cohort, traits, truth = generate(cfg)
    data = extract_endpoints(cohort)
    labels, cv, null = _ppa(data, 20, traits.column("trait"), seed=3)
    # map each fitted bundle to the planted bundle holding most of its fibers
    majority = {}
    for j in np.unique(labels.bundle_index):
        members = truth.labels[labels.bundle_index == j]
        majority[int(j)] = int(np.bincount(members).argmax())
    found = {majority[int(j)] for j in cv.model.active_indices} & set(true_active)
    elapsed = time.perf_counter() - start
    ratio = cv.mean_mse / null.mean_mse
    record_property("detail", f"cv/null={ratio:.3f} found={sorted(found)} t={elapsed:.1f}s")
    assert ratio <= 0.8
    assert len(found) >= 3
    assert elapsed < 120


def test_null_trait_calibration(record_property):
    cfg = SynthConfig(n_subjects=300, k_true=20, fibers_per_subject=(100, 200), seed=21)
    cohort, traits, _ = generate(cfg)
    data, y = extract_endpoints(cohort), traits.column("trait")
    ratios = {}
    for k in (10, 50, 100):
        _, cv, null = _ppa(data, k, y, seed=4)
        ratios[k] = cv.mean_mse / null.mean_mse
    record_property("detail", "cv/null " + " ".join(f"K={k}:{r:.4f}" for k, r in ratios.items()))
    assert all(abs(r - 1.0) <= 0.05 for r in ratios.values())


def test_parsimony(record_property):
    counts = []
    for seed in range(10):
        cfg = SynthConfig(n_subjects=200, k_true=20, fibers_per_subject=(50, 100), seed=100 + seed)
        cohort, traits, _ = generate(cfg)
        data = extract_endpoints(cohort)
        _, cv, _ = _ppa(data, 20, traits.column("trait"), seed=seed)
        counts.append(int(cv.model.active_indices.size))
    record_property("detail", f"selected counts {counts}")
    assert np.median(counts) <= 2


def test_apa_summary_formulas():
    atlas = Atlas(np.array([1, 2]).reshape(2, 1, 1), np.eye(4), ("a", "b"))
    lines = tuple(np.array([[0, 0, 0], [0, y, 0], [1, y, 0], [1, 0, 0]], dtype=float)
                  for y in (0.5, 1.5, 2.5))
    tract = SubjectTract("s", lines)
    assert build_apa(tract, atlas, "count").get(1, 2) == 3
    assert build_apa(tract, atlas, "ncount").get(1, 2) == 0.75
    assert build_apa(tract, atlas, "ncount2").get(1, 2) == 11 / 12
    w = np.array([[10.0, 4.0, 6.0, 4.99],
                  [4.0, 0.0, 5.0, 1.0],
                  [6.0, 5.0, 2.0, 9.0],
                  [4.99, 1.0, 9.0, 0.0]])
    kept = threshold_matrix(w, 0.5)
    sub_max = w < 5.0
    assert np.all(kept[sub_max] == 0)
    assert np.array_equal(kept[~sub_max], w[~sub_max])


def _random_atlas(rng):
    dims = tuple(int(v) for v in rng.integers(1, 9, size=3))
    p = int(rng.integers(1, 90))
    affine = np.eye(4)
    affine[:3, :3] = np.diag(rng.uniform(0.5, 4, size=3)) + rng.normal(scale=0.2, size=(3, 3))
    affine[:3, 3] = rng.normal(scale=50, size=3)
    names = tuple(f"R{i}_{'x' * int(rng.integers(0, 12))}" for i in range(p))
    return Atlas(rng.integers(0, p + 1, size=dims), affine, names)


def test_format_fidelity(tmp_path):
    rng = np.random.default_rng(2024)
    for i in range(100):
        tract = random_tract(rng, f"subject-{i}-ü", max_points=30)
        path = tmp_path / f"{i}.ppaf"
        write_ppaf(tract, path)
        raw = path.read_bytes()
        back = read_ppaf(path)
        assert back == tract and encode_ppaf(back) == raw
    for i in range(100):
        atlas = _random_atlas(rng)
        path = tmp_path / f"{i}.atl"
        save_atlas(atlas, path)
        raw = path.read_bytes()
        back = load_atlas(path)
        assert back == atlas and encode_atlas(back) == raw
        assert decode_atlas(raw) == atlas


def test_determinism_across_threads(tmp_path):
    assert run_full_pipeline(tmp_path / "t1", threads=1) == [0] * 8
    assert run_full_pipeline(tmp_path / "t8", threads=8) == [0] * 8
    a, b = output_files(tmp_path / "t1"), output_files(tmp_path / "t8")
    assert len(a) > 30 and a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name
