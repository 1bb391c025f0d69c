import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parcellate.errors import (
    AlphaZeroPath,
    DegenerateResponseWarning,
    InvalidConfig,
    KTooSmall,
    NonSquare,
    SizeMismatch,
    TooFewSubjects,
)
from parcellate.regress import (
    TraitTable,
    active_report,
    cross_validate,
    design_matrix,
    fit_enet,
    fold_assignment,
    lambda_path,
    null_model_mse,
    read_traits_csv,
    vectorize_apa,
    write_traits_csv,
)


def _problem(seed, n=50, p=10, noise=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p)) * rng.uniform(0.5, 3, size=p) + rng.normal(size=p)
    beta = np.zeros(p)
    beta[rng.choice(p, 3, replace=False)] = rng.normal(scale=2, size=3)
    y = 1.5 + x @ beta + noise * rng.normal(size=n)
    return x, y


def _ols(x, y):
    design = np.column_stack([np.ones(len(y)), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef[0], coef[1:]


def _kkt_violation(model, x, y):
    """Largest violation of the elastic-net subgradient conditions (standardized scale)."""
    n = len(y)
    xs = (x - model.x_mean) / model.x_scale
    b = model.coefficients * model.x_scale
    r = (y - y.mean()) - xs @ b
    g = xs.T @ r / n
    l1 = model.lam * model.alpha
    l2 = model.lam * (1 - model.alpha)
    active = b != 0
    worst = 0.0
    if active.any():
        worst = np.max(np.abs(g[active] - l1 * np.sign(b[active]) - l2 * b[active]))
    if (~active).any():
        worst = max(worst, np.max(np.abs(g[~active]) - l1))
    return worst


def test_design_matrix_examples():
    assert design_matrix(np.array([[0.3, 0.7]])).tolist() == [[0.3]]
    assert design_matrix(np.array([[0.5, 0.25, 0.25]])).tolist() == [[0.5, 0.25]]
    with pytest.raises(KTooSmall):
        design_matrix(np.ones((3, 1)))


def test_reference_column_does_not_change_ols_fit(rng):
    omega = rng.dirichlet(np.ones(5), size=80)
    y = omega @ rng.normal(size=5) * 10 + rng.normal(size=80)
    preds = []
    for ref in (4, 0, 2):
        x = design_matrix(omega, reference=ref)
        preds.append(fit_enet(x, y, 0.0).predict(x))
    np.testing.assert_allclose(preds[1], preds[0], atol=1e-8)
    np.testing.assert_allclose(preds[2], preds[0], atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_lambda_zero_matches_ols(seed):
    x, y = _problem(seed)
    model = fit_enet(x, y, 0.0)
    b0, b = _ols(x, y)
    np.testing.assert_allclose(model.coefficients, b, rtol=0, atol=1e-8)
    assert model.intercept == pytest.approx(b0, abs=1e-8)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_kkt_along_path(seed, alpha):
    x, y = _problem(seed)
    for lam in lambda_path(x, y, alpha, n_lambda=30):
        model = fit_enet(x, y, lam, alpha)
        assert _kkt_violation(model, x, y) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_lambda_max_gives_empty_model(seed):
    x, y = _problem(seed)
    lam_max = lambda_path(x, y, 1.0, n_lambda=1)[0]
    for lam in (lam_max, 2 * lam_max):
        model = fit_enet(x, y, lam)
        assert model.active_indices.size == 0
        assert model.intercept == pytest.approx(y.mean(), abs=1e-12)
    # just below lambda_max something enters
    assert fit_enet(x, y, 0.99 * lam_max).active_indices.size >= 1


def test_lambda_max_formula(rng):
    x, y = _problem(3)
    xs = (x - x.mean(0)) / x.std(0)
    expected = np.max(np.abs(xs.T @ (y - y.mean()))) / len(y) / 0.5
    assert lambda_path(x, y, 0.5, n_lambda=1)[0] == pytest.approx(expected, rel=1e-12)


def test_path_shape():
    x, y = _problem(1)
    path = lambda_path(x, y, n_lambda=100, eps=1e-3)
    assert len(path) == 100
    assert np.all(np.diff(path) < 0)
    assert path[-1] == pytest.approx(1e-3 * path[0], rel=1e-12)
    with pytest.raises(AlphaZeroPath):
        lambda_path(x, y, alpha=0.0)


def test_shrinkage_mostly_monotone():
    hits = 0
    for seed in range(20):
        x, y = _problem(seed)
        sizes = [fit_enet(x, y, lam).active_indices.size for lam in lambda_path(x, y, n_lambda=20)]
        hits += all(a <= b for a, b in zip(sizes, sizes[1:]))
    assert hits >= 19


def test_ridge_limit_matches_closed_form(rng):
    x, y = _problem(7)
    lam = 0.3
    model = fit_enet(x, y, lam, alpha=0.0)
    xs = (x - x.mean(0)) / x.std(0)
    n, p = xs.shape
    b = np.linalg.solve(xs.T @ xs / n + lam * np.eye(p), xs.T @ (y - y.mean()) / n)
    np.testing.assert_allclose(model.coefficients * model.x_scale, b, atol=1e-8)


def test_constant_column_gets_zero(rng):
    x, y = _problem(2)
    x[:, 4] = 3.0
    model = fit_enet(x, y, 0.0)
    assert model.coefficients[4] == 0.0
    np.testing.assert_allclose(model.coefficients[[0, 1, 2, 3]],
                               _ols(np.delete(x, 4, axis=1), y)[1][:4], atol=1e-8)


def test_degenerate_response(rng):
    x = rng.normal(size=(10, 3))
    with pytest.warns(DegenerateResponseWarning):
        model = fit_enet(x, np.full(10, 2.5), 0.1)
    assert model.intercept == 2.5
    assert not model.coefficients.any()


def test_penalty_validation(rng):
    x, y = _problem(0)
    with pytest.raises(InvalidConfig):
        fit_enet(x, y, -1.0)
    with pytest.raises(InvalidConfig):
        fit_enet(x, y, 0.1, alpha=1.5)
    with pytest.raises(TooFewSubjects):
        fit_enet(x[:1], y[:1], 0.1)


def test_fold_assignment_balanced():
    for n, k in [(10, 5), (11, 5), (503, 5), (7, 2)]:
        fold_of = fold_assignment(n, k, seed=4)
        sizes = np.bincount(fold_of, minlength=k)
        assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
    with pytest.raises(TooFewSubjects):
        fold_assignment(3, 5, 0)


def test_cv_deterministic():
    x, y = _problem(5, n=80)
    a = cross_validate(x, y, seed=9, n_lambda=20)
    b = cross_validate(x, y, seed=9, n_lambda=20)
    np.testing.assert_array_equal(a.fold_of, b.fold_of)
    np.testing.assert_array_equal(a.path_mse, b.path_mse)
    assert a.chosen_lambda == b.chosen_lambda
    np.testing.assert_array_equal(a.model.coefficients, b.model.coefficients)
    c = cross_validate(x, y, seed=9, n_lambda=20, threads=4)
    np.testing.assert_array_equal(a.path_mse, c.path_mse)


def test_cv_chooses_minimum_with_ties_to_larger_lambda(rng):
    x = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    lam_max = lambda_path(x, y, n_lambda=1)[0]
    # every penalty above lambda_max gives the same intercept-only fit
    res = cross_validate(x, y, lambdas=[4 * lam_max, 2 * lam_max, lam_max], seed=0)
    assert res.chosen_lambda == 4 * lam_max
    mean = res.path_mse.mean(axis=1)
    assert res.mean_mse == mean.min()


def test_cv_planted_exact_signal(rng):
    omega = rng.dirichlet(np.ones(8), size=120)
    x = design_matrix(omega)
    beta = np.zeros(7)
    beta[[1, 3, 5]] = [4.0, -3.0, 2.0]
    y = 0.7 + x @ beta
    res = cross_validate(x, y, seed=1, n_lambda=100, eps=1e-6)
    assert res.mean_mse < 1e-10
    assert set(res.model.active_indices.tolist()) == {1, 3, 5}


def test_cv_null_trait_close_to_null_model():
    rng = np.random.default_rng(21)
    omega = rng.dirichlet(np.ones(10), size=500)
    x = design_matrix(omega)
    y = rng.normal(size=500)
    res = cross_validate(x, y, seed=3)
    null = null_model_mse(y, seed=3)
    assert abs(res.mean_mse / null.mean_mse - 1) <= 0.05
    np.testing.assert_array_equal(res.fold_of, null.fold_of)


def test_null_constant_y():
    assert null_model_mse(np.full(10, 3.0), folds=5, seed=0).mean_mse == 0.0


def test_null_hand_computed():
    y = np.array([1.0, -1.0, 1.0, -1.0])
    res = null_model_mse(y, folds=2, seed=0)
    fold_of = res.fold_of
    for f in range(2):
        test = y[fold_of == f]
        if sorted(test.tolist()) == [-1.0, 1.0]:
            # training fold is also balanced: mean 0, squared error 1
            assert res.fold_mse[f] == 1.0
        else:
            # training fold holds the opposite sign twice: error 2 ** 2
            assert res.fold_mse[f] == 4.0
    assert np.all(res.fold_mse >= 0)


@pytest.mark.parametrize("seed", range(4))
def test_null_approximates_variance(seed):
    y = np.random.default_rng(seed).normal(3.0, 2.0, size=2000)
    res = null_model_mse(y, seed=seed)
    assert res.mean_mse == pytest.approx(y.var(ddof=1), rel=0.02)


def test_active_report_examples():
    x, y = _problem(0, p=3)
    empty = fit_enet(x, y, 1e6)
    rep = active_report(empty, [5, 5, 5, 5])
    assert rep.active_indices == () and rep.active_fiber_count == 0
    model = fit_enet(x, y, 0.0)
    object.__setattr__(model, "coefficients", np.array([0.0, 1.0, 0.0, -2.0]))
    assert active_report(model, [10, 20, 30, 40]).active_fiber_count == 60
    with pytest.raises(SizeMismatch):
        active_report(model, [1, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 12))
def test_active_count_bounded(seed, k):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(0, 100, size=k)
    x = rng.normal(size=(20, k - 1))
    y = rng.normal(size=20)
    model = fit_enet(x, y, rng.uniform(0, 0.3))
    assert active_report(model, sizes).active_fiber_count <= sizes.sum()


def test_vectorize_examples():
    w = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 9]])
    assert vectorize_apa(w).tolist() == [1, 2, 3]
    assert vectorize_apa(np.zeros((80, 80))).shape == (3160,)
    with pytest.raises(NonSquare):
        vectorize_apa(np.zeros((2, 3)))


def test_vectorize_permutation_oracle(rng):
    a = rng.integers(0, 9, size=(6, 6))
    w = a + a.T
    perm = rng.permutation(6)
    wp = w[np.ix_(perm, perm)]
    pairs = {(min(perm[i], perm[j]), max(perm[i], perm[j])): wp[i, j]
             for i in range(6) for j in range(i + 1, 6)}
    iu = np.triu_indices(6, 1)
    np.testing.assert_array_equal(vectorize_apa(w), [pairs[(i, j)] for i, j in zip(*iu)])


def test_traits_csv_round_trip(tmp_path, rng):
    table = TraitTable(("b", "a", "c"), ("t1", "t2"), rng.normal(size=(3, 2)))
    write_traits_csv(table, tmp_path / "traits.csv")
    back = read_traits_csv(tmp_path / "traits.csv")
    assert back.subject_ids == table.subject_ids and back.names == table.names
    np.testing.assert_array_equal(back.values, table.values)
    aligned = back.aligned(("a", "b", "c"))
    np.testing.assert_array_equal(aligned.column("t1"), table.values[[1, 0, 2], 0])
