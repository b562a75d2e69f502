import numpy as np
import pytest

from episodica.episodes import classify_1nn
from episodica.exceptions import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    FormatError,
)
from episodica.pca import (
    explained_variance_ratio,
    inverse_transform,
    jacobi_eigh,
    load_pca,
    pca_fit,
    pca_transform,
    save_pca,
)


def _data(n=200, d=6, seed=0):
    rng = np.random.default_rng(seed)
    mixing = rng.normal(size=(d, d)) * np.linspace(3.0, 0.2, d)[:, None]
    return rng.normal(size=(n, d)) @ mixing + rng.normal(size=d)


def test_jacobi_matches_reference_eigenvalues():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(7, 7))
    symmetric = a + a.T
    values, vectors = jacobi_eigh(symmetric)
    np.testing.assert_allclose(np.sort(values), np.linalg.eigvalsh(symmetric), atol=1e-8)
    np.testing.assert_allclose(symmetric @ vectors, vectors * values, atol=1e-8)


def test_collinear_data_has_one_component():
    direction = np.array([1.0, 2.0, -2.0, 0.5])
    t = np.random.default_rng(2).normal(size=(50, 1))
    model = pca_fit(t * direction + 3.0, 1)
    assert explained_variance_ratio(model)[0] == pytest.approx(1.0, abs=1e-9)
    unit = direction / np.linalg.norm(direction)
    assert abs(model.components[0] @ unit) == pytest.approx(1.0, abs=1e-9)


def test_isotropic_data_spreads_variance_evenly():
    x = np.random.default_rng(3).normal(size=(10000, 4))
    model = pca_fit(x, 4)
    np.testing.assert_allclose(model.explained_variance, 1.0, rtol=0.1)
    ratios = explained_variance_ratio(model)
    np.testing.assert_allclose(ratios, 0.25, rtol=0.1)


def test_components_are_orthonormal_and_ordered():
    model = pca_fit(_data(), 4)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(4), atol=1e-10)
    assert np.all(np.diff(model.explained_variance) <= 0)
    assert model.explained_variance.sum() <= model.total_variance + 1e-9


def test_projected_variance_is_the_explained_variance():
    x = _data(seed=4)
    model = pca_fit(x, 3)
    y = pca_transform(model, x)
    np.testing.assert_allclose(y.var(axis=0, ddof=1), model.explained_variance, rtol=1e-4)
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-9)


def test_full_rank_transform_preserves_distances():
    x = _data(n=40, d=5, seed=5)
    y = pca_transform(pca_fit(x, 5), x)
    original = np.linalg.norm(x[:, None] - x[None], axis=2)
    projected = np.linalg.norm(y[:, None] - y[None], axis=2)
    np.testing.assert_allclose(projected, original, atol=1e-8)


def test_full_rank_transform_preserves_nearest_neighbours():
    x = _data(n=60, d=5, seed=6)
    y = pca_transform(pca_fit(x, 5), x)
    np.testing.assert_array_equal(classify_1nn(y[:20], y[20:]), classify_1nn(x[:20], x[20:]))


def test_transform_of_inverse_is_identity():
    x = _data(seed=7)
    model = pca_fit(x, 3)
    y = pca_transform(model, x)
    np.testing.assert_allclose(pca_transform(model, inverse_transform(model, y)), y, atol=1e-9)


def test_sign_convention():
    components = pca_fit(_data(seed=8), 6).components
    pivots = components[np.arange(6), np.argmax(np.abs(components), axis=1)]
    assert np.all(pivots > 0)


@pytest.mark.parametrize("n,out_dim", [(1, 1), (10, 0), (10, 7), (5, 5)])
def test_invalid_fit_settings(n, out_dim):
    with pytest.raises(ConfigError):
        pca_fit(_data(n=n, d=6), out_dim)


def test_constant_data_is_degenerate():
    with pytest.raises(DegenerateInputError):
        pca_fit(np.full((10, 3), 2.5), 1)


def test_dimension_checks():
    model = pca_fit(_data(), 2)
    with pytest.raises(ContractError):
        pca_transform(model, np.ones((3, 5)))
    with pytest.raises(ContractError):
        inverse_transform(model, np.ones((3, 3)))
    with pytest.raises(DimensionError):
        pca_fit(np.ones(6), 1)


def test_save_and_load(tmp_path):
    model = pca_fit(_data(seed=9), 3)
    save_pca(model, tmp_path / "pca")
    loaded = load_pca(tmp_path / "pca")
    assert (loaded.in_dim, loaded.out_dim) == (6, 3)
    np.testing.assert_allclose(loaded.components, model.components, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(loaded.mean, model.mean, rtol=1e-6)
    assert loaded.total_variance == pytest.approx(model.total_variance, rel=1e-6)


def test_load_reports_missing_tensor(tmp_path):
    save_pca(pca_fit(_data(), 2), tmp_path)
    (tmp_path / "components.eten").unlink()
    with pytest.raises(FormatError, match="components.eten"):
        load_pca(tmp_path)
