import numpy as np
import pytest

from cpsr.projections import (LRUCache, ProjectionSpec, cached_phi, key_hash, phi_column,
                              phi_history_column, phi_matrix)


def random_keys(rng, n, max_len=4, n_a=4, n_o=5):
    keys = set()
    while len(keys) < n:
        length = int(rng.integers(1, max_len + 1))
        keys.add(tuple((int(rng.integers(n_a)), int(rng.integers(n_o))) for _ in range(length)))
    return sorted(keys)


def test_hashed_single_one():
    v = phi_column(ProjectionSpec("hashed", 4, 9), ((0, 1), (2, 3)))
    assert sorted(v.tolist()) == [0.0, 0.0, 0.0, 1.0]


def test_signed_hashed_flag():
    spec = ProjectionSpec("hashed", 8, 9, signed=True)
    vals = {float(phi_column(spec, ((i, 0),)).sum()) for i in range(40)}
    assert vals == {-1.0, 1.0}


@pytest.mark.parametrize("family", ["spherical", "rademacher", "hashed"])
def test_deterministic(family):
    spec = ProjectionSpec(family, 16, 3)
    key = ((1, 2), (0, 0))
    np.testing.assert_array_equal(phi_column(spec, key), phi_column(spec, key))
    np.testing.assert_array_equal(phi_column(spec, key),
                                  phi_column(ProjectionSpec(family, 16, 3), key))


def test_seed_changes_columns():
    key = ((1, 2),)
    a = phi_column(ProjectionSpec("spherical", 16, 3), key)
    b = phi_column(ProjectionSpec("spherical", 16, 4), key)
    assert not np.allclose(a, b)


def test_pair_boundaries_distinct():
    spec = ProjectionSpec("spherical", 32, 1)
    assert key_hash(((1, 12),)) != key_hash(((11, 2),))
    assert not np.allclose(phi_column(spec, ((1, 12),)), phi_column(spec, ((11, 2),)))
    assert key_hash(((1, 2), (3, 4))) != key_hash(((1, 2),))


def test_spherical_moments():
    d = 2000
    spec = ProjectionSpec("spherical", d, 11)
    m = phi_matrix(spec, random_keys(np.random.default_rng(0), 50))
    x = m.ravel()
    assert x.size == 100_000
    sigma_mean = np.sqrt(1.0 / d / x.size)
    assert abs(x.mean()) <= 3 * sigma_mean
    assert abs(x.var() * d - 1.0) <= 0.05


def test_rademacher_values():
    d = 64
    m = phi_matrix(ProjectionSpec("rademacher", d, 2), random_keys(np.random.default_rng(1), 30))
    np.testing.assert_allclose(np.abs(m), 1 / np.sqrt(d))
    assert abs(np.mean(m > 0) - 0.5) < 0.05


def test_history_columns():
    spec = ProjectionSpec("spherical", 5, 0)
    np.testing.assert_array_equal(phi_history_column(spec, ()), [1, 0, 0, 0, 0, 0])
    h = ((1, 1),)
    col = phi_history_column(spec, h)
    assert col[0] == 0.0
    np.testing.assert_array_equal(col[1:], phi_column(spec, h))
    dummy = ProjectionSpec("spherical", 5, 0, unique_start=False)
    for key in [(), h, ((0, 0), (1, 1))]:
        assert phi_history_column(dummy, key)[0] == 1.0


def test_lru_eviction_order():
    cache = LRUCache(2)
    for k in ["a", "b", "a", "c"]:
        if cache.get(k) is None:
            cache.put(k, k)
    assert "b" not in cache
    assert "a" in cache and "c" in cache


def test_cache_transparent():
    spec = ProjectionSpec("rademacher", 20, 5)
    cache = LRUCache(64)
    for key in random_keys(np.random.default_rng(2), 1000):
        np.testing.assert_array_equal(cached_phi(cache, spec, key), phi_column(spec, key))
    assert len(cache) == 64


def test_second_pass_hits_cache():
    spec = ProjectionSpec("spherical", 10, 5)
    keys = random_keys(np.random.default_rng(3), 300)
    cache = LRUCache(1000)
    first = phi_matrix(spec, keys, cache)
    made = cache.materializations
    second = phi_matrix(spec, keys, cache)
    assert made == 300
    assert cache.materializations == made
    np.testing.assert_array_equal(first, second)


def column_correlations(seed, d=2000):
    m = phi_matrix(ProjectionSpec("spherical", d, seed), random_keys(np.random.default_rng(4), 100))
    return np.abs(np.corrcoef(m.T) - np.eye(100))


def test_column_correlations_bounded():
    assert column_correlations(0).max() <= 4 / np.sqrt(2000)


def test_correlation_exceedances_match_independence():
    # 4950 pairs per seed, two-sided 4-sigma tail about 6.3e-5 each
    over = sum(int((column_correlations(s) > 4 / np.sqrt(2000)).sum() // 2) for s in range(20))
    assert over <= 20


def sparse_unit_pair(rng, keys, nnz):
    idx_x = rng.choice(len(keys), nnz, replace=False)
    idx_y = np.concatenate([idx_x[: nnz // 2], rng.choice(len(keys), nnz - nnz // 2)])
    x = np.zeros(len(keys))
    y = np.zeros(len(keys))
    x[idx_x] = np.abs(rng.normal(size=nnz))
    y[idx_y] += np.abs(rng.normal(size=nnz))
    return x / np.linalg.norm(x), y / np.linalg.norm(y)


def test_hashed_inner_products_on_average():
    keys = random_keys(np.random.default_rng(5), 200)
    rng = np.random.default_rng(6)
    x, y = sparse_unit_pair(rng, keys, 10)
    est = [float((phi_matrix(ProjectionSpec("hashed", 1000, s), keys) @ x)
                 @ (phi_matrix(ProjectionSpec("hashed", 1000, s), keys) @ y))
           for s in range(100)]
    truth = float(x @ y)
    assert abs(np.mean(est) - truth) <= 0.1 * truth


def test_spec_validation():
    with pytest.raises(ValueError):
        ProjectionSpec("gaussian", 4, 0)
    with pytest.raises(ValueError):
        ProjectionSpec("hashed", 0, 0)
    spec = ProjectionSpec("hashed", 4, 7, signed=True)
    assert ProjectionSpec.from_dict(spec.to_dict()) == spec
