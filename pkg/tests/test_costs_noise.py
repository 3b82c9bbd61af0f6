"""Ground-cost builders and synthetic noise injection."""

import numpy as np
import pytest

from otcp import (
    DataError,
    SparseTensor,
    build_cost_cosine,
    build_cost_identity,
    build_cost_random,
    build_kernel,
    build_mode_costs,
    inject_noise_bernoulli,
    inject_noise_poisson,
    matricize,
)
from conftest import dense_unfold, random_sparse


# ---------------------------------------------------------------------------
# cosine costs


def cosine_oracle(dense, mode):
    """Brute-force cosine distances between unfolding rows."""
    rows = dense_unfold(dense, mode)
    dim = rows.shape[0]
    cost = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(dim):
            if i == j:
                continue
            ni = np.linalg.norm(rows[i])
            nj = np.linalg.norm(rows[j])
            if ni == 0 or nj == 0:
                cost[i, j] = 1.0
            else:
                cost[i, j] = 1.0 - float(rows[i] @ rows[j]) / (ni * nj)
    return np.clip(cost, 0.0, None)


def test_cosine_matches_oracle(rng):
    tensor = random_sparse(rng, (4, 3, 5), density=0.4)
    dense = tensor.to_dense()
    for mode in range(3):
        got = build_cost_cosine(tensor, mode)
        np.testing.assert_allclose(got, cosine_oracle(dense, mode), atol=1e-12)
        build_kernel(got, rho=5.0)  # exactly symmetric, zero diagonal, valid


def test_cosine_identical_slices_have_zero_distance():
    # slices 0 and 1 of mode 0 identical; slice 2 empty
    coords = [[0, 0, 0], [1, 0, 0], [0, 1, 1], [1, 1, 1]]
    vals = [0.4, 0.4, 0.7, 0.7]
    t = SparseTensor((3, 2, 2), np.array(coords), np.array(vals))
    cost = build_cost_cosine(t, 0)
    assert cost[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert cost[0, 2] == 1.0 and cost[2, 1] == 1.0
    assert cost[2, 2] == 0.0
    build_kernel(cost, rho=3.0)


def test_cosine_is_a_proper_cost(rng):
    tensor = random_sparse(rng, (6, 4, 3), density=0.25)
    for mode in range(3):
        cost = build_cost_cosine(tensor, mode)
        assert np.array_equal(cost, cost.T)
        assert (np.diagonal(cost) == 0).all()
        assert cost.min() >= 0.0


# ---------------------------------------------------------------------------
# identity and random costs


def test_identity_cost():
    np.testing.assert_array_equal(build_cost_identity(3),
                                  np.ones((3, 3)) - np.eye(3))
    with pytest.raises(DataError):
        build_cost_identity(0)


def test_random_cost_is_a_deterministic_semimetric():
    c1 = build_cost_random(6, seed=11)
    c2 = build_cost_random(6, seed=11)
    np.testing.assert_array_equal(c1, c2)
    assert not np.array_equal(c1, build_cost_random(6, seed=12))
    build_kernel(c1, rho=2.0)
    assert (c1[~np.eye(6, dtype=bool)] > 0).all()
    # shortest-path closure enforces the triangle inequality
    for i in range(6):
        for j in range(6):
            for k in range(6):
                assert c1[i, j] <= c1[i, k] + c1[k, j] + 1e-12
    assert build_cost_random(1, seed=0).shape == (1, 1)


def test_build_mode_costs_dispatch(rng):
    tensor = random_sparse(rng, (3, 4, 2), density=0.5)
    cos = build_mode_costs(tensor, "cosine")
    assert len(cos) == 3
    for n, c in enumerate(cos):
        np.testing.assert_array_equal(c, build_cost_cosine(tensor, n))
    ident = build_mode_costs(tensor, "identity")
    for n, c in enumerate(ident):
        np.testing.assert_array_equal(c, build_cost_identity(tensor.shape[n]))
    rand = build_mode_costs(tensor, "random", seed=7)
    assert [c.shape[0] for c in rand] == [3, 4, 2]
    # per-mode seeds differ, so equal extents still get different draws
    square = build_mode_costs(random_sparse(rng, (3, 3), density=0.5),
                              "random", seed=7)
    assert not np.array_equal(square[0], square[1])
    with pytest.raises(DataError):
        build_mode_costs(tensor, "euclidean")


# ---------------------------------------------------------------------------
# noise injection


def binary_tensor(rng, shape, nnz):
    total = int(np.prod(shape))
    cells = rng.choice(total, size=nnz, replace=False)
    coords = np.stack(np.unravel_index(cells, shape), axis=1)
    return SparseTensor(shape, coords, np.ones(nnz))


def test_bernoulli_noise_only_fills_zero_cells(rng):
    t = binary_tensor(rng, (6, 5, 4), 30)
    noisy = inject_noise_bernoulli(t, p=0.5, seed=4)
    assert noisy.shape == t.shape
    assert (noisy.values == 1.0).all()
    old = set(map(tuple, t.coords.tolist()))
    new = set(map(tuple, noisy.coords.tolist()))
    assert old <= new
    budget = min(t.nnz, int(np.prod(t.shape)) - t.nnz)
    assert len(new) - len(old) <= budget
    # original support is intact
    dense_old, dense_new = t.to_dense(), noisy.to_dense()
    assert (dense_new[dense_old > 0] == dense_old[dense_old > 0]).all()


def test_bernoulli_noise_determinism_and_extremes(rng):
    t = binary_tensor(rng, (5, 5, 3), 20)
    n1 = inject_noise_bernoulli(t, p=0.4, seed=9)
    n2 = inject_noise_bernoulli(t, p=0.4, seed=9)
    np.testing.assert_array_equal(n1.coords, n2.coords)
    assert inject_noise_bernoulli(t, p=0.0, seed=9).nnz == t.nnz
    full = inject_noise_bernoulli(t, p=1.0, seed=9)
    assert full.nnz == t.nnz + min(t.nnz, int(np.prod(t.shape)) - t.nnz)
    assert not np.array_equal(
        inject_noise_bernoulli(t, p=1.0, seed=1).coords, full.coords)


def test_bernoulli_budget_is_capped_by_zero_count(rng):
    # denser than half: fewer zeros than entries, so the budget is the zeros
    t = binary_tensor(rng, (3, 3), 7)
    noisy = inject_noise_bernoulli(t, p=1.0, seed=0)
    assert noisy.nnz == 9
    saturated = inject_noise_bernoulli(noisy, p=1.0, seed=0)
    assert saturated.nnz == 9  # no zero cells left, nothing to do


def test_bernoulli_validation(rng):
    t = binary_tensor(rng, (4, 4), 5)
    with pytest.raises(DataError):
        inject_noise_bernoulli(t, p=1.5, seed=0)
    counts = SparseTensor((2, 2), np.array([[0, 0]]), np.array([2.0]))
    with pytest.raises(DataError):
        inject_noise_bernoulli(counts, p=0.5, seed=0)


def test_poisson_noise_values_and_determinism(rng):
    coords = np.argwhere(np.arange(60).reshape(5, 4, 3) % 4 == 0)
    values = rng.integers(1, 5, size=coords.shape[0]).astype(float)
    t = SparseTensor((5, 4, 3), coords, values)
    vmax = int(t.values.max())
    noisy = inject_noise_poisson(t, p=0.6, seed=13)
    added = noisy.nnz - t.nnz
    assert 0 < added <= min(t.nnz, 60 - t.nnz)
    new_vals = noisy.to_dense()[t.to_dense() == 0]
    new_vals = new_vals[new_vals > 0]
    assert (new_vals == np.round(new_vals)).all()
    assert new_vals.min() >= 1 and new_vals.max() <= vmax
    again = inject_noise_poisson(t, p=0.6, seed=13)
    np.testing.assert_array_equal(noisy.coords, again.coords)
    np.testing.assert_array_equal(noisy.values, again.values)


def test_poisson_validation(rng):
    frac = SparseTensor((2, 2), np.array([[0, 0]]), np.array([1.5]))
    with pytest.raises(DataError):
        inject_noise_poisson(frac, p=0.5, seed=0)
    empty = SparseTensor((2, 2), np.empty((0, 2), dtype=np.int64), np.empty(0))
    with pytest.raises(DataError):
        inject_noise_poisson(empty, p=0.5, seed=0)


def test_zero_cell_sampling_is_uniform():
    # with p = 1 every sampled cell is added; over many seeds each zero cell
    # should be hit at a similar rate
    t = SparseTensor((4, 4), np.array([[i, i] for i in range(4)]),
                     np.ones(4))
    hits = np.zeros((4, 4))
    runs = 400
    for seed in range(runs):
        noisy = inject_noise_bernoulli(t, p=1.0, seed=seed)
        hits += noisy.to_dense()
    hits -= runs * t.to_dense()
    zero_rates = hits[t.to_dense() == 0] / runs
    # 12 zero cells, budget 4 -> expected rate 1/3
    assert abs(zero_rates.mean() - 1.0 / 3.0) < 0.02
    assert zero_rates.min() > 0.2 and zero_rates.max() < 0.5
