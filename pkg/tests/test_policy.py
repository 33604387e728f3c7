import numpy as np
import pytest

from matchrank.market import ExaminationModel, Market, proposition5_instance, theorem2_instance
from matchrank.policy import (
    DeterministicRanking,
    Policy,
    bvn_decompose,
    is_doubly_stochastic,
    load_policy,
    naive_policy,
    permutation_matrix,
    reciprocal_policy,
    sample_positions,
    sample_ranking,
    save_policy,
)

from conftest import random_ds, random_market


def ranking_of(policy, c):
    """Position -> employer for a permutation-matrix policy."""
    return list(np.argmax(policy.matrices[c], axis=0))


class TestBaselines:
    def test_naive_proposition5(self):
        assert ranking_of(naive_policy(proposition5_instance()), 0) == [0, 2, 1]

    def test_naive_ties_by_index(self):
        exam = ExaminationModel.inverse_rank()
        market = Market(np.full((2, 4), 0.5), np.full((4, 2), 0.5), exam, exam)
        assert ranking_of(naive_policy(market), 1) == [0, 1, 2, 3]

    def test_naive_theorem2(self):
        assert ranking_of(naive_policy(theorem2_instance(5)), 2)[0] == 0

    def test_reciprocal_proposition5(self):
        assert ranking_of(reciprocal_policy(proposition5_instance()), 0) == [0, 2, 1]

    def test_reciprocal_reduces_to_naive(self, rng):
        exam = ExaminationModel.inverse_rank()
        market = Market(rng.random((4, 5)), np.ones((5, 4)), exam, exam)
        np.testing.assert_array_equal(reciprocal_policy(market).matrices, naive_policy(market).matrices)

    def test_reciprocal_sorts_by_psi(self, rng):
        exam = ExaminationModel.inverse_rank()
        psi = rng.random((5, 4))
        market = Market(np.ones((4, 5)), psi, exam, exam)
        policy = reciprocal_policy(market)
        for c in range(4):
            assert ranking_of(policy, c) == list(np.argsort(-psi[:, c], kind="stable"))

    def test_baselines_are_permutation_matrices(self, rng):
        market = random_market(rng, 6, 5)
        for policy in (naive_policy(market), reciprocal_policy(market)):
            assert set(np.unique(policy.matrices)) <= {0.0, 1.0}
            assert all(is_doubly_stochastic(m) for m in policy.matrices)


class TestBvn:
    def test_permutation_fixed_point(self):
        order = (2, 0, 3, 1)
        decomp = bvn_decompose(permutation_matrix(order))
        assert len(decomp) == 1
        assert decomp.weights[0] == pytest.approx(1.0)
        assert decomp.rankings[0].order == order

    def test_two_by_two(self):
        decomp = bvn_decompose(np.array([[0.3, 0.7], [0.7, 0.3]]))
        terms = {r.order: w for w, r in zip(decomp.weights, decomp.rankings)}
        assert set(terms) == {(0, 1), (1, 0)}
        assert terms[(0, 1)] == pytest.approx(0.3, abs=1e-12)
        assert terms[(1, 0)] == pytest.approx(0.7, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 3, 7])
    def test_uniform(self, n):
        mat = np.full((n, n), 1.0 / n)
        decomp = bvn_decompose(mat)
        assert abs(decomp.weights.sum() - 1) <= 1e-9
        assert np.abs(decomp.reconstruct() - mat).max() <= 1e-6

    def test_random_reconstruction(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 9))
            mat = random_ds(rng, n)
            decomp = bvn_decompose(mat)
            assert np.abs(decomp.reconstruct() - mat).max() <= 1e-6
            assert abs(decomp.weights.sum() - 1) <= 1e-9
            assert len(decomp) <= (n - 1) ** 2 + 1
            assert np.all(decomp.weights > 0)

    def test_sparse_mixture(self, rng):
        orders = [rng.permutation(6) for _ in range(4)]
        weights = np.array([0.1, 0.2, 0.3, 0.4])
        mat = sum(w * permutation_matrix(o) for w, o in zip(weights, orders))
        decomp = bvn_decompose(mat)
        assert np.abs(decomp.reconstruct() - mat).max() <= 1e-9

    def test_rejects_non_doubly_stochastic(self):
        with pytest.raises(ValueError):
            bvn_decompose(np.array([[0.5, 0.2], [0.5, 0.2]]))


class TestSampling:
    def test_deterministic_policy(self, rng):
        policy = Policy.from_rankings([[2, 0, 1]])
        for _ in range(20):
            assert sample_ranking(policy, 0, rng).order == (2, 0, 1)

    def test_two_by_two_frequency(self, rng):
        policy = Policy(np.array([[[0.3, 0.7], [0.7, 0.3]]]))
        positions = sample_positions(policy, 0, 100_000, rng)
        assert np.mean(positions[:, 0] == 0) == pytest.approx(0.3, abs=0.01)

    def test_single_draws_are_bijections(self, rng):
        policy = Policy(np.stack([random_ds(rng, 5)]))
        for _ in range(50):
            ranking = sample_ranking(policy, 0, rng)
            assert sorted(ranking.order) == list(range(5))

    def test_marginals_within_three_stderr(self, rng):
        mat = random_ds(rng, 5)
        policy = Policy(mat[None])
        size = 100_000
        positions = sample_positions(policy, 0, size, rng)
        empirical = np.zeros((5, 5))
        for j in range(5):
            empirical[j] = np.bincount(positions[:, j], minlength=5) / size
        se = np.sqrt(mat * (1 - mat) / size)
        assert np.all(np.abs(empirical - mat) <= 3 * se + 1e-12)


class TestPolicy:
    def test_rejects_non_doubly_stochastic(self):
        with pytest.raises(ValueError):
            Policy(np.array([[[0.6, 0.6], [0.4, 0.4]]]))

    def test_clamps_tiny_violations(self):
        mat = np.array([[1 + 5e-7, -5e-7], [-5e-7, 1 + 5e-7]])
        policy = Policy(mat[None])
        assert policy.matrices.min() >= 0 and policy.matrices.max() <= 1

    def test_dimension_check(self):
        policy = Policy.uniform(2, 3)
        with pytest.raises(ValueError):
            policy.check_market(proposition5_instance())

    def test_round_trip(self, tmp_path, rng):
        policy = Policy(np.stack([random_ds(rng, 4) for _ in range(3)]))
        save_policy(policy, tmp_path / "p.json")
        loaded = load_policy(tmp_path / "p.json")
        np.testing.assert_array_equal(loaded.matrices, policy.matrices)

    def test_ranking_positions(self):
        ranking = DeterministicRanking((2, 0, 1))
        assert ranking.positions.tolist() == [1, 2, 0]
        with pytest.raises(ValueError):
            DeterministicRanking((0, 0, 1))
