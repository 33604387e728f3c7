import numpy as np
import pytest

from matchrank.market import ExaminationModel, Market, proposition5_instance, proposition5_stable_rankings
from matchrank.objective import candidate_utilities, employer_utilities, social_welfare_exact
from matchrank.policy import Policy
from matchrank.simulate import (
    SimulationConfig,
    mc_vs_exact_check,
    sample_interactions,
    simulate_market,
)

from conftest import random_market, random_policy

INV = ExaminationModel.inverse_rank()


def streams(seed):
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def test_proposition5_stable_within_three_stderr():
    market = proposition5_instance()
    policy = Policy.from_rankings(proposition5_stable_rankings())
    result = simulate_market(market, policy, SimulationConfig(num_samples=10_000, num_runs=10, seed=5))
    assert result.num_samples == 100_000
    assert abs(result.mean_matches - 2.01) <= 3 * result.stderr


def test_zero_relevance_gives_zero():
    market = Market(np.zeros((3, 4)), np.ones((4, 3)), INV, INV)
    result = simulate_market(market, Policy.uniform(3, 4), SimulationConfig(num_samples=500, num_runs=2))
    assert result.mean_matches == 0.0 and result.stderr == 0.0


def test_deterministic_market_has_zero_z():
    # everybody applies to and is accepted by their top choice only
    top_one = ExaminationModel.explicit([1.0, 0.0, 0.0])
    market = Market(np.ones((3, 3)), np.ones((3, 3)), top_one, top_one)
    policy = Policy.from_rankings([[0, 1, 2], [1, 2, 0], [2, 0, 1]])
    check = mc_vs_exact_check(market, policy, SimulationConfig(num_samples=200, num_runs=2))
    assert check.sw_exact == 3.0 and check.mean_matches == 3.0
    assert check.z == 0.0 and check.passed


def test_per_side_means_sum_to_total(rng):
    market = random_market(rng, 4, 3)
    result = simulate_market(market, random_policy(rng, 4, 3), SimulationConfig(num_samples=2000, num_runs=3))
    assert result.per_candidate_means.sum() == pytest.approx(result.mean_matches, abs=1e-12)
    assert result.per_employer_means.sum() == pytest.approx(result.mean_matches, abs=1e-12)
    assert len(result.run_means) == 3


def test_per_candidate_means_track_exact(rng):
    market = random_market(rng, 3, 3)
    policy = random_policy(rng, 3, 3)
    result = simulate_market(market, policy, SimulationConfig(num_samples=20_000, num_runs=5, seed=9))
    n = result.num_samples
    for sim, exact in ((result.per_candidate_means, candidate_utilities(market, policy)),
                       (result.per_employer_means, employer_utilities(market, policy))):
        # matches per side are bounded by the number of counterparts, so this is a loose bound
        assert np.all(np.abs(sim - exact) <= 5 * 3 / np.sqrt(n))


def test_seed_reproducibility(rng):
    market = random_market(rng, 3, 3)
    policy = random_policy(rng, 3, 3)
    cfg = SimulationConfig(num_samples=1000, num_runs=3, seed=17)
    a, b = simulate_market(market, policy, cfg), simulate_market(market, policy, cfg)
    assert a.to_dict() == b.to_dict()
    c = simulate_market(market, policy, SimulationConfig(num_samples=1000, num_runs=3, seed=18))
    assert c.mean_matches != a.mean_matches


def test_application_streams_independent_across_pairs(rng):
    market = Market(np.full((2, 2), 0.5), np.full((2, 2), 0.5), INV, INV)
    policy = Policy.from_rankings([[0, 1], [0, 1]])
    applications, matches = sample_interactions(market, policy, 50_000, streams(3))
    assert applications.shape == (50_000, 2, 2) and matches.dtype == bool
    assert not np.any(matches & ~applications)
    corr = np.corrcoef(applications[:, 0, 0], applications[:, 1, 0])[0, 1]
    assert abs(corr) < 0.02
    assert applications[:, 0, 0].mean() == pytest.approx(0.5, abs=0.01)
    assert applications[:, 0, 1].mean() == pytest.approx(0.25, abs=0.01)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_agrees_with_exact(seed):
    rng = np.random.default_rng(seed)
    market = random_market(rng, 5, 4, "invexp")
    policy = random_policy(rng, 5, 4)
    check = mc_vs_exact_check(market, policy, SimulationConfig(num_samples=10_000, num_runs=4, seed=seed))
    assert check.sw_exact == pytest.approx(social_welfare_exact(market, policy))
    assert check.passed, check


def test_invalid_config():
    with pytest.raises(ValueError):
        SimulationConfig(num_samples=0)
