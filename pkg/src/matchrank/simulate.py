"""Monte-Carlo simulation of the apply/reply process.

Each sample draws one ranking per candidate from the policy, lets every
candidate apply under the position-based model, has every employer sort
its applicants by ``psi`` and reply under the position-based model, and
counts mutual matches. It is an oracle for the exact evaluator.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .market import Market
from .objective import PriorityIndex, social_welfare_exact
from .policy import Policy, sample_positions

# max floats per sample chunk (samples x candidates x employers)
_CHUNK_CELLS = 4_000_000


@dataclass(frozen=True)
class SimulationConfig:
    num_samples: int = 10_000
    num_runs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1 or self.num_runs < 1:
            raise ValueError("num_samples and num_runs must be positive")


@dataclass
class SimulationResult:
    mean_matches: float
    stderr: float
    run_means: np.ndarray
    per_candidate_means: np.ndarray
    per_employer_means: np.ndarray
    num_samples: int

    def to_dict(self) -> dict:
        return {
            "mean_matches": self.mean_matches,
            "stderr": self.stderr,
            "run_means": self.run_means.tolist(),
            "per_candidate_means": self.per_candidate_means.tolist(),
            "per_employer_means": self.per_employer_means.tolist(),
            "num_samples": self.num_samples,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    CSV_HEADER = ("mean_matches", "stderr", "num_samples", "num_runs")

    def csv_row(self) -> list:
        return [repr(self.mean_matches), repr(self.stderr), self.num_samples, len(self.run_means)]


def sample_interactions(
    market: Market,
    policy: Policy,
    size: int,
    rngs: tuple[np.random.Generator, np.random.Generator, np.random.Generator],
    priority: PriorityIndex | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``size`` independent market rounds.

    Returns boolean ``(applications, matches)`` arrays of shape
    ``(size, |C|, |J|)``. ``rngs`` are the ranking, application and reply
    streams.
    """
    policy.check_market(market)
    rank_rng, apply_rng, reply_rng = rngs
    if priority is None:
        priority = PriorityIndex.from_market(market)
    n_c, n_j = market.num_candidates, market.num_employers
    v_c, v_e = market.v_candidate, market.v_employer

    positions = np.stack(
        [sample_positions(policy, c, size, rank_rng) for c in range(n_c)], axis=1
    )  # (S, C, J)
    applications = apply_rng.random((size, n_c, n_j)) < market.phi[None] * v_c[positions]

    reply_draws = reply_rng.random((size, n_j, n_c))
    matches = np.zeros_like(applications)
    for j in range(n_j):
        order = priority.order[j]
        applied = applications[:, order, j]  # priority order
        rank = np.cumsum(applied, axis=1) - applied  # applicants ahead, 0-based rank
        reply_p = market.psi[j, order][None, :] * v_e[rank]
        matches[:, order, j] = applied & (reply_draws[:, j, :] < reply_p)
    return applications, matches


def _run_streams(seed: int, num_runs: int):
    for run_ss in np.random.SeedSequence(seed).spawn(num_runs):
        yield tuple(np.random.default_rng(s) for s in run_ss.spawn(3))


def simulate_market(market: Market, policy: Policy, config: SimulationConfig = SimulationConfig()) -> SimulationResult:
    """Average matches over ``num_runs`` runs of ``num_samples`` rounds each."""
    priority = PriorityIndex.from_market(market)
    n_c, n_j = market.num_candidates, market.num_employers
    chunk = max(1, _CHUNK_CELLS // (n_c * n_j))
    run_means = []
    cand_tot = np.zeros(n_c)
    emp_tot = np.zeros(n_j)
    per_sample = []
    for rngs in _run_streams(config.seed, config.num_runs):
        counts = []
        done = 0
        while done < config.num_samples:
            size = min(chunk, config.num_samples - done)
            _, matches = sample_interactions(market, policy, size, rngs, priority)
            counts.append(matches.sum(axis=(1, 2)))
            cand_tot += matches.sum(axis=(0, 2))
            emp_tot += matches.sum(axis=(0, 1))
            done += size
        counts = np.concatenate(counts)
        per_sample.append(counts)
        run_means.append(math.fsum(counts) / config.num_samples)
    all_counts = np.concatenate(per_sample).astype(float)
    total = all_counts.size
    stderr = float(all_counts.std(ddof=1) / math.sqrt(total)) if total > 1 else 0.0
    return SimulationResult(
        mean_matches=math.fsum(run_means) / len(run_means),
        stderr=stderr,
        run_means=np.asarray(run_means),
        per_candidate_means=cand_tot / total,
        per_employer_means=emp_tot / total,
        num_samples=total,
    )


@dataclass
class McCheck:
    sw_exact: float
    mean_matches: float
    stderr: float
    z: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def mc_vs_exact_check(
    market: Market, policy: Policy, config: SimulationConfig = SimulationConfig(), threshold: float = 3.0
) -> McCheck:
    """Compare the simulated mean against the exact welfare; failures are reported, not raised."""
    exact = social_welfare_exact(market, policy)
    sim = simulate_market(market, policy, config)
    diff = sim.mean_matches - exact
    if sim.stderr > 0:
        z = diff / sim.stderr
    else:
        z = 0.0 if abs(diff) <= 1e-9 else math.copysign(math.inf, diff)
    return McCheck(exact, sim.mean_matches, sim.stderr, float(z), bool(abs(z) <= threshold))
