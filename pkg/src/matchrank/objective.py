"""Exact social welfare, the Jensen lower bound and its gradient.

Notation: ``A[c, j]`` is the probability that candidate ``c`` applies to
employer ``j``; employer ``j`` ranks its applicants by ``psi[j, :]`` and
candidate ``c``'s rank among them is one plus a Poisson-Binomial count
over the higher-priority candidates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .market import ExaminationModel, Market
from .policy import Policy


@dataclass(frozen=True, eq=False)
class PriorityIndex:
    """Employer-side candidate orderings, ties broken by candidate index.

    ``order[j, s]`` is the candidate at priority ``s`` for employer ``j``;
    ``rank[j, c]`` is the (0-based) priority of candidate ``c``, which is
    also ``|A_j(c)|``.
    """

    order: np.ndarray
    rank: np.ndarray

    @classmethod
    def from_market(cls, market: Market) -> "PriorityIndex":
        order = np.argsort(-market.psi, axis=1, kind="stable")
        rank = np.empty_like(order)
        rows = np.arange(order.shape[0])[:, None]
        rank[rows, order] = np.arange(order.shape[1])[None, :]
        return cls(order, rank)

    def priority_set(self, j: int, c: int) -> np.ndarray:
        return self.order[j, : self.rank[j, c]]


@dataclass(frozen=True)
class RankDistribution:
    """PMF of a candidate's rank among an employer's applicants; ``pmf[k-1] = P(R = k)``."""

    pmf: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.pmf.size + 1), self.pmf))


def apply_probabilities(market: Market, policy: Policy) -> np.ndarray:
    """``A[c, j] = phi[c, j] * (M_c v)[j]`` using the candidate-side exam vector."""
    policy.check_market(market)
    return market.phi * (policy.matrices @ market.v_candidate)


def poisson_binomial_pmf(probs: Sequence[float]) -> np.ndarray:
    """PMF of a sum of independent Bernoulli(p_i), by convolution DP."""
    pmf = np.ones(1)
    for p in probs:
        nxt = np.zeros(pmf.size + 1)
        nxt[:-1] = pmf * (1.0 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf


def rank_distribution(apply: np.ndarray, priority: PriorityIndex, j: int, c: int) -> RankDistribution:
    above = priority.priority_set(j, c)
    return RankDistribution(poisson_binomial_pmf(apply[above, j]))


def reply_probability(market: Market, rank_dist: RankDistribution, j: int, c: int) -> float:
    """``psi[j, c] * E[v_employer(R)]``."""
    v = market.v_employer[: rank_dist.pmf.size]
    return float(market.psi[j, c] * np.dot(rank_dist.pmf, v))


def expected_reply_exam(market: Market, apply: np.ndarray, priority: PriorityIndex) -> np.ndarray:
    """``E[v_employer(R_{j,c})]`` for all pairs, returned candidate-major ``(C, J)``.

    One Poisson-Binomial sweep per employer down its priority list; all
    employers advance together, one priority level per step.
    """
    n_c, n_j = apply.shape
    v_e = market.v_employer
    pmf = np.zeros((n_j, n_c))
    pmf[:, 0] = 1.0
    out = np.empty((n_c, n_j))
    cols = np.arange(n_j)
    for s in range(n_c):
        cand = priority.order[:, s]
        out[cand, cols] = pmf[:, : s + 1] @ v_e[: s + 1]
        if s + 1 < n_c:
            p = apply[cand, cols][:, None]
            shifted = pmf[:, : s + 1] * p
            pmf[:, : s + 1] *= 1.0 - p
            pmf[:, 1 : s + 2] += shifted
    return out


def match_probabilities(market: Market, policy: Policy) -> np.ndarray:
    """``P(c and j match)`` for every pair, shape ``(C, J)``."""
    apply = apply_probabilities(market, policy)
    priority = PriorityIndex.from_market(market)
    return apply * market.psi.T * expected_reply_exam(market, apply, priority)


def candidate_utilities(market: Market, policy: Policy) -> np.ndarray:
    return match_probabilities(market, policy).sum(axis=1)


def employer_utilities(market: Market, policy: Policy) -> np.ndarray:
    return match_probabilities(market, policy).sum(axis=0)


def candidate_utility(market: Market, policy: Policy, c: int) -> float:
    """Expected number of matches of candidate ``c``, pair by pair."""
    apply = apply_probabilities(market, policy)
    priority = PriorityIndex.from_market(market)
    total = 0.0
    for j in range(market.num_employers):
        dist = rank_distribution(apply, priority, j, c)
        total += apply[c, j] * reply_probability(market, dist, j, c)
    return total


def employer_utility(market: Market, policy: Policy, j: int) -> float:
    return float(match_probabilities(market, policy)[:, j].sum())


def social_welfare_exact(market: Market, policy: Policy) -> float:
    """Expected total number of matches."""
    return float(np.sum(match_probabilities(market, policy), dtype=float))


def _require_lower_bound_model(exam: ExaminationModel) -> None:
    if not exam.is_analytic:
        raise ValueError("lower bound needs an analytic employer examination model")
    if not exam.is_convex:
        raise ValueError(f"lower bound needs a convex examination model, got {exam.kind}")


def expected_competition(market: Market, apply: np.ndarray) -> np.ndarray:
    """``s[c, j]``: expected number of higher-priority applicants to ``j``."""
    priority = PriorityIndex.from_market(market)
    n_c, n_j = apply.shape
    by_priority = np.take_along_axis(apply.T, priority.order, axis=1)  # (J, C)
    before = np.cumsum(by_priority, axis=1) - by_priority
    s = np.empty((n_j, n_c))
    np.put_along_axis(s, priority.order, before, axis=1)
    return s.T


def lower_bound_terms(market: Market, policy: Policy) -> np.ndarray:
    """Per-pair summands of the lower bound, shape ``(C, J)``."""
    _require_lower_bound_model(market.exam_employer)
    exposure = policy.matrices @ market.v_candidate
    s = expected_competition(market, market.phi * exposure)
    return market.phi * market.psi.T * market.exam_employer(1.0 + s) * exposure


def social_welfare_lower_bound(market: Market, policy: Policy) -> float:
    policy.check_market(market)
    return float(lower_bound_terms(market, policy).sum())


def _lower_bound_from_matrices(market: Market, matrices: np.ndarray) -> float:
    # unconstrained evaluation for finite differences
    exposure = matrices @ market.v_candidate
    s = expected_competition(market, market.phi * exposure)
    return float((market.phi * market.psi.T * market.exam_employer(1.0 + s) * exposure).sum())


def lower_bound_weights(market: Market, matrices: np.ndarray) -> np.ndarray:
    """Gradient coefficients ``g[c, j]`` with ``dSW_lower/dM_c[j, k] = g[c, j] * v[k]``.

    Entry ``g[c, j]`` is the direct term ``phi psi v_e(1 + s[c, j])`` plus
    ``phi[c, j]`` times the summed sensitivities of every lower-priority
    candidate at ``j`` to the expected competition ``c`` creates there.
    """
    _require_lower_bound_model(market.exam_employer)
    exam = market.exam_employer
    priority = PriorityIndex.from_market(market)
    exposure = matrices @ market.v_candidate
    apply = market.phi * exposure
    s = expected_competition(market, apply)
    pair = market.phi * market.psi.T
    direct = pair * exam(1.0 + s)
    sens = pair * exam.derivative(1.0 + s) * exposure  # (C, J)
    by_priority = np.take_along_axis(sens.T, priority.order, axis=1)
    after = by_priority[:, ::-1].cumsum(axis=1)[:, ::-1] - by_priority
    tail = np.empty_like(after)
    np.put_along_axis(tail, priority.order, after, axis=1)
    return direct + market.phi * tail.T


def lower_bound_gradient(market: Market, policy) -> np.ndarray:
    """Gradient of the lower bound w.r.t. every policy matrix entry, shape ``(C, J, J)``."""
    matrices = policy.matrices if isinstance(policy, Policy) else np.asarray(policy, dtype=float)
    g = lower_bound_weights(market, matrices)
    return g[:, :, None] * market.v_candidate[None, None, :]


@dataclass
class EvaluationReport:
    sw_exact: float
    sw_lower_bound: float | None
    candidate_utilities: np.ndarray
    employer_utilities: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "sw_exact": self.sw_exact,
            "sw_lower_bound": self.sw_lower_bound,
            "candidate_utilities": self.candidate_utilities.tolist(),
            "employer_utilities": self.employer_utilities.tolist(),
        }
        out.update(self.extra)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def evaluate(market: Market, policy: Policy) -> EvaluationReport:
    matches = match_probabilities(market, policy)
    try:
        lower = social_welfare_lower_bound(market, policy)
    except ValueError:
        lower = None
    return EvaluationReport(
        sw_exact=float(matches.sum()),
        sw_lower_bound=lower,
        candidate_utilities=matches.sum(axis=1),
        employer_utilities=matches.sum(axis=0),
    )
