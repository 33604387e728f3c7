"""Stochastic ranking policies as per-candidate doubly stochastic matrices.

Entry ``(j, k)`` of candidate ``c``'s matrix is the probability that
employer ``j`` is shown at (0-based) position ``k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .market import Market

DS_TOL = 1e-6
BVN_RESIDUAL_TOL = 1e-9
# entries below this are treated as numerically zero during decomposition
_SUPPORT_TOL = 1e-12


def check_doubly_stochastic(matrix: np.ndarray, tol: float = DS_TOL) -> None:
    """Raise ``ValueError`` unless ``matrix`` is doubly stochastic within ``tol``."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite entries")
    if matrix.min() < -tol or matrix.max() > 1 + tol:
        raise ValueError("matrix entries outside [0,1]")
    rows = np.abs(matrix.sum(axis=1) - 1.0).max()
    cols = np.abs(matrix.sum(axis=0) - 1.0).max()
    if rows > tol or cols > tol:
        raise ValueError(f"not doubly stochastic: row dev {rows:.3g}, col dev {cols:.3g}")


def is_doubly_stochastic(matrix: np.ndarray, tol: float = DS_TOL) -> bool:
    try:
        check_doubly_stochastic(matrix, tol)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class DeterministicRanking:
    """A ranking of employers; ``order[k]`` is the employer at position ``k``."""

    order: tuple

    def __post_init__(self):
        order = tuple(int(j) for j in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"{order} is not a permutation")
        object.__setattr__(self, "order", order)

    @property
    def positions(self) -> np.ndarray:
        """Inverse map: ``positions[j]`` is the 0-based position of employer ``j``."""
        pos = np.empty(len(self.order), dtype=int)
        pos[list(self.order)] = np.arange(len(self.order))
        return pos

    def matrix(self) -> np.ndarray:
        return permutation_matrix(self.order)

    def __len__(self):
        return len(self.order)


def permutation_matrix(order: Sequence[int]) -> np.ndarray:
    """Employer-by-position 0/1 matrix of a ranking given as position -> employer."""
    n = len(order)
    mat = np.zeros((n, n))
    mat[np.asarray(order, dtype=int), np.arange(n)] = 1.0
    return mat


@dataclass(frozen=True)
class BvnDecomposition:
    weights: np.ndarray
    rankings: tuple

    def __len__(self):
        return len(self.rankings)

    def reconstruct(self) -> np.ndarray:
        n = len(self.rankings[0])
        out = np.zeros((n, n))
        for w, r in zip(self.weights, self.rankings):
            out[np.asarray(r.order), np.arange(n)] += w
        return out


def _sinkhorn_sweep(matrix: np.ndarray) -> np.ndarray:
    matrix = matrix / matrix.sum(axis=1, keepdims=True)
    return matrix / matrix.sum(axis=0, keepdims=True)


def bvn_decompose(matrix: np.ndarray) -> BvnDecomposition:
    """Birkhoff-von Neumann decomposition by repeated perfect matchings.

    Each round takes a maximum-weight perfect matching restricted to the
    positive support of the residual, peels off its smallest entry and
    stops once the residual mass drops below ``BVN_RESIDUAL_TOL``.
    """
    check_doubly_stochastic(matrix)
    residual = np.clip(np.asarray(matrix, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        repaired = _sinkhorn_sweep(residual)
    if np.all(np.isfinite(repaired)):
        residual = repaired
    n = residual.shape[0]
    rows = np.arange(n)
    weights: list[float] = []
    rankings: list[DeterministicRanking] = []
    remaining = 1.0
    while remaining >= BVN_RESIDUAL_TOL:
        support = residual > _SUPPORT_TOL
        cost = np.where(support, -residual, n + 1.0)
        _, cols = linear_sum_assignment(cost)
        picked = residual[rows, cols]
        if not np.all(support[rows, cols]):
            raise ValueError(
                f"no perfect matching on the support with residual mass {remaining:.3g}; "
                "input is not doubly stochastic"
            )
        w = float(min(picked.min(), remaining))
        residual[rows, cols] -= w
        residual[residual < _SUPPORT_TOL] = 0.0
        # column index cols[j] is employer j's position; invert to position -> employer
        order = np.empty(n, dtype=int)
        order[cols] = rows
        weights.append(w)
        rankings.append(DeterministicRanking(tuple(order)))
        remaining -= w
    weights_arr = np.asarray(weights)
    weights_arr /= weights_arr.sum()
    return BvnDecomposition(weights_arr, tuple(rankings))


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-candidate marginal rank matrices, shape ``(|C|, |J|, |J|)``."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.array(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError(f"expected shape (C, J, J), got {mats.shape}")
        for c, mat in enumerate(mats):
            try:
                check_doubly_stochastic(mat)
            except ValueError as exc:
                raise ValueError(f"candidate {c}: {exc}") from None
        mats = np.clip(mats, 0.0, 1.0)
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @property
    def num_candidates(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_employers(self) -> int:
        return self.matrices.shape[1]

    def check_market(self, market: Market) -> None:
        if (self.num_candidates, self.num_employers) != (
            market.num_candidates,
            market.num_employers,
        ):
            raise ValueError(
                f"policy is {self.num_candidates}x{self.num_employers}, market is "
                f"{market.num_candidates}x{market.num_employers}"
            )

    @cached_property
    def decompositions(self) -> tuple:
        return tuple(bvn_decompose(m) for m in self.matrices)

    def sample_ranking(self, candidate: int, rng: np.random.Generator) -> DeterministicRanking:
        return sample_ranking(self, candidate, rng)

    def to_dict(self) -> dict:
        return {"matrices": self.matrices.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        return cls(np.asarray(data["matrices"], dtype=float))

    @classmethod
    def from_rankings(cls, rankings: Sequence[Sequence[int]]) -> "Policy":
        return cls(np.stack([permutation_matrix(r) for r in rankings]))

    @classmethod
    def uniform(cls, num_candidates: int, num_employers: int) -> "Policy":
        return cls(np.full((num_candidates, num_employers, num_employers), 1.0 / num_employers))


def save_policy(policy: Policy, path) -> None:
    Path(path).write_text(json.dumps(policy.to_dict()) + "\n")


def load_policy(path) -> Policy:
    return Policy.from_dict(json.loads(Path(path).read_text()))


def sort_rankings(scores: np.ndarray) -> list[list[int]]:
    """Per-row rankings by descending score, ties by ascending index."""
    return [list(np.argsort(-row, kind="stable")) for row in np.asarray(scores)]


def naive_policy(market: Market) -> Policy:
    """Rank employers by the candidate's own relevance ``phi(c, j)``."""
    return Policy.from_rankings(sort_rankings(market.phi))


def reciprocal_policy(market: Market) -> Policy:
    """Rank employers by ``phi(c, j) * psi(j, c)``."""
    return Policy.from_rankings(sort_rankings(market.phi * market.psi.T))


def sample_ranking(policy: Policy, candidate: int, rng: np.random.Generator) -> DeterministicRanking:
    decomp = policy.decompositions[candidate]
    idx = rng.choice(len(decomp), p=decomp.weights) if len(decomp) > 1 else 0
    return decomp.rankings[idx]


def sample_positions(
    policy: Policy, candidate: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """``size`` sampled rankings as an array of employer positions, shape ``(size, |J|)``."""
    decomp = policy.decompositions[candidate]
    table = np.stack([r.positions for r in decomp.rankings])
    if len(decomp) == 1:
        return np.broadcast_to(table[0], (size, table.shape[1])).copy()
    idx = rng.choice(len(decomp), size=size, p=decomp.weights)
    return table[idx]
