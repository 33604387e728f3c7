"""Maximise the welfare lower bound over per-candidate doubly stochastic matrices."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .market import Market
from .objective import _lower_bound_from_matrices, lower_bound_weights
from .policy import DS_TOL, Policy, permutation_matrix, sort_rankings

logger = logging.getLogger(__name__)

FRANK_WOLFE = "fw"
PROJECTED_GRADIENT = "pgd"

_FLOOR = 1e-12


class SinkhornError(RuntimeError):
    def __init__(self, deviation: float, sweeps: int):
        super().__init__(f"Sinkhorn did not converge in {sweeps} sweeps (deviation {deviation:.3g})")
        self.deviation = deviation
        self.sweeps = sweeps


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = FRANK_WOLFE
    steps: int = 50
    learning_rate: float = 0.2
    decaying: bool = False
    stop_epsilon: float = 1e-3
    sinkhorn_max_sweeps: int = 1000
    sinkhorn_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.method not in (FRANK_WOLFE, PROJECTED_GRADIENT):
            raise ValueError(f"unknown method {self.method!r}")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.method == FRANK_WOLFE and not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("Frank-Wolfe step size must lie in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    def step_size(self, t: int) -> float:
        return 1.0 / (t + 2.0) if self.decaying else self.learning_rate


@dataclass
class TraceRecord:
    lower_bound: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    sinkhorn_sweeps: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.lower_bound)

    def append(self, lower_bound, gap, step_norm, wall_ms, sweeps=0):
        self.lower_bound.append(float(lower_bound))
        self.gap.append(float(gap))
        self.step_norm.append(float(step_norm))
        self.wall_ms.append(float(wall_ms))
        self.sinkhorn_sweeps.append(int(sweeps))

    def write_csv(self, path, include_timing: bool = False) -> None:
        """Columns ``iteration,lower_bound,gap,wall_ms``.

        ``wall_ms`` is left blank unless ``include_timing`` so that reruns
        produce identical files.
        """
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "lower_bound", "gap", "wall_ms"])
            for i in range(len(self)):
                wall = repr(self.wall_ms[i]) if include_timing else ""
                writer.writerow([i, repr(self.lower_bound[i]), repr(self.gap[i]), wall])


def assignment_lmo(gradient: np.ndarray) -> np.ndarray:
    """Permutation matrix maximising ``<gradient, P>``.

    Among optimal permutations the lexicographically smallest (row -> column
    sequence) is returned, found by fixing rows greedily and re-solving the
    remaining assignment.
    """
    g = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("assignment oracle needs finite entries")
    n = g.shape[0]
    rows, cols = linear_sum_assignment(g, maximize=True)
    best = g[rows, cols].sum()
    tol = 1e-12 * max(1.0, np.abs(g).max()) * n
    assign = cols.copy()
    free_cols = set(range(n))
    for i in range(n):
        for col in sorted(free_cols):
            if col >= assign[i]:
                break
            rest_rows = list(range(i + 1, n))
            rest_cols = sorted(free_cols - {col})
            fixed = sum(g[r, assign[r]] for r in range(i)) + g[i, col]
            if rest_rows:
                sub = g[np.ix_(rest_rows, rest_cols)]
                r_idx, c_idx = linear_sum_assignment(sub, maximize=True)
                value = fixed + sub[r_idx, c_idx].sum()
            else:
                value = fixed
            if value >= best - tol:
                assign[i] = col
                if rest_rows:
                    assign[i + 1 :] = np.asarray(rest_cols)[c_idx]
                break
        free_cols.discard(int(assign[i]))
    out = np.zeros_like(g)
    out[np.arange(n), assign] = 1.0
    return out


def rank_one_lmo(weights: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Assignment oracle for gradients ``weights[j] * v[k]`` with ``v`` non-increasing.

    By the rearrangement inequality the optimum sends the employer with the
    k-th largest weight to position k.
    """
    order = np.argsort(-np.asarray(weights), kind="stable")
    return permutation_matrix(order)


def sinkhorn_knopp(
    matrix: np.ndarray, tol: float = 1e-9, max_sweeps: int = 1000
) -> tuple[np.ndarray, int, float]:
    """Alternate row/column normalisation of a (floored) non-negative matrix.

    Returns ``(matrix, sweeps, deviation)`` where ``deviation`` is the larger
    of the row-sum and column-sum L1 deviations from one.
    """
    m = np.maximum(np.asarray(matrix, dtype=float), _FLOOR)

    def deviation(x):
        return max(np.abs(x.sum(axis=1) - 1).sum(), np.abs(x.sum(axis=0) - 1).sum())

    dev = deviation(m)
    sweeps = 0
    while dev > tol and sweeps < max_sweeps:
        m = m / m.sum(axis=1, keepdims=True)
        m = m / m.sum(axis=0, keepdims=True)
        sweeps += 1
        dev = deviation(m)
    return m, sweeps, dev


def sinkhorn_project(matrix: np.ndarray, tol: float = 1e-9, max_sweeps: int = 1000) -> np.ndarray:
    """Scale a non-negative matrix onto the Birkhoff polytope; raises on budget exhaustion."""
    out, sweeps, dev = sinkhorn_knopp(matrix, tol, max_sweeps)
    if dev > tol:
        raise SinkhornError(dev, sweeps)
    return out


@dataclass(frozen=True)
class _Face:
    """Per-candidate free block: employers ``free[c]`` share the first K positions."""

    free: np.ndarray  # (C, K) employer ids
    base: np.ndarray  # (C, J, J) fixed part (tail positions)

    @property
    def size(self) -> int:
        return self.free.shape[1]


def _full_face(n_c: int, n_j: int) -> _Face:
    return _Face(np.tile(np.arange(n_j), (n_c, 1)), np.zeros((n_c, n_j, n_j)))


def _embed(face: _Face, blocks: np.ndarray) -> np.ndarray:
    k = face.size
    out = face.base.copy()
    for c in range(out.shape[0]):
        out[c][np.ix_(face.free[c], np.arange(k))] = blocks[c]
    return out


def _extract(face: _Face, matrices: np.ndarray) -> np.ndarray:
    k = face.size
    return np.stack([matrices[c][np.ix_(face.free[c], np.arange(k))] for c in range(matrices.shape[0])])


def _check_preconditions(market: Market) -> None:
    exam = market.exam_employer
    if not exam.is_analytic or not exam.is_convex:
        raise ValueError(
            f"optimisation needs a convex analytic employer examination model, got {exam.kind}"
        )


def _run(market: Market, config: OptimizerConfig, init: Optional[Policy], face: _Face):
    _check_preconditions(market)
    n_c, n_j = market.num_candidates, market.num_employers
    k = face.size
    v = market.v_candidate
    if init is None:
        blocks = np.full((n_c, k, k), 1.0 / k)
    else:
        init.check_market(market)
        blocks = _extract(face, init.matrices)
    mats = _embed(face, blocks)
    trace = TraceRecord()
    start = time.perf_counter()
    for t in range(config.steps):
        weights = lower_bound_weights(market, mats)
        value = _lower_bound_from_matrices(market, mats)
        # block gradient: weights of the free employers times v over the first k positions
        g_free = np.take_along_axis(weights, face.free, axis=1)  # (C, K)
        grad = g_free[:, :, None] * v[None, None, :k]
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient")
        if config.method == FRANK_WOLFE:
            target = np.stack([rank_one_lmo(g_free[c], v[:k]) for c in range(n_c)])
            gap = float(np.sum(grad * (target - blocks)))
            if gap < config.stop_epsilon:
                trace.append(value, gap, 0.0, (time.perf_counter() - start) * 1e3)
                trace.converged = True
                break
            eta = config.step_size(t)
            new_blocks = (1.0 - eta) * blocks + eta * target
            sweeps = 0
        else:
            eta = config.step_size(t)
            new_blocks = np.empty_like(blocks)
            sweeps = 0
            for c in range(n_c):
                new_blocks[c], s, dev = sinkhorn_knopp(
                    blocks[c] + eta * grad[c], config.sinkhorn_tol, config.sinkhorn_max_sweeps
                )
                sweeps = max(sweeps, s)
                if dev > max(config.sinkhorn_tol, DS_TOL):
                    raise SinkhornError(dev, s)
            gap = float(np.abs(new_blocks - blocks).sum())
        step = float(np.linalg.norm(new_blocks - blocks))
        trace.append(value, gap, step, (time.perf_counter() - start) * 1e3, sweeps)
        blocks = new_blocks
        mats = _embed(face, blocks)
        if config.method == PROJECTED_GRADIENT and step < config.stop_epsilon:
            trace.converged = True
            break
    logger.debug("%s finished after %d iterations", config.method, len(trace))
    return Policy(mats), trace


def frank_wolfe(
    market: Market, config: OptimizerConfig = OptimizerConfig(), init: Optional[Policy] = None
) -> tuple[Policy, TraceRecord]:
    """Conditional gradient ascent on the welfare lower bound.

    The linear subproblem decomposes per candidate and is an assignment
    problem; since each gradient block is ``g_c v^T`` it is solved exactly
    by sorting employers by ``g_c``. Stops after ``config.steps`` updates or
    when the duality gap ``<grad, S - M>`` drops below ``stop_epsilon``.
    """
    if config.method != FRANK_WOLFE:
        config = OptimizerConfig(**{**config.__dict__, "method": FRANK_WOLFE})
    return _run(market, config, init, _full_face(market.num_candidates, market.num_employers))


def projected_gradient(
    market: Market, config: OptimizerConfig = OptimizerConfig(method=PROJECTED_GRADIENT),
    init: Optional[Policy] = None,
) -> tuple[Policy, TraceRecord]:
    """Gradient ascent with a Sinkhorn-Knopp projection after every step."""
    if config.method != PROJECTED_GRADIENT:
        config = OptimizerConfig(**{**config.__dict__, "method": PROJECTED_GRADIENT})
    return _run(market, config, init, _full_face(market.num_candidates, market.num_employers))


def optimize(market: Market, config: OptimizerConfig, init: Optional[Policy] = None):
    if config.method == FRANK_WOLFE:
        return frank_wolfe(market, config, init)
    return projected_gradient(market, config, init)


def two_stage_rerank(
    market: Market, shortlist_size: int, config: OptimizerConfig = OptimizerConfig()
) -> tuple[Policy, TraceRecord]:
    """Optimise only each candidate's reciprocal-relevance top ``shortlist_size``.

    The shortlisted employers share positions ``1..shortlist_size``; the rest
    keep their reciprocal order in the remaining positions.
    """
    n_c, n_j = market.num_candidates, market.num_employers
    if not 1 <= shortlist_size <= n_j:
        raise ValueError(f"shortlist_size must lie in [1, {n_j}]")
    rankings = np.asarray(sort_rankings(market.phi * market.psi.T))
    free = rankings[:, :shortlist_size]
    base = np.zeros((n_c, n_j, n_j))
    for c in range(n_c):
        for pos in range(shortlist_size, n_j):
            base[c, rankings[c, pos], pos] = 1.0
    face = _Face(free, base)
    return _run(market, config, None, face)
