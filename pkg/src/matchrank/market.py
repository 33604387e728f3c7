"""Two-sided market instances, examination models and instance generators.

A market holds the candidate-side relevance matrix ``phi`` (candidates x
employers) and the employer-side relevance matrix ``psi`` (employers x
candidates), plus one position-based examination model per side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

INVERSE_RANK = "inverse_rank"
INVERSE_LOG = "inverse_log"
INVERSE_EXP = "inverse_exp"
TRUNCATED_GEOMETRIC = "truncated_geometric"
EXPLICIT = "explicit"

KINDS = (INVERSE_RANK, INVERSE_LOG, INVERSE_EXP, TRUNCATED_GEOMETRIC, EXPLICIT)

# CLI shorthands
EXAM_ALIASES = {
    "inv": INVERSE_RANK,
    "invlog": INVERSE_LOG,
    "invexp": INVERSE_EXP,
}

STRUCTURES = ("random", "similar", "reversed")


@dataclass(frozen=True)
class ExaminationModel:
    """Probability that a user examines the item at a given (1-based) rank.

    Analytic kinds are defined on the positive reals so that they can be
    evaluated at expected ranks. ``truncated_geometric`` is ``base**(x-1)``
    at integer ranks up to ``cutoff`` and zero beyond; between integers it
    is linearly interpolated, which keeps it convex whenever ``base <= 0.5``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    max_position: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown examination kind {self.kind!r}")
        if self.kind == TRUNCATED_GEOMETRIC:
            base = float(self.params.get("base", -1))
            cutoff = int(self.params.get("cutoff", 0))
            if not 0.0 <= base <= 1.0 or cutoff < 1:
                raise ValueError("truncated_geometric needs 0<=base<=1 and cutoff>=1")
        if self.kind == EXPLICIT:
            values = np.asarray(self.params.get("values", []), dtype=float)
            if values.ndim != 1 or values.size == 0:
                raise ValueError("explicit examination needs a non-empty vector")
            if np.any(values < 0) or np.any(values > 1):
                raise ValueError("explicit examination values must lie in [0,1]")
            if np.any(np.diff(values) > 0):
                raise ValueError("explicit examination values must be non-increasing")
            object.__setattr__(self, "max_position", int(values.size))

    @classmethod
    def inverse_rank(cls) -> "ExaminationModel":
        return cls(INVERSE_RANK)

    @classmethod
    def inverse_log(cls) -> "ExaminationModel":
        return cls(INVERSE_LOG)

    @classmethod
    def inverse_exp(cls) -> "ExaminationModel":
        return cls(INVERSE_EXP)

    @classmethod
    def truncated_geometric(cls, base: float, cutoff: int) -> "ExaminationModel":
        return cls(TRUNCATED_GEOMETRIC, {"base": float(base), "cutoff": int(cutoff)})

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "ExaminationModel":
        return cls(EXPLICIT, {"values": [float(v) for v in values]})

    @classmethod
    def from_name(cls, name: str) -> "ExaminationModel":
        kind = EXAM_ALIASES.get(name, name)
        if kind not in (INVERSE_RANK, INVERSE_LOG, INVERSE_EXP):
            raise ValueError(f"unknown examination model {name!r}")
        return cls(kind)

    @property
    def is_analytic(self) -> bool:
        return self.kind != EXPLICIT

    @property
    def is_convex(self) -> bool:
        if self.kind in (INVERSE_RANK, INVERSE_LOG, INVERSE_EXP):
            return True
        if self.kind == TRUNCATED_GEOMETRIC:
            return self.params["base"] <= 0.5
        return False

    def __call__(self, x):
        """Evaluate v at (possibly non-integer) positions ``x >= 1``."""
        x = np.asarray(x, dtype=float)
        if self.kind == INVERSE_RANK:
            return 1.0 / x
        if self.kind == INVERSE_LOG:
            return 1.0 / np.log2(1.0 + x)
        if self.kind == INVERSE_EXP:
            return np.exp(-(x - 1.0))
        if self.kind == TRUNCATED_GEOMETRIC:
            base, cutoff = self.params["base"], self.params["cutoff"]
            lo = np.floor(x)
            frac = x - lo
            return (1.0 - frac) * self._geom(lo, base, cutoff) + frac * self._geom(lo + 1, base, cutoff)
        raise ValueError("explicit examination model cannot be evaluated off-grid")

    def derivative(self, x):
        """dv/dx; the right derivative at the kinks of truncated_geometric."""
        x = np.asarray(x, dtype=float)
        if self.kind == INVERSE_RANK:
            return -1.0 / x**2
        if self.kind == INVERSE_LOG:
            return -1.0 / ((1.0 + x) * math.log(2.0) * np.log2(1.0 + x) ** 2)
        if self.kind == INVERSE_EXP:
            return -np.exp(-(x - 1.0))
        if self.kind == TRUNCATED_GEOMETRIC:
            base, cutoff = self.params["base"], self.params["cutoff"]
            lo = np.floor(x)
            return self._geom(lo + 1, base, cutoff) - self._geom(lo, base, cutoff)
        raise ValueError("explicit examination model is not differentiable")

    @staticmethod
    def _geom(k, base, cutoff):
        k = np.asarray(k, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.power(base, np.maximum(k, 1.0) - 1.0)
        return np.where(k <= cutoff, out, 0.0)

    def vector(self, length: int) -> np.ndarray:
        return exam_vector(self, length)

    def to_dict(self) -> dict:
        params = dict(self.params)
        if self.max_position is not None and self.kind != EXPLICIT:
            params["max_position"] = self.max_position
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, data: dict) -> "ExaminationModel":
        params = dict(data.get("params", {}))
        max_position = params.pop("max_position", None)
        return cls(data["kind"], params, max_position)


def exam_vector(model: ExaminationModel, length: int) -> np.ndarray:
    """Examination probabilities ``[v(1), ..., v(length)]``."""
    if length < 1:
        raise ValueError("length must be positive")
    if model.kind == EXPLICIT:
        values = np.asarray(model.params["values"], dtype=float)
        if values.size < length:
            raise ValueError(
                f"explicit examination model has {values.size} positions, {length} requested"
            )
        return values[:length].copy()
    if model.max_position is not None and length > model.max_position:
        raise ValueError(f"model is limited to {model.max_position} positions")
    return np.asarray(model(np.arange(1, length + 1, dtype=float)), dtype=float)


@dataclass(frozen=True, eq=False)
class Market:
    """An immutable two-sided market instance."""

    phi: np.ndarray
    psi: np.ndarray
    exam_candidate: ExaminationModel
    exam_employer: ExaminationModel

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        psi = np.array(self.psi, dtype=float)
        if phi.ndim != 2 or psi.ndim != 2:
            raise ValueError("phi and psi must be matrices")
        if psi.shape != phi.shape[::-1]:
            raise ValueError(f"psi shape {psi.shape} does not match phi shape {phi.shape}")
        if phi.size == 0:
            raise ValueError("market must have at least one candidate and one employer")
        for name, mat in (("phi", phi), ("psi", psi)):
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} has non-finite entries")
            if np.any(mat < 0) or np.any(mat > 1):
                raise ValueError(f"{name} entries must lie in [0,1]")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def num_candidates(self) -> int:
        return self.phi.shape[0]

    @property
    def num_employers(self) -> int:
        return self.phi.shape[1]

    @property
    def v_candidate(self) -> np.ndarray:
        """Candidate examination vector over the ``|J|`` ranking positions."""
        return exam_vector(self.exam_candidate, self.num_employers)

    @property
    def v_employer(self) -> np.ndarray:
        """Employer examination vector over ``|C|`` possible applicant ranks."""
        return exam_vector(self.exam_employer, self.num_candidates)

    def to_dict(self) -> dict:
        return {
            "num_candidates": self.num_candidates,
            "num_employers": self.num_employers,
            "phi": self.phi.tolist(),
            "psi": self.psi.tolist(),
            "exam_candidate": self.exam_candidate.to_dict(),
            "exam_employer": self.exam_employer.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Market":
        market = cls(
            phi=np.asarray(data["phi"], dtype=float),
            psi=np.asarray(data["psi"], dtype=float),
            exam_candidate=ExaminationModel.from_dict(data["exam_candidate"]),
            exam_employer=ExaminationModel.from_dict(data["exam_employer"]),
        )
        if (market.num_candidates, market.num_employers) != (
            data.get("num_candidates", market.num_candidates),
            data.get("num_employers", market.num_employers),
        ):
            raise ValueError("declared market dimensions do not match the matrices")
        return market

    def with_exam(self, exam: ExaminationModel) -> "Market":
        return Market(self.phi, self.psi, exam, exam)


def save_market(market: Market, path) -> None:
    Path(path).write_text(json.dumps(market.to_dict()) + "\n")


def load_market(path) -> Market:
    return Market.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    candidate_ratio: float = 1.5
    lam: float = 0.5
    structure: str = "random"
    noise_sd: float = 0.2
    seed: int = 0
    exam: ExaminationModel = field(default_factory=ExaminationModel.inverse_rank)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.candidate_ratio <= 0:
            raise ValueError("candidate_ratio must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0,1]")
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    @property
    def num_candidates(self) -> int:
        # half-up rounding, max(1, .) keeps tiny ratios valid
        return max(1, int(math.floor(self.candidate_ratio * self.n + 0.5)))


def synthetic_components(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """The random (pre-crowding) relevance matrices of a synthetic market.

    Streams for ``phi``, ``psi`` and the structural noise are spawned
    independently from ``spec.seed``.
    """
    n_c, n_j = spec.num_candidates, spec.n
    phi_ss, psi_ss, noise_ss = np.random.SeedSequence(spec.seed).spawn(3)
    phi_rand = np.random.default_rng(phi_ss).uniform(0.0, 1.0, size=(n_c, n_j))
    if spec.structure == "random":
        psi_rand = np.random.default_rng(psi_ss).uniform(0.0, 1.0, size=(n_j, n_c))
    else:
        noise = np.random.default_rng(noise_ss).normal(0.0, spec.noise_sd, size=(n_j, n_c))
        base = phi_rand.T if spec.structure == "similar" else 1.0 - phi_rand.T
        psi_rand = np.clip(base + noise, 0.0, 1.0)
    return phi_rand, psi_rand


def crowded_profile(size: int) -> np.ndarray:
    """Linearly decreasing relevance ``1 - (i-1)/(size-1)`` for i = 1..size."""
    if size == 1:
        return np.ones(1)
    return 1.0 - np.arange(size) / (size - 1)


def generate_synthetic(spec: SyntheticSpec) -> Market:
    phi_rand, psi_rand = synthetic_components(spec)
    n_c, n_j = phi_rand.shape
    phi_crowd = np.broadcast_to(crowded_profile(n_j), (n_c, n_j))
    psi_crowd = np.broadcast_to(crowded_profile(n_c), (n_j, n_c))
    lam = spec.lam
    phi = np.clip((1.0 - lam) * phi_rand + lam * phi_crowd, 0.0, 1.0)
    psi = np.clip((1.0 - lam) * psi_rand + lam * psi_crowd, 0.0, 1.0)
    return Market(phi, psi, spec.exam, spec.exam)


def _ranks_to_relevance(order: Sequence[int], n: int) -> np.ndarray:
    """Cardinal relevance (n - (rank-1))/n for an ordering of n items."""
    values = np.empty(n)
    for pos, item in enumerate(order):
        values[item] = (n - pos) / n
    return values


def theorem2_candidate_order(n: int, i: int) -> list[int]:
    """Full preference order (0-based employer ids) of candidate ``i`` (0-based).

    The top three follow the crowding construction; the remaining
    employers are appended in ascending index order.
    """
    if i <= 1:
        top = [0, 1, 2]
    else:
        top = [0, i, i - 1]
    top = [j for j in dict.fromkeys(top) if j < n]
    rest = [j for j in range(n) if j not in top]
    return top + rest


def theorem2_employer_order(n: int, k: int) -> list[int]:
    """Circulant order of employer ``k`` (0-based): c_k, c_{k+1}, ..., c_{k-1}."""
    return [(k + s) % n for s in range(n)]


def theorem2_instance(n: int, m: int = 2) -> Market:
    """The crowded market on which naive ranking loses Theta(n) matches."""
    if n < 2:
        raise ValueError("theorem2_instance needs n >= 2")
    if m < 1:
        raise ValueError("cutoff m must be >= 1")
    phi = np.vstack([_ranks_to_relevance(theorem2_candidate_order(n, i), n) for i in range(n)])
    psi = np.vstack([_ranks_to_relevance(theorem2_employer_order(n, k), n) for k in range(n)])
    exam = ExaminationModel.truncated_geometric(0.1, m)
    return Market(phi, psi, exam, exam)


def theorem2_strategic_rankings(n: int) -> list[list[int]]:
    """Rankings of the policy that spreads candidates over employers.

    c_1 sees (j_1, j_2, ...) and c_i, i >= 2, sees (j_i, j_{i-1}, ...);
    positions beyond the second follow ascending employer index.
    """
    rankings = []
    for i in range(n):
        top = [0, 1] if i == 0 else [i, i - 1]
        rankings.append(top + [j for j in range(n) if j not in top])
    return rankings


_P5_VALUES = (1.0, 0.9, 0.1)
_P5_CANDIDATE_ORDERS = ((0, 2, 1), (1, 0, 2), (0, 1, 2))
_P5_EMPLOYER_ORDERS = ((0, 2, 1), (1, 0, 2), (0, 1, 2))


def proposition5_instance() -> Market:
    """3x3 top-1 market where a stable matching is not welfare optimal."""
    phi = np.zeros((3, 3))
    psi = np.zeros((3, 3))
    for c, order in enumerate(_P5_CANDIDATE_ORDERS):
        for value, j in zip(_P5_VALUES, order):
            phi[c, j] = value
    for j, order in enumerate(_P5_EMPLOYER_ORDERS):
        for value, c in zip(_P5_VALUES, order):
            psi[j, c] = value
    top1 = ExaminationModel.truncated_geometric(0.1, 1)
    return Market(phi, psi, top1, top1)


def proposition5_stable_rankings() -> list[list[int]]:
    """Top-1 rankings realising the stable matching (c1,j1), (c2,j2), (c3,j3)."""
    return [[0, 1, 2], [1, 0, 2], [2, 0, 1]]


def proposition5_strategic_rankings() -> list[list[int]]:
    """Top-1 rankings c1->j3, c2->j2, c3->j1."""
    return [[2, 0, 1], [1, 0, 2], [0, 1, 2]]


FIXTURES = ("theorem2", "proposition5")
