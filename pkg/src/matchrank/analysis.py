"""Individual utilities, fairness histograms and adoption/retention gains."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .market import Market
from .objective import _require_lower_bound_model, candidate_utilities, employer_utilities, expected_competition
from .policy import Policy

NUM_BINS = 20
_POSITIVE_TOL = 1e-12


def histogram(values: np.ndarray, bins: int = NUM_BINS, value_range=None):
    """Equal-width histogram; a degenerate range collapses to a single bin."""
    values = np.asarray(values, dtype=float)
    lo, hi = value_range if value_range is not None else (values.min(), values.max())
    if hi <= lo:
        return np.array([lo, lo]), np.array([values.size])
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return edges, counts


@dataclass
class GainReport:
    gains: np.ndarray
    bin_edges: np.ndarray
    bin_counts: np.ndarray

    @classmethod
    def from_gains(cls, gains) -> "GainReport":
        gains = np.asarray(gains, dtype=float)
        edges, counts = histogram(gains)
        return cls(gains, edges, counts)

    @property
    def fraction_positive(self) -> float:
        return float(np.mean(self.gains > _POSITIVE_TOL))

    @property
    def total(self) -> float:
        return float(np.sum(self.gains))


def payoff(market: Market, own_matrix: np.ndarray, context: Policy, c: int) -> float:
    """Lower-bound matches of candidate ``c`` playing ``own_matrix`` against ``context``.

    Only the other candidates' matrices in ``context`` enter (through the
    expected competition above ``c``); ``context``'s own entry for ``c`` is
    ignored.
    """
    return float(payoffs(market, context, np.asarray(own_matrix)[None], [c])[0])


def payoffs(market: Market, context: Policy, own: np.ndarray | None = None, candidates=None) -> np.ndarray:
    """Vectorised payoff; ``own[i]`` is the matrix played by ``candidates[i]``."""
    _require_lower_bound_model(market.exam_employer)
    context.check_market(market)
    if candidates is None:
        candidates = np.arange(market.num_candidates)
    candidates = np.asarray(candidates)
    own = context.matrices[candidates] if own is None else np.asarray(own, dtype=float)
    v = market.v_candidate
    s = expected_competition(market, market.phi * (context.matrices @ v))
    exposure = own @ v  # (n, J)
    pair = market.phi[candidates] * market.psi.T[candidates]
    return (pair * market.exam_employer(1.0 + s[candidates]) * exposure).sum(axis=1)


def switch_gain(market: Market, policy_a: Policy, policy_b: Policy) -> GainReport:
    """Exact utility change per candidate when everyone moves from ``a`` to ``b``."""
    return GainReport.from_gains(candidate_utilities(market, policy_b) - candidate_utilities(market, policy_a))


def adoption_gain(market: Market, system_policy: Policy, naive: Policy) -> GainReport:
    """Payoff gain of adopting the system ranking while everyone else stays naive."""
    return GainReport.from_gains(
        payoffs(market, naive, system_policy.matrices) - payoffs(market, naive, naive.matrices)
    )


def retention_gain(market: Market, system_policy: Policy, naive: Policy) -> GainReport:
    """Payoff gain of staying with the system ranking while everyone else stays too."""
    return GainReport.from_gains(
        payoffs(market, system_policy, system_policy.matrices)
        - payoffs(market, system_policy, naive.matrices)
    )


@dataclass
class UtilityHistograms:
    utilities: dict  # (name, side) -> values
    rows: list  # (name, side, bin_lo, bin_hi, count)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["name", "bin_lo", "bin_hi", "count"])
            for name, side, lo, hi, count in self.rows:
                writer.writerow([f"{name}:{side}", repr(lo), repr(hi), count])

    def lowest_bin(self, name: str, side: str = "candidate") -> int:
        return next(r[4] for r in self.rows if r[0] == name and r[1] == side)


def utility_histograms(market: Market, policies: Mapping[str, Policy], bins: int = NUM_BINS) -> UtilityHistograms:
    """Exact candidate and employer utilities per policy, binned over the pooled range per side."""
    utilities = {}
    for name, pol in policies.items():
        utilities[(name, "candidate")] = candidate_utilities(market, pol)
        utilities[(name, "employer")] = employer_utilities(market, pol)
    rows = []
    for side in ("candidate", "employer"):
        pooled = np.concatenate([u for (n, s), u in utilities.items() if s == side])
        value_range = (pooled.min(), pooled.max())
        for name in policies:
            edges, counts = histogram(utilities[(name, side)], bins, value_range)
            for b, count in enumerate(counts):
                rows.append((name, side, float(edges[b]), float(edges[b + 1]), int(count)))
    return UtilityHistograms(utilities, rows)


def write_gains_csv(path, reports: Mapping[str, GainReport]) -> None:
    """Long-format gains: ``name,candidate_index,value``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "candidate_index", "value"])
        for name, report in reports.items():
            for c, value in enumerate(report.gains):
                writer.writerow([name, c, repr(float(value))])
