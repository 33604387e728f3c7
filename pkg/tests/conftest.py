import itertools

import numpy as np
import pytest

from matchrank.market import ExaminationModel, Market
from matchrank.optimize import sinkhorn_project
from matchrank.policy import Policy

CONVEX_EXAMS = ("inv", "invlog", "invexp")


def random_market(rng, n_c, n_j, exam="inv"):
    model = ExaminationModel.from_name(exam) if isinstance(exam, str) else exam
    return Market(rng.random((n_c, n_j)), rng.random((n_j, n_c)), model, model)


def random_ds(rng, n):
    return sinkhorn_project(rng.random((n, n)) + 0.01, tol=1e-12, max_sweeps=10_000)


def random_policy(rng, n_c, n_j):
    return Policy(np.stack([random_ds(rng, n_j) for _ in range(n_c)]))


def pb_bruteforce(probs):
    """PMF of the number of successes, summing over every subset explicitly."""
    probs = np.asarray(probs, dtype=float)
    n = probs.size
    bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    weights = np.prod(np.where(bits == 1, probs, 1.0 - probs), axis=1)
    return np.bincount(bits.sum(axis=1), weights=weights, minlength=n + 1)


def lmo_bruteforce(g):
    """First permutation (lexicographic order) attaining the max of <g, P>."""
    n = g.shape[0]
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        value = g[np.arange(n), perm].sum()
        if value > best + 1e-12:
            best, best_perm = value, perm
    return best, np.asarray(best_perm)


def sw_bruteforce(market, policy):
    """Expected matches by enumerating every joint application outcome.

    Independent of the Poisson-Binomial recursion: each of the 2^(C*J)
    application patterns is weighted by its probability and employers
    process their realised applicant lists directly.
    """
    phi, psi = market.phi, market.psi
    n_c, n_j = phi.shape
    v_c = market.v_candidate
    v_e = market.v_employer
    apply = np.array([[phi[c, j] * policy.matrices[c][j] @ v_c for j in range(n_j)] for c in range(n_c)])
    total = 0.0
    for bits in itertools.product((0, 1), repeat=n_c * n_j):
        pattern = np.array(bits).reshape(n_c, n_j)
        prob = np.prod(np.where(pattern == 1, apply, 1 - apply))
        if prob == 0:
            continue
        expected = 0.0
        for j in range(n_j):
            applicants = [c for c in range(n_c) if pattern[c, j]]
            applicants.sort(key=lambda c: (-psi[j, c], c))
            for pos, c in enumerate(applicants):
                expected += psi[j, c] * v_e[pos]
        total += prob * expected
    return total


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
