"""Shared helpers for the test suite.

Random priors are always generated through a decomposition with positive
pseudo-counts and an upper-triangular slope factor, so every instance is
positive definite with a diagonal intercept Schur complement by
construction; the decomposition round-trip is then a real test, not a
tautology.
"""

import numpy as np
import pytest

from allocrisk import NigPrior, PriorDecomposition, counterexample_table


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)


def random_decomposition(rng: np.random.Generator, p: int) -> PriorDecomposition:
    h1, h2 = rng.uniform(0.6, 1.8, size=2)
    b_rows = rng.normal(scale=0.7, size=(2, p))
    d = np.triu(rng.normal(scale=0.4, size=(p, p)))
    np.fill_diagonal(d, rng.uniform(0.7, 1.5, size=p))
    return PriorDecomposition(h1=float(h1), h2=float(h2), b_rows=b_rows, d=d)


def random_prior(rng: np.random.Generator, p: int) -> NigPrior:
    return random_decomposition(rng, p).to_prior(
        zeta0=rng.normal(size=p + 2),
        a0=float(rng.uniform(1.8, 4.0)),
        b0=float(rng.uniform(0.5, 2.0)),
    )


def all_weight_vectors(n: int) -> np.ndarray:
    """Every 0/1 vector of length n, as a (2^n, n) float matrix."""
    codes = np.arange(2**n, dtype=np.uint64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    return ((codes[:, None] >> shifts) & np.uint64(1)).astype(float)


@pytest.fixture
def counterexample():
    return counterexample_table()
