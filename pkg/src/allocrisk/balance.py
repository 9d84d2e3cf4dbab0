"""Equal-split sufficiency analysis and the counterexample data set.

The test is: an equal split whose shifted weight vector has a small enough
projection onto the covariate column space (at most 1/n) certifies that
some equal split is globally risk-optimal under the flat prior.  The
condition is sufficient, not necessary; when it fails nothing follows,
and the bundled 8x3 counterexample shows the optimum can then be an
uneven 3-vs-5 split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .allocator import (
    EXHAUSTIVE_LIMIT_DEFAULT,
    OptimizerConfig,
    _weight_chunks,
    optimize,
)
from .errors import InfeasibleConstraint, OddN, SingularGram
from .model import Allocation, CovariateMatrix, FlatPrior

__all__ = [
    "EqualSplitReport",
    "hat_quadratic_form",
    "equal_split_condition",
    "counterexample_table",
]


@dataclass(frozen=True)
class EqualSplitReport:
    """Result of the equal-split sufficiency test.

    condition_met means min_qform <= threshold = 1/n, which certifies an
    equal split is optimal.  optimal_is_equal reports what a free-size
    exhaustive optimization actually found (None when not run, e.g. the
    flat optimizer is infeasible for this sample).  exhaustive is False
    when the split scan had to fall back to local search.
    """

    threshold: float
    min_qform: float
    witness: Allocation
    condition_met: bool
    optimal_is_equal: bool | None = None
    exhaustive: bool = True


def _gram_factor(x: CovariateMatrix):
    try:
        factor = sla.cho_factor(x.gram, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularGram(f"X'X is singular: {exc}") from exc
    diag = np.diag(factor[0])
    if float(np.min(diag)) ** 2 <= 1e-13 * float(np.max(diag)) ** 2:
        raise SingularGram("X'X is numerically singular")
    return factor


def hat_quadratic_form(x: CovariateMatrix, alloc: Allocation) -> float:
    """(w - 1/2)' H (w - 1/2) with H the hat matrix X(X'X)^{-1}X'.

    H projects onto the covariate column space, so the value is the squared
    norm of the projection of w - 1/2 and lies in [0, n/4].
    """
    if alloc.n != x.n:
        raise SingularGram(
            f"allocation length {alloc.n} does not match sample size {x.n}"
        )
    factor = _gram_factor(x)
    v = alloc.w.astype(float) - 0.5
    t = x.x.T @ v
    q = float(t @ sla.cho_solve(factor, t, check_finite=False))
    return max(q, 0.0)


def _qforms(x: CovariateMatrix, factor, ws: np.ndarray) -> np.ndarray:
    t = (ws - 0.5) @ x.x
    solved = sla.cho_solve(factor, t.T, check_finite=False).T
    return np.einsum("ij,ij->i", t, solved)


def _scan_equal_splits(x: CovariateMatrix, factor) -> tuple[float, tuple[int, ...]]:
    """Exact minimum of the quadratic form over all equal splits."""
    best = np.inf
    ties: list[tuple[int, ...]] = []
    for ws in _weight_chunks(x.n, "equal", False):
        qs = _qforms(x, factor, ws)
        block_min = float(qs.min())
        if block_min < best:
            best = block_min
        cut = best + 1e-12 * (1.0 + best)
        for q, w in zip(qs, ws):
            if q <= cut:
                ties.append(tuple(int(v) for v in w))
        ties = [t for t in ties if _qform_one(x, factor, t) <= cut]
    return best, min(ties)


def _qform_one(x: CovariateMatrix, factor, w: tuple[int, ...]) -> float:
    return float(_qforms(x, factor, np.array([w], dtype=float))[0])


def _search_equal_splits(
    x: CovariateMatrix, factor, seed: int, restarts: int
) -> tuple[float, tuple[int, ...]]:
    """Swap-descent heuristic for n beyond the enumeration limit."""
    n = x.n
    n_t = n // 2
    best = np.inf
    best_w: tuple[int, ...] | None = None
    for seq in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(seq)
        w = np.zeros(n)
        w[rng.permutation(n)[:n_t]] = 1.0
        current = _qform_one(x, factor, tuple(int(v) for v in w))
        improved = True
        while improved:
            improved = False
            treated = np.flatnonzero(w == 1.0)
            control = np.flatnonzero(w == 0.0)
            pairs = [(i, j) for i in treated for j in control]
            neigh = np.tile(w, (len(pairs), 1))
            for r, (i, j) in enumerate(pairs):
                neigh[r, i] = 0.0
                neigh[r, j] = 1.0
            order = rng.permutation(len(pairs))
            qs = _qforms(x, factor, neigh[order])
            hits = np.flatnonzero(qs < current)
            if hits.size:
                w = neigh[order[int(hits[0])]]
                current = float(qs[int(hits[0])])
                improved = True
        key = tuple(int(v) for v in w)
        if current < best or (current == best and (best_w is None or key < best_w)):
            best, best_w = current, key
    assert best_w is not None
    return best, best_w


def equal_split_condition(
    x: CovariateMatrix,
    *,
    run_optimizer: bool = True,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT_DEFAULT,
    rng_seed: int = 0,
    restarts: int = 20,
) -> EqualSplitReport:
    """Scan equal splits for the sufficiency condition min qform <= 1/n.

    Beyond exhaustive_limit the scan downgrades to swap-descent local
    search and the report is flagged exhaustive=False; condition_met stays
    trustworthy (the heuristic minimum is an upper bound, and the
    condition needs only one witness below threshold).

    With run_optimizer=True and n within the limit, a free-size exhaustive
    flat-prior optimization fills optimal_is_equal; when that optimizer
    has no feasible allocation the field stays None.
    """
    n = x.n
    if n % 2 != 0 or n < 2:
        raise OddN(f"equal-split analysis needs even n >= 2, got {n}")
    factor = _gram_factor(x)
    exhaustive = n <= exhaustive_limit
    if exhaustive:
        min_qform, witness = _scan_equal_splits(x, factor)
    else:
        min_qform, witness = _search_equal_splits(x, factor, rng_seed, restarts)
    threshold = 1.0 / n
    optimal_is_equal: bool | None = None
    if run_optimizer and exhaustive:
        cfg = OptimizerConfig(
            mode="exhaustive",
            group_size_constraint="free",
            exhaustive_limit=exhaustive_limit,
        )
        try:
            result = optimize(FlatPrior(), x, cfg, 1.0)
        except InfeasibleConstraint:
            optimal_is_equal = None
        else:
            pool = set(result.ties) | {result.best_alloc}
            optimal_is_equal = any(a.n_c == a.n_t for a in pool)
    return EqualSplitReport(
        threshold=threshold,
        min_qform=min_qform,
        witness=Allocation(np.array(witness)),
        condition_met=min_qform <= threshold,
        optimal_is_equal=optimal_is_equal,
        exhaustive=exhaustive,
    )


def counterexample_table() -> CovariateMatrix:
    """The bundled 8-unit, 3-covariate sample whose optimal flat-prior
    allocation is a 3-vs-5 split, not an equal one."""
    return CovariateMatrix(
        np.array(
            [
                [0.1, -0.8, -1.3],
                [0.5, 2.1, 1.3],
                [0.8, -0.2, 0.2],
                [-0.3, 0.3, 0.6],
                [1.1, -0.8, 0.0],
                [-0.5, 0.7, -0.7],
                [-0.8, 1.2, -0.4],
                [-0.7, 1.0, 1.4],
            ]
        )
    )
