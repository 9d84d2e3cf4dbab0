"""Search for risk-minimizing allocations.

Three modes: exhaustive enumeration (global optimum, small n), local search
with random restarts (flip moves when group sizes are free, swap moves when
they are fixed), and a best-of-k uniform-draw baseline.  All modes reduce
deterministically: ties within TIE_RTOL relative are collected and broken
by the lexicographically smallest weight vector, so the result does not
depend on enumeration or evaluation order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .errors import (
    ConditioningError,
    InfeasibleConstraint,
    SingularScatter,
    TooLargeForExhaustive,
)
from .model import Allocation, CovariateMatrix, FlatPrior, Prior
from .risk import RiskModel, model_for

# Relative tie tolerance; ties are reported, lexicographic minimum wins.
TIE_RTOL = 1e-12
EXHAUSTIVE_LIMIT_DEFAULT = 22
_CHUNK = 1 << 16
# Resampling cap when drawing feasible allocations at random.
_DRAW_CAP = 500

__all__ = [
    "TIE_RTOL",
    "EXHAUSTIVE_LIMIT_DEFAULT",
    "OptimizerConfig",
    "OptimizationResult",
    "enumerate_allocations",
    "optimize",
    "optimize_equal_split",
]

Constraint = str | tuple[int, int]


@dataclass(frozen=True)
class OptimizerConfig:
    """Search settings.  group_size_constraint is "free", "equal", or an
    explicit (n_c, n_t) pair summing to the sample size."""

    mode: str = "exhaustive"
    group_size_constraint: Constraint = "free"
    restarts: int = 20
    k: int = 1000
    rng_seed: int = 0
    exhaustive_limit: int = EXHAUSTIVE_LIMIT_DEFAULT

    def __post_init__(self) -> None:
        if self.mode not in ("exhaustive", "local_search", "best_of_k"):
            raise ValueError(f"unknown mode {self.mode!r}")
        c = self.group_size_constraint
        if isinstance(c, str):
            if c not in ("free", "equal"):
                raise ValueError(f"unknown group size constraint {c!r}")
        else:
            n_c, n_t = c
            if n_c < 0 or n_t < 0 or n_c != int(n_c) or n_t != int(n_t):
                raise InfeasibleConstraint(f"bad group sizes ({n_c}, {n_t})")
            object.__setattr__(self, "group_size_constraint", (int(n_c), int(n_t)))
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.exhaustive_limit < 1:
            raise ValueError("exhaustive_limit must be >= 1")


@dataclass(frozen=True)
class OptimizationResult:
    """Outcome of a search.  evaluated counts risk evaluations actually
    performed; infeasible counts enumerated-but-skipped allocations; dedup
    flags that only one representative per label-swapped pair was scanned."""

    best_alloc: Allocation
    best_risk: RiskBreakdown
    evaluated: int
    ties: tuple[Allocation, ...]
    trace: tuple[float, ...] | None = None
    infeasible: int = 0
    dedup: bool = False


def _sizes_for(n: int, constraint: Constraint) -> list[int]:
    """Treatment-arm sizes selected by a size constraint."""
    if constraint == "free":
        raise ValueError("free constraint has no fixed sizes")
    if constraint == "equal":
        # Odd n: "equal" means the sizes differ by one, either way around.
        return [n // 2] if n % 2 == 0 else sorted({n // 2, n - n // 2})
    n_c, n_t = constraint
    if n_c + n_t != n:
        raise InfeasibleConstraint(
            f"group sizes ({n_c}, {n_t}) do not sum to sample size {n}"
        )
    return [n_t]


def _weight_chunks(
    n: int, constraint: Constraint, dedup: bool
) -> Iterator[np.ndarray]:
    """Yield the constraint set as blocks of weight rows, in a fixed order."""
    if constraint == "free":
        shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
        total = 1 << (n - 1 if dedup else n)
        for lo in range(0, total, _CHUNK):
            codes = np.arange(lo, min(lo + _CHUNK, total), dtype=np.uint64)
            yield ((codes[:, None] >> shifts) & 1).astype(np.float64)
        return
    for n_t in _sizes_for(n, constraint):
        it = itertools.combinations(range(n), n_t)
        while True:
            block = list(itertools.islice(it, _CHUNK))
            if not block:
                break
            ws = np.zeros((len(block), n))
            for i, treated in enumerate(block):
                ws[i, list(treated)] = 1.0
            yield ws


def enumerate_allocations(
    n: int,
    constraint: Constraint = "free",
    *,
    dedup: bool = False,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT_DEFAULT,
) -> Iterator[Allocation]:
    """Stream every allocation in the constraint set, each exactly once.

    With dedup=True (free constraint only) one representative per
    label-swapped pair {w, 1-w} is produced, namely the one with w[0] = 0.
    """
    if n < 1:
        raise InfeasibleConstraint("sample size must be >= 1")
    if n > exhaustive_limit:
        raise TooLargeForExhaustive(
            f"n={n} exceeds the enumeration limit {exhaustive_limit}"
        )
    if dedup and constraint != "free":
        raise ValueError("dedup applies only to the free constraint")
    if constraint not in ("free", "equal"):
        _sizes_for(n, constraint)  # validates eagerly, before any yield

    def stream() -> Iterator[Allocation]:
        for block in _weight_chunks(n, constraint, dedup):
            for row in block:
                yield Allocation(row)

    return stream()


def _feasible_draw(
    model: RiskModel,
    constraint: Constraint,
    rng: np.random.Generator,
) -> np.ndarray:
    """One uniformly drawn feasible weight vector, by rejection."""
    n = model.m
    sizes = None if constraint == "free" else _sizes_for(n, constraint)
    for _ in range(_DRAW_CAP):
        if sizes is None:
            w = rng.integers(0, 2, size=n).astype(float)
        else:
            n_t = sizes[int(rng.integers(len(sizes)))] if len(sizes) > 1 else sizes[0]
            w = np.zeros(n)
            w[rng.permutation(n)[:n_t]] = 1.0
        if np.isfinite(model.risks(w[None, :])[0]):
            return w
    raise InfeasibleConstraint(
        "could not draw a feasible allocation; the constraint set may be empty"
    )


def _neighbors(w: np.ndarray, fixed_sizes: bool) -> np.ndarray:
    """Neighbor block: treated/control swaps, plus single flips when the
    group sizes are free to move.  Flip-only descent stalls on ridges
    where crossing a size class needs two coordinated moves."""
    n = w.shape[0]
    treated = np.flatnonzero(w == 1.0)
    control = np.flatnonzero(w == 0.0)
    pairs = [(i, j) for i in treated for j in control]
    rows = len(pairs) + (0 if fixed_sizes else n)
    out = np.tile(w, (rows, 1))
    for r, (i, j) in enumerate(pairs):
        out[r, i] = 0.0
        out[r, j] = 1.0
    if not fixed_sizes:
        idx = np.arange(n)
        base = len(pairs)
        out[base + idx, idx] = 1.0 - out[base + idx, idx]
    return out


class _Best:
    """Running minimum with tie collection under the relative tie rule."""

    def __init__(self) -> None:
        self.risk = np.inf
        self.candidates: list[tuple[float, tuple[int, ...]]] = []

    def offer_block(self, risks: np.ndarray, ws: np.ndarray) -> None:
        finite = np.isfinite(risks)
        if not np.any(finite):
            return
        block_min = float(np.min(risks[finite]))
        if block_min < self.risk:
            self.risk = block_min
        # Collect with slack, filter exactly at the end.
        keep = finite & (risks <= self.risk * (1.0 + 4.0 * TIE_RTOL))
        for r, w in zip(risks[keep], ws[keep]):
            self.candidates.append((float(r), tuple(int(v) for v in w)))
        if len(self.candidates) > 4096:
            self._prune()

    def _prune(self) -> None:
        cut = self.risk * (1.0 + 4.0 * TIE_RTOL)
        self.candidates = [c for c in self.candidates if c[0] <= cut]

    def resolve(self) -> tuple[tuple[int, ...], list[tuple[int, ...]]]:
        cut = self.risk * (1.0 + TIE_RTOL)
        ties = sorted({w for r, w in self.candidates if r <= cut})
        return ties[0], ties


def _minimize(
    model: RiskModel,
    cfg: OptimizerConfig,
    *,
    dedup: bool = False,
) -> OptimizationResult:
    n = model.m
    constraint = cfg.group_size_constraint
    if n < 1:
        raise InfeasibleConstraint("cannot allocate an empty batch")
    if constraint not in ("free", "equal"):
        _sizes_for(n, constraint)  # validates the pair sums to n

    if cfg.mode == "exhaustive":
        if n > cfg.exhaustive_limit:
            raise TooLargeForExhaustive(
                f"n={n} exceeds exhaustive_limit={cfg.exhaustive_limit}; "
                "use local_search"
            )
        best = _Best()
        evaluated = 0
        infeasible = 0
        for ws in _weight_chunks(n, constraint, dedup):
            risks = model.risks(ws)
            bad = int(np.count_nonzero(~np.isfinite(risks)))
            infeasible += bad
            evaluated += ws.shape[0] - bad
            best.offer_block(risks, ws)
        if not np.isfinite(best.risk):
            raise InfeasibleConstraint(
                "no feasible allocation exists under this constraint"
            )
        w_best, ties = best.resolve()
        return OptimizationResult(
            best_alloc=Allocation(np.array(w_best)),
            best_risk=model.breakdown(np.array(w_best, dtype=float)),
            evaluated=evaluated,
            ties=tuple(Allocation(np.array(t)) for t in ties),
            trace=None,
            infeasible=infeasible,
            dedup=dedup,
        )

    fixed = constraint != "free"
    if cfg.mode == "local_search":
        streams = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.restarts)
        best = _Best()
        evaluated = 0
        infeasible = 0
        best_trace: tuple[float, ...] = ()
        for seq in streams:
            rng = np.random.default_rng(seq)
            w = _feasible_draw(model, constraint, rng)
            current = float(model.risks(w[None, :])[0])
            evaluated += 1
            trace = [current]
            improved = True
            while improved:
                improved = False
                neigh = _neighbors(w, fixed)
                order = rng.permutation(neigh.shape[0])
                risks = model.risks(neigh[order])
                evaluated += neigh.shape[0]
                infeasible += int(np.count_nonzero(~np.isfinite(risks)))
                hits = np.flatnonzero(risks < current)
                if hits.size:
                    # First improvement in the shuffled scan order.
                    take = int(hits[0])
                    w = neigh[order[take]]
                    current = float(risks[take])
                    trace.append(current)
                    improved = True
            if current < best.risk or not best_trace:
                best_trace = tuple(trace)
            best.offer_block(np.array([current]), w[None, :])
        w_best, ties = best.resolve()
        return OptimizationResult(
            best_alloc=Allocation(np.array(w_best)),
            best_risk=model.breakdown(np.array(w_best, dtype=float)),
            evaluated=evaluated,
            ties=tuple(Allocation(np.array(t)) for t in ties),
            trace=best_trace,
            infeasible=infeasible,
            dedup=False,
        )

    # best_of_k
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed))
    draws = np.stack([_feasible_draw(model, constraint, rng) for _ in range(cfg.k)])
    risks = model.risks(draws)
    best = _Best()
    best.offer_block(risks, draws)
    w_best, ties = best.resolve()
    return OptimizationResult(
        best_alloc=Allocation(np.array(w_best)),
        best_risk=model.breakdown(np.array(w_best, dtype=float)),
        evaluated=cfg.k,
        ties=tuple(Allocation(np.array(t)) for t in ties),
        trace=tuple(np.minimum.accumulate(risks).tolist()),
        infeasible=0,
        dedup=False,
    )


def _build_model(prior: Prior, x: CovariateMatrix, e_sigma2: float) -> RiskModel:
    try:
        return model_for(prior, x, e_sigma2)
    except SingularScatter as exc:
        # Flat prior with a singular scatter: no allocation can be feasible.
        raise InfeasibleConstraint(f"no feasible allocation: {exc}") from exc


def optimize(
    prior: Prior,
    x: CovariateMatrix,
    cfg: OptimizerConfig,
    e_sigma2: float,
) -> OptimizationResult:
    """Minimize allocation risk over the constraint set in cfg.

    Exhaustive mode visits the whole set (flat prior + free sizes scans one
    representative per label-swapped pair); the other modes are heuristics.
    Deterministic for a fixed cfg including rng_seed.
    """
    if x.n < 1:
        raise InfeasibleConstraint("cannot allocate an empty sample")
    model = _build_model(prior, x, e_sigma2)
    dedup = (
        isinstance(prior, FlatPrior)
        and cfg.mode == "exhaustive"
        and cfg.group_size_constraint == "free"
    )
    return _minimize(model, cfg, dedup=dedup)


def optimize_equal_split(
    prior: Prior,
    x: CovariateMatrix,
    cfg: OptimizerConfig,
    e_sigma2: float,
) -> OptimizationResult:
    """optimize() restricted to equal group sizes (odd n: sizes differ by 1).

    Under a flat prior with even n, minimizing risk over equal splits is
    the same as minimizing the Mahalanobis imbalance; the result is checked
    against that equivalence and a violation raises ConditioningError.
    """
    cfg = replace(cfg, group_size_constraint="equal")
    if x.n < 1:
        raise InfeasibleConstraint("cannot allocate an empty sample")
    model = _build_model(prior, x, e_sigma2)
    result = _minimize(model, cfg, dedup=False)
    if isinstance(prior, FlatPrior) and x.n % 2 == 0 and x.n >= 2:
        _check_mahalanobis_argmin(model, cfg, result)
    return result


def _check_mahalanobis_argmin(
    model: RiskModel, cfg: OptimizerConfig, result: OptimizationResult
) -> None:
    """The returned split must also minimize M among splits it was compared
    against.  Exhaustive mode checks the full equal-split set."""
    best_m = model.mahalanobis_many(result.best_alloc.w[None, :].astype(float))[0]
    if cfg.mode == "exhaustive":
        n = model.m
        min_m = np.inf
        for ws in _weight_chunks(n, "equal", False):
            ms = model.mahalanobis_many(ws)
            finite = np.isfinite(ms)
            if np.any(finite):
                min_m = min(min_m, float(np.min(ms[finite])))
    else:
        candidates = np.stack([t.w.astype(float) for t in result.ties])
        ms = model.mahalanobis_many(candidates)
        min_m = float(np.nanmin(ms))
    if best_m > min_m * (1.0 + 1e-9) + 1e-12:
        raise ConditioningError(
            f"equal-split risk minimizer has imbalance {best_m:.6g} "
            f"but a split with {min_m:.6g} exists; evaluator inconsistency"
        )
