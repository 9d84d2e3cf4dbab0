"""Greedy batch-wise allocation conditional on everything allocated so far.

A session accumulates sufficient statistics of the units already placed
(arm counts, arm-wise covariate sums, the covariate Gram matrix) next to
the prior's pseudo-count state.  The conditional risk of a new batch then
has exactly the single-shot form with those accumulators added in, so the
same evaluator serves both; an empty session reproduces single-shot risks
identically.

Raw batch history is kept alongside the accumulators for audit: the state
is exactly re-derivable from it, and `validate` checks that it is.

Recording outcomes never changes which allocation wins a later batch; it
only rescales reported risks through the posterior mean of the noise
variance.  Outcomes may arrive late and out of order: the variance scalars
are recomputed from the set of scored batches, so the result does not
depend on recording order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .allocator import (
    EXHAUSTIVE_LIMIT_DEFAULT,
    OptimizationResult,
    OptimizerConfig,
    _minimize,
)
from .errors import (
    AlreadyScored,
    ConditioningError,
    DimensionMismatch,
    InvalidPrior,
    LengthMismatch,
    UnknownBatch,
)
from .model import (
    Allocation,
    CovariateMatrix,
    FlatPrior,
    NigPrior,
    Prior,
    decompose_prior,
    posterior_update,
)
from .risk import RiskBreakdown, RiskModel

__all__ = [
    "BatchRecord",
    "BatchRequest",
    "SequentialSession",
    "open_session",
    "conditional_risk",
    "allocate_batch",
    "fold_batch",
    "record_outcomes",
]


@dataclass(frozen=True, eq=False)
class BatchRecord:
    """One allocated batch: covariates, chosen allocation, outcomes if scored."""

    u: np.ndarray
    w: Allocation
    y: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def scored(self) -> bool:
        return self.y is not None


@dataclass(frozen=True, eq=False)
class BatchRequest:
    """An arriving batch and how to allocate it.

    constraint: optional (m_c, m_t) quota for this batch, summing to m.
    mode: optimizer mode, or None to pick exhaustive when the batch is
    small enough and local search otherwise.
    """

    u: np.ndarray
    constraint: tuple[int, int] | None = None
    mode: str | None = None
    restarts: int = 20
    rng_seed: int = 0
    exhaustive_limit: int = EXHAUSTIVE_LIMIT_DEFAULT

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 2:
            raise DimensionMismatch(f"batch covariates must be 2-d, got {u.shape}")
        object.__setattr__(self, "u", u)
        if self.constraint is not None:
            m_c, m_t = self.constraint
            if m_c < 0 or m_t < 0:
                raise DimensionMismatch("batch quota entries must be >= 0")
            if m_c + m_t != u.shape[0]:
                raise DimensionMismatch(
                    f"batch quota ({m_c}, {m_t}) does not sum to batch size {u.shape[0]}"
                )
            object.__setattr__(self, "constraint", (int(m_c), int(m_t)))


@dataclass(frozen=True, eq=False)
class SequentialSession:
    """Immutable session state; operations return updated copies.

    l_c / l_t count units already placed per arm; sum_c / sum_t are the
    per-arm covariate sums and gram the accumulated covariate Gram matrix.
    (a, b) are the noise-variance posterior scalars from scored batches,
    equal to the prior scalars while nothing is scored.
    """

    prior: Prior
    p: int
    h1: float
    h2: float
    b1: np.ndarray
    b2: np.ndarray
    ridge: np.ndarray
    l_c: int
    l_t: int
    sum_c: np.ndarray
    sum_t: np.ndarray
    gram: np.ndarray
    a: float
    b: float
    history: tuple[BatchRecord, ...] = field(default_factory=tuple)

    @property
    def flat(self) -> bool:
        return isinstance(self.prior, FlatPrior)

    @property
    def n_allocated(self) -> int:
        return self.l_c + self.l_t

    @property
    def e_sigma2(self) -> float:
        return self.b / (self.a - 1.0)

    def validate(self) -> None:
        """Re-derive the accumulators from raw history and compare."""
        l_c = l_t = 0
        sum_c = np.zeros(self.p)
        sum_t = np.zeros(self.p)
        gram = np.zeros((self.p, self.p))
        for rec in self.history:
            w = rec.w.w
            l_t += int(w.sum())
            l_c += rec.m - int(w.sum())
            sum_t += w @ rec.u
            sum_c += (1 - w) @ rec.u
            gram += rec.u.T @ rec.u
        if (l_c, l_t) != (self.l_c, self.l_t):
            raise ConditioningError(
                f"arm counts ({self.l_c}, {self.l_t}) do not match history "
                f"({l_c}, {l_t})"
            )
        scale = 1.0 + max(np.abs(gram).max(), np.abs(sum_c).max(), np.abs(sum_t).max())
        drift = max(
            np.abs(gram - self.gram).max(),
            np.abs(sum_c - self.sum_c).max(),
            np.abs(sum_t - self.sum_t).max(),
        )
        if drift > 1e-9 * scale:
            raise ConditioningError(
                f"accumulated statistics drifted {drift:.3e} from history replay"
            )


def open_session(prior: Prior, p: int) -> SequentialSession:
    """Fresh session.  The first batch's conditional risks coincide with
    single-shot risks under the same prior."""
    if p < 1:
        raise DimensionMismatch("p must be >= 1")
    if isinstance(prior, NigPrior):
        if prior.p != p:
            raise DimensionMismatch(f"prior is for p={prior.p}, session wants p={p}")
        decomp = decompose_prior(prior)
        h1, h2 = decomp.h1, decomp.h2
        b1, b2 = decomp.b1, decomp.b2
        ridge = decomp.ridge
    elif isinstance(prior, FlatPrior):
        h1 = h2 = 0.0
        b1 = np.zeros(p)
        b2 = np.zeros(p)
        ridge = np.zeros((p, p))
    else:
        raise InvalidPrior(f"unsupported prior type {type(prior).__name__}")
    return SequentialSession(
        prior=prior,
        p=p,
        h1=h1,
        h2=h2,
        b1=b1,
        b2=b2,
        ridge=ridge,
        l_c=0,
        l_t=0,
        sum_c=np.zeros(p),
        sum_t=np.zeros(p),
        gram=np.zeros((p, p)),
        a=prior.a0,
        b=prior.b0,
        history=(),
    )


def _conditional_model(session: SequentialSession, u: np.ndarray) -> RiskModel:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != session.p:
        raise DimensionMismatch(
            f"batch covariates must be m x {session.p}, got {u.shape}"
        )
    return RiskModel(
        u,
        e_sigma2=session.e_sigma2,
        flat=session.flat,
        h1=session.h1,
        h2=session.h2,
        b1=session.b1,
        b2=session.b2,
        ridge=session.ridge,
        hist_counts=(session.l_c, session.l_t),
        hist_sum_c=session.sum_c,
        hist_sum_t=session.sum_t,
        hist_gram=session.gram,
    )


def conditional_risk(
    session: SequentialSession, u: np.ndarray, w2: Allocation
) -> RiskBreakdown:
    """Risk of allocating the arriving batch u as w2, conditional on all
    batches the session has already placed.  Scaled by b/(a-1), which is
    the prior mean of sigma^2 until outcomes are recorded."""
    return _conditional_model(session, u).breakdown(w2)


def fold_batch(
    session: SequentialSession, u: np.ndarray, alloc: Allocation
) -> SequentialSession:
    """Fold an already-decided batch into the accumulated state.  This is
    exactly the posterior-as-prior composition: a session with this batch
    folded prices later batches as if the prior had absorbed it."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != session.p:
        raise DimensionMismatch(
            f"batch covariates must be m x {session.p}, got {u.shape}"
        )
    if alloc.n != u.shape[0]:
        raise DimensionMismatch(
            f"allocation length {alloc.n} does not match batch size {u.shape[0]}"
        )
    w = alloc.w.astype(float)
    return replace(
        session,
        l_c=session.l_c + alloc.n_c,
        l_t=session.l_t + alloc.n_t,
        sum_c=session.sum_c + (1.0 - w) @ u,
        sum_t=session.sum_t + w @ u,
        gram=session.gram + u.T @ u,
        history=session.history + (BatchRecord(u=u, w=alloc, y=None),),
    )


def allocate_batch(
    session: SequentialSession, req: BatchRequest
) -> tuple[Allocation, RiskBreakdown, SequentialSession]:
    """Choose the conditional-risk-minimizing allocation for req.u, then
    fold the batch into the session state."""
    model = _conditional_model(session, req.u)
    m = req.u.shape[0]
    mode = req.mode
    if mode is None:
        mode = "exhaustive" if m <= req.exhaustive_limit else "local_search"
    cfg = OptimizerConfig(
        mode=mode,
        group_size_constraint="free" if req.constraint is None else req.constraint,
        restarts=req.restarts,
        rng_seed=req.rng_seed,
        exhaustive_limit=req.exhaustive_limit,
    )
    result: OptimizationResult = _minimize(model, cfg, dedup=False)
    alloc = result.best_alloc
    return alloc, result.best_risk, fold_batch(session, req.u, alloc)


def record_outcomes(
    session: SequentialSession,
    y: np.ndarray,
    batch_index: int | None = None,
) -> SequentialSession:
    """Attach outcomes to a batch and refresh the variance posterior.

    batch_index defaults to the earliest batch without outcomes.  The
    scalars (a, b) are recomputed from the set of scored batches, so the
    recording order never matters.  Decisions for future batches are
    unchanged; only the reported risk scale moves.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if not session.history:
        raise UnknownBatch("session has no batches")
    if batch_index is None:
        unscored = [i for i, rec in enumerate(session.history) if not rec.scored]
        if not unscored:
            raise AlreadyScored("every batch already has outcomes")
        batch_index = unscored[0]
    if not 0 <= batch_index < len(session.history):
        raise UnknownBatch(
            f"batch index {batch_index} out of range 0..{len(session.history) - 1}"
        )
    target = session.history[batch_index]
    if target.scored:
        raise AlreadyScored(f"batch {batch_index} already has outcomes")
    if y.shape[0] != target.m:
        raise LengthMismatch(
            f"outcome vector length {y.shape[0]} does not match batch size {target.m}"
        )
    if not np.all(np.isfinite(y)):
        raise LengthMismatch("outcomes contain non-finite entries")

    history = list(session.history)
    history[batch_index] = BatchRecord(u=target.u, w=target.w, y=y)
    scored = [rec for rec in history if rec.scored]
    x_all = CovariateMatrix(np.vstack([rec.u for rec in scored]))
    w_all = Allocation(np.concatenate([rec.w.w for rec in scored]))
    y_all = np.concatenate([rec.y for rec in scored])
    post = posterior_update(session.prior, x_all, w_all, y_all)
    return replace(session, a=post.a1, b=post.b1, history=tuple(history))
