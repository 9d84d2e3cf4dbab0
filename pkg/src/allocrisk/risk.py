"""Bayes decision risk of an allocation, in closed form and by direct oracle.

The closed form expresses the expected posterior variance of the arm contrast
as  size_term^2 / (size_term - imbalance_quad) * E[sigma^2]  where
size_term = s/(s_C s_T) penalizes uneven effective arm sizes and
imbalance_quad is a quadratic form in the difference of effective arm means.
The matrix of that quadratic form does not depend on the allocation at all
for a fixed sample (it depends only on the total count), so a `RiskModel`
factorizes it once and each allocation costs one triangular solve.

`risk_direct` is the independent oracle: it inverts the full posterior
precision with an LU-based routine and shares no code with the formula path
beyond `build_design`.  Keep it that way; the test suite counts on the two
routes being independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import (
    DegenerateDesign,
    DimensionMismatch,
    EmptyArm,
    NonIntegerH2,
    NonPositiveDenominator,
    SingularPhi,
    SingularScatter,
    SingularSystem,
)
from .model import (
    Allocation,
    CovariateMatrix,
    FlatPrior,
    NigPrior,
    Prior,
    PriorDecomposition,
    build_design,
    decompose_prior,
)

# Relative denominator-positivity breach treated as singular, never clamped.
DENOM_RTOL = 1e-12
# Condition-number ceiling for the direct oracle's LU solve.
_COND_LIMIT = 1e12
# Tolerance for recognizing h^2 as an integer pseudo-count.
_INT_TOL = 1e-9

__all__ = [
    "DENOM_RTOL",
    "RiskBreakdown",
    "RiskModel",
    "model_for",
    "risk_general",
    "risk_pseudo_sample",
    "risk_flat",
    "risk_direct",
    "mahalanobis",
]


@dataclass(frozen=True)
class RiskBreakdown:
    """The risk of one allocation, with the terms that compose it.

    risk is in outcome-variance units.  s_c and s_t are effective group
    sizes (counts plus squared pseudo-counts).  mahalanobis is filled only
    for single-shot flat-prior evaluations.
    """

    risk: float
    size_term: float
    imbalance_quad: float
    s_c: float
    s_t: float
    mahalanobis: float | None = None


def _as_weight_vector(alloc: "Allocation | np.ndarray", m: int) -> np.ndarray:
    if isinstance(alloc, Allocation):
        w = alloc.w.astype(float)
    else:
        w = np.asarray(alloc, dtype=float).reshape(-1)
    if w.shape[0] != m:
        raise DimensionMismatch(
            f"allocation length {w.shape[0]} does not match batch size {m}"
        )
    return w


class RiskModel:
    """Risk evaluator for a fixed sample, prior state, and risk scale.

    Parameters cover both the single-shot case (no history) and the
    sequential case, where already-allocated units enter through
    `hist_counts`, per-arm covariate sums, and the accumulated Gram matrix.
    For the flat prior pass flat=True and leave the pseudo-count
    parameters at zero.
    """

    def __init__(
        self,
        u: np.ndarray,
        *,
        e_sigma2: float = 1.0,
        flat: bool = False,
        h1: float = 0.0,
        h2: float = 0.0,
        b1: np.ndarray | None = None,
        b2: np.ndarray | None = None,
        ridge: np.ndarray | None = None,
        hist_counts: tuple[int, int] = (0, 0),
        hist_sum_c: np.ndarray | None = None,
        hist_sum_t: np.ndarray | None = None,
        hist_gram: np.ndarray | None = None,
    ) -> None:
        u = np.asarray(u, dtype=float)
        if u.ndim != 2:
            raise DimensionMismatch(f"covariates must be 2-d, got shape {u.shape}")
        m, p = u.shape
        if p < 1:
            raise DimensionMismatch("covariates need at least one column")
        if not np.all(np.isfinite(u)):
            raise DimensionMismatch("covariates contain non-finite entries")
        if not (np.isfinite(e_sigma2) and e_sigma2 > 0.0):
            raise DimensionMismatch(f"e_sigma2 must be positive, got {e_sigma2}")
        if flat and (h1 != 0.0 or h2 != 0.0):
            raise DimensionMismatch("flat model cannot carry pseudo-counts")

        zeros = np.zeros(p)
        self.u = u
        self.m = m
        self.p = p
        self.flat = bool(flat)
        self.e_sigma2 = float(e_sigma2)
        self.h1 = float(h1)
        self.h2 = float(h2)
        self.b1 = zeros if b1 is None else np.asarray(b1, dtype=float).reshape(p)
        self.b2 = zeros if b2 is None else np.asarray(b2, dtype=float).reshape(p)
        self._hist_c, self._hist_t = int(hist_counts[0]), int(hist_counts[1])
        self._hist_sum_c = zeros if hist_sum_c is None else np.asarray(hist_sum_c, dtype=float).reshape(p)
        self._hist_sum_t = zeros if hist_sum_t is None else np.asarray(hist_sum_t, dtype=float).reshape(p)
        hist_gram = np.zeros((p, p)) if hist_gram is None else np.asarray(hist_gram, dtype=float)
        ridge = np.zeros((p, p)) if ridge is None else np.asarray(ridge, dtype=float)
        if hist_gram.shape != (p, p) or ridge.shape != (p, p):
            raise DimensionMismatch("history Gram / ridge shape does not match p")
        self._single_shot = self._hist_c == 0 and self._hist_t == 0

        self._colsum = u.sum(axis=0) if m else zeros
        self.n_total = self._hist_c + self._hist_t + m
        # s depends on the allocation only through the total count, so the
        # quadratic-form matrix below is one matrix per model, factorized once.
        self.s = self.n_total + self.h1**2 + self.h2**2
        self._sc0 = self._hist_c + self.h1**2
        self._st0 = self._hist_t + self.h2**2

        total_sum = self._hist_sum_c + self._hist_sum_t + self._colsum
        prior_sum = self.h1 * self.b1 + self.h2 * self.b2
        if self.s <= 0.0:
            raise SingularScatter("model holds no units and no pseudo-units")
        self._gbar = (prior_sum + total_sum) / self.s
        phi = hist_gram + u.T @ u + ridge - self.s * np.outer(self._gbar, self._gbar)
        self.phi = (phi + phi.T) / 2.0
        singular_cls = SingularScatter if self.flat else SingularPhi
        try:
            self._phi_factor = sla.cho_factor(self.phi, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise singular_cls(
                f"quadratic-form matrix is not positive-definite: {exc}"
            ) from exc
        diag = np.diag(self._phi_factor[0])
        if float(np.min(diag)) ** 2 <= 1e-13 * float(np.max(diag)) ** 2:
            raise singular_cls("quadratic-form matrix is numerically singular")

    def _arm_means(self, w: np.ndarray) -> tuple[float, float, np.ndarray]:
        m_t = float(w.sum())
        s_c = self._sc0 + (self.m - m_t)
        s_t = self._st0 + m_t
        batch_t = w @ self.u
        sum_c = self._hist_sum_c + (self._colsum - batch_t)
        sum_t = self._hist_sum_t + batch_t
        g_c = (self.h1 * self.b1 + sum_c) / s_c
        g_t = (self.h2 * self.b2 + sum_t) / s_t
        return s_c, s_t, g_t - g_c

    def breakdown(self, alloc: "Allocation | np.ndarray") -> RiskBreakdown:
        """Full risk breakdown of one allocation of this model's batch."""
        w = _as_weight_vector(alloc, self.m)
        m_t = float(w.sum())
        if self.flat:
            if self._sc0 + (self.m - m_t) <= 0.0 or self._st0 + m_t <= 0.0:
                raise EmptyArm("flat-prior risk needs both arms non-empty")
        s_c, s_t, diff = self._arm_means(w)
        quad = float(diff @ sla.cho_solve(self._phi_factor, diff, check_finite=False))
        size = self.s / (s_c * s_t)
        den = size - quad
        if den <= DENOM_RTOL * size:
            if self.flat:
                raise DegenerateDesign(
                    f"risk denominator {den:.3e} is not positive: the design "
                    "cannot have full column rank for this allocation"
                )
            raise NonPositiveDenominator(
                f"risk denominator {den:.3e} lost positivity; "
                "inputs are too ill-conditioned"
            )
        risk = size * size / den * self.e_sigma2
        mahal = None
        if self.flat and self._single_shot and self.n_total >= 2:
            mahal = s_c * s_t / self.s * (self.n_total - 1) * quad
        return RiskBreakdown(
            risk=risk,
            size_term=size,
            imbalance_quad=quad,
            s_c=s_c,
            s_t=s_t,
            mahalanobis=mahal,
        )

    def risks(self, allocations: np.ndarray) -> np.ndarray:
        """Risks of many allocations at once; rows of `allocations` are
        weight vectors.  Infeasible rows (flat prior: empty arm or
        non-positive denominator) come back NaN rather than raising."""
        ws = np.asarray(allocations, dtype=float)
        if ws.ndim != 2 or ws.shape[1] != self.m:
            raise DimensionMismatch(
                f"allocation block must be k x {self.m}, got {ws.shape}"
            )
        m_t = ws.sum(axis=1)
        s_c = self._sc0 + (self.m - m_t)
        s_t = self._st0 + m_t
        batch_t = ws @ self.u
        sum_c = self._hist_sum_c + (self._colsum - batch_t)
        sum_t = self._hist_sum_t + batch_t
        with np.errstate(divide="ignore", invalid="ignore"):
            g_c = (self.h1 * self.b1 + sum_c) / s_c[:, None]
            g_t = (self.h2 * self.b2 + sum_t) / s_t[:, None]
            diff = g_t - g_c
            solved = sla.cho_solve(self._phi_factor, diff.T, check_finite=False).T
            quad = np.einsum("ij,ij->i", diff, solved)
            size = self.s / (s_c * s_t)
            den = size - quad
            feasible = (s_c > 0.0) & (s_t > 0.0) & (den > DENOM_RTOL * size)
            if not self.flat and not bool(np.all(feasible)):
                raise NonPositiveDenominator(
                    "risk denominator lost positivity during batch evaluation; "
                    "inputs are too ill-conditioned"
                )
            out = np.where(feasible, size * size / den * self.e_sigma2, np.nan)
        return out

    def mahalanobis_many(self, allocations: np.ndarray) -> np.ndarray:
        """Combined-sample Mahalanobis distances for many allocations
        (flat single-shot models only); NaN where infeasible."""
        if not (self.flat and self._single_shot and self.n_total >= 2):
            raise DimensionMismatch("mahalanobis_many needs a single-shot flat model")
        ws = np.asarray(allocations, dtype=float)
        m_t = ws.sum(axis=1)
        s_c = self._sc0 + (self.m - m_t)
        s_t = self._st0 + m_t
        batch_t = ws @ self.u
        with np.errstate(divide="ignore", invalid="ignore"):
            g_c = (self._colsum - batch_t) / s_c[:, None]
            g_t = batch_t / s_t[:, None]
            diff = g_t - g_c
            solved = sla.cho_solve(self._phi_factor, diff.T, check_finite=False).T
            quad = np.einsum("ij,ij->i", diff, solved)
            out = s_c * s_t / self.s * (self.n_total - 1) * quad
            out = np.where((s_c > 0.0) & (s_t > 0.0), out, np.nan)
        return out


def model_for(
    prior_or_decomp: "Prior | PriorDecomposition",
    x: CovariateMatrix,
    e_sigma2: float,
) -> RiskModel:
    """Build the single-shot RiskModel for a prior (decomposed as needed)."""
    if isinstance(prior_or_decomp, FlatPrior):
        return RiskModel(x.x, flat=True, e_sigma2=e_sigma2)
    if isinstance(prior_or_decomp, NigPrior):
        prior_or_decomp = decompose_prior(prior_or_decomp)
    if x.p != prior_or_decomp.p:
        raise DimensionMismatch(
            f"prior is for p={prior_or_decomp.p} covariates, sample has p={x.p}"
        )
    return RiskModel(
        x.x,
        h1=prior_or_decomp.h1,
        h2=prior_or_decomp.h2,
        b1=prior_or_decomp.b1,
        b2=prior_or_decomp.b2,
        ridge=prior_or_decomp.ridge,
        e_sigma2=e_sigma2,
    )


def risk_general(
    decomp: PriorDecomposition,
    x: CovariateMatrix,
    alloc: Allocation,
    e_sigma2: float,
) -> RiskBreakdown:
    """Closed-form risk under a proper prior given by its decomposition.

    Effective sizes are s_C = n_C + h1^2 and s_T = n_T + h2^2, so empty
    arms are allowed: the prior's pseudo-units keep both sizes positive.
    """
    return model_for(decomp, x, e_sigma2).breakdown(alloc)


def risk_flat(x: CovariateMatrix, alloc: Allocation, e_sigma2: float) -> RiskBreakdown:
    """Closed-form risk under the flat conditional prior.

    Requires both arms non-empty, an invertible scatter matrix, and a
    positive denominator (equivalently, a full-column-rank design, so
    n >= p + 2).  Fills the mahalanobis field; by construction the identity
    risk = n/(n_C n_T) * (1 - M/(n-1))^{-1} * E[sigma^2] holds between the
    returned fields.
    """
    return RiskModel(x.x, flat=True, e_sigma2=e_sigma2).breakdown(alloc)


def risk_pseudo_sample(
    decomp: PriorDecomposition,
    x: CovariateMatrix,
    alloc: Allocation,
    e_sigma2: float,
) -> RiskBreakdown:
    """Risk via the pseudo-sample route, for integer squared pseudo-counts.

    Stacks h1^2 literal copies of b1/h1 and h2^2 copies of b2/h2 under X,
    then uses that extended sample's scatter matrix plus the ridge D'D as
    the quadratic-form matrix.  Numerically distinct assembly from
    `risk_general`; results agree to ~1e-10 relative.

    Raises
    ------
    NonIntegerH2
        h1^2 or h2^2 is not an integer within 1e-9.
    """
    if x.p != decomp.p:
        raise DimensionMismatch(
            f"prior is for p={decomp.p} covariates, sample has p={x.p}"
        )
    k1f, k2f = decomp.h1**2, decomp.h2**2
    k1, k2 = round(k1f), round(k2f)
    if abs(k1f - k1) > _INT_TOL or abs(k2f - k2) > _INT_TOL:
        raise NonIntegerH2(
            f"squared pseudo-counts ({k1f:.6g}, {k2f:.6g}) are not integers"
        )
    w = alloc.w.astype(float)
    if w.shape[0] != x.n:
        raise DimensionMismatch(
            f"allocation length {w.shape[0]} does not match sample size {x.n}"
        )

    g = np.vstack(
        [x.x]
        + [np.tile(decomp.b1 / decomp.h1, (k1, 1))]
        + [np.tile(decomp.b2 / decomp.h2, (k2, 1))]
    )
    n_g = g.shape[0]
    gbar = g.mean(axis=0)
    scatter_g = g.T @ g - n_g * np.outer(gbar, gbar)
    inner = scatter_g + decomp.d.T @ decomp.d
    inner = (inner + inner.T) / 2.0
    try:
        factor = sla.cho_factor(inner, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularPhi(f"pseudo-sample scatter plus ridge is singular: {exc}") from exc

    n_t = float(w.sum())
    n_c = x.n - n_t
    s_c = n_c + k1f
    s_t = n_t + k2f
    s = s_c + s_t
    sum_t = w @ x.x
    g_c = (decomp.h1 * decomp.b1 + (x.x.sum(axis=0) if x.n else np.zeros(x.p)) - sum_t) / s_c
    g_t = (decomp.h2 * decomp.b2 + sum_t) / s_t
    diff = g_t - g_c
    quad = float(diff @ sla.cho_solve(factor, diff, check_finite=False))
    size = s / (s_c * s_t)
    den = size - quad
    if den <= DENOM_RTOL * size:
        raise NonPositiveDenominator(
            f"risk denominator {den:.3e} lost positivity on the pseudo-sample route"
        )
    return RiskBreakdown(
        risk=size * size / den * e_sigma2,
        size_term=size,
        imbalance_quad=quad,
        s_c=s_c,
        s_t=s_t,
        mahalanobis=None,
    )


def risk_direct(prior: Prior, x: CovariateMatrix, alloc: Allocation) -> float:
    """Independent oracle: risk as contrast variance of the inverted
    posterior precision, scaled by the prior mean of sigma^2.

    Deliberately uses LU-based inversion (`numpy.linalg`) rather than the
    Cholesky route of the formula path, and shares no other code with it.
    """
    z = build_design(x, alloc)
    k = x.p + 2
    if isinstance(prior, FlatPrior):
        precision = z.T @ z
    else:
        if prior.p != x.p:
            raise DimensionMismatch(
                f"prior is for p={prior.p} covariates, sample has p={x.p}"
            )
        try:
            precision = np.linalg.inv(prior.v0) + z.T @ z
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"prior covariance not invertible: {exc}") from exc
    if np.linalg.cond(precision) > _COND_LIMIT:
        raise SingularSystem("posterior precision is numerically singular")
    contrast = np.zeros(k)
    contrast[0] = -1.0
    contrast[1] = 1.0
    try:
        solved = np.linalg.solve(precision, contrast)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    variance = float(contrast @ solved)
    if not np.isfinite(variance) or variance <= 0.0:
        raise SingularSystem(
            f"contrast variance {variance!r} is not positive; system is degenerate"
        )
    return variance * prior.e_sigma2


def mahalanobis(x: CovariateMatrix, alloc: Allocation) -> float:
    """Mahalanobis distance between arm covariate means, with the sample
    covariance (denominator n-1) as metric.  Zero iff the arm means agree.
    """
    if alloc.n != x.n:
        raise DimensionMismatch(
            f"allocation length {alloc.n} does not match sample size {x.n}"
        )
    if alloc.n_c == 0 or alloc.n_t == 0:
        raise EmptyArm("mahalanobis needs both arms non-empty")
    if x.n < 2:
        raise SingularScatter("mahalanobis needs n >= 2")
    cov = x.scatter / (x.n - 1)
    try:
        factor = sla.cho_factor(cov, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularScatter(f"sample covariance is singular: {exc}") from exc
    mask = alloc.w == 1
    diff = x.x[mask].mean(axis=0) - x.x[~mask].mean(axis=0)
    m = alloc.n_c * alloc.n_t / x.n * float(
        diff @ sla.cho_solve(factor, diff, check_finite=False)
    )
    return max(m, 0.0)
