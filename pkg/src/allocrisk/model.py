"""Core data types and conjugate updates for the two-arm Normal linear model.

The observational model is y ~ N(Z zeta, sigma^2 I) with design
Z = (1-w | w | X): one intercept per arm plus p covariate slopes.  The
conjugate prior on (zeta, sigma^2) is Normal-Inverse-Gamma with mean zeta0,
covariance shape V0, and Inverse-Gamma hyperparameters (a0, b0), a0 > 1 so
that E[sigma^2] = b0/(a0-1) is finite.  The flat conditional prior is a
distinct variant with V0^{-1} = 0 exactly, never a large-V0 approximation.

Everything here is an immutable value; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy import linalg as sla

from .errors import (
    ConditioningError,
    DimensionMismatch,
    InvalidPrior,
    NotPositiveDefinite,
    SchurNotDiagonal,
    SingularSystem,
)

# Cholesky pivots at or below this are treated as rank deficiency.
PD_TOL = 1e-12
# Schur-complement off-diagonal tolerance, relative to its largest entry.
OFF_DIAG_RTOL = 1e-9
# Factor-reconstruction tolerance, relative to 1 + max |V0^{-1}|.
RECON_RTOL = 1e-8

__all__ = [
    "PD_TOL",
    "OFF_DIAG_RTOL",
    "RECON_RTOL",
    "NigPrior",
    "FlatPrior",
    "Prior",
    "PriorDecomposition",
    "CovariateMatrix",
    "Allocation",
    "Posterior",
    "decompose_prior",
    "build_design",
    "posterior_update",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _require_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise InvalidPrior(f"{name} contains non-finite entries")


def _spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    try:
        factor = sla.cho_factor(a, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    inv = sla.cho_solve(factor, np.eye(a.shape[0]), check_finite=False)
    return (inv + inv.T) / 2.0


@dataclass(frozen=True, eq=False)
class NigPrior:
    """Normal-Inverse-Gamma prior (zeta0, V0, a0, b0) on (zeta, sigma^2).

    zeta0 has length p+2 (two arm intercepts, then slopes); v0 is the
    symmetric positive-definite (p+2)x(p+2) covariance shape.
    """

    zeta0: np.ndarray
    v0: np.ndarray
    a0: float
    b0: float

    def __post_init__(self) -> None:
        zeta0 = _readonly(np.atleast_1d(self.zeta0))
        v0 = _readonly(np.atleast_2d(self.v0))
        object.__setattr__(self, "zeta0", zeta0)
        object.__setattr__(self, "v0", v0)
        _require_finite(zeta0, "zeta0")
        _require_finite(v0, "v0")
        k = zeta0.shape[0]
        if zeta0.ndim != 1 or v0.shape != (k, k):
            raise DimensionMismatch(
                f"zeta0 has length {k} but v0 has shape {v0.shape}"
            )
        if k < 3:
            raise DimensionMismatch("prior needs p >= 1, so at least 3 coefficients")
        scale = float(np.max(np.abs(v0))) or 1.0
        if float(np.max(np.abs(v0 - v0.T))) > 1e-8 * scale:
            raise InvalidPrior("v0 is not symmetric within tolerance")
        if not (np.isfinite(self.a0) and self.a0 > 1.0):
            raise InvalidPrior(f"a0 must exceed 1 for finite E[sigma^2], got {self.a0}")
        if not (np.isfinite(self.b0) and self.b0 > 0.0):
            raise InvalidPrior(f"b0 must be positive, got {self.b0}")

    @property
    def p(self) -> int:
        return self.zeta0.shape[0] - 2

    @property
    def e_sigma2(self) -> float:
        return self.b0 / (self.a0 - 1.0)

    @classmethod
    def from_blocks(
        cls,
        nu: np.ndarray,
        rho: np.ndarray,
        gamma: np.ndarray,
        zeta0: np.ndarray,
        a0: float,
        b0: float,
    ) -> "NigPrior":
        """Assemble V0 from its intercept (nu), cross (rho), and slope
        (gamma) covariance blocks."""
        nu = np.atleast_2d(np.asarray(nu, dtype=float))
        rho = np.atleast_2d(np.asarray(rho, dtype=float))
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        if nu.shape != (2, 2):
            raise DimensionMismatch(f"nu must be 2x2, got {nu.shape}")
        p = gamma.shape[0]
        if gamma.shape != (p, p) or rho.shape != (2, p):
            raise DimensionMismatch(
                f"rho {rho.shape} / gamma {gamma.shape} blocks are inconsistent"
            )
        v0 = np.block([[nu, rho], [rho.T, gamma]])
        return cls(zeta0=np.asarray(zeta0, dtype=float), v0=v0, a0=a0, b0=b0)


@dataclass(frozen=True)
class FlatPrior:
    """Flat conditional prior: V0^{-1} = 0 exactly.

    Carries (a0, b0) so E[sigma^2] stays finite and the risk scale is
    well defined; the allocation decision itself never depends on them.
    """

    a0: float = 2.0
    b0: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a0) and self.a0 > 1.0):
            raise InvalidPrior(f"a0 must exceed 1 for finite E[sigma^2], got {self.a0}")
        if not (np.isfinite(self.b0) and self.b0 > 0.0):
            raise InvalidPrior(f"b0 must be positive, got {self.b0}")

    @property
    def e_sigma2(self) -> float:
        return self.b0 / (self.a0 - 1.0)


Prior = Union[NigPrior, FlatPrior]


@dataclass(frozen=True, eq=False)
class PriorDecomposition:
    """Blocks (h1, h2, B, D) of the Cholesky factor Q of V0^{-1}.

    Q = [[H, B], [0, D]] with H = diag(h1, h2).  Interpretation: h1^2 and
    h2^2 are pseudo-sample sizes per arm, b_rows/h are pseudo covariate
    means, and D'D is a ridge-style regularizer on the slopes.
    """

    h1: float
    h2: float
    b_rows: np.ndarray  # 2 x p
    d: np.ndarray  # p x p upper-triangular, positive diagonal

    def __post_init__(self) -> None:
        b_rows = _readonly(np.atleast_2d(self.b_rows))
        d = _readonly(np.atleast_2d(self.d))
        object.__setattr__(self, "b_rows", b_rows)
        object.__setattr__(self, "d", d)
        _require_finite(b_rows, "b_rows")
        _require_finite(d, "d")
        if not (np.isfinite(self.h1) and self.h1 > 0.0):
            raise InvalidPrior(f"h1 must be positive, got {self.h1}")
        if not (np.isfinite(self.h2) and self.h2 > 0.0):
            raise InvalidPrior(f"h2 must be positive, got {self.h2}")
        p = b_rows.shape[1]
        if b_rows.shape != (2, p) or d.shape != (p, p) or p < 1:
            raise DimensionMismatch(
                f"b_rows {b_rows.shape} / d {d.shape} blocks are inconsistent"
            )
        if float(np.max(np.abs(np.tril(d, k=-1)))) > 0.0:
            raise InvalidPrior("d must be upper-triangular")
        if np.any(np.diag(d) <= 0.0):
            raise InvalidPrior("d must have a positive diagonal")

    @property
    def p(self) -> int:
        return self.b_rows.shape[1]

    @property
    def b1(self) -> np.ndarray:
        return self.b_rows[0]

    @property
    def b2(self) -> np.ndarray:
        return self.b_rows[1]

    @cached_property
    def ridge(self) -> np.ndarray:
        """B'B + D'D, the slope-block contribution to the precision."""
        out = self.b_rows.T @ self.b_rows + self.d.T @ self.d
        return _readonly((out + out.T) / 2.0)

    def q_matrix(self) -> np.ndarray:
        """The full (p+2)x(p+2) factor Q with Q'Q = V0^{-1}."""
        p = self.p
        q = np.zeros((p + 2, p + 2))
        q[0, 0] = self.h1
        q[1, 1] = self.h2
        q[:2, 2:] = self.b_rows
        q[2:, 2:] = self.d
        return q

    def precision(self) -> np.ndarray:
        """V0^{-1} = Q'Q."""
        q = self.q_matrix()
        out = q.T @ q
        return (out + out.T) / 2.0

    def to_prior(self, zeta0: np.ndarray | None = None, a0: float = 2.0, b0: float = 1.0) -> NigPrior:
        """Assemble the NigPrior whose precision this factorizes."""
        v0 = _spd_inverse(self.precision())
        if zeta0 is None:
            zeta0 = np.zeros(self.p + 2)
        return NigPrior(zeta0=zeta0, v0=v0, a0=a0, b0=b0)


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    """An n x p covariate matrix X with cached mean, Gram, and scatter.

    n = 0 is allowed (empty sample); the cached mean is then the zero
    vector and Gram and scatter are zero matrices.
    """

    x: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise DimensionMismatch(f"x must be 2-d, got shape {x.shape}")
        if x.shape[1] < 1:
            raise DimensionMismatch("x needs at least one covariate column")
        if not np.all(np.isfinite(x)):
            raise DimensionMismatch("x contains non-finite entries")
        x = _readonly(x)
        object.__setattr__(self, "x", x)
        n = x.shape[0]
        xbar = x.mean(axis=0) if n else np.zeros(x.shape[1])
        gram = x.T @ x
        scatter = gram - n * np.outer(xbar, xbar)
        scatter = (scatter + scatter.T) / 2.0
        object.__setattr__(self, "_xbar", _readonly(xbar))
        object.__setattr__(self, "_gram", _readonly((gram + gram.T) / 2.0))
        object.__setattr__(self, "_scatter", _readonly(scatter))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def xbar(self) -> np.ndarray:
        return self._xbar

    @property
    def gram(self) -> np.ndarray:
        return self._gram

    @property
    def scatter(self) -> np.ndarray:
        return self._scatter


@dataclass(frozen=True, eq=False)
class Allocation:
    """A binary assignment vector: w_i = 1 puts unit i in the treatment arm.

    Value semantics: two allocations are equal iff their vectors match,
    and they hash accordingly (usable in sets, e.g. tie collections).
    """

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w)
        if w.ndim != 1:
            raise DimensionMismatch(f"w must be 1-d, got shape {w.shape}")
        wi = np.rint(np.asarray(w, dtype=float)).astype(np.int64)
        if not np.array_equal(wi, np.asarray(w, dtype=float)):
            raise DimensionMismatch("w entries must be 0 or 1")
        if wi.size and not np.all((wi == 0) | (wi == 1)):
            raise DimensionMismatch("w entries must be 0 or 1")
        wi = wi.copy()
        wi.setflags(write=False)
        object.__setattr__(self, "w", wi)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Allocation):
            return NotImplemented
        return self.w.shape == other.w.shape and bool(np.all(self.w == other.w))

    def __hash__(self) -> int:
        return hash(self.w.tobytes())

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def n_t(self) -> int:
        return int(self.w.sum())

    @property
    def n_c(self) -> int:
        return self.n - self.n_t

    def complement(self) -> "Allocation":
        return Allocation(1 - self.w)

    @classmethod
    def from_treated(cls, n: int, treated: "list[int] | tuple[int, ...]") -> "Allocation":
        w = np.zeros(n, dtype=np.int64)
        w[list(treated)] = 1
        return cls(w)


@dataclass(frozen=True, eq=False)
class Posterior:
    """NIG posterior (zeta1, V1, a1, b1) after observing one batch."""

    zeta1: np.ndarray
    v1: np.ndarray
    a1: float
    b1: float

    def __post_init__(self) -> None:
        zeta1 = _readonly(np.atleast_1d(self.zeta1))
        v1 = _readonly(np.atleast_2d(self.v1))
        object.__setattr__(self, "zeta1", zeta1)
        object.__setattr__(self, "v1", v1)
        k = zeta1.shape[0]
        if v1.shape != (k, k):
            raise DimensionMismatch(
                f"zeta1 has length {k} but v1 has shape {v1.shape}"
            )
        scale = float(np.max(np.abs(v1))) or 1.0
        if float(np.max(np.abs(v1 - v1.T))) > 1e-8 * scale:
            raise ConditioningError("v1 lost symmetry")
        if not (self.a1 > 1.0 and self.b1 > 0.0):
            raise ConditioningError(f"posterior scalars invalid: a1={self.a1} b1={self.b1}")

    @property
    def e_sigma2(self) -> float:
        return self.b1 / (self.a1 - 1.0)


def decompose_prior(prior: NigPrior) -> PriorDecomposition:
    """Factor the prior precision V0^{-1} = Q'Q into blocks (H, B, D).

    H = (nu - rho gamma^{-1} rho')^{-1/2} exists as a diagonal matrix only
    when that Schur complement is diagonal; priors violating this are
    rejected, not projected.

    Raises
    ------
    NotPositiveDefinite
        v0 has a Cholesky pivot <= PD_TOL.
    SchurNotDiagonal
        |off-diagonal| of the Schur complement exceeds
        OFF_DIAG_RTOL * max|Schur|.
    """
    v0 = prior.v0
    p = prior.p
    try:
        pivots = np.diag(np.linalg.cholesky(v0))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"v0 is not positive-definite: {exc}") from exc
    if float(np.min(pivots)) <= PD_TOL:
        raise NotPositiveDefinite(
            f"v0 Cholesky pivot {float(np.min(pivots)):.3e} is at or below {PD_TOL:.0e}"
        )

    nu = v0[:2, :2]
    rho = v0[:2, 2:]
    gamma = v0[2:, 2:]

    gamma_factor = sla.cho_factor(gamma, lower=True, check_finite=False)
    rho_gamma_inv = sla.cho_solve(gamma_factor, rho.T, check_finite=False).T  # rho gamma^{-1}
    schur = nu - rho_gamma_inv @ rho.T
    schur = (schur + schur.T) / 2.0
    off = float(np.abs(schur[0, 1]))
    if off > OFF_DIAG_RTOL * float(np.max(np.abs(schur))):
        raise SchurNotDiagonal(
            f"Schur complement off-diagonal {off:.3e} exceeds tolerance; "
            "the diagonal intercept factor does not exist for this prior"
        )
    if schur[0, 0] <= PD_TOL or schur[1, 1] <= PD_TOL:
        raise NotPositiveDefinite("Schur complement diagonal is not positive")
    h1 = 1.0 / np.sqrt(schur[0, 0])
    h2 = 1.0 / np.sqrt(schur[1, 1])

    gamma_inv = sla.cho_solve(gamma_factor, np.eye(p), check_finite=False)
    gamma_inv = (gamma_inv + gamma_inv.T) / 2.0
    d = sla.cholesky(gamma_inv, lower=False, check_finite=False)  # D'D = gamma^{-1}
    b = -np.diag([h1, h2]) @ rho_gamma_inv

    decomp = PriorDecomposition(h1=h1, h2=h2, b_rows=b, d=d)

    # Post-condition: Q'Q must reproduce V0^{-1} to within the stated
    # tolerance, otherwise the prior is too ill-conditioned to trust.
    precision = _spd_inverse(v0)
    err = float(np.max(np.abs(decomp.precision() - precision)))
    if err > RECON_RTOL * (1.0 + float(np.max(np.abs(precision)))):
        raise ConditioningError(
            f"decomposition reconstruction error {err:.3e} exceeds tolerance"
        )
    return decomp


def build_design(x: CovariateMatrix, alloc: Allocation) -> np.ndarray:
    """The n x (p+2) design matrix Z = (1-w | w | X)."""
    if alloc.n != x.n:
        raise DimensionMismatch(
            f"allocation length {alloc.n} does not match sample size {x.n}"
        )
    w = alloc.w.astype(float)
    return np.column_stack([1.0 - w, w, x.x])


def posterior_update(
    prior: Prior,
    x: CovariateMatrix,
    alloc: Allocation,
    y: np.ndarray,
) -> Posterior:
    """Conjugate NIG update on one observed batch.

    Implements V1 = (V0^{-1} + Z'Z)^{-1}, zeta1 = V1 (V0^{-1} zeta0 + Z'y),
    a1 = a0 + n/2, b1 = b0 + (zeta0'V0^{-1}zeta0 + y'y - zeta1'V1^{-1}zeta1)/2.
    With a flat prior the precision term vanishes and Z'Z must be invertible.

    Raises
    ------
    SingularSystem
        Flat prior with rank-deficient Z'Z (not enough data to identify
        all coefficients).
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != x.n:
        raise DimensionMismatch(f"y has length {y.shape[0]}, expected {x.n}")
    if not np.all(np.isfinite(y)):
        raise DimensionMismatch("y contains non-finite entries")
    z = build_design(x, alloc)
    k = x.p + 2

    if isinstance(prior, FlatPrior):
        lam0 = np.zeros((k, k))
        eta0 = np.zeros(k)
        quad0 = 0.0
        a0, b0 = prior.a0, prior.b0
    else:
        if prior.p != x.p:
            raise DimensionMismatch(
                f"prior is for p={prior.p} covariates, sample has p={x.p}"
            )
        v0_factor = sla.cho_factor(prior.v0, lower=True, check_finite=False)
        lam0 = sla.cho_solve(v0_factor, np.eye(k), check_finite=False)
        lam0 = (lam0 + lam0.T) / 2.0
        eta0 = sla.cho_solve(v0_factor, prior.zeta0, check_finite=False)
        quad0 = float(prior.zeta0 @ eta0)
        a0, b0 = prior.a0, prior.b0

    lam1 = lam0 + z.T @ z
    lam1 = (lam1 + lam1.T) / 2.0
    try:
        factor = sla.cho_factor(lam1, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularSystem(
            f"posterior precision is singular (rank-deficient design): {exc}"
        ) from exc
    diag = np.diag(factor[0])
    if float(np.min(diag)) ** 2 <= PD_TOL * float(np.max(diag)) ** 2:
        raise SingularSystem("posterior precision is numerically rank-deficient")

    v1 = sla.cho_solve(factor, np.eye(k), check_finite=False)
    v1 = (v1 + v1.T) / 2.0
    zeta1 = sla.cho_solve(factor, eta0 + z.T @ y, check_finite=False)
    a1 = a0 + x.n / 2.0
    b1 = b0 + 0.5 * (quad0 + float(y @ y) - float(zeta1 @ (lam1 @ zeta1)))
    if b1 <= 0.0:
        raise ConditioningError(f"posterior scale b1 = {b1:.3e} lost positivity")
    return Posterior(zeta1=zeta1, v1=v1, a1=a1, b1=b1)
