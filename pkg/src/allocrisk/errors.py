"""Exception vocabulary shared by every module in the package.

Each class maps to one failure mode of the statistical contracts; the CLI and
the HTTP service translate them into exit codes and error envelopes by class
name, so names are part of the public interface and must stay stable.
"""

from __future__ import annotations


class AllocRiskError(Exception):
    """Base class for all package errors."""

    #: engine the failure mode belongs to; subclasses override.
    module = "core"

    @property
    def code(self) -> str:
        """Module-qualified stable error code, e.g. "balance.OddN"."""
        return f"{self.module}.{type(self).__name__}"


class DimensionMismatch(AllocRiskError):
    """Shapes of covariates, allocations, priors, or outcomes disagree."""

    module = "model"


class LengthMismatch(DimensionMismatch):
    """An outcome vector's length matches no un-scored batch."""

    module = "sequential"


class InvalidPrior(AllocRiskError):
    """Prior hyperparameters violate their constraints (e.g. a0 <= 1)."""

    module = "model"


class NotPositiveDefinite(AllocRiskError):
    """A matrix required to be positive-definite is not (pivot at or below
    the pivot tolerance)."""

    module = "model"


class SchurNotDiagonal(AllocRiskError):
    """The prior's intercept-block Schur complement is not diagonal, so the
    required diagonal square-root factor does not exist."""

    module = "model"


class SingularSystem(AllocRiskError):
    """A linear system that the contract requires to be solvable is
    (numerically) singular."""

    module = "risk"


class SingularPhi(SingularSystem):
    """The allocation-independent quadratic-form matrix is not invertible."""

    module = "risk"


class SingularScatter(SingularSystem):
    """The covariate scatter matrix is rank-deficient."""

    module = "risk"


class SingularGram(SingularSystem):
    """X'X is rank-deficient where the balance test requires full rank."""

    module = "balance"


class NonPositiveDenominator(SingularSystem):
    """The risk denominator lost positivity numerically; never clamped,
    because a clamped value would corrupt optimizer comparisons."""

    module = "risk"


class DegenerateDesign(SingularSystem):
    """Flat-prior risk denominator is non-positive: the design matrix cannot
    have full column rank (e.g. n < p + 2)."""

    module = "risk"


class ConditioningError(AllocRiskError):
    """A post-condition consistency check failed; inputs are too
    ill-conditioned for the computed value to be trusted."""

    module = "model"


class EmptyArm(AllocRiskError):
    """An arm has no units where the flat-prior formulas require both."""

    module = "risk"


class NonIntegerH2(AllocRiskError):
    """Pseudo-sample construction needs integer squared pseudo-counts."""

    module = "risk"


class OddN(AllocRiskError):
    """An even sample size is required (equal-split condition)."""

    module = "balance"


class InfeasibleConstraint(AllocRiskError):
    """No feasible allocation exists under the requested constraint."""

    module = "allocator"


class TooLargeForExhaustive(AllocRiskError):
    """Sample size exceeds the exhaustive-enumeration limit."""

    module = "allocator"


class AlreadyScored(AllocRiskError):
    """Outcomes for this batch were recorded before."""

    module = "sequential"


class UnknownBatch(AllocRiskError):
    """Batch index is out of range for the session history."""

    module = "sequential"


class ParseError(AllocRiskError):
    """Input text could not be parsed (cell coordinates in the message)."""

    module = "dataio"


class RaggedRows(ParseError):
    """CSV rows have unequal lengths."""

    module = "dataio"


class EmptyFile(ParseError):
    """The input file contains no data rows."""

    module = "dataio"


class UnknownSession(AllocRiskError):
    """No stored session under the given id."""

    module = "store"


class RevisionConflict(AllocRiskError):
    """expected_revision does not match the stored revision."""

    module = "store"
