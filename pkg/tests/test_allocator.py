"""Search over the allocation lattice: enumeration, optimization, ties."""

import numpy as np
import pytest

from allocrisk import (
    Allocation,
    CovariateMatrix,
    FlatPrior,
    OptimizerConfig,
    PriorDecomposition,
    enumerate_allocations,
    optimize,
    optimize_equal_split,
    risk_flat,
)
from allocrisk.errors import InfeasibleConstraint, TooLargeForExhaustive

from conftest import random_decomposition, random_prior


def symmetric_decomposition(p: int, scale: float = 1.0) -> PriorDecomposition:
    """Arm-exchangeable prior: swapping labels leaves risk invariant."""
    return PriorDecomposition(
        h1=scale, h2=scale, b_rows=np.zeros((2, p)), d=np.eye(p)
    )


class TestEnumeration:
    def test_free_counts(self):
        assert len(list(enumerate_allocations(3, "free"))) == 8

    def test_free_dedup_halves_the_lattice(self):
        reps = list(enumerate_allocations(3, "free", dedup=True))
        assert len(reps) == 4
        # Representatives carry unit 0 in control.
        assert all(a.w[0] == 0 for a in reps)

    def test_equal_split_count(self):
        assert len(list(enumerate_allocations(8, "equal"))) == 70

    def test_odd_equal_split_sizes(self):
        allocs = list(enumerate_allocations(5, "equal"))
        assert len(allocs) == 20
        assert all(abs(a.n_c - a.n_t) == 1 for a in allocs)

    def test_fixed_sizes(self):
        allocs = list(enumerate_allocations(3, (2, 1)))
        assert len(allocs) == 3
        assert all(a.n_c == 2 and a.n_t == 1 for a in allocs)

    def test_no_duplicates(self):
        seen = {tuple(a.w.tolist()) for a in enumerate_allocations(6, "equal")}
        assert len(seen) == 20

    def test_constraint_must_sum_to_n(self):
        with pytest.raises(InfeasibleConstraint):
            enumerate_allocations(4, (2, 3))

    def test_size_guard(self):
        with pytest.raises(TooLargeForExhaustive):
            enumerate_allocations(30, "free", exhaustive_limit=22)


class TestOptimizeExhaustive:
    def test_never_beaten_by_any_enumerated_allocation(self):
        rng = np.random.default_rng(60)
        prior = random_prior(rng, 2)
        x = CovariateMatrix(rng.normal(size=(7, 2)))
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize(prior, x, cfg, prior.e_sigma2)
        from allocrisk import decompose_prior, risk_general

        decomp = decompose_prior(prior)
        for alloc in enumerate_allocations(7, "free"):
            r = risk_general(decomp, x, alloc, prior.e_sigma2).risk
            assert r >= result.best_risk.risk * (1.0 - 1e-12)

    def test_flat_free_dedup_bookkeeping(self, counterexample):
        """Free-size flat optimization scans one representative per
        label-swapped pair; only the all-one-arm code is infeasible there."""
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize(FlatPrior(), counterexample, cfg, 1.0)
        assert result.dedup
        assert result.evaluated == 127
        assert result.infeasible == 1

    def test_counterexample_best_split(self, counterexample):
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize(FlatPrior(), counterexample, cfg, 1.0)
        treated = {i + 1 for i in np.flatnonzero(result.best_alloc.w == 1)}
        assert treated in ({3, 5, 6, 7, 8}, {1, 2, 4})
        np.testing.assert_allclose(
            result.best_risk.risk, 0.5479050661335353, rtol=1e-12
        )

    def test_singleton_arms_tie_under_symmetric_prior(self):
        """Two units, exchangeable prior: both singleton splits tie and the
        reported best is the lexicographically smaller weight vector."""
        decomp = symmetric_decomposition(1)
        prior = decomp.to_prior()
        x = CovariateMatrix(np.array([[0.0], [1.0]]))
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize(prior, x, cfg, prior.e_sigma2)
        assert tuple(result.best_alloc.w.tolist()) == (0, 1)
        tied = {tuple(a.w.tolist()) for a in result.ties}
        assert tied == {(0, 1), (1, 0)}

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(61)
        prior = random_prior(rng, 2)
        x = CovariateMatrix(rng.normal(size=(8, 2)))
        cfg = OptimizerConfig(mode="exhaustive")
        a = optimize(prior, x, cfg, prior.e_sigma2)
        b = optimize(prior, x, cfg, prior.e_sigma2)
        assert a.best_alloc == b.best_alloc
        assert a.best_risk.risk == b.best_risk.risk
        assert a.evaluated == b.evaluated

    def test_infeasible_flat_sample(self):
        # n = 2, p = 1 cannot carry three coefficients under a flat prior.
        x = CovariateMatrix(np.array([[0.0], [1.0]]))
        cfg = OptimizerConfig(mode="exhaustive")
        with pytest.raises(InfeasibleConstraint):
            optimize(FlatPrior(), x, cfg, 1.0)

    def test_scale_of_variance_mean_never_moves_argmin(self):
        rng = np.random.default_rng(62)
        x = CovariateMatrix(rng.normal(size=(8, 2)))
        cfg = OptimizerConfig(mode="exhaustive")
        picks = [
            optimize(FlatPrior(), x, cfg, e2).best_alloc for e2 in (0.1, 1.0, 10.0)
        ]
        assert picks[0] == picks[1] == picks[2]


class TestOptimizeLocalSearch:
    def test_matches_exhaustive_on_most_seeds(self):
        """First-improvement descent with 20 restarts lands on the global
        optimum on nearly every instance at this size."""
        rng = np.random.default_rng(63)
        hits = 0
        trials = 40
        for seed in range(trials):
            x = CovariateMatrix(rng.normal(size=(10, 2)))
            exact = optimize(
                FlatPrior(), x, OptimizerConfig(mode="exhaustive"), 1.0
            )
            local = optimize(
                FlatPrior(),
                x,
                OptimizerConfig(mode="local_search", restarts=20, rng_seed=seed),
                1.0,
            )
            if local.best_risk.risk <= exact.best_risk.risk * (1.0 + 1e-9):
                hits += 1
        assert hits >= int(trials * 0.95)

    def test_trace_is_monotone(self):
        rng = np.random.default_rng(64)
        prior = random_prior(rng, 2)
        x = CovariateMatrix(rng.normal(size=(12, 2)))
        cfg = OptimizerConfig(mode="local_search", restarts=5, rng_seed=3)
        result = optimize(prior, x, cfg, prior.e_sigma2)
        trace = np.asarray(result.trace)
        assert trace.size >= 1
        assert np.all(np.diff(trace) <= 1e-15)
        np.testing.assert_allclose(trace[-1], result.best_risk.risk, rtol=1e-12)

    def test_fixed_sizes_preserved_by_swaps(self):
        rng = np.random.default_rng(65)
        prior = random_prior(rng, 1)
        x = CovariateMatrix(rng.normal(size=(9, 1)))
        cfg = OptimizerConfig(
            mode="local_search", group_size_constraint=(6, 3), rng_seed=1
        )
        result = optimize(prior, x, cfg, prior.e_sigma2)
        assert result.best_alloc.n_c == 6
        assert result.best_alloc.n_t == 3

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(66)
        x = CovariateMatrix(rng.normal(size=(11, 2)))
        cfg = OptimizerConfig(mode="local_search", restarts=8, rng_seed=9)
        a = optimize(FlatPrior(), x, cfg, 1.0)
        b = optimize(FlatPrior(), x, cfg, 1.0)
        assert a.best_alloc == b.best_alloc
        assert a.trace == b.trace


class TestOptimizeBestOfK:
    def test_covers_small_lattice(self):
        """With k far above the feasible count the sampler sees the whole
        lattice and the incumbent equals the exhaustive optimum."""
        rng = np.random.default_rng(67)
        prior = random_prior(rng, 1)
        x = CovariateMatrix(rng.normal(size=(5, 1)))
        exact = optimize(prior, x, OptimizerConfig(mode="exhaustive"), 1.0)
        sampled = optimize(
            prior,
            x,
            OptimizerConfig(mode="best_of_k", k=400, rng_seed=5),
            1.0,
        )
        np.testing.assert_allclose(
            sampled.best_risk.risk, exact.best_risk.risk, rtol=1e-12
        )

    def test_trace_is_running_minimum(self):
        rng = np.random.default_rng(68)
        prior = random_prior(rng, 2)
        x = CovariateMatrix(rng.normal(size=(9, 2)))
        cfg = OptimizerConfig(mode="best_of_k", k=50, rng_seed=2)
        result = optimize(prior, x, cfg, prior.e_sigma2)
        trace = np.asarray(result.trace)
        assert np.all(np.diff(trace) <= 0.0 + 1e-15)


class TestOptimizeEqualSplit:
    def test_counterexample_equal_risk(self, counterexample):
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize_equal_split(FlatPrior(), counterexample, cfg, 1.0)
        np.testing.assert_allclose(
            result.best_risk.risk, 0.577670738080036, rtol=1e-12
        )
        assert result.best_alloc.n_c == result.best_alloc.n_t == 4

    def test_equal_split_risk_dominates_free_optimum(self, counterexample):
        cfg = OptimizerConfig(mode="exhaustive")
        free = optimize(FlatPrior(), counterexample, cfg, 1.0)
        equal = optimize_equal_split(FlatPrior(), counterexample, cfg, 1.0)
        assert free.best_risk.risk < equal.best_risk.risk

    def test_flat_winner_minimizes_imbalance(self, counterexample):
        """Under a flat prior the equal-split risk minimizer is exactly the
        imbalance minimizer; cross-check externally."""
        from allocrisk import mahalanobis

        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize_equal_split(FlatPrior(), counterexample, cfg, 1.0)
        best_m = mahalanobis(counterexample, result.best_alloc)
        for alloc in enumerate_allocations(8, "equal"):
            assert best_m <= mahalanobis(counterexample, alloc) * (1.0 + 1e-9)

    def test_odd_sample_splits_differ_by_one(self):
        rng = np.random.default_rng(70)
        prior = random_prior(rng, 1)
        x = CovariateMatrix(rng.normal(size=(7, 1)))
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize_equal_split(prior, x, cfg, prior.e_sigma2)
        assert abs(result.best_alloc.n_c - result.best_alloc.n_t) == 1

    def test_paired_duplicates_reach_the_size_floor(self):
        """When a perfectly balanced split exists it is found and its risk
        is the size term alone."""
        base = np.array([[0.3, 1.2], [-0.9, 0.4], [2.0, -1.1]])
        x = CovariateMatrix(np.vstack([base, base]))
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize_equal_split(FlatPrior(), x, cfg, 1.0)
        np.testing.assert_allclose(
            result.best_risk.risk, 6 / 9.0, rtol=1e-9
        )
        assert result.best_risk.mahalanobis == pytest.approx(0.0, abs=1e-9)


class TestTies:
    def test_exact_ties_resolve_to_lexicographic_minimum(self):
        """A duplicated-row sample has many exactly tied optima; the
        reported best must be the lexicographically smallest weight vector
        among them, independent of scan order."""
        base = np.array([[1.0], [2.0], [3.0]])
        x = CovariateMatrix(np.vstack([base, base]))
        cfg = OptimizerConfig(mode="exhaustive")
        result = optimize_equal_split(FlatPrior(), x, cfg, 1.0)
        tied = sorted(tuple(a.w.tolist()) for a in result.ties)
        assert tuple(result.best_alloc.w.tolist()) == tied[0]
        assert len(tied) >= 2
        risks = {
            risk_flat(x, a, 1.0).risk for a in result.ties
        }
        lo, hi = min(risks), max(risks)
        assert (hi - lo) <= 1e-12 * hi
