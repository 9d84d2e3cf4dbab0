"""Command-line interface.

Thin shell over the library: every subcommand loads inputs, calls exactly
the functions a library user would, and prints one JSON report (schema
version "1").  Exit codes: 0 success, 2 infeasible problem (no feasible
allocation, odd n for the equal-split test), 1 everything else.

Subcommands: allocate, risk, check, session (local file-backed sessions,
same operations the HTTP service exposes), selftest.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .allocator import (
    EXHAUSTIVE_LIMIT_DEFAULT,
    OptimizerConfig,
    optimize,
    optimize_equal_split,
)
from .balance import counterexample_table, equal_split_condition
from .dataio import (
    PriorSpec,
    dump_report,
    load_covariates,
    load_prior,
    make_report,
    spec_to_decomposition,
)
from .errors import (
    AllocRiskError,
    InfeasibleConstraint,
    LengthMismatch,
    OddN,
    ParseError,
)
from .model import (
    Allocation,
    CovariateMatrix,
    FlatPrior,
    NigPrior,
    PriorDecomposition,
)
from .risk import (
    model_for,
    risk_direct,
    risk_pseudo_sample,
)
from .store import SessionStore, op_audit, op_batch, op_open, op_outcomes

_INFEASIBLE_EXIT = (InfeasibleConstraint, OddN)
_INT_TOL = 1e-9

__all__ = ["main"]


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _resolve_seed(flag_value: int) -> int:
    env = os.environ.get("ALLOCRISK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ParseError(f"ALLOCRISK_SEED={env!r} is not an integer") from None
    return flag_value


def _parse_constraint(text: str) -> "str | tuple[int, int]":
    if text in ("free", "equal"):
        return text
    parts = text.split(",")
    if len(parts) != 2:
        raise ParseError(
            f"constraint must be 'free', 'equal', or 'n_c,n_t', got {text!r}"
        )
    try:
        return (int(parts[0]), int(parts[1]))
    except ValueError:
        raise ParseError(f"constraint sizes must be integers, got {text!r}") from None


def _parse_vector(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise ParseError(f"--{name} must be comma-separated numbers") from None


def _prior_spec(args: argparse.Namespace) -> PriorSpec:
    if args.flat and args.prior:
        raise ParseError("--flat and --prior are mutually exclusive")
    if args.flat:
        prior = FlatPrior(a0=args.a0, b0=args.b0)
        return PriorSpec(kind="flat", value=prior, e_sigma2_default=prior.e_sigma2)
    if args.prior:
        return load_prior(args.prior)
    raise ParseError("a prior is required: pass --flat or --prior FILE")


def _breakdown_dict(b) -> dict:
    return {
        "risk": b.risk,
        "size_term": b.size_term,
        "imbalance_quad": b.imbalance_quad,
        "s_c": b.s_c,
        "s_t": b.s_t,
        "mahalanobis": b.mahalanobis,
    }


def _allocation_dict(alloc: Allocation) -> dict:
    treated = [int(i) + 1 for i in np.flatnonzero(alloc.w == 1)]
    control = [int(i) + 1 for i in np.flatnonzero(alloc.w == 0)]
    return {
        "allocation": alloc.w.tolist(),
        "treated_rows": treated,
        "control_rows": control,
        "n_c": alloc.n_c,
        "n_t": alloc.n_t,
    }


def _emit(args: argparse.Namespace, text: str) -> None:
    out = getattr(args, "output", "-") or "-"
    if out == "-":
        sys.stdout.write(text + "\n")
    else:
        Path(out).write_text(text + "\n", encoding="utf-8")


def _csv_summary(result: dict) -> str:
    b = result["risk"]
    alloc = "".join(str(v) for v in result["allocation"])
    header = "risk,size_term,imbalance_quad,s_c,s_t,mahalanobis,n_c,n_t,allocation"
    mahal = "" if b["mahalanobis"] is None else repr(b["mahalanobis"])
    row = ",".join(
        [
            repr(b["risk"]),
            repr(b["size_term"]),
            repr(b["imbalance_quad"]),
            repr(b["s_c"]),
            repr(b["s_t"]),
            mahal,
            str(result["n_c"]),
            str(result["n_t"]),
            alloc,
        ]
    )
    return header + "\n" + row


def _optimizer_config(args: argparse.Namespace, seed: int) -> OptimizerConfig:
    return OptimizerConfig(
        mode=args.mode,
        group_size_constraint=_parse_constraint(args.constraint),
        restarts=args.restarts,
        k=args.k,
        rng_seed=seed,
        exhaustive_limit=args.exhaustive_limit,
    )


def cmd_allocate(args: argparse.Namespace) -> int:
    spec = _prior_spec(args)
    x = load_covariates(args.covariates, args.has_header)
    seed = _resolve_seed(args.seed)
    cfg = _optimizer_config(args, seed)
    e_sigma2 = spec.e_sigma2(args.e_sigma2)

    if args.equal_split:
        result = optimize_equal_split(spec.value, x, cfg, e_sigma2)
    else:
        result = optimize(spec.value, x, cfg, e_sigma2)

    payload = {
        **_allocation_dict(result.best_alloc),
        "risk": _breakdown_dict(result.best_risk),
        "ties": [t.w.tolist() for t in result.ties],
        "evaluated": result.evaluated,
        "infeasible_skipped": result.infeasible,
        "dedup": result.dedup,
        "trace": None if result.trace is None else list(result.trace),
        "n": x.n,
        "e_sigma2": e_sigma2,
    }
    if args.equal_split:
        payload["equal_split"] = _equal_split_section(x, cfg)

    config = {
        "covariates": str(args.covariates),
        "has_header": args.has_header,
        "prior": spec.kind,
        "mode": cfg.mode,
        "constraint": "equal" if args.equal_split else args.constraint,
        "restarts": cfg.restarts,
        "k": cfg.k,
        "rng_seed": seed,
        "exhaustive_limit": cfg.exhaustive_limit,
        "e_sigma2": e_sigma2,
    }
    report = make_report("allocate", config, payload, _timestamp())
    if args.format == "csv-summary":
        _emit(args, _csv_summary(payload))
    else:
        _emit(args, dump_report(report))
    return 0


def _equal_split_section(x: CovariateMatrix, cfg: OptimizerConfig) -> dict | None:
    """Balance-condition fields for allocate --equal-split; omitted (None)
    when the analysis does not apply (odd n, rank-deficient X'X)."""
    try:
        rep = equal_split_condition(
            x,
            exhaustive_limit=cfg.exhaustive_limit,
            rng_seed=cfg.rng_seed,
            restarts=cfg.restarts,
        )
    except AllocRiskError as exc:
        return {"available": False, "reason": exc.code}
    return {
        "available": True,
        "threshold": rep.threshold,
        "min_qform": rep.min_qform,
        "witness": rep.witness.w.tolist(),
        "condition_met": rep.condition_met,
        "optimal_is_equal": rep.optimal_is_equal,
        "exhaustive": rep.exhaustive,
    }


def cmd_risk(args: argparse.Namespace) -> int:
    spec = _prior_spec(args)
    x = load_covariates(args.covariates, args.has_header)
    w = _parse_vector(args.w, "w")
    if w.shape[0] != x.n:
        raise LengthMismatch(
            f"--w has {w.shape[0]} entries, covariate file has {x.n} rows"
        )
    alloc = Allocation(w)
    e_sigma2 = spec.e_sigma2(args.e_sigma2)

    breakdown = model_for(spec.value, x, e_sigma2).breakdown(alloc)
    payload = {
        **_allocation_dict(alloc),
        "risk": _breakdown_dict(breakdown),
        "n": x.n,
        "e_sigma2": e_sigma2,
    }

    if args.verify:
        oracle_prior = _oracle_prior(spec, e_sigma2)
        oracle = risk_direct(oracle_prior, x, alloc)
        payload["oracle"] = {
            "risk": oracle,
            "rel_delta": abs(breakdown.risk - oracle) / oracle,
        }

    decomp = spec_to_decomposition(spec)
    if decomp is not None:
        k1, k2 = decomp.h1**2, decomp.h2**2
        if abs(k1 - round(k1)) <= _INT_TOL and abs(k2 - round(k2)) <= _INT_TOL:
            ps = risk_pseudo_sample(decomp, x, alloc, e_sigma2)
            payload["pseudo_sample"] = {
                "risk": ps.risk,
                "rel_delta": abs(breakdown.risk - ps.risk) / ps.risk,
            }

    config = {
        "covariates": str(args.covariates),
        "has_header": args.has_header,
        "prior": spec.kind,
        "w": args.w,
        "verify": args.verify,
        "e_sigma2": e_sigma2,
    }
    report = make_report("risk", config, payload, _timestamp())
    if args.format == "csv-summary":
        _emit(args, _csv_summary(payload))
    else:
        _emit(args, dump_report(report))
    return 0


def _oracle_prior(spec: PriorSpec, e_sigma2: float):
    """A prior whose own E[sigma^2] equals the resolved risk scale, so the
    oracle and the formula path are compared on the same scale."""
    if spec.kind == "flat":
        return FlatPrior(a0=2.0, b0=e_sigma2)
    if spec.kind == "blocks":
        prior: NigPrior = spec.value  # type: ignore[assignment]
        return NigPrior(zeta0=prior.zeta0, v0=prior.v0, a0=2.0, b0=e_sigma2)
    return spec.value.to_prior(a0=2.0, b0=e_sigma2)  # type: ignore[union-attr]


def cmd_check(args: argparse.Namespace) -> int:
    x = load_covariates(args.covariates, args.has_header)
    seed = _resolve_seed(args.seed)
    rep = equal_split_condition(
        x,
        run_optimizer=not args.no_optimize,
        exhaustive_limit=args.exhaustive_limit,
        rng_seed=seed,
        restarts=args.restarts,
    )
    payload = {
        "n": x.n,
        "threshold": rep.threshold,
        "min_qform": rep.min_qform,
        "witness": rep.witness.w.tolist(),
        "condition_met": rep.condition_met,
        "optimal_is_equal": rep.optimal_is_equal,
        "exhaustive": rep.exhaustive,
    }
    config = {
        "covariates": str(args.covariates),
        "has_header": args.has_header,
        "run_optimizer": not args.no_optimize,
        "rng_seed": seed,
        "exhaustive_limit": args.exhaustive_limit,
        "restarts": args.restarts,
    }
    _emit(args, dump_report(make_report("check", config, payload, _timestamp())))
    return 0


def cmd_session(args: argparse.Namespace) -> int:
    store = SessionStore(args.data_dir)
    if args.session_cmd == "open":
        spec = _prior_spec(args)
        doc = _prior_doc_for_store(args, spec)
        out = op_open(store, doc, args.p)
    elif args.session_cmd == "batch":
        x = load_covariates(args.covariates, args.has_header)
        expected = args.expected_revision
        if expected is None:
            expected = op_audit(store, args.id)["revision"]
        quota = None
        if args.quota is not None:
            parsed = _parse_constraint(args.quota)
            if isinstance(parsed, str):
                raise ParseError("--quota must be 'm_c,m_t'")
            quota = parsed
        out = op_batch(
            store,
            args.id,
            x.x.tolist(),
            expected_revision=expected,
            quota=quota,
            mode=args.mode,
            rng_seed=_resolve_seed(args.seed),
        )
    elif args.session_cmd == "outcomes":
        expected = args.expected_revision
        if expected is None:
            expected = op_audit(store, args.id)["revision"]
        y = _parse_vector(args.y, "y")
        out = op_outcomes(
            store,
            args.id,
            y.tolist(),
            expected_revision=expected,
            batch_index=args.batch_index,
        )
    else:  # show
        out = op_audit(store, args.id)
    _emit(args, dump_report(make_report(f"session.{args.session_cmd}", {"data_dir": str(args.data_dir)}, out, _timestamp())))
    return 0


def _prior_doc_for_store(args: argparse.Namespace, spec: PriorSpec) -> dict:
    """The raw prior JSON document to persist with a new session."""
    if args.prior:
        return json.loads(Path(args.prior).read_text(encoding="utf-8"))
    return {"flat": True, "a0": args.a0, "b0": args.b0}


def cmd_selftest(args: argparse.Namespace) -> int:
    """Seeded sweep comparing the closed-form evaluator against the direct
    oracle, plus the bundled counterexample's golden numbers."""
    failures: list[str] = []
    checks = 0

    def check(name: str, ok: bool) -> None:
        nonlocal checks
        checks += 1
        line = f"{'ok' if ok else 'FAIL'}  {name}"
        sys.stdout.write(line + "\n")
        if not ok:
            failures.append(name)

    rng = np.random.default_rng(20240817)
    worst = 0.0
    for _ in range(args.instances):
        n = int(rng.integers(4, 9))
        p = int(rng.integers(1, 3))
        x = CovariateMatrix(rng.standard_normal((n, p)))
        prior = _random_prior(rng, p)
        model = model_for(prior, x, prior.e_sigma2)
        for _ in range(8):
            w = rng.integers(0, 2, size=n)
            formula = model.breakdown(w.astype(float)).risk
            oracle = risk_direct(prior, x, Allocation(w))
            worst = max(worst, abs(formula - oracle) / oracle)
    check(f"oracle agreement over {args.instances} instances (worst {worst:.2e})", worst <= 1e-9)

    x8 = counterexample_table()
    cfg = OptimizerConfig(mode="exhaustive", group_size_constraint="free")
    result = optimize(FlatPrior(), x8, cfg, 1.0)
    w = result.best_alloc.w
    minority_arm = 1 if result.best_alloc.n_t < result.best_alloc.n_c else 0
    minority_rows = sorted(int(i) + 1 for i in np.flatnonzero(w == minority_arm))
    check("counterexample optimum is rows {1, 2, 4} against the rest", minority_rows == [1, 2, 4])

    rep = equal_split_condition(x8)
    check("counterexample min_qform rounds to 0.24", round(rep.min_qform, 2) == 0.24)
    check("counterexample condition_met is false", rep.condition_met is False)
    check("counterexample optimal split is unequal", rep.optimal_is_equal is False)

    sys.stdout.write(f"{checks - len(failures)}/{checks} checks passed\n")
    return 0 if not failures else 1


def _random_prior(rng: np.random.Generator, p: int) -> NigPrior:
    """A random valid prior: built from a random decomposition so the
    diagonal-Schur requirement holds by construction."""
    b_rows = rng.normal(scale=0.5, size=(2, p))
    d = np.triu(rng.normal(scale=0.4, size=(p, p)))
    np.fill_diagonal(d, rng.uniform(0.7, 1.5, size=p))
    decomp = PriorDecomposition(
        h1=float(rng.uniform(0.6, 1.8)),
        h2=float(rng.uniform(0.6, 1.8)),
        b_rows=b_rows,
        d=d,
    )
    return decomp.to_prior(
        zeta0=rng.normal(size=p + 2),
        a0=float(rng.uniform(1.8, 4.0)),
        b0=float(rng.uniform(0.5, 2.0)),
    )


def _add_prior_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--flat", action="store_true", help="use the flat prior")
    sp.add_argument("--prior", help="prior JSON file")
    sp.add_argument("--a0", type=float, default=2.0, help="flat-prior a0 (> 1)")
    sp.add_argument("--b0", type=float, default=1.0, help="flat-prior b0 (> 0)")
    sp.add_argument(
        "--e-sigma2",
        type=float,
        default=None,
        dest="e_sigma2",
        help="override the risk scale E[sigma^2]",
    )


def _add_common_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--has-header", action="store_true", help="first CSV row is a header")
    sp.add_argument("-o", "--output", default="-", help="report file, - for stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="allocrisk",
        description="Bayes-optimal treatment/control allocation",
    )
    parser.add_argument("--version", action="version", version=f"allocrisk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_alloc = sub.add_parser("allocate", help="find the risk-minimizing allocation")
    p_alloc.add_argument("covariates", help="covariate CSV file")
    _add_prior_flags(p_alloc)
    _add_common_flags(p_alloc)
    p_alloc.add_argument("--mode", choices=("exhaustive", "local_search", "best_of_k"), default="exhaustive")
    p_alloc.add_argument("--constraint", default="free", help="free | equal | n_c,n_t")
    p_alloc.add_argument("--equal-split", action="store_true", help="restrict to equal splits and report the balance condition")
    p_alloc.add_argument("--restarts", type=int, default=20)
    p_alloc.add_argument("--k", type=int, default=1000)
    p_alloc.add_argument("--seed", type=int, default=0, help="rng seed (ALLOCRISK_SEED env overrides)")
    p_alloc.add_argument("--exhaustive-limit", type=int, default=EXHAUSTIVE_LIMIT_DEFAULT)
    p_alloc.add_argument("--format", choices=("json", "csv-summary"), default="json")
    p_alloc.set_defaults(func=cmd_allocate)

    p_risk = sub.add_parser("risk", help="risk of a given allocation")
    p_risk.add_argument("covariates")
    _add_prior_flags(p_risk)
    _add_common_flags(p_risk)
    p_risk.add_argument("--w", required=True, help="allocation as 0,1,1,0,...")
    p_risk.add_argument("--verify", action="store_true", help="cross-check against the direct oracle")
    p_risk.add_argument("--format", choices=("json", "csv-summary"), default="json")
    p_risk.set_defaults(func=cmd_risk)

    p_check = sub.add_parser("check", help="equal-split sufficiency condition")
    p_check.add_argument("covariates")
    _add_common_flags(p_check)
    p_check.add_argument("--no-optimize", action="store_true", help="skip the free-size optimization")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--restarts", type=int, default=20)
    p_check.add_argument("--exhaustive-limit", type=int, default=EXHAUSTIVE_LIMIT_DEFAULT)
    p_check.set_defaults(func=cmd_check)

    p_sess = sub.add_parser("session", help="file-backed sequential sessions")
    p_sess.add_argument("--data-dir", required=True)
    sess_sub = p_sess.add_subparsers(dest="session_cmd", required=True)

    s_open = sess_sub.add_parser("open", help="create a session")
    _add_prior_flags(s_open)
    s_open.add_argument("--p", type=int, required=True, help="covariate dimension")
    s_open.add_argument("-o", "--output", default="-")

    s_batch = sess_sub.add_parser("batch", help="allocate an arriving batch")
    s_batch.add_argument("covariates")
    s_batch.add_argument("--id", required=True)
    s_batch.add_argument("--has-header", action="store_true")
    s_batch.add_argument("--quota", default=None, help="per-batch quota m_c,m_t")
    s_batch.add_argument("--mode", choices=("exhaustive", "local_search", "best_of_k"), default=None)
    s_batch.add_argument("--seed", type=int, default=0)
    s_batch.add_argument("--expected-revision", type=int, default=None)
    s_batch.add_argument("-o", "--output", default="-")

    s_out = sess_sub.add_parser("outcomes", help="record outcomes for a batch")
    s_out.add_argument("--id", required=True)
    s_out.add_argument("--y", required=True, help="outcomes as 1.2,0.7,...")
    s_out.add_argument("--batch-index", type=int, default=None)
    s_out.add_argument("--expected-revision", type=int, default=None)
    s_out.add_argument("-o", "--output", default="-")

    s_show = sess_sub.add_parser("show", help="audit view of a session")
    s_show.add_argument("--id", required=True)
    s_show.add_argument("-o", "--output", default="-")

    p_sess.set_defaults(func=cmd_session)

    p_self = sub.add_parser("selftest", help="run the built-in oracle sweep")
    p_self.add_argument("--instances", type=int, default=25)
    p_self.set_defaults(func=cmd_selftest)

    return parser


def main(argv: "list[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AllocRiskError as exc:
        report = {
            "schema_version": "1",
            "tool": "allocrisk",
            "version": __version__,
            "command": args.command,
            "error": {"code": exc.code, "message": str(exc)},
        }
        sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
        return 2 if isinstance(exc, _INFEASIBLE_EXIT) else 1


if __name__ == "__main__":
    raise SystemExit(main())
