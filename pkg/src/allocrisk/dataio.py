"""File formats: covariate CSV, prior JSON, and the report envelope.

CSV is deliberately rigid: comma separator, "." decimal point, and a header
only when the caller says so.  No sniffing, so the same file always parses
the same way.  Coordinates in error messages are 1-based file coordinates
(the header line counts).

A prior is one of three JSON shapes: {"flat": ...}, covariance blocks
{"nu", "rho", "gamma", "zeta0", "a0", "b0"}, or a ready-made decomposition
{"decomposition": {"h1", "h2", "b_rows", "d"}}.  When a document carries
both blocks and a decomposition the blocks win and the decomposition is
recomputed from them.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import EmptyFile, InvalidPrior, ParseError, RaggedRows
from .model import (
    CovariateMatrix,
    FlatPrior,
    NigPrior,
    Prior,
    PriorDecomposition,
    decompose_prior,
)

REPORT_SCHEMA_VERSION = "1"

__all__ = [
    "REPORT_SCHEMA_VERSION",
    "PriorSpec",
    "load_covariates",
    "parse_covariates_text",
    "parse_prior",
    "load_prior",
    "make_report",
    "dump_report",
]


def parse_covariates_text(text: str, has_header: bool) -> CovariateMatrix:
    """Parse CSV text into a covariate matrix; see module docstring for
    the accepted dialect."""
    rows: list[list[float]] = []
    width: int | None = None
    reader = csv.reader(io.StringIO(text), delimiter=",")
    for lineno, cells in enumerate(reader, start=1):
        if lineno == 1 and has_header:
            width = len(cells)
            continue
        if not cells or (len(cells) == 1 and cells[0].strip() == ""):
            continue  # blank line
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise RaggedRows(
                f"row {lineno} has {len(cells)} cells, expected {width}"
            )
        parsed = []
        for col, cell in enumerate(cells, start=1):
            s = cell.strip()
            try:
                value = float(s)
            except ValueError:
                raise ParseError(
                    f"cell at row {lineno}, column {col}: {s!r} is not a number"
                ) from None
            if not np.isfinite(value):
                raise ParseError(
                    f"cell at row {lineno}, column {col}: {s!r} is not finite"
                )
            parsed.append(value)
        rows.append(parsed)
    if not rows:
        raise EmptyFile("no data rows")
    return CovariateMatrix(np.array(rows, dtype=float))


def load_covariates(path: "str | Path", has_header: bool) -> CovariateMatrix:
    """Read a covariate CSV file; row order is significant, allocation
    indices refer to it."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"no such file: {p}") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{p} is not UTF-8: {exc}") from None
    try:
        return parse_covariates_text(text, has_header)
    except EmptyFile:
        raise EmptyFile(f"{p} contains no data rows") from None


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """A parsed prior: which JSON shape it came from, the usable object,
    and the risk scale implied by its (a0, b0) when present.

    kind is "flat", "blocks", or "decomposition".  For "decomposition"
    without (a0, b0), e_sigma2_default falls back to 1.0; an explicit
    override always wins.
    """

    kind: str
    value: "Prior | PriorDecomposition"
    e_sigma2_default: float

    def e_sigma2(self, override: float | None = None) -> float:
        if override is not None:
            if not (np.isfinite(override) and override > 0.0):
                raise InvalidPrior(f"e_sigma2 override must be positive, got {override}")
            return float(override)
        return self.e_sigma2_default


def _as_matrix(obj: Any, name: str) -> np.ndarray:
    try:
        arr = np.array(obj, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"prior field {name!r} is not a numeric array") from None
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"prior field {name!r} has non-finite entries")
    return arr


def parse_prior(obj: Any) -> PriorSpec:
    """Build a PriorSpec from a decoded prior JSON document."""
    if not isinstance(obj, dict):
        raise ParseError("prior document must be a JSON object")
    has_blocks = all(k in obj for k in ("nu", "rho", "gamma", "zeta0"))
    has_decomp = "decomposition" in obj
    is_flat = bool(obj.get("flat", False))

    if is_flat:
        if has_blocks or has_decomp:
            raise ParseError("prior mixes the flat form with another form")
        prior = FlatPrior(a0=float(obj.get("a0", 2.0)), b0=float(obj.get("b0", 1.0)))
        return PriorSpec(kind="flat", value=prior, e_sigma2_default=prior.e_sigma2)

    if has_blocks:
        # Blocks win over a decomposition present in the same document.
        for k in ("a0", "b0"):
            if k not in obj:
                raise ParseError(f"block prior is missing {k!r}")
        prior = NigPrior.from_blocks(
            nu=_as_matrix(obj["nu"], "nu"),
            rho=_as_matrix(obj["rho"], "rho"),
            gamma=_as_matrix(obj["gamma"], "gamma"),
            zeta0=_as_matrix(obj["zeta0"], "zeta0"),
            a0=float(obj["a0"]),
            b0=float(obj["b0"]),
        )
        return PriorSpec(kind="blocks", value=prior, e_sigma2_default=prior.e_sigma2)

    if has_decomp:
        d = obj["decomposition"]
        if not isinstance(d, dict):
            raise ParseError("decomposition must be a JSON object")
        for k in ("h1", "h2", "b_rows", "d"):
            if k not in d:
                raise ParseError(f"decomposition is missing {k!r}")
        decomp = PriorDecomposition(
            h1=float(d["h1"]),
            h2=float(d["h2"]),
            b_rows=_as_matrix(d["b_rows"], "b_rows"),
            d=_as_matrix(d["d"], "d"),
        )
        if "a0" in obj and "b0" in obj:
            a0, b0 = float(obj["a0"]), float(obj["b0"])
            if not a0 > 1.0:
                raise InvalidPrior(f"a0 must exceed 1, got {a0}")
            if not b0 > 0.0:
                raise InvalidPrior(f"b0 must be positive, got {b0}")
            default = b0 / (a0 - 1.0)
        else:
            default = 1.0
        return PriorSpec(kind="decomposition", value=decomp, e_sigma2_default=default)

    raise ParseError(
        "prior document matches no known form "
        '(expected "flat", covariance blocks, or "decomposition")'
    )


def load_prior(path: "str | Path") -> PriorSpec:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"no such file: {p}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p} is not valid JSON: {exc}") from None
    return parse_prior(obj)


def spec_to_decomposition(spec: PriorSpec) -> PriorDecomposition | None:
    """The decomposition behind a spec: given directly, computed for
    blocks, absent for flat."""
    if spec.kind == "decomposition":
        return spec.value  # type: ignore[return-value]
    if spec.kind == "blocks":
        return decompose_prior(spec.value)  # type: ignore[arg-type]
    return None


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def make_report(command: str, config: dict, result: dict, timestamp: str) -> dict:
    """Assemble the versioned report envelope all subcommands share."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool": "allocrisk",
        "version": __version__,
        "command": command,
        "timestamp": timestamp,
        "config": _jsonable(config),
        "result": _jsonable(result),
    }


def dump_report(report: dict) -> str:
    """Serialize deterministically: sorted keys, shortest float form."""
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False)
