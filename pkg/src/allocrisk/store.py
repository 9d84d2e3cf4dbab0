"""File-backed session persistence and the operations the service exposes.

One JSON document per session in a data directory.  Writes go to a temp
file in the same directory followed by an atomic rename, so a crash leaves
either the old or the new revision, never a torn file.  Optimistic
concurrency: every state-changing operation names the revision it read,
and a mismatch is rejected without touching the state.

The stored document keeps the raw batch history as the source of truth;
loading replays it through the sequential engine and cross-checks the
stored accumulators, so a corrupted or hand-edited file fails loudly
instead of pricing risks from drifted state.
"""

from __future__ import annotations

import json
import os
import re
import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .dataio import parse_prior
from .errors import (
    AllocRiskError,
    ConditioningError,
    DimensionMismatch,
    ParseError,
    RevisionConflict,
    UnknownSession,
)
from .model import Allocation, Prior
from .sequential import (
    BatchRequest,
    SequentialSession,
    allocate_batch,
    conditional_risk,
    fold_batch,
    open_session,
    record_outcomes,
)

STORE_SCHEMA_VERSION = "1"
_TOKEN_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")

__all__ = [
    "STORE_SCHEMA_VERSION",
    "StoredSession",
    "SessionStore",
    "op_open",
    "op_batch",
    "op_outcomes",
    "op_audit",
]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _prior_from_doc(doc: Any) -> tuple[Prior, dict]:
    """Prior object for a session from its stored prior document.

    A decomposition-form document is lifted to a full prior with zero
    coefficient means and its (a0, b0) if present, defaults otherwise:
    sessions need the complete prior to absorb outcomes later.
    """
    spec = parse_prior(doc)
    if spec.kind == "decomposition":
        a0 = float(doc.get("a0", 2.0))
        b0 = float(doc.get("b0", 1.0))
        return spec.value.to_prior(a0=a0, b0=b0), doc
    return spec.value, doc


@dataclass(frozen=True, eq=False)
class StoredSession:
    """A session as persisted: identity, revision, and live state."""

    session_id: str
    created_at: str
    revision: int
    prior_doc: dict
    session: SequentialSession


class SessionStore:
    """Directory of session files with check-and-set updates."""

    def __init__(self, data_dir: "str | Path") -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, session_id: str) -> Path:
        if not _TOKEN_RE.match(session_id):
            raise UnknownSession(f"malformed session id {session_id!r}")
        return self.data_dir / f"{session_id}.json"

    def create(self, prior_doc: dict, p: int) -> StoredSession:
        prior, doc = _prior_from_doc(prior_doc)
        session = open_session(prior, p)
        stored = StoredSession(
            session_id=secrets.token_urlsafe(16),
            created_at=_now(),
            revision=0,
            prior_doc=doc,
            session=session,
        )
        with self._lock:
            self._write(stored)
        return stored

    def load(self, session_id: str) -> StoredSession:
        path = self._path(session_id)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UnknownSession(f"no session {session_id}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"session file {path} is corrupt: {exc}") from None
        return self._from_doc(raw)

    def save(self, stored: StoredSession, expected_revision: int) -> StoredSession:
        """Persist a new revision iff the stored file still carries
        expected_revision."""
        with self._lock:
            current = self.load(stored.session_id)
            if current.revision != expected_revision:
                raise RevisionConflict(
                    f"expected revision {expected_revision}, "
                    f"store has {current.revision}"
                )
            bumped = StoredSession(
                session_id=stored.session_id,
                created_at=stored.created_at,
                revision=expected_revision + 1,
                prior_doc=stored.prior_doc,
                session=stored.session,
            )
            self._write(bumped)
        return bumped

    def _write(self, stored: StoredSession) -> None:
        path = self._path(stored.session_id)
        doc = self._to_doc(stored)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True, indent=2), encoding="utf-8")
        os.replace(tmp, path)

    @staticmethod
    def _to_doc(stored: StoredSession) -> dict:
        s = stored.session
        return {
            "schema_version": STORE_SCHEMA_VERSION,
            "session_id": stored.session_id,
            "created_at": stored.created_at,
            "revision": stored.revision,
            "prior": stored.prior_doc,
            "state": {
                "p": s.p,
                "a": s.a,
                "b": s.b,
                "l_c": s.l_c,
                "l_t": s.l_t,
                "sum_c": s.sum_c.tolist(),
                "sum_t": s.sum_t.tolist(),
                "gram": s.gram.tolist(),
                "history": [
                    {
                        "u": rec.u.tolist(),
                        "w": rec.w.w.tolist(),
                        "y": None if rec.y is None else rec.y.tolist(),
                    }
                    for rec in s.history
                ],
            },
        }

    @staticmethod
    def _from_doc(raw: dict) -> StoredSession:
        if raw.get("schema_version") != STORE_SCHEMA_VERSION:
            raise ParseError(
                f"unsupported session schema {raw.get('schema_version')!r}"
            )
        state = raw["state"]
        prior, doc = _prior_from_doc(raw["prior"])
        session = open_session(prior, int(state["p"]))
        # Replay raw history as the source of truth.
        for rec in state["history"]:
            session = fold_batch(
                session, np.array(rec["u"], dtype=float), Allocation(np.array(rec["w"]))
            )
        for index, rec in enumerate(state["history"]):
            if rec["y"] is not None:
                session = record_outcomes(
                    session, np.array(rec["y"], dtype=float), batch_index=index
                )
        # Cross-check stored accumulators against the replay.
        stored_gram = np.array(state["gram"], dtype=float)
        drift = float(np.max(np.abs(stored_gram - session.gram))) if session.p else 0.0
        if (int(state["l_c"]), int(state["l_t"])) != (session.l_c, session.l_t):
            raise ConditioningError("stored arm counts disagree with history replay")
        if drift > 1e-9 * (1.0 + float(np.max(np.abs(stored_gram)))):
            raise ConditioningError(
                f"stored Gram matrix drifted {drift:.3e} from history replay"
            )
        for name, stored_vec, live in (
            ("sum_c", state["sum_c"], session.sum_c),
            ("sum_t", state["sum_t"], session.sum_t),
        ):
            vec = np.array(stored_vec, dtype=float)
            if float(np.max(np.abs(vec - live), initial=0.0)) > 1e-9 * (
                1.0 + float(np.max(np.abs(vec), initial=0.0))
            ):
                raise ConditioningError(f"stored {name} disagrees with history replay")
        return StoredSession(
            session_id=raw["session_id"],
            created_at=raw["created_at"],
            revision=int(raw["revision"]),
            prior_doc=doc,
            session=session,
        )


def _breakdown_dict(b) -> dict:
    return {
        "risk": b.risk,
        "size_term": b.size_term,
        "imbalance_quad": b.imbalance_quad,
        "s_c": b.s_c,
        "s_t": b.s_t,
        "mahalanobis": b.mahalanobis,
    }


def op_open(store: SessionStore, prior_doc: dict, p: Any) -> dict:
    """Create a session; the service's POST /sessions body."""
    if not isinstance(p, int) or isinstance(p, bool) or p < 1:
        raise DimensionMismatch(f"p must be a positive integer, got {p!r}")
    stored = store.create(prior_doc, p)
    return {
        "session_id": stored.session_id,
        "revision": stored.revision,
        "created_at": stored.created_at,
    }


def op_batch(
    store: SessionStore,
    session_id: str,
    covariates: Any,
    expected_revision: int,
    quota: "tuple[int, int] | None" = None,
    mode: "str | None" = None,
    rng_seed: int = 0,
) -> dict:
    """Allocate an arriving batch; the service's POST .../batches body."""
    stored = store.load(session_id)
    if stored.revision != expected_revision:
        raise RevisionConflict(
            f"expected revision {expected_revision}, store has {stored.revision}"
        )
    try:
        u = np.asarray(covariates, dtype=float)
    except (TypeError, ValueError):
        raise DimensionMismatch(
            "covariates must be a rectangular array of numbers"
        ) from None
    if u.ndim != 2 or not np.all(np.isfinite(u)):
        raise DimensionMismatch("covariates must be a finite n x p array")
    req = BatchRequest(u=u, constraint=quota, mode=mode, rng_seed=rng_seed)
    alloc, breakdown, session = allocate_batch(stored.session, req)
    updated = StoredSession(
        session_id=stored.session_id,
        created_at=stored.created_at,
        revision=stored.revision,
        prior_doc=stored.prior_doc,
        session=session,
    )
    saved = store.save(updated, expected_revision)
    return {
        "allocation": alloc.w.tolist(),
        "risk": _breakdown_dict(breakdown),
        "revision": saved.revision,
        "batch_index": len(session.history) - 1,
    }


def op_outcomes(
    store: SessionStore,
    session_id: str,
    y: Any,
    expected_revision: int,
    batch_index: "int | None" = None,
) -> dict:
    """Record outcomes; the service's POST .../outcomes body."""
    stored = store.load(session_id)
    if stored.revision != expected_revision:
        raise RevisionConflict(
            f"expected revision {expected_revision}, store has {stored.revision}"
        )
    try:
        y_arr = np.asarray(y, dtype=float)
    except (TypeError, ValueError):
        raise DimensionMismatch("y must be an array of numbers") from None
    session = record_outcomes(stored.session, y_arr, batch_index=batch_index)
    updated = StoredSession(
        session_id=stored.session_id,
        created_at=stored.created_at,
        revision=stored.revision,
        prior_doc=stored.prior_doc,
        session=session,
    )
    saved = store.save(updated, expected_revision)
    return {
        "revision": saved.revision,
        "e_sigma2": session.e_sigma2,
        "a": session.a,
        "b": session.b,
    }


def _what_if(session: SequentialSession) -> dict:
    """Risk of placing one hypothetical unit at the current covariate mean
    into each arm; null where the risk is not computable (e.g. flat prior
    with an empty or degenerate session)."""
    out: dict = {"control": None, "treatment": None}
    n = session.n_allocated
    if n == 0:
        return out
    u = ((session.sum_c + session.sum_t) / n)[None, :]
    for arm, w in (("control", [0]), ("treatment", [1])):
        try:
            out[arm] = conditional_risk(session, u, Allocation(np.array(w))).risk
        except AllocRiskError:
            out[arm] = None
    return out


def op_audit(store: SessionStore, session_id: str) -> dict:
    """Read-only session view; the service's GET /sessions/{id}."""
    stored = store.load(session_id)
    s = stored.session
    return {
        "session_id": stored.session_id,
        "created_at": stored.created_at,
        "revision": stored.revision,
        "p": s.p,
        "flat": s.flat,
        "prior": stored.prior_doc,
        "l_c": s.l_c,
        "l_t": s.l_t,
        "n_allocated": s.n_allocated,
        "a": s.a,
        "b": s.b,
        "e_sigma2": s.e_sigma2,
        "history": [
            {
                "batch_index": i,
                "m": rec.m,
                "u": rec.u.tolist(),
                "w": rec.w.w.tolist(),
                "y": None if rec.y is None else rec.y.tolist(),
                "scored": rec.scored,
            }
            for i, rec in enumerate(s.history)
        ],
        "what_if": _what_if(s),
    }
