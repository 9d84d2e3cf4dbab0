"""HTTP facade: status codes, envelopes, concurrency, crash recovery."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from allocrisk.service import create_app

ROWS = [[0.4], [-1.2], [0.9], [2.0], [-0.5]]


@pytest.fixture
def data_dir(tmp_path):
    return tmp_path / "sessions"


@pytest.fixture
def client(data_dir):
    with TestClient(create_app(data_dir)) as c:
        yield c


def open_flat(client, p=1):
    r = client.post("/sessions", json={"prior": {"flat": True}, "p": p})
    assert r.status_code == 201
    return r.json()


class TestLifecycle:
    def test_health(self, client):
        r = client.get("/api/health")
        assert r.status_code == 200
        assert r.json()["status"] == "ok"

    def test_open_starts_at_revision_zero(self, client):
        out = open_flat(client)
        assert out["revision"] == 0
        assert out["session_id"]

    def test_batch_then_outcomes_then_audit(self, client):
        sid = open_flat(client)["session_id"]
        r = client.post(
            f"/sessions/{sid}/batches",
            json={"covariates": ROWS, "expected_revision": 0},
        )
        assert r.status_code == 200
        batch = r.json()
        assert batch["revision"] == 1
        assert len(batch["allocation"]) == 5
        assert batch["risk"]["risk"] > 0

        r = client.post(
            f"/sessions/{sid}/outcomes",
            json={"y": [1.0, 0.5, -0.2, 0.8, 0.1], "expected_revision": 1},
        )
        assert r.status_code == 200
        scored = r.json()
        assert scored["revision"] == 2
        assert scored["a"] == pytest.approx(4.5)

        r = client.get(f"/sessions/{sid}")
        assert r.status_code == 200
        audit = r.json()
        assert audit["revision"] == 2
        assert audit["history"][0]["scored"] is True
        assert audit["l_c"] + audit["l_t"] == 5

    def test_batch_allocation_matches_library(self, client):
        """The service must hand back exactly what the library computes."""
        from allocrisk import BatchRequest, FlatPrior, allocate_batch, open_session

        sid = open_flat(client)["session_id"]
        got = client.post(
            f"/sessions/{sid}/batches",
            json={"covariates": ROWS, "expected_revision": 0},
        ).json()
        alloc, risk, _ = allocate_batch(
            open_session(FlatPrior(), 1), BatchRequest(u=np.array(ROWS))
        )
        assert got["allocation"] == alloc.w.tolist()
        np.testing.assert_allclose(got["risk"]["risk"], risk.risk, rtol=1e-12)

    def test_what_if_appears_once_units_exist(self, client):
        sid = open_flat(client)["session_id"]
        empty = client.get(f"/sessions/{sid}").json()["what_if"]
        assert empty == {"control": None, "treatment": None}
        client.post(
            f"/sessions/{sid}/batches",
            json={"covariates": ROWS, "expected_revision": 0},
        )
        what_if = client.get(f"/sessions/{sid}").json()["what_if"]
        assert set(what_if) == {"control", "treatment"}
        assert what_if["control"] > 0 and what_if["treatment"] > 0

    def test_quota_respected(self, client):
        sid = open_flat(client)["session_id"]
        out = client.post(
            f"/sessions/{sid}/batches",
            json={
                "covariates": [[0.1], [0.7], [-0.3]],
                "quota": [1, 2],
                "expected_revision": 0,
            },
        ).json()
        w = out["allocation"]
        assert w.count(0) == 1 and w.count(1) == 2


class TestErrorMapping:
    def test_unknown_session_404(self, client):
        r = client.get("/sessions/doesnotexist")
        assert r.status_code == 404
        body = r.json()
        assert body["code"] == "store.UnknownSession"
        assert body["detail"] is None

    def test_stale_revision_409_without_state_change(self, client):
        sid = open_flat(client)["session_id"]
        before = client.get(f"/sessions/{sid}").json()
        r = client.post(
            f"/sessions/{sid}/batches",
            json={"covariates": ROWS, "expected_revision": 7},
        )
        assert r.status_code == 409
        assert r.json()["code"] == "store.RevisionConflict"
        assert client.get(f"/sessions/{sid}").json() == before

    def test_double_scoring_409(self, client):
        sid = open_flat(client)["session_id"]
        client.post(
            f"/sessions/{sid}/batches",
            json={"covariates": ROWS, "expected_revision": 0},
        )
        client.post(
            f"/sessions/{sid}/outcomes",
            json={"y": [0, 0, 0, 0, 0], "expected_revision": 1},
        )
        r = client.post(
            f"/sessions/{sid}/outcomes",
            json={"y": [1, 1, 1, 1, 1], "expected_revision": 2, "batch_index": 0},
        )
        assert r.status_code == 409
        assert r.json()["code"] == "sequential.AlreadyScored"

    def test_invalid_prior_400(self, client):
        r = client.post(
            "/sessions", json={"prior": {"flat": True, "a0": 0.5}, "p": 1}
        )
        assert r.status_code == 400
        assert r.json()["code"] == "model.InvalidPrior"

    def test_malformed_json_400(self, client):
        r = client.post(
            "/sessions",
            content=b"{nope",
            headers={"content-type": "application/json"},
        )
        assert r.status_code == 400
        assert r.json()["code"] == "dataio.ParseError"

    def test_wrong_outcome_length_422(self, client):
        sid = open_flat(client)["session_id"]
        client.post(
            f"/sessions/{sid}/batches",
            json={"covariates": ROWS, "expected_revision": 0},
        )
        r = client.post(
            f"/sessions/{sid}/outcomes",
            json={"y": [1.0], "expected_revision": 1},
        )
        assert r.status_code == 422
        assert r.json()["code"] == "sequential.LengthMismatch"

    def test_infeasible_batch_422(self, client):
        # Flat p=1 cannot place a 2-row first batch: no full-rank design.
        sid = open_flat(client)["session_id"]
        r = client.post(
            f"/sessions/{sid}/batches",
            json={"covariates": [[0.0], [1.0]], "expected_revision": 0},
        )
        assert r.status_code == 422
        assert r.json()["code"] == "allocator.InfeasibleConstraint"


class TestPersistence:
    def test_state_survives_restart(self, data_dir):
        """Fresh app over the same directory replays to the same state."""
        with TestClient(create_app(data_dir)) as client:
            sid = open_flat(client)["session_id"]
            client.post(
                f"/sessions/{sid}/batches",
                json={"covariates": ROWS, "expected_revision": 0},
            )
            client.post(
                f"/sessions/{sid}/outcomes",
                json={"y": [1.0, 0.5, -0.2, 0.8, 0.1], "expected_revision": 1},
            )
            before = client.get(f"/sessions/{sid}").json()

        with TestClient(create_app(data_dir)) as client:
            after = client.get(f"/sessions/{sid}").json()
        assert after == before

        # And the restarted service accepts further writes.
        with TestClient(create_app(data_dir)) as client:
            r = client.post(
                f"/sessions/{sid}/batches",
                json={"covariates": [[0.3], [1.1], [-0.9]], "expected_revision": 2},
            )
            assert r.status_code == 200
            assert r.json()["revision"] == 3

    def test_sessions_are_isolated(self, client):
        a = open_flat(client)["session_id"]
        b = open_flat(client)["session_id"]
        client.post(
            f"/sessions/{a}/batches",
            json={"covariates": ROWS, "expected_revision": 0},
        )
        assert client.get(f"/sessions/{b}").json()["revision"] == 0
        assert client.get(f"/sessions/{a}").json()["revision"] == 1
