"""The HTTP facade, exercised in process with fastapi's TestClient.

All jobs run against the hand-built two-site instance, uploaded through the
API exactly as a remote client would: as the instance document plus the
delimited tables.
"""

import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

import helios.service as service
from helios.evaluation import SweepReport, budget_sweep, write_sweep_csv
from helios.io import save_instance
from helios.service import create_app

from conftest import build_micro
from test_saa import MICRO_OBJECTIVE


@pytest.fixture(scope="module")
def upload_body(tmp_path_factory):
    """The micro instance as an upload request body."""
    src = tmp_path_factory.mktemp("upload-src")
    save_instance(str(src), build_micro())
    return {
        "id": "micro",
        "instance": json.loads((src / "instance.json").read_text()),
        "demand_csv": (src / "demand.csv").read_text(),
        "scenarios": json.loads((src / "scenarios.json").read_text()),
    }


@pytest.fixture()
def client(tmp_path, upload_body):
    app = create_app(str(tmp_path / "store"))
    with TestClient(app) as c:
        assert c.post("/v1/instances", json=upload_body).status_code == 201
        yield c


def wait_done(client, url, timeout=60.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(url).json()
        if doc["state"] in ("done", "error"):
            return doc
        time.sleep(0.05)
    raise AssertionError(f"job at {url} did not finish: {doc}")


# -- instances --------------------------------------------------------------

def test_upload_is_idempotent_on_identical_content(client, upload_body):
    listed = client.get("/v1/instances").json()
    assert listed["api_version"] == 1
    assert [m["id"] for m in listed["instances"]] == ["micro"]
    assert listed["instances"][0]["sites"] == ["mine-x", "plant-y"]
    assert listed["instances"][0]["scenarios"] is True

    again = client.post("/v1/instances", json=upload_body)
    assert again.status_code == 200
    assert again.json()["hash"] == listed["instances"][0]["hash"]


def test_upload_conflicts_on_changed_content(client, upload_body):
    changed = dict(upload_body)
    changed["demand_csv"] = upload_body["demand_csv"].replace("100", "90")
    resp = client.post("/v1/instances", json=changed)
    assert resp.status_code == 409
    assert "different content" in resp.json()["error"]


def test_upload_schema_violations(client, upload_body):
    missing = {k: v for k, v in upload_body.items() if k != "demand_csv"}
    resp = client.post("/v1/instances", json=missing)
    assert resp.status_code == 400
    assert resp.json()["field"] == "demand_csv"

    bad_id = dict(upload_body, id="../escape")
    assert client.post("/v1/instances", json=bad_id).status_code == 400

    extra = dict(upload_body, surprise=1)
    resp = client.post("/v1/instances", json=extra)
    assert resp.status_code == 400
    assert resp.json()["field"] == "surprise"


def test_upload_rejects_invalid_instance_content(client, upload_body):
    broken = dict(upload_body, id="broken")
    broken["instance"] = dict(broken["instance"])
    broken["instance"]["costs"] = dict(broken["instance"]["costs"],
                                       battery_cost=[-1.0])
    resp = client.post("/v1/instances", json=broken)
    assert resp.status_code == 400
    assert "battery_cost" in resp.json()["error"]
    # the rejected upload must not linger in the listing
    ids = [m["id"] for m in client.get("/v1/instances").json()["instances"]]
    assert "broken" not in ids


# -- plan jobs --------------------------------------------------------------

def test_plan_job_round_trip(client):
    resp = client.post("/v1/plans", json={"instance": "micro"})
    assert resp.status_code == 202
    body = resp.json()
    assert body["kind"] == "plan" and body["cached"] is False
    assert body["id"].startswith("p-")

    doc = wait_done(client, f"/v1/plans/{body['id']}")
    assert doc["state"] == "done"
    assert doc["progress"] == 1.0
    result = doc["result"]
    assert result["objective"] == pytest.approx(MICRO_OBJECTIVE, rel=1e-9)
    assert result["npv"] == 0.0
    assert result["sites"] == ["mine-x", "plant-y"]
    # the hourly schedule is only served through the dispatch endpoint
    assert "schedule" not in result

    again = client.post("/v1/plans", json={"instance": "micro"})
    assert again.status_code == 202
    assert again.json() == {**body, "cached": True}


def test_budget_override_changes_the_job(client):
    a = client.post("/v1/plans", json={"instance": "micro"}).json()
    b = client.post("/v1/plans", json={"instance": "micro",
                                       "budget": 5000.0}).json()
    assert a["id"] != b["id"]
    doc = wait_done(client, f"/v1/plans/{b['id']}")
    assert doc["result"]["npv"] > 0.0
    assert sum(map(sum, doc["result"]["plan"]["solar_kw"])) > 10.0


def test_plan_request_validation(client):
    cases = (
        ({"instance": "micro", "gamma": [1.0, 2.0]}, "gamma"),
        ({"instance": "micro", "gamma": [0, 0, "x"]}, "gamma[2]"),
        ({"instance": "micro", "delta": -0.5}, "delta"),
        ({"instance": "micro", "dro_method": "bisect"}, "dro_method"),
        ({"instance": "micro", "shiny": True}, "shiny"),
        ({"instance": "micro", "drop_nominal": "yes"}, "drop_nominal"),
        ({"instance": "nope"}, "instance"),
        ({}, "instance"),
    )
    for body, field in cases:
        resp = client.post("/v1/plans", json=body)
        assert resp.status_code == 400, body
        assert resp.json()["field"] == field

    assert client.post("/v1/plans", json="not an object").status_code == 400


def test_submitting_without_scenarios_is_rejected(client, upload_body):
    bare = {k: v for k, v in upload_body.items() if k != "scenarios"}
    bare["id"] = "bare"
    assert client.post("/v1/instances", json=bare).status_code == 201
    resp = client.post("/v1/plans", json={"instance": "bare"})
    assert resp.status_code == 400
    assert "no scenario set" in resp.json()["error"]


def test_unknown_and_mismatched_job_ids(client):
    assert client.get("/v1/plans/p-missing").status_code == 404
    sweep = client.post("/v1/sweeps", json={"instance": "micro",
                                            "budgets": [0.0]}).json()
    wait_done(client, f"/v1/sweeps/{sweep['id']}")
    # a sweep id is not a plan id
    assert client.get(f"/v1/plans/{sweep['id']}").status_code == 404


# -- dispatch ---------------------------------------------------------------

def test_dispatch_serves_hourly_rows(client):
    jid = client.post("/v1/plans", json={"instance": "micro"}).json()["id"]
    wait_done(client, f"/v1/plans/{jid}")

    resp = client.get(f"/v1/plans/{jid}/dispatch",
                      params={"scenario": 0, "month": 1})
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["hours"] == 24 and len(doc["rows"]) == 24
    first = doc["rows"][0]
    assert first["hour"] == 1
    # the zero-budget plan buys the whole load at the mine every hour
    assert first["buy_nareva"]["mine-x"] == pytest.approx(150.0, abs=1e-6)
    assert first["buy_nareva"]["plant-y"] == 0.0
    assert first["flow"]["mine-x->plant-y"] == pytest.approx(50.0, abs=1e-6)
    assert first["storage"]["mine-x"] == pytest.approx(0.0, abs=1e-6)

    page = client.get(f"/v1/plans/{jid}/dispatch",
                      params={"scenario": 0, "month": 1, "offset": 20,
                              "limit": 10}).json()
    assert [r["hour"] for r in page["rows"]] == [21, 22, 23, 24]
    empty = client.get(f"/v1/plans/{jid}/dispatch",
                       params={"scenario": 0, "month": 1, "offset": 24}).json()
    assert empty["rows"] == []


def test_dispatch_argument_checks(client):
    jid = client.post("/v1/plans", json={"instance": "micro"}).json()["id"]
    wait_done(client, f"/v1/plans/{jid}")
    url = f"/v1/plans/{jid}/dispatch"
    for params, field in (({"scenario": 2, "month": 1}, "scenario"),
                          ({"scenario": 0, "month": 13}, "month"),
                          ({"scenario": 0, "month": 1, "year": 2}, "year"),
                          ({"scenario": 0, "month": 1, "limit": 0}, "offset")):
        resp = client.get(url, params=params)
        assert resp.status_code == 400, params
        assert resp.json()["field"] == field
    assert client.get("/v1/plans/p-zzz/dispatch",
                      params={"scenario": 0, "month": 1}).status_code == 404


def test_dispatch_of_an_unfinished_job_is_a_conflict(tmp_path, upload_body,
                                                     monkeypatch):
    gate = threading.Event()
    real = service.solve_plan

    def stalled(*args, **kwargs):
        gate.wait(30.0)
        return real(*args, **kwargs)

    monkeypatch.setattr(service, "solve_plan", stalled)
    app = create_app(str(tmp_path / "store"))
    with TestClient(app) as c:
        assert c.post("/v1/instances", json=upload_body).status_code == 201
        jid = c.post("/v1/plans", json={"instance": "micro"}).json()["id"]
        resp = c.get(f"/v1/plans/{jid}/dispatch",
                     params={"scenario": 0, "month": 1})
        assert resp.status_code == 409
        assert "not done" in resp.json()["error"]
        gate.set()
        wait_done(c, f"/v1/plans/{jid}")


# -- idempotency keys -------------------------------------------------------

def test_idempotency_key_reuse(client):
    body = {"instance": "micro", "delta": 0.0}
    first = client.post("/v1/plans", json=body,
                        headers={"Idempotency-Key": "k1"})
    second = client.post("/v1/plans", json=body,
                         headers={"Idempotency-Key": "k1"})
    assert first.json()["id"] == second.json()["id"]
    assert second.json()["cached"] is True

    other = client.post("/v1/plans", json={"instance": "micro",
                                           "delta": 0.01},
                        headers={"Idempotency-Key": "k1"})
    assert other.status_code == 409
    assert "already used" in other.json()["error"]
    # the same request under a fresh key is still the same job
    fresh = client.post("/v1/plans", json=body,
                        headers={"Idempotency-Key": "k2"})
    assert fresh.json()["id"] == first.json()["id"]


# -- queue limits -----------------------------------------------------------

def test_full_queue_rejects_new_work(tmp_path, upload_body, monkeypatch):
    gate = threading.Event()
    real = service.solve_plan

    def stalled(*args, **kwargs):
        gate.wait(30.0)
        return real(*args, **kwargs)

    monkeypatch.setattr(service, "solve_plan", stalled)
    app = create_app(str(tmp_path / "store"), max_concurrent_jobs=1,
                     queue_limit=0)
    with TestClient(app) as c:
        assert c.post("/v1/instances", json=upload_body).status_code == 201
        first = c.post("/v1/plans", json={"instance": "micro"})
        assert first.status_code == 202
        blocked = c.post("/v1/plans", json={"instance": "micro",
                                            "delta": 0.01})
        assert blocked.status_code == 503
        assert "queue is full" in blocked.json()["error"]
        # resubmitting the running job is a cache hit, not new work
        rerun = c.post("/v1/plans", json={"instance": "micro"})
        assert rerun.status_code == 202 and rerun.json()["cached"] is True
        gate.set()
        wait_done(c, f"/v1/plans/{first.json()['id']}")


# -- authentication ---------------------------------------------------------

def test_bearer_token_guards_v1_routes(tmp_path, upload_body):
    app = create_app(str(tmp_path / "store"), token="sekrit")
    with TestClient(app) as c:
        assert c.get("/v1/instances").status_code == 401
        assert c.post("/v1/instances", json=upload_body).status_code == 401
        ok = c.get("/v1/instances",
                   headers={"Authorization": "Bearer sekrit"})
        assert ok.status_code == 200


# -- sweeps -----------------------------------------------------------------

def test_sweep_job_matches_the_library_run(client, tmp_path):
    resp = client.post("/v1/sweeps", json={"instance": "micro",
                                           "budgets": [0.0, 5000.0]})
    assert resp.status_code == 202
    doc = wait_done(client, f"/v1/sweeps/{resp.json()['id']}")
    assert doc["state"] == "done"

    served = SweepReport.from_document(doc["result"])
    local = budget_sweep(build_micro(), [0.0, 5000.0])
    a, b = tmp_path / "served.csv", tmp_path / "local.csv"
    write_sweep_csv(served, a)
    write_sweep_csv(local, b)
    assert a.read_bytes() == b.read_bytes()


def test_sweep_request_validation(client):
    cases = (({"instance": "micro"}, "budgets"),
             ({"instance": "micro", "budgets": []}, "budgets"),
             ({"instance": "micro", "budgets": [0.0, -1.0]}, "budgets[1]"),
             ({"instance": "micro", "budgets": [5.0, 0.0]}, "budgets[1]"),
             ({"instance": "micro", "budgets": [0.0], "drop_nominal": True},
              "drop_nominal"))
    for body, field in cases:
        resp = client.post("/v1/sweeps", json=body)
        assert resp.status_code == 400, body
        assert resp.json()["field"] == field


# -- durability -------------------------------------------------------------

def test_restart_requeues_unfinished_jobs(tmp_path, upload_body):
    store = str(tmp_path / "store")
    app = create_app(store)
    with TestClient(app) as c:
        assert c.post("/v1/instances", json=upload_body).status_code == 201
        jid = c.post("/v1/plans", json={"instance": "micro"}).json()["id"]
        done = wait_done(c, f"/v1/plans/{jid}")

    # simulate a crash mid-solve: rewrite the record as running
    path = tmp_path / "store" / "jobs" / f"{jid}.json"
    record = json.loads(path.read_text())
    record.update(state="running", progress=0.3, detail="solving",
                  result=None, finished=None)
    path.write_text(json.dumps(record))

    with TestClient(create_app(store)) as c:
        fresh = wait_done(c, f"/v1/plans/{jid}")
    assert fresh["state"] == "done"
    assert fresh["result"] == done["result"]


def test_restart_serves_completed_results_unchanged(tmp_path, upload_body):
    store = str(tmp_path / "store")
    with TestClient(create_app(store)) as c:
        assert c.post("/v1/instances", json=upload_body).status_code == 201
        jid = c.post("/v1/plans", json={"instance": "micro"}).json()["id"]
        done = wait_done(c, f"/v1/plans/{jid}")

    with TestClient(create_app(store)) as c:
        again = c.get(f"/v1/plans/{jid}").json()
    assert again == done
