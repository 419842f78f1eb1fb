"""HTTP facade over the planning library.

Exposes uploads, plan solves, budget sweeps and result retrieval as a small
versioned JSON API, backed by a worker pool and a durable file store, so the
browser UI and scripts never link against the solver directly.

Endpoints (all JSON, api version 1):

    POST /v1/instances        upload an instance; body
                              {"id", "instance": <instance document>,
                               "demand_csv": "...", "scenarios": <optional>,
                               "capacity_factors_csv": "..." (optional)}
    GET  /v1/instances        list uploaded instances with their hashes
    POST /v1/plans            submit a solve; body
                              {"instance": "<id>", "budget"?, "gamma"?: [3],
                               "delta"?, "dro_method"?: "cuts"|"cone",
                               "drop_nominal"?: bool}
    GET  /v1/plans/{id}       status and progress, then the immutable result
    GET  /v1/plans/{id}/dispatch?scenario=&month=&year=
                              hourly storage/purchases/flows of one
                              planning day; offset/limit paginate the rows
    POST /v1/sweeps           like plans, with "budgets": [ascending floats]
    GET  /v1/sweeps/{id}      per-budget metric curves

Job ids are content hashes of the request plus the instance file hash, so
resubmitting identical work is a cache hit returning the identical payload.
An ``Idempotency-Key`` header maps the key to the first job it was used
for; reusing a key with a different request is a 409. Schema violations are
400 and name the offending field. When queued plus running jobs reach
``max_concurrent_jobs + queue_limit`` submissions get 503.

Every job record is persisted on each state change, so a restarted service
serves completed results unchanged and re-queues whatever was unfinished.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from datetime import datetime, timezone

from fastapi import FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .evaluation import (budget_sweep, compute_npv, solve_plan,
                         yearly_investment)
from .io import load_instance, load_scenarios

API_VERSION = 1

SCHEDULE_BLOCKS = ("storage", "discharge", "buy_onee", "buy_nareva", "sell")


class SchemaViolation(ValueError):
    """Request rejected before any work; carries the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InstanceConflict(Exception):
    """Same instance id uploaded again with different content."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _json_safe(value):
    """Strict-JSON copy: non-finite floats become null."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


# --------------------------------------------------------------------------
# request validation
# --------------------------------------------------------------------------

def _number(body: dict, field: str, default=None, minimum=None):
    value = body.get(field, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(field, "must be a number")
    if minimum is not None and value < minimum:
        raise SchemaViolation(field, f"must be >= {minimum:g}")
    return float(value)


def _common_solve_fields(body: dict) -> dict:
    instance = body.get("instance")
    if not isinstance(instance, str) or not instance:
        raise SchemaViolation("instance", "must name an uploaded instance")
    gamma = body.get("gamma", [0.0, 0.0, 0.0])
    if not isinstance(gamma, (list, tuple)) or len(gamma) != 3:
        raise SchemaViolation("gamma", "must be a list of three numbers")
    clean_gamma = []
    for i, g in enumerate(gamma):
        if isinstance(g, bool) or not isinstance(g, (int, float)):
            raise SchemaViolation(f"gamma[{i}]", "must be a number")
        if g < 0:
            raise SchemaViolation(f"gamma[{i}]", "must be >= 0")
        clean_gamma.append(float(g))
    method = body.get("dro_method", "cuts")
    if method not in ("cuts", "cone"):
        raise SchemaViolation("dro_method", "must be 'cuts' or 'cone'")
    return {
        "instance": instance,
        "gamma": clean_gamma,
        "delta": _number(body, "delta", default=0.0, minimum=0.0),
        "dro_method": method,
    }


def validate_plan_request(body) -> dict:
    if not isinstance(body, dict):
        raise SchemaViolation("body", "must be a JSON object")
    allowed = {"instance", "budget", "gamma", "delta", "dro_method",
               "drop_nominal"}
    for key in sorted(set(body) - allowed):
        raise SchemaViolation(key, "unknown field")
    req = _common_solve_fields(body)
    req["budget"] = _number(body, "budget", minimum=0.0)
    drop = body.get("drop_nominal", False)
    if not isinstance(drop, bool):
        raise SchemaViolation("drop_nominal", "must be a boolean")
    req["drop_nominal"] = drop
    return req


def validate_sweep_request(body) -> dict:
    if not isinstance(body, dict):
        raise SchemaViolation("body", "must be a JSON object")
    allowed = {"instance", "budgets", "gamma", "delta", "dro_method"}
    for key in sorted(set(body) - allowed):
        raise SchemaViolation(key, "unknown field")
    req = _common_solve_fields(body)
    budgets = body.get("budgets")
    if not isinstance(budgets, (list, tuple)) or not budgets:
        raise SchemaViolation("budgets", "must be a non-empty list")
    clean = []
    for i, b in enumerate(budgets):
        if isinstance(b, bool) or not isinstance(b, (int, float)):
            raise SchemaViolation(f"budgets[{i}]", "must be a number")
        if b < 0:
            raise SchemaViolation(f"budgets[{i}]", "must be >= 0")
        if clean and b < clean[-1]:
            raise SchemaViolation(f"budgets[{i}]", "must be sorted ascending")
        clean.append(float(b))
    req["budgets"] = clean
    return req


# --------------------------------------------------------------------------
# durable store
# --------------------------------------------------------------------------

class JobStore:
    """File-backed registry of uploaded instances and jobs.

    ``instances/<id>/`` holds the uploaded files plus a meta.json,
    ``jobs/<id>.json`` one record per job, ``idempotency.json`` the
    key-to-job map. All registry mutation happens under one lock, and
    records are replaced atomically, so a restart sees a consistent store.
    """

    INSTANCE_FILES = ("instance.json", "demand.csv", "scenarios.json",
                      "capacity_factors.csv")

    def __init__(self, root: str):
        self.root = root
        self.lock = threading.Lock()
        os.makedirs(os.path.join(root, "instances"), exist_ok=True)
        os.makedirs(os.path.join(root, "jobs"), exist_ok=True)
        self.jobs: dict[str, dict] = {}
        jobs_dir = os.path.join(root, "jobs")
        for name in sorted(os.listdir(jobs_dir)):
            if name.endswith(".json"):
                with open(os.path.join(jobs_dir, name), encoding="utf-8") as fh:
                    record = json.load(fh)
                self.jobs[record["id"]] = record
        self._idem_path = os.path.join(root, "idempotency.json")
        if os.path.exists(self._idem_path):
            with open(self._idem_path, encoding="utf-8") as fh:
                self.idempotency = json.load(fh)
        else:
            self.idempotency = {}

    @staticmethod
    def _write(path: str, doc: dict) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)

    def persist_job(self, record: dict) -> None:
        self._write(os.path.join(self.root, "jobs", record["id"] + ".json"),
                    record)

    def persist_idempotency(self) -> None:
        self._write(self._idem_path, self.idempotency)

    def incomplete(self) -> list[dict]:
        return [r for r in self.jobs.values()
                if r["state"] in ("queued", "running")]

    # -- instances ---------------------------------------------------------

    def instance_dir(self, iid: str) -> str:
        return os.path.join(self.root, "instances", iid)

    def instance_meta(self, iid: str) -> dict | None:
        path = os.path.join(self.instance_dir(iid), "meta.json")
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def list_instances(self) -> list[dict]:
        root = os.path.join(self.root, "instances")
        metas = []
        for name in sorted(os.listdir(root)):
            meta = self.instance_meta(name)
            if meta is not None:
                metas.append(meta)
        return metas

    @staticmethod
    def content_hash(files: dict[str, str]) -> str:
        digest = hashlib.sha256()
        for name in sorted(files):
            digest.update(name.encode())
            digest.update(b"\0")
            digest.update(files[name].encode())
            digest.update(b"\0")
        return digest.hexdigest()

    def register_instance(self, iid: str, files: dict[str, str]) -> dict:
        """Write instance files, validate them by loading, record meta.
        Re-registering identical content is a no-op returning the meta."""
        if not iid or "/" in iid or iid.startswith("."):
            raise SchemaViolation("id", "must be a plain directory name")
        content = self.content_hash(files)
        existing = self.instance_meta(iid)
        if existing is not None:
            if existing["hash"] == content:
                return existing
            raise InstanceConflict(
                f"instance {iid} already exists with different content")
        directory = self.instance_dir(iid)
        os.makedirs(directory, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(directory, name), "w",
                      encoding="utf-8") as fh:
                fh.write(text)
        try:
            instance, _ = self.load_planning(iid)
        except ValueError:
            for name in files:
                os.remove(os.path.join(directory, name))
            os.rmdir(directory)
            raise
        meta = {
            "id": iid,
            "hash": content,
            "created": _now(),
            "sites": instance.network.site_names,
            "arcs": [[a.src, a.dst] for a in instance.network.arcs],
            "years": instance.time.years,
            "budget": instance.costs.budget,
            "scenarios": instance.scenarios is not None,
        }
        self._write(os.path.join(directory, "meta.json"), meta)
        return meta

    def load_planning(self, iid: str, budget: float | None = None):
        """Instance with its bundled scenario set attached, plus the
        deviation statistics if the bundle recorded them."""
        directory = self.instance_dir(iid)
        config = {"budget": budget} if budget is not None else None
        instance = load_instance(directory, config)
        stats = None
        scen_path = os.path.join(directory, "scenarios.json")
        if os.path.exists(scen_path):
            scenarios, stats = load_scenarios(scen_path)
            instance = instance.with_scenarios(scenarios)
        return instance, stats


# --------------------------------------------------------------------------
# application factory
# --------------------------------------------------------------------------

def create_app(store_dir: str = "./helios-jobs", *,
               max_concurrent_jobs: int = 2, queue_limit: int = 32,
               token: str | None = None, ui_dir: str | None = None,
               backend: str | None = None) -> FastAPI:
    store = JobStore(store_dir)
    pool = ThreadPoolExecutor(max_workers=max_concurrent_jobs,
                              thread_name_prefix="solve")

    def step(record: dict, progress: float, detail: str) -> None:
        with store.lock:
            record.update(state="running", progress=progress, detail=detail)
            store.persist_job(record)

    def run_job(job_id: str) -> None:
        record = store.jobs[job_id]
        try:
            req = record["request"]
            step(record, 0.1, "loading instance")
            instance, stats = store.load_planning(req["instance"],
                                                  budget=req.get("budget"))
            gamma = tuple(req["gamma"])
            if record["kind"] == "plan":
                step(record, 0.3, "solving")
                sol = solve_plan(instance, gamma=gamma, delta=req["delta"],
                                 stats=stats, dro_method=req["dro_method"],
                                 drop_nominal=req["drop_nominal"],
                                 backend=backend)
                step(record, 0.8, "pricing against the zero-budget run")
                if instance.costs.budget > 0:
                    base = solve_plan(instance.with_budget(0.0), gamma=gamma,
                                      delta=req["delta"], stats=stats,
                                      dro_method=req["dro_method"],
                                      drop_nominal=req["drop_nominal"],
                                      backend=backend)
                    sol.npv = compute_npv(
                        sol.operating_cost, base.operating_cost,
                        yearly_investment(instance, sol.plan),
                        instance.costs.discount)
                else:
                    sol.npv = 0.0
                result = sol.to_document(with_schedule=True)
                result["sites"] = instance.network.site_names
                result["arcs"] = [[a.src, a.dst]
                                  for a in instance.network.arcs]
            else:
                step(record, 0.3, "solving budget grid")
                report = budget_sweep(instance, req["budgets"], gamma=gamma,
                                      delta=req["delta"], stats=stats,
                                      dro_method=req["dro_method"],
                                      backend=backend)
                result = report.to_document()
            with store.lock:
                record.update(state="done", progress=1.0, detail="complete",
                              result=_json_safe(result), finished=_now())
                store.persist_job(record)
        except Exception as exc:                      # job isolation boundary
            with store.lock:
                record.update(state="error", progress=1.0, detail="failed",
                              error=f"{type(exc).__name__}: {exc}",
                              finished=_now())
                store.persist_job(record)

    @asynccontextmanager
    async def lifespan(app):
        with store.lock:
            for record in store.incomplete():
                record.update(state="queued", progress=0.0, detail="queued")
                store.persist_job(record)
                pool.submit(run_job, record["id"])
        yield
        pool.shutdown(wait=False, cancel_futures=True)

    app = FastAPI(title="plan service", version=str(API_VERSION),
                  lifespan=lifespan)
    app.state.store = store

    if token:
        @app.middleware("http")
        async def check_token(request: Request, call_next):
            if (request.url.path.startswith("/v1") and
                    request.headers.get("authorization") != f"Bearer {token}"):
                return JSONResponse({"error": "unauthorized"},
                                    status_code=401)
            return await call_next(request)

    @app.exception_handler(SchemaViolation)
    async def schema_violation(request: Request, exc: SchemaViolation):
        return JSONResponse({"error": str(exc), "field": exc.field},
                            status_code=400)

    @app.exception_handler(InstanceConflict)
    async def instance_conflict(request: Request, exc: InstanceConflict):
        return JSONResponse({"error": str(exc)}, status_code=409)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse({"error": "body: not a valid JSON object",
                             "field": "body"}, status_code=400)

    @app.exception_handler(ValueError)
    async def invalid_content(request: Request, exc: ValueError):
        # the io layer rejects broken uploads with ValueErrors of its own
        return JSONResponse({"error": str(exc)}, status_code=400)

    # -- instances ---------------------------------------------------------

    @app.get("/v1/instances")
    def list_instances():
        return {"api_version": API_VERSION,
                "instances": store.list_instances()}

    @app.post("/v1/instances")
    def upload_instance(body: dict):
        iid = body.get("id")
        if not isinstance(iid, str) or not iid:
            raise SchemaViolation("id", "must be a non-empty string")
        doc = body.get("instance")
        if not isinstance(doc, dict):
            raise SchemaViolation("instance", "must be the instance document")
        demand = body.get("demand_csv")
        if not isinstance(demand, str) or not demand:
            raise SchemaViolation("demand_csv", "must be the demand table")
        files = {"instance.json": json.dumps(doc, sort_keys=True),
                 "demand.csv": demand}
        scenarios = body.get("scenarios")
        if scenarios is not None:
            if not isinstance(scenarios, dict):
                raise SchemaViolation("scenarios",
                                      "must be the scenario document")
            files["scenarios.json"] = json.dumps(scenarios, sort_keys=True)
        factors = body.get("capacity_factors_csv")
        if factors is not None:
            if not isinstance(factors, str):
                raise SchemaViolation("capacity_factors_csv",
                                      "must be the capacity factor table")
            files["capacity_factors.csv"] = factors
        known = {"id", "instance", "demand_csv", "scenarios",
                 "capacity_factors_csv"}
        for key in sorted(set(body) - known):
            raise SchemaViolation(key, "unknown field")
        with store.lock:
            fresh = store.instance_meta(iid) is None
            meta = store.register_instance(iid, files)
        return JSONResponse({"api_version": API_VERSION, **meta},
                            status_code=201 if fresh else 200)

    # -- submission --------------------------------------------------------

    def submit(kind: str, req: dict, idempotency_key: str | None):
        meta = store.instance_meta(req["instance"])
        if meta is None:
            raise SchemaViolation("instance", "unknown instance id")
        if not meta["scenarios"]:
            raise SchemaViolation("instance",
                                  "instance has no scenario set attached")
        canonical = json.dumps({"kind": kind, "request": req,
                                "instance_hash": meta["hash"]},
                               sort_keys=True)
        prefix = "p-" if kind == "plan" else "s-"
        job_id = prefix + hashlib.sha256(canonical.encode()).hexdigest()[:20]
        with store.lock:
            if idempotency_key is not None:
                claimed = store.idempotency.get(idempotency_key)
                if claimed is not None and claimed != job_id:
                    return JSONResponse(
                        {"error": "idempotency key was already used for a "
                                  f"different request (job {claimed})"},
                        status_code=409)
            cached = job_id in store.jobs
            if not cached:
                active = sum(1 for r in store.jobs.values()
                             if r["state"] in ("queued", "running"))
                if active >= max_concurrent_jobs + queue_limit:
                    return JSONResponse(
                        {"error": "job queue is full, retry later"},
                        status_code=503)
                record = {"api_version": API_VERSION, "id": job_id,
                          "kind": kind, "state": "queued", "progress": 0.0,
                          "detail": "queued", "request": req,
                          "instance_hash": meta["hash"],
                          "submitted": _now(), "finished": None,
                          "result": None, "error": None}
                store.jobs[job_id] = record
                store.persist_job(record)
                pool.submit(run_job, job_id)
            if idempotency_key is not None:
                store.idempotency[idempotency_key] = job_id
                store.persist_idempotency()
        return JSONResponse({"api_version": API_VERSION, "id": job_id,
                             "kind": kind, "cached": cached},
                            status_code=202)

    @app.post("/v1/plans")
    def submit_plan(body: dict,
                    idempotency_key: str | None = Header(default=None)):
        return submit("plan", validate_plan_request(body), idempotency_key)

    @app.post("/v1/sweeps")
    def submit_sweep(body: dict,
                     idempotency_key: str | None = Header(default=None)):
        return submit("sweep", validate_sweep_request(body), idempotency_key)

    # -- retrieval ---------------------------------------------------------

    def job_payload(job_id: str, kind: str):
        record = store.jobs.get(job_id)
        if record is None or record["kind"] != kind:
            return JSONResponse({"error": "unknown job id"}, status_code=404)
        doc = {key: record[key] for key in
               ("api_version", "id", "kind", "state", "progress", "detail",
                "request", "submitted", "finished")}
        if record["state"] == "done":
            result = dict(record["result"])
            result.pop("schedule", None)
            doc["result"] = result
        elif record["state"] == "error":
            doc["error"] = record["error"]
        return doc

    @app.get("/v1/plans/{job_id}")
    def get_plan(job_id: str):
        return job_payload(job_id, "plan")

    @app.get("/v1/sweeps/{job_id}")
    def get_sweep(job_id: str):
        return job_payload(job_id, "sweep")

    @app.get("/v1/plans/{job_id}/dispatch")
    def get_dispatch(job_id: str, scenario: int, month: int, year: int = 1,
                     offset: int = 0, limit: int = 24):
        record = store.jobs.get(job_id)
        if record is None or record["kind"] != "plan":
            return JSONResponse({"error": "unknown job id"}, status_code=404)
        if record["state"] != "done":
            return JSONResponse(
                {"error": f"job is {record['state']}, not done"},
                status_code=409)
        schedule = record["result"]["schedule"]
        block = schedule["buy_onee"]
        n_sites, hours = len(block), len(block[0])
        n_scen, n_months = len(block[0][0]), len(block[0][0][0])
        n_years = len(block[0][0][0][0])
        if not 0 <= scenario < n_scen:
            raise SchemaViolation("scenario", f"must be 0..{n_scen - 1}")
        if not 1 <= month <= n_months:
            raise SchemaViolation("month", f"must be 1..{n_months}")
        if not 1 <= year <= n_years:
            raise SchemaViolation("year", f"must be 1..{n_years}")
        if offset < 0 or limit < 1:
            raise SchemaViolation("offset", "offset >= 0 and limit >= 1")
        sites = record["result"]["sites"]
        arcs = record["result"]["arcs"]
        d, m, y = scenario, month - 1, year - 1
        rows = []
        for h in range(offset, min(offset + limit, hours)):
            row = {"hour": h + 1}
            for name in SCHEDULE_BLOCKS:
                values = schedule[name]
                row[name] = {sites[n]: values[n][h][d][m][y]
                             for n in range(n_sites)}
            row["flow"] = {
                f"{src}->{dst}": (schedule["flow_pos"][a][h][d][m][y]
                                  - schedule["flow_neg"][a][h][d][m][y])
                for a, (src, dst) in enumerate(arcs)}
            rows.append(row)
        return {"api_version": API_VERSION, "id": job_id,
                "scenario": scenario, "month": month, "year": year,
                "hours": hours, "offset": offset, "rows": rows}

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
