"""HTTP service over the workflow engine.

Thin JSON-over-HTTP layer: case submission, status polling, plan retrieval,
review decisions, interactive segmentation and telemetry.  Raw volume and
mask payloads are served unmodified so a client can decode them itself.
Built on the standard library's threading HTTP server; case execution runs
on a small worker pool while each case's workflow stays sequential.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import InvalidTransition, SonoplanError, UnknownCase
from .planner import PlannerConfig
from .segtool import parse_prompt_spec
from .workflow import WorkflowEngine, WorkflowStatus, open_engine

_MASK_NAME = re.compile(r"^m\d+\.rmsk$")


class PlanningService:
    """Engine facade used by the HTTP handler (and directly by tests)."""

    def __init__(self, engine: WorkflowEngine, workers: int = 4):
        self.engine = engine
        self.pool = ThreadPoolExecutor(max_workers=workers)
        self._pending: dict[str, object] = {}
        self._lock = threading.Lock()

    # -- case lifecycle ------------------------------------------------------

    def submit_case(self, case_doc: str, cfg: PlannerConfig = PlannerConfig()) -> str:
        from .core import parse_case

        case = parse_case(case_doc)
        stored = self.engine.store.ingest_case(case)
        with self._lock:
            future = self.pool.submit(self.engine.run_case, stored, cfg)
            self._pending[stored.case_id] = future
            future.add_done_callback(lambda _f, cid=stored.case_id: self._forget(cid))
        return stored.case_id

    def _forget(self, case_id: str) -> None:
        with self._lock:
            self._pending.pop(case_id, None)

    def get_record(self, case_id: str) -> dict:
        if self.engine.store.has_record(case_id):
            return self.engine.store.load_record(case_id).to_dict()
        with self._lock:
            pending = case_id in self._pending
        if pending or (self.engine.store.case_dir(case_id) / "case.json").exists():
            return {"case_id": case_id, "status": WorkflowStatus.RUNNING.value}
        raise UnknownCase(case_id)

    def get_plan_text(self, case_id: str) -> str:
        record = self.engine.store.load_record(case_id)
        if not record.final_plan_text:
            raise UnknownCase(f"{case_id} has no finalized plan yet")
        return record.final_plan_text

    def review(self, case_id: str, decision: str, patch: dict | None) -> dict:
        return self.engine.review(case_id, decision, patch).to_dict()

    def escalations(self) -> list[dict]:
        return [
            r.to_dict()
            for r in self.engine.store.list_records()
            if r.status is WorkflowStatus.ESCALATED
        ]

    def list_cases(self) -> list[dict]:
        records = {r.case_id: r.to_dict() for r in self.engine.store.list_records()}
        for case_id in self.engine.store.list_case_ids():
            if case_id not in records:
                records[case_id] = {"case_id": case_id, "status": WorkflowStatus.RUNNING.value}
        return [records[cid] for cid in sorted(records)]

    def segment(self, case_id: str, prompt_spec: str) -> dict:
        prompt = parse_prompt_spec(prompt_spec)
        ref, dice_vs_previous = self.engine.interactive_segment(case_id, prompt)
        return {"case_id": case_id, "mask_ref": ref, "dice_vs_previous": dice_vs_previous}

    def telemetry(self) -> dict:
        return self.engine.telemetry_aggregates()

    # -- raw artifacts ---------------------------------------------------------

    def volume_bytes(self, case_id: str) -> bytes:
        case = self.engine.store.load_case(case_id)
        return self.engine.store.volume_path(case).read_bytes()

    def mask_bytes(self, case_id: str, name: str) -> bytes:
        if not _MASK_NAME.match(name):
            raise UnknownCase(f"bad mask name {name!r}")
        path = self.engine.store.case_dir(case_id) / "masks" / name
        if not path.exists():
            raise UnknownCase(f"{case_id}/{name}")
        return path.read_bytes()


def _planner_config(doc: dict) -> PlannerConfig:
    return PlannerConfig(
        enable_executor=bool(doc.get("enable_executor", True)),
        enable_optimizer=bool(doc.get("enable_optimizer", True)),
        enable_memory=bool(doc.get("enable_memory", True)),
        system_policy_id=doc.get("system_policy_id", "default-policy"),
    )


def make_handler(service: PlanningService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        # -- plumbing ----------------------------------------------------------

        def _send(self, status: int, body: bytes, content_type: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def _json(self, status: int, payload) -> None:
            self._send(status, json.dumps(payload).encode("utf-8"), "application/json")

        def _error(self, status: int, message: str) -> None:
            self._json(status, {"error": message})

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length) if length else b"{}"
            return json.loads(raw.decode("utf-8"))

        def do_OPTIONS(self):
            self._send(204, b"", "text/plain")

        # -- routes ------------------------------------------------------------

        def do_GET(self):
            try:
                if self.path == "/escalations":
                    self._json(200, {"cases": service.escalations()})
                elif self.path == "/cases":
                    self._json(200, {"cases": service.list_cases()})
                elif self.path == "/telemetry":
                    self._json(200, service.telemetry())
                elif m := re.match(r"^/cases/([\w.-]+)/plan$", self.path):
                    self._send(200, service.get_plan_text(m.group(1)).encode("utf-8"), "text/plain")
                elif m := re.match(r"^/cases/([\w.-]+)/volume$", self.path):
                    self._send(200, service.volume_bytes(m.group(1)), "application/octet-stream")
                elif m := re.match(r"^/cases/([\w.-]+)/masks/([\w.-]+)$", self.path):
                    self._send(200, service.mask_bytes(m.group(1), m.group(2)), "application/octet-stream")
                elif m := re.match(r"^/cases/([\w.-]+)$", self.path):
                    self._json(200, service.get_record(m.group(1)))
                else:
                    self._error(404, f"no route {self.path}")
            except UnknownCase as exc:
                self._error(404, str(exc))
            except SonoplanError as exc:
                self._error(400, str(exc))

        def do_POST(self):
            try:
                body = self._read_body()
                if self.path == "/cases":
                    cfg = _planner_config(body.get("config", {}))
                    case_doc = json.dumps(body["case"]) if "case" in body else json.dumps(body)
                    case_id = service.submit_case(case_doc, cfg)
                    self._json(202, {"case_id": case_id, "status": "Running"})
                elif m := re.match(r"^/cases/([\w.-]+)/review$", self.path):
                    decision = body.get("decision", "")
                    record = service.review(m.group(1), decision, body.get("patch"))
                    self._json(200, record)
                elif self.path == "/segment":
                    result = service.segment(body["case_id"], body["prompt"])
                    self._json(200, result)
                else:
                    self._error(404, f"no route {self.path}")
            except InvalidTransition as exc:
                self._error(409, str(exc))
            except UnknownCase as exc:
                self._error(404, str(exc))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                self._error(400, f"bad request: {exc}")
            except SonoplanError as exc:
                self._error(400, str(exc))

    return Handler


def make_server(store_dir: str | Path, port: int, engine: WorkflowEngine | None = None) -> ThreadingHTTPServer:
    engine = engine if engine is not None else open_engine(store_dir)
    service = PlanningService(engine)
    server = ThreadingHTTPServer(("127.0.0.1", port), make_handler(service))
    server.service = service  # exposed for tests
    return server


def serve(store_dir: str | Path, port: int) -> None:
    """Blocking entry point used by the CLI."""
    server = make_server(store_dir, port)
    print(f"serving on http://127.0.0.1:{port} (store: {store_dir})")
    try:
        server.serve_forever()
    finally:
        server.server_close()
