"""Community Monitoring Service: agent membership, status collection and the shared reward.

Usable in-process (:class:`CommunityMonitoringService`) or over HTTP
(:func:`start_server` / :class:`CMSClient`). Both expose the same methods and
raise the same exceptions.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import asdict, dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


class CMSError(Exception):
    status = HTTPStatus.BAD_REQUEST


class DuplicateAgent(CMSError):
    status = HTTPStatus.CONFLICT


class UnknownAgentError(CMSError):
    status = HTTPStatus.NOT_FOUND


class SlotRegression(CMSError):
    status = HTTPStatus.CONFLICT


class ConflictingReport(CMSError):
    status = HTTPStatus.CONFLICT


class NoData(CMSError):
    status = HTTPStatus.NOT_FOUND


class InvalidReport(CMSError):
    status = HTTPStatus.BAD_REQUEST


ERRORS = {cls.__name__: cls for cls in (CMSError, DuplicateAgent, UnknownAgentError, SlotRegression, ConflictingReport, NoData, InvalidReport)}


@dataclass(frozen=True)
class StatusReport:
    agent_id: str
    slot: int
    consumed: float
    generated: float

    def __post_init__(self):
        for name in ("consumed", "generated"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                raise InvalidReport(f"{name} must be a finite non-negative number, got {value!r}")
        if int(self.slot) != self.slot or self.slot < 0:
            raise InvalidReport(f"slot must be a non-negative integer, got {self.slot!r}")


class CommunityMonitoringService:
    """Thread-safe in-memory membership and status store."""

    def __init__(self):
        self._lock = threading.RLock()
        self._members: dict[str, float] = {}
        self._tokens = itertools.count(1)
        self._reports: dict[int, dict[str, StatusReport]] = {}
        self._last_slot: dict[str, int] = {}
        self.missing_reports = 0

    # membership
    def join(self, agent_id: str) -> str:
        with self._lock:
            if agent_id in self._members:
                raise DuplicateAgent(f"agent {agent_id!r} is already a member")
            self._members[agent_id] = time.time()
            return f"{agent_id}#{next(self._tokens)}"

    def leave(self, agent_id: str) -> bool:
        with self._lock:
            if agent_id not in self._members:
                raise UnknownAgentError(f"agent {agent_id!r} is not a member")
            del self._members[agent_id]
            return True

    def list(self) -> list[str]:
        with self._lock:
            return sorted(self._members)

    # status
    def post_status(self, report: StatusReport) -> dict:
        with self._lock:
            if report.agent_id not in self._members:
                raise UnknownAgentError(f"agent {report.agent_id!r} is not a member")
            last = self._last_slot.get(report.agent_id)
            if last is not None and report.slot < last:
                raise SlotRegression(f"agent {report.agent_id!r} already reported slot {last}")
            slot_reports = self._reports.setdefault(report.slot, {})
            previous = slot_reports.get(report.agent_id)
            if previous is not None:
                if previous != report:
                    raise ConflictingReport(f"agent {report.agent_id!r} already reported different values for slot {report.slot}")
                return {"ack": True, "duplicate": True}
            slot_reports[report.agent_id] = report
            self._last_slot[report.agent_id] = report.slot
            return {"ack": True, "duplicate": False}

    def reset_status(self) -> None:
        """Drop every status report (membership is kept). Used between episodes."""
        with self._lock:
            self._reports.clear()
            self._last_slot.clear()

    def community_status(self, slot: int) -> float:
        """Sum of (generated - consumed) over the agents that reported ``slot``."""
        with self._lock:
            reports = self._reports.get(slot)
            if not reports:
                raise NoData(f"no status reports for slot {slot}")
            missing = len(set(self._members) - set(reports))
            if missing:
                self.missing_reports += missing
                log.warning("slot %s: %d active agent(s) did not report", slot, missing)
            return math.fsum(r.generated - r.consumed for r in reports.values())

    def global_reward(self, slot: int) -> float:
        """The reward every agent receives for ``slot``: minus the community's net consumption."""
        return self.community_status(slot)

    def episode_reward(self, slots) -> float:
        return math.fsum(self.global_reward(s) for s in slots)


class _Handler(BaseHTTPRequestHandler):
    service: CommunityMonitoringService

    def log_message(self, fmt, *args):
        log.debug("cms %s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps({"protocol_version": PROTOCOL_VERSION, **payload}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        try:
            data = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError as exc:
            raise InvalidReport(f"malformed JSON body: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidReport("request body must be a JSON object")
        return data

    def _dispatch(self, method: str) -> None:
        url = urllib.parse.urlsplit(self.path)
        query = dict(urllib.parse.parse_qsl(url.query))
        parts = [p for p in url.path.split("/") if p]
        svc = self.service
        try:
            if method == "POST" and parts == ["agents"]:
                body = self._body()
                if not isinstance(body.get("agent_id"), str):
                    raise InvalidReport("agent_id must be a string")
                self._send(HTTPStatus.CREATED, {"token": svc.join(body["agent_id"])})
            elif method == "DELETE" and len(parts) == 2 and parts[0] == "agents":
                svc.leave(urllib.parse.unquote(parts[1]))
                self._send(HTTPStatus.OK, {"left": urllib.parse.unquote(parts[1])})
            elif method == "GET" and parts == ["agents"]:
                self._send(HTTPStatus.OK, {"agents": svc.list()})
            elif method == "POST" and parts == ["status"]:
                body = self._body()
                try:
                    report = StatusReport(str(body["agent_id"]), int(body["slot"]), body["consumed"], body["generated"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise InvalidReport(f"bad status report: {exc}") from None
                self._send(HTTPStatus.OK, svc.post_status(report))
            elif method == "DELETE" and parts == ["status"]:
                svc.reset_status()
                self._send(HTTPStatus.OK, {"reset": True})
            elif method == "GET" and parts == ["community", "status"]:
                slot = _int_param(query, "slot")
                self._send(HTTPStatus.OK, {"slot": slot, "status": svc.community_status(slot)})
            elif method == "GET" and parts == ["community", "reward"]:
                if "slot" in query:
                    slot = _int_param(query, "slot")
                    self._send(HTTPStatus.OK, {"slot": slot, "reward": svc.global_reward(slot)})
                else:
                    start, stop = _int_param(query, "start"), _int_param(query, "stop")
                    self._send(HTTPStatus.OK, {"start": start, "stop": stop, "reward": svc.episode_reward(range(start, stop))})
            else:
                self._send(HTTPStatus.NOT_FOUND, {"error": {"type": "NotFound", "message": f"{method} {url.path}"}})
        except CMSError as exc:
            self._send(exc.status, {"error": {"type": type(exc).__name__, "message": str(exc)}})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")


def _int_param(query: dict, name: str) -> int:
    try:
        return int(query[name])
    except (KeyError, ValueError):
        raise InvalidReport(f"query parameter {name!r} must be an integer") from None


def make_server(service: CommunityMonitoringService | None = None, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("CMSHandler", (_Handler,), {"service": service or CommunityMonitoringService()})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def start_server(service=None, host="127.0.0.1", port=0) -> tuple[ThreadingHTTPServer, threading.Thread]:
    """Serve in a background thread; ``server.server_address`` has the bound port."""
    server = make_server(service, host, port)
    thread = threading.Thread(target=server.serve_forever, name="cms-http", daemon=True)
    thread.start()
    return server, thread


class CMSClient:
    """HTTP client with the same surface as :class:`CommunityMonitoringService`."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _call(self, method: str, path: str, body: dict | None = None) -> dict:
        data = None if body is None else json.dumps(body).encode()
        req = urllib.request.Request(self.base_url + path, data=data, method=method, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read())
        except urllib.error.HTTPError as err:
            payload = json.loads(err.read() or b"{}")
            error = payload.get("error", {})
            raise ERRORS.get(error.get("type"), CMSError)(error.get("message", str(err))) from None
        if payload.get("protocol_version") != PROTOCOL_VERSION:
            raise CMSError(f"unsupported protocol version {payload.get('protocol_version')!r}")
        return payload

    def join(self, agent_id: str) -> str:
        return self._call("POST", "/agents", {"agent_id": agent_id})["token"]

    def leave(self, agent_id: str) -> bool:
        self._call("DELETE", "/agents/" + urllib.parse.quote(agent_id, safe=""))
        return True

    def list(self) -> list[str]:
        return self._call("GET", "/agents")["agents"]

    def post_status(self, report: StatusReport) -> dict:
        payload = self._call("POST", "/status", asdict(report))
        return {"ack": payload["ack"], "duplicate": payload["duplicate"]}

    def reset_status(self) -> None:
        self._call("DELETE", "/status")

    def community_status(self, slot: int) -> float:
        return float(self._call("GET", f"/community/status?slot={int(slot)}")["status"])

    def global_reward(self, slot: int) -> float:
        return float(self._call("GET", f"/community/reward?slot={int(slot)}")["reward"])

    def episode_reward(self, slots: range) -> float:
        return float(self._call("GET", f"/community/reward?start={slots.start}&stop={slots.stop}")["reward"])
