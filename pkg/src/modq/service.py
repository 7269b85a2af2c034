"""Live moderation service: classify, route by threshold, queue for humans.

State is event-sourced: an append-only JSONL log of config_set,
item_classified, and decision_submitted events is the single source of
truth, written before any response and replayed on startup. Items whose
uncertainty is at or below the configured threshold are auto-accepted;
everything else waits in the moderation queue until a human submits a
decision, which is final even when it contradicts the model.

`serve_http` wraps a service instance in a threaded HTTP server exposing
the JSON API consumed by the moderator UI; static files for the UI are
served from a configurable directory.
"""

from __future__ import annotations

import json
import mimetypes
import os
import re
import threading
import time
import warnings
from dataclasses import dataclass, field, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from modq.moderation import decode_threshold, encode_threshold


class ValidationError(ValueError):
    """Bad request payload or unusable service state (HTTP 400)."""


class UnknownItemError(KeyError):
    """No item with that id (HTTP 404)."""


class AlreadyResolvedError(RuntimeError):
    """Decision already recorded for the item (HTTP 409)."""


@dataclass
class ServiceConfig:
    threshold: float
    score_function: str = "lc"
    mode: str = "mcd"
    passes: int = 50
    model_ref: str | None = None
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "threshold": encode_threshold(self.threshold),
            "score_function": self.score_function,
            "mode": self.mode,
            "T": self.passes,
            "model_ref": self.model_ref,
            "class_names": list(self.class_names),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ServiceConfig":
        return cls(
            threshold=decode_threshold(blob["threshold"]),
            score_function=blob.get("score_function", "lc"),
            mode=blob.get("mode", "mcd"),
            passes=int(blob.get("T", 50)),
            model_ref=blob.get("model_ref"),
            class_names=list(blob.get("class_names", [])),
        )


@dataclass
class ModerationItem:
    item_id: int
    text: str
    predicted_label: int
    class_probabilities: list[float]
    uncertainty: float
    score_function: str
    status: str  # auto | pending | resolved
    received_ts: int
    final_label: int | None = None
    moderator_id: str | None = None
    resolved_ts: int | None = None

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "text": self.text,
            "predicted_label": self.predicted_label,
            "class_probabilities": self.class_probabilities,
            "uncertainty": self.uncertainty,
            "score_function": self.score_function,
            "status": self.status,
            "received_ts": self.received_ts,
            "final_label": self.final_label,
            "moderator_id": self.moderator_id,
            "resolved_ts": self.resolved_ts,
        }


def _now_ms() -> int:
    return int(time.time() * 1000)


def replay_log(path: str | Path) -> tuple[ServiceConfig | None, dict[int, ModerationItem], int]:
    """Fold the event log into (config, items, usable byte length).

    An event counts as complete only when newline-terminated (the writer
    fsyncs the full line before acknowledging). A corrupt or unterminated
    final line is dropped with a warning, since it can only come from an
    interrupted write; a corrupt interior line is a hard error.
    """
    config: ServiceConfig | None = None
    items: dict[int, ModerationItem] = {}
    path = Path(path)
    if not path.exists():
        return config, items, 0

    raw = path.read_bytes()
    terminated = raw.rfind(b"\n") + 1
    lines = raw[:terminated].split(b"\n")[:-1]
    if raw[terminated:]:
        warnings.warn(f"dropping unterminated trailing bytes of {path}", stacklevel=2)

    good_bytes = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            good_bytes += len(line) + 1
            continue
        try:
            event = json.loads(line.decode("utf-8"))
            kind, payload = event["event"], event["payload"]
        except (ValueError, KeyError, UnicodeDecodeError):
            if lineno == len(lines) and not raw[terminated:]:
                warnings.warn(
                    f"dropping corrupt trailing event at line {lineno} of {path}", stacklevel=2
                )
                return config, items, good_bytes
            raise ValueError(f"corrupt event log: bad interior line {lineno} of {path}")

        if kind == "config_set":
            config = ServiceConfig.from_dict(payload)
        elif kind == "item_classified":
            item = ModerationItem(
                item_id=payload["item_id"],
                text=payload["text"],
                predicted_label=payload["predicted_label"],
                class_probabilities=payload["class_probabilities"],
                uncertainty=payload["uncertainty"],
                score_function=payload["score_function"],
                status=payload["status"],
                received_ts=payload["received_ts"],
                final_label=payload.get("final_label"),
            )
            if item.item_id in items:
                raise ValueError(f"corrupt event log: duplicate item id {item.item_id}")
            items[item.item_id] = item
        elif kind == "decision_submitted":
            item = items.get(payload["item_id"])
            if item is None or item.status != "pending":
                raise ValueError(
                    f"corrupt event log: decision for non-pending item at line {lineno}"
                )
            item.status = "resolved"
            item.final_label = payload["final_label"]
            item.moderator_id = payload["moderator_id"]
            item.resolved_ts = payload["resolved_ts"]
        else:
            raise ValueError(f"corrupt event log: unknown event {kind!r} at line {lineno}")
        good_bytes += len(line) + 1
    return config, items, good_bytes


class ModerationService:
    """Event-sourced moderation queue around a text scorer.

    `scorer(text, seed) -> (class_probabilities, predicted_label,
    confidence, uncertainty_value)`; the item id is passed as the seed so
    stochastic scoring stays reproducible. All mutations are serialized
    through one lock and appended to the log before they are visible.
    """

    def __init__(self, config: ServiceConfig, log_path: str | Path, scorer=None):
        self._lock = threading.Lock()
        self._scorer = scorer
        self._log_path = Path(log_path)
        logged_config, self._items, good_bytes = replay_log(self._log_path)
        if self._log_path.exists() and good_bytes < self._log_path.stat().st_size:
            with open(self._log_path, "r+b") as fh:
                fh.truncate(good_bytes)
        self._next_id = max(self._items, default=-1) + 1
        self.config = logged_config if logged_config is not None else config
        self._log = open(self._log_path, "a", encoding="utf-8")
        if logged_config is None:
            self._append("config_set", self.config.to_dict())

    def close(self) -> None:
        self._log.close()

    def _append(self, kind: str, payload: dict) -> None:
        line = json.dumps({"ts": _now_ms(), "event": kind, "payload": payload})
        self._log.write(line + "\n")
        self._log.flush()
        os.fsync(self._log.fileno())

    # -- operations --------------------------------------------------

    def classify_and_route(self, text: str) -> ModerationItem:
        """Score a text; auto-accept when uncertainty <= threshold, else
        enqueue it for a human decision. Persists before returning."""
        if not isinstance(text, str) or not text.strip():
            raise ValidationError("text must be a non-empty string")
        if self._scorer is None:
            raise ValidationError("no model loaded; classification unavailable")
        with self._lock:
            item_id = self._next_id
            probs, label, _confidence, unc_value = self._scorer(text, item_id)
            auto = unc_value <= self.config.threshold
            item = ModerationItem(
                item_id=item_id,
                text=text,
                predicted_label=int(label),
                class_probabilities=[float(p) for p in probs],
                uncertainty=float(unc_value),
                score_function=self.config.score_function,
                status="auto" if auto else "pending",
                received_ts=_now_ms(),
                final_label=int(label) if auto else None,
            )
            self._append("item_classified", item.to_dict())
            self._items[item_id] = item
            self._next_id += 1
            return replace(item)

    def submit_decision(self, item_id: int, label: int, moderator_id: str) -> ModerationItem:
        """Record a human decision; the human label is final even when it
        contradicts the model's prediction."""
        if not isinstance(label, int) or isinstance(label, bool):
            raise ValidationError("label must be a class index")
        if self.config.class_names and not 0 <= label < len(self.config.class_names):
            raise ValidationError(f"label {label} out of range")
        if not moderator_id or not isinstance(moderator_id, str):
            raise ValidationError("moderator_id required")
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise UnknownItemError(item_id)
            if item.status != "pending":
                raise AlreadyResolvedError(f"item {item_id} is {item.status}")
            resolved_ts = _now_ms()
            self._append("decision_submitted", {
                "item_id": item_id,
                "final_label": label,
                "moderator_id": moderator_id,
                "resolved_ts": resolved_ts,
            })
            item.status = "resolved"
            item.final_label = label
            item.moderator_id = moderator_id
            item.resolved_ts = resolved_ts
            return replace(item)

    def list_queue(self, status: str | None = "pending", limit: int | None = None,
                   offset: int = 0) -> list[ModerationItem]:
        """Items ordered by (uncertainty desc, item id asc); defaults to
        the pending queue, `status=all` lists everything pending-first."""
        if status in (None, "", "all"):
            wanted = None
        elif status in ("pending", "auto", "resolved"):
            wanted = status
        else:
            raise ValidationError(f"unknown status filter {status!r}")
        if limit is not None and limit < 0 or offset < 0:
            raise ValidationError("limit and offset must be non-negative")
        with self._lock:
            items = [i for i in self._items.values() if wanted is None or i.status == wanted]
        items.sort(key=lambda i: (i.status != "pending", -i.uncertainty, i.item_id))
        end = None if limit is None else offset + limit
        return [replace(i) for i in items[offset:end]]

    def stats(self) -> dict:
        with self._lock:
            total = len(self._items)
            auto = sum(1 for i in self._items.values() if i.status == "auto")
            pending = sum(1 for i in self._items.values() if i.status == "pending")
            resolved = total - auto - pending
        return {
            "total": total,
            "auto_count": auto,
            "pending_count": pending,
            "resolved_count": resolved,
            "moderation_load": (pending + resolved) / total if total else 0.0,
            "threshold": encode_threshold(self.config.threshold),
        }

    def set_threshold(self, threshold: float) -> ServiceConfig:
        """Applies to subsequent items only; routed items keep their status."""
        threshold = decode_threshold(threshold)
        with self._lock:
            self.config = replace(self.config, threshold=threshold)
            self._append("config_set", self.config.to_dict())
            return self.config

    def export_decisions(self, path: str | Path) -> int:
        """JSONL of all decided items (auto or resolved) ordered by id;
        written atomically so failures leave no partial file."""
        with self._lock:
            decided = sorted(
                (i for i in self._items.values() if i.final_label is not None),
                key=lambda i: i.item_id,
            )
            rows = [json.dumps(i.to_dict()) for i in decided]
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(row + "\n")
            os.replace(tmp, path)
        except OSError:
            tmp.unlink(missing_ok=True)
            raise
        return len(rows)

    def snapshot(self) -> dict[int, ModerationItem]:
        """Copy of all items, for state-equality checks."""
        with self._lock:
            return {k: replace(v) for k, v in self._items.items()}


# -- HTTP layer ------------------------------------------------------

_DECISION_PATH = re.compile(r"^/api/queue/(\d+)/decision$")


def _make_handler(service: ModerationService, static_dir: str | Path | None):
    static_root = Path(static_dir).resolve() if static_dir else None

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # keep test output quiet
            pass

        def _send_json(self, code: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                raise ValidationError("request body required")
            try:
                body = json.loads(raw)
            except ValueError:
                raise ValidationError("request body is not valid JSON")
            if not isinstance(body, dict):
                raise ValidationError("request body must be a JSON object")
            return body

        def _dispatch(self) -> None:
            url = urlparse(self.path)
            if self.command == "POST" and url.path == "/api/classify":
                body = self._read_body()
                item = service.classify_and_route(body.get("text"))
                self._send_json(200, item.to_dict())
            elif self.command == "GET" and url.path == "/api/queue":
                q = parse_qs(url.query)
                limit = int(q["limit"][0]) if q.get("limit") else None
                offset = int(q["offset"][0]) if q.get("offset") else 0
                items = service.list_queue(q.get("status", ["pending"])[0], limit, offset)
                self._send_json(200, [i.to_dict() for i in items])
            elif self.command == "POST" and _DECISION_PATH.match(url.path):
                item_id = int(_DECISION_PATH.match(url.path).group(1))
                body = self._read_body()
                item = service.submit_decision(
                    item_id, body.get("label"), body.get("moderator_id")
                )
                self._send_json(200, item.to_dict())
            elif self.command == "GET" and url.path == "/api/stats":
                self._send_json(200, service.stats())
            elif self.command == "GET" and url.path == "/api/config":
                self._send_json(200, service.config.to_dict())
            elif self.command == "PUT" and url.path == "/api/config/threshold":
                body = self._read_body()
                if "threshold" not in body:
                    raise ValidationError("threshold required")
                try:
                    config = service.set_threshold(body["threshold"])
                except ValueError as exc:
                    raise ValidationError(str(exc))
                self._send_json(200, config.to_dict())
            elif self.command == "GET" and url.path == "/api/export":
                items = sorted(
                    (i for i in service.snapshot().values() if i.final_label is not None),
                    key=lambda i: i.item_id,
                )
                body = "".join(json.dumps(i.to_dict()) + "\n" for i in items).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            elif self.command == "GET" and not url.path.startswith("/api"):
                self._serve_static(url.path)
            else:
                self._send_json(404, {"error": f"no route for {self.command} {url.path}"})

        def _serve_static(self, path: str) -> None:
            if static_root is None:
                self._send_json(404, {"error": "no static directory configured"})
                return
            rel = path.lstrip("/") or "index.html"
            target = (static_root / rel).resolve()
            if static_root not in target.parents and target != static_root:
                self._send_json(404, {"error": "not found"})
                return
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            body = target.read_bytes()
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _handle(self) -> None:
            try:
                self._dispatch()
            except ValidationError as exc:
                self._send_json(400, {"error": str(exc)})
            except UnknownItemError as exc:
                self._send_json(404, {"error": f"unknown item {exc.args[0]}"})
            except AlreadyResolvedError as exc:
                self._send_json(409, {"error": str(exc)})
            except Exception as exc:  # noqa: BLE001 - last-resort API boundary
                self._send_json(500, {"error": f"{type(exc).__name__}: {exc}"})

        do_GET = do_POST = do_PUT = _handle

    return Handler


def serve_http(service: ModerationService, host: str = "127.0.0.1", port: int = 8000,
               static_dir: str | Path | None = None) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server; call serve_forever() on
    the result, or use it from tests via its bound socket."""
    return ThreadingHTTPServer((host, port), _make_handler(service, static_dir))
