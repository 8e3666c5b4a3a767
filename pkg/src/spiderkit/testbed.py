"""Local scripted HTTP and FTP servers with request logs.

A :class:`FixtureScript` maps ``(method, target)`` to a list of responses
served by occurrence (the last one repeats) or to a handler function.
Unmatched requests are answered 404 and still logged. Servers bind to
127.0.0.1 on an OS-assigned port.

    script = FixtureScript().add("GET", "/a", ScriptedResponse(body=b"hi"))
    with HttpFixture(script) as server:
        HttpClient().get(server.url("/a"))
    assert server.log.paths() == ["/a"]
"""

from __future__ import annotations

import base64
import json
import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from .http_core import (
    Header,
    ParseError,
    RequestMessage,
    find_header,
    format_http_date,
    parse_request,
    split_head,
    status_reason,
    try_parse_http_date,
)

logger = logging.getLogger(__name__)

_READ_TIMEOUT = 10.0


@dataclass
class ScriptedResponse:
    status: int = 200
    headers: list[Header] = field(default_factory=list)
    body: bytes = b""
    reason: Optional[str] = None
    delay: float = 0.0
    truncate_after: Optional[int] = None
    raw: Optional[bytes] = None
    version: str = "HTTP/1.0"
    add_content_length: bool = True

    def wire(self, head_only: bool) -> bytes:
        """Bytes to send, before truncation."""
        if self.raw is not None:
            return self.raw
        reason = status_reason(self.status) if self.reason is None else self.reason
        headers = list(self.headers)
        if self.add_content_length and find_header(headers, "Content-Length") is None:
            headers.append(("Content-Length", str(len(self.body))))
        lines = [f"{self.version} {self.status} {reason}".rstrip()]
        lines += [f"{k}: {v}" for k, v in headers]
        head = ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")
        return head if head_only else head + self.body

    @classmethod
    def from_json(cls, data: dict) -> "ScriptedResponse":
        if "body_base64" in data:
            body = base64.b64decode(data["body_base64"])
        else:
            body = data.get("body", "").encode("utf-8")
        raw = data.get("raw")
        return cls(
            status=data.get("status", 200),
            headers=[tuple(h) for h in data.get("headers", [])],
            body=body,
            reason=data.get("reason"),
            delay=data.get("delay", 0.0),
            truncate_after=data.get("truncate_after"),
            raw=raw.encode("latin-1") if raw is not None else None,
            version=data.get("version", "HTTP/1.0"),
        )


Handler = Callable[[RequestMessage, int], ScriptedResponse]
NOT_FOUND = ScriptedResponse(404, [("Content-Type", "text/plain")], b"not found\n")


class FixtureScript:
    def __init__(self):
        self._routes: dict[tuple[str, str], Union[list[ScriptedResponse], Handler]] = {}
        self._counts: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def add(self, method: str, target: str, *responses: ScriptedResponse) -> "FixtureScript":
        """Serve ``responses`` in order to successive matching requests.

        ``method`` may be ``"*"`` to match any method.
        """
        if not responses:
            raise ValueError("at least one response is required")
        self._routes[(method.upper(), target)] = list(responses)
        return self

    def handle(self, method: str, target: str, handler: Handler) -> "FixtureScript":
        self._routes[(method.upper(), target)] = handler
        return self

    def resource(self, target: str, resource: "Resource") -> "FixtureScript":
        return self.handle("*", target, resource)

    def timeline(self, target: str, versions: Sequence["Resource"]) -> "FixtureScript":
        """One entry per poll: HEAD n sees ``versions[n]``; GET k serves the
        k-th distinct version. Suits clients that GET only after a change."""
        distinct: list[Resource] = []
        for v in versions:
            if not distinct or distinct[-1] is not v:
                distinct.append(v)
        self.add("HEAD", target, *(v.response(head_only=True) for v in versions))
        self.add("GET", target, *(v.response() for v in distinct))
        return self

    def match(self, req: RequestMessage) -> Optional[ScriptedResponse]:
        for key in ((req.method.value, req.target), ("*", req.target)):
            route = self._routes.get(key)
            if route is None:
                continue
            count_key = (req.method.value, req.target)
            with self._lock:
                occurrence = self._counts.get(count_key, 0)
                self._counts[count_key] = occurrence + 1
            if callable(route):
                return route(req, occurrence)
            return route[min(occurrence, len(route) - 1)]
        return None

    @classmethod
    def from_json(cls, data: dict) -> "FixtureScript":
        script = cls()
        for route in data.get("routes", []):
            responses = [ScriptedResponse.from_json(r) for r in route["responses"]]
            script.add(route.get("method", "GET"), route["path"], *responses)
        return script

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FixtureScript":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class Resource:
    """A static document that answers HEAD, GET, conditional GET and Range."""

    body: bytes
    content_type: str = "application/octet-stream"
    etag: Optional[str] = None
    last_modified: Optional[str] = None
    accept_ranges: bool = True
    honor_ranges: bool = True
    extra_headers: list[Header] = field(default_factory=list)

    def headers(self) -> list[Header]:
        h = [("Content-Type", self.content_type)]
        if self.last_modified:
            h.append(("Last-Modified", self.last_modified))
        if self.etag:
            h.append(("ETag", self.etag))
        if self.accept_ranges:
            h.append(("Accept-Ranges", "bytes"))
        return h + list(self.extra_headers)

    def response(self, head_only: bool = False) -> ScriptedResponse:
        headers = self.headers() + [("Content-Length", str(len(self.body)))]
        return ScriptedResponse(200, headers, b"" if head_only else self.body)

    def _not_modified(self, req: RequestMessage) -> bool:
        inm = req.header("If-None-Match")
        if inm is not None:
            return self.etag is not None and inm.strip() == self.etag
        ims = try_parse_http_date(req.header("If-Modified-Since"))
        mine = try_parse_http_date(self.last_modified)
        return ims is not None and mine is not None and mine <= ims

    def __call__(self, req: RequestMessage, occurrence: int) -> ScriptedResponse:
        if req.method.value == "HEAD":
            return self.response(head_only=True)
        if self._not_modified(req):
            keep = [(k, v) for k, v in self.headers() if k in ("Last-Modified", "ETag", "Content-Type")]
            return ScriptedResponse(304, keep, b"", add_content_length=False)
        rng = req.header("Range")
        if rng is not None and self.honor_ranges:
            span = rng.strip()
            if span.lower().startswith("bytes="):
                span = span[6:]
            first_s, _, last_s = span.partition("-")
            total = len(self.body)
            try:
                first = int(first_s)
                last = min(int(last_s), total - 1) if last_s else total - 1
            except ValueError:
                return ScriptedResponse(400, body=b"bad range\n")
            if first > last or first >= total:
                return ScriptedResponse(416, [("Content-Range", f"bytes */{total}")])
            part = self.body[first:last + 1]
            headers = self.headers() + [("Content-Range", f"bytes {first}-{last}/{total}")]
            return ScriptedResponse(206, headers, part)
        return self.response()


def agent_gate(inner: Handler, blocked: Iterable[str] = ("MyRobot",)) -> Handler:
    """Refuse requests with no User-Agent or a blocked one with a 403 page."""
    blocked = {b.lower() for b in blocked}
    page = (b"<html>\n<head><title>403 Forbidden</title></head>\n<body>\n"
            b"<h1>Access Denied</h1>\n"
            b"<p>Sadly, your client does not supply a proper User-Agent,\n"
            b"and is consequently excluded.</p>\n</body>\n</html>\n")

    def gate(req: RequestMessage, occurrence: int) -> ScriptedResponse:
        agent = req.header("User-Agent")
        if agent is None or agent.strip().lower() in blocked:
            return ScriptedResponse(403, [("Content-Type", "text/html")], page)
        return inner(req, occurrence)

    return gate


# -- request log -------------------------------------------------------------------

@dataclass(frozen=True)
class LogEntry:
    timestamp: float
    method: str
    path: str
    headers: tuple[Header, ...]
    body: bytes
    bytes_received: int = 0
    bytes_sent: int = 0
    body_sent: int = 0

    def header(self, name: str) -> Optional[str]:
        return find_header(self.headers, name)


class RequestLog:
    def __init__(self):
        self._entries: list[LogEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: LogEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def _finish(self, index: int, sent: int, body_sent: int) -> None:
        with self._lock:
            e = self._entries[index]
            self._entries[index] = LogEntry(e.timestamp, e.method, e.path, e.headers,
                                            e.body, e.bytes_received, sent, body_sent)

    @property
    def entries(self) -> list[LogEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def paths(self, method: Optional[str] = None) -> list[str]:
        return [e.path for e in self.entries if method is None or e.method == method]

    def body_bytes(self, method: Optional[str] = None) -> int:
        """Response body bytes sent, summed over matching entries."""
        return sum(e.body_sent for e in self.entries if method is None or e.method == method)

    def count(self, method: Optional[str] = None, path: Optional[str] = None) -> int:
        return sum(1 for e in self.entries
                   if (method is None or e.method == method)
                   and (path is None or e.path == path))


# -- HTTP server -------------------------------------------------------------------------

class _TCPServer(socketserver.TCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _ThreadingTCPServer(socketserver.ThreadingMixIn, _TCPServer):
    pass


class HttpFixture:
    """Serve a :class:`FixtureScript` on loopback until stopped.

    One connection is handled at a time unless ``concurrent`` is set.
    """

    def __init__(self, script: Optional[FixtureScript] = None, concurrent: bool = False,
                 port: int = 0):
        self.script = script or FixtureScript()
        self.log = RequestLog()
        self._stop = threading.Event()
        fixture = self

        class _Handler(socketserver.BaseRequestHandler):
            def handle(self):
                fixture._serve_connection(self.request)

        server_cls = _ThreadingTCPServer if concurrent else _TCPServer
        try:
            self._server = server_cls(("127.0.0.1", port), _Handler)
        except OSError as exc:
            raise RuntimeError(f"fixture could not bind 127.0.0.1:{port}: {exc}") from exc
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def host(self) -> str:
        """``host:port`` as used in URLs."""
        return "%s:%d" % self.address

    def url(self, target: str = "/") -> str:
        return f"http://{self.host}{target}"

    def start(self) -> "HttpFixture":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> RequestLog:
        self._stop.set()
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        return self.log

    def __enter__(self) -> "HttpFixture":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _read_request(self, conn: socket.socket) -> Optional[bytes]:
        buf = b""
        while split_head(buf) is None:
            chunk = conn.recv(65536)
            if not chunk:
                return buf or None
            buf += chunk
        _, body_start = split_head(buf)
        length = find_header(parse_request(buf[:body_start]).headers, "Content-Length")
        if length is not None and length.strip().isdigit():
            want = body_start + int(length)
            while len(buf) < want:
                chunk = conn.recv(65536)
                if not chunk:
                    break
                buf += chunk
        return buf

    def _serve_connection(self, conn: socket.socket) -> None:
        conn.settimeout(_READ_TIMEOUT)
        try:
            raw = self._read_request(conn)
        except (OSError, ParseError):
            return
        if raw is None:
            return
        arrived = time.time()
        try:
            req = parse_request(raw)
        except ParseError as exc:
            logger.debug("fixture got unparsable request: %s", exc)
            conn.sendall(b"HTTP/1.0 400 Bad Request\r\nContent-Length: 0\r\n\r\n")
            return
        index = len(self.log)
        self.log.append(LogEntry(arrived, req.method.value, req.target, req.headers,
                                 req.body, len(raw)))
        scripted = self.script.match(req) or NOT_FOUND
        if scripted.delay > 0 and self._stop.wait(scripted.delay):
            return
        data = scripted.wire(head_only=req.method.value == "HEAD")
        if scripted.truncate_after is not None:
            if scripted.raw is not None:
                data = data[:scripted.truncate_after]
            else:
                head_len = len(data) - len(scripted.body)
                data = data[:head_len + scripted.truncate_after]
        try:
            conn.sendall(data)
        except OSError:
            return
        bounds = split_head(data)
        self.log._finish(index, len(data), len(data) - bounds[1] if bounds else 0)


# -- FTP server ------------------------------------------------------------------------------

@dataclass(frozen=True)
class FtpLogEntry:
    timestamp: float
    command: str
    argument: str


class FtpFixture:
    """Just enough FTP for USER/PASS/TYPE/PASV/RETR/QUIT.

    ``files`` maps remote names to content served verbatim in either mode.
    ``break_data_after`` closes the data connection after that many bytes
    and answers 426. ``replies`` overrides the reply line for a command verb.
    """

    def __init__(self, files: Optional[dict[str, bytes]] = None,
                 users: Optional[dict[str, str]] = None, anonymous: bool = True,
                 break_data_after: Optional[int] = None,
                 replies: Optional[dict[str, str]] = None):
        self.files = dict(files or {})
        self.users = dict(users or {})
        self.anonymous = anonymous
        self.break_data_after = break_data_after
        self.replies = dict(replies or {})
        self.log: list[FtpLogEntry] = []
        self._log_lock = threading.Lock()
        fixture = self

        class _Handler(socketserver.StreamRequestHandler):
            def handle(self):
                fixture._session(self.rfile, self.wfile)

        self._server = _ThreadingTCPServer(("127.0.0.1", 0), _Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def commands(self) -> list[str]:
        """Logged commands with arguments, passwords masked."""
        with self._log_lock:
            return [e.command if not e.argument or e.command == "PASS"
                    else f"{e.command} {e.argument}" for e in self.log]

    def verbs(self) -> list[str]:
        with self._log_lock:
            return [e.command for e in self.log]

    def start(self) -> "FtpFixture":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> list[FtpLogEntry]:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        return self.log

    def __enter__(self) -> "FtpFixture":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _session(self, rfile, wfile) -> None:
        def reply(line: str) -> None:
            wfile.write(line.encode("latin-1") + b"\r\n")
            wfile.flush()

        user = None
        logged_in = False
        pasv: Optional[socket.socket] = None
        reply("220-spiderkit FTP fixture")
        reply("220 ready")
        try:
            while True:
                line = rfile.readline()
                if not line:
                    break
                text = line.decode("latin-1").rstrip("\r\n")
                verb, _, arg = text.partition(" ")
                verb = verb.upper()
                with self._log_lock:
                    self.log.append(FtpLogEntry(time.time(), verb, arg))
                if verb in self.replies:
                    reply(self.replies[verb])
                    continue
                if verb == "USER":
                    user, logged_in = arg, False
                    reply("331 password required")
                elif verb == "PASS":
                    ok = ((self.anonymous and user == "anonymous")
                          or (user in self.users and self.users[user] == arg))
                    logged_in = ok
                    reply("230 logged in" if ok else "530 login incorrect")
                elif verb == "QUIT":
                    reply("221 bye")
                    break
                elif not logged_in:
                    reply("530 not logged in")
                elif verb == "TYPE":
                    if arg.upper() in ("A", "I", "A N"):
                        reply(f"200 type set to {arg.upper()}")
                    else:
                        reply("504 type not supported")
                elif verb == "PASV":
                    if pasv is not None:
                        pasv.close()
                    pasv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                    pasv.bind(("127.0.0.1", 0))
                    pasv.listen(1)
                    pasv.settimeout(_READ_TIMEOUT)
                    port = pasv.getsockname()[1]
                    reply(f"227 Entering Passive Mode (127,0,0,1,{port >> 8},{port & 0xFF})")
                elif verb == "RETR":
                    if pasv is None:
                        reply("425 use PASV first")
                        continue
                    listener, pasv = pasv, None
                    if arg not in self.files:
                        listener.close()
                        reply("550 file not found")
                        continue
                    reply(f"150 opening data connection for {arg}")
                    try:
                        data_conn, _ = listener.accept()
                    except OSError:
                        listener.close()
                        reply("425 cannot open data connection")
                        continue
                    listener.close()
                    content = self.files[arg]
                    broken = self.break_data_after is not None
                    if broken:
                        content = content[:self.break_data_after]
                    try:
                        data_conn.sendall(content)
                    finally:
                        data_conn.close()
                    reply("426 connection closed; transfer aborted" if broken
                          else "226 transfer complete")
                else:
                    reply("502 command not implemented")
        finally:
            if pasv is not None:
                pasv.close()


# -- log assertions ----------------------------------------------------------------------------

IndexedEntries = Sequence[tuple[int, LogEntry]]
Predicate = Callable[[IndexedEntries], Optional[tuple[int, str]]]


@dataclass(frozen=True)
class LogCheck:
    passed: bool
    entry: Optional[int] = None     # 1-based position of the first counterexample
    message: str = ""

    def __bool__(self) -> bool:
        return self.passed


def assert_log(log: Union[RequestLog, Sequence[LogEntry]],
               predicates: Iterable[Predicate]) -> LogCheck:
    entries = log.entries if isinstance(log, RequestLog) else list(log)
    indexed = list(enumerate(entries))
    for pred in predicates:
        failure = pred(indexed)
        if failure is not None:
            index, message = failure
            return LogCheck(False, index + 1, message)
    return LogCheck(True)


def min_gap(seconds: float) -> Predicate:
    def check(entries: IndexedEntries):
        for (_, prev), (i, cur) in zip(entries, entries[1:]):
            gap = cur.timestamp - prev.timestamp
            if gap < seconds:
                return i, f"gap {gap:.3f}s before {cur.method} {cur.path} is under {seconds}s"
        return None
    return check


def header_present(*names: str) -> Predicate:
    def check(entries: IndexedEntries):
        for i, e in entries:
            for name in names:
                if e.header(name) is None:
                    return i, f"{e.method} {e.path} lacks {name}"
        return None
    return check


def quiet_between(start: float, end: float) -> Predicate:
    def check(entries: IndexedEntries):
        for i, e in entries:
            if start < e.timestamp < end:
                return i, f"{e.method} {e.path} arrived during the quiet window"
        return None
    return check


def no_path_prefix(*prefixes: str) -> Predicate:
    def check(entries: IndexedEntries):
        for i, e in entries:
            for p in prefixes:
                if p and e.path.startswith(p):
                    return i, f"{e.method} {e.path} is under forbidden prefix {p}"
        return None
    return check


def no_duplicates(method: Optional[str] = None) -> Predicate:
    def check(entries: IndexedEntries):
        seen = set()
        for i, e in entries:
            if method is not None and e.method != method:
                continue
            key = (e.method, e.path)
            if key in seen:
                return i, f"{e.method} {e.path} requested twice"
            seen.add(key)
        return None
    return check


def where(condition: Callable[[LogEntry], bool], *predicates: Predicate) -> Predicate:
    """Run ``predicates`` on the entries satisfying ``condition`` only."""
    def check(entries: IndexedEntries):
        subset = [(i, e) for i, e in entries if condition(e)]
        for pred in predicates:
            failure = pred(subset)
            if failure is not None:
                return failure
        return None
    return check


def not_robots(entry: LogEntry) -> bool:
    return entry.path != "/robots.txt"


def http_date(ts: float) -> str:
    return format_http_date(ts)
