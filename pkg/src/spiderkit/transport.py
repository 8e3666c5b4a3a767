"""One request, one response, one TCP connection."""

from __future__ import annotations

import ipaddress
import logging
import socket
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional
from urllib.parse import urlsplit

from .http_core import (
    Header,
    Method,
    RequestMessage,
    ResponseMessage,
    Version,
    parse_response,
    response_has_body,
    serialize_request,
    split_head,
)

logger = logging.getLogger(__name__)

DEFAULT_PORT = 80
DEFAULT_TIMEOUT = 30.0
_RECV_SIZE = 65536


class NetworkError(OSError):
    """Base class for failures talking to a server."""


class UnknownHostError(NetworkError):
    pass


class ResolveTimeoutError(NetworkError):
    pass


class ConnectRefusedError(NetworkError):
    pass


class ExchangeTimeoutError(NetworkError):
    pass


class PrematureCloseError(NetworkError):
    """The peer closed before a complete status line arrived."""

    def __init__(self, message: str, partial: bytes = b""):
        super().__init__(message)
        self.partial = partial


class TruncatedResponseError(NetworkError):
    """The peer closed before delivering the promised Content-Length."""

    def __init__(self, message: str, raw: bytes, partial: bytes, expected: int):
        super().__init__(message)
        self.raw = raw
        self.partial = partial
        self.expected = expected


class UnsupportedSchemeError(ValueError):
    pass


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int = DEFAULT_PORT

    def __post_init__(self):
        if not self.host:
            raise ValueError("host must be non-empty")
        if not 1 <= int(self.port) <= 65535:
            raise ValueError(f"port out of range: {self.port}")


@dataclass(frozen=True)
class ExchangeResult:
    raw: bytes
    elapsed: float
    bytes_sent: int
    bytes_received: int


def resolve(host: str) -> str:
    """Return one IPv4 address for ``host``; literals pass through."""
    if not host:
        raise ValueError("host must be non-empty")
    try:
        return str(ipaddress.ip_address(host))
    except ValueError:
        pass
    try:
        infos = socket.getaddrinfo(host, None, socket.AF_INET, socket.SOCK_STREAM)
    except socket.gaierror as exc:
        if exc.errno == socket.EAI_AGAIN:
            raise ResolveTimeoutError(f"timed out resolving {host!r}") from exc
        raise UnknownHostError(f"unknown host {host!r}") from exc
    if not infos:
        raise UnknownHostError(f"unknown host {host!r}")
    return infos[0][4][0]


def _is_head(request_bytes: bytes) -> bool:
    return request_bytes[:5] == b"HEAD "


def _expected_length(raw: bytes, head: bool) -> Optional[int]:
    """Total bytes the response should occupy, or None to read until close.

    Only called once the header block is complete.
    """
    bounds = split_head(raw)
    assert bounds is not None
    _, body_start = bounds
    resp = parse_response(raw[:body_start])
    if not response_has_body(resp.status, "HEAD" if head else None):
        return body_start
    declared = resp.content_length
    if declared is None:
        return None
    return body_start + declared


def exchange(endpoint: Endpoint, request_bytes: bytes,
             timeout: float = DEFAULT_TIMEOUT, head: Optional[bool] = None) -> ExchangeResult:
    """Send ``request_bytes`` on a fresh connection and read one response.

    The read stops after Content-Length body bytes, or at peer close when the
    length is unknown. HEAD responses (detected from the request line unless
    ``head`` is given) stop at the end of the header block.
    """
    if not request_bytes:
        raise ValueError("request_bytes must be non-empty")
    if head is None:
        head = _is_head(request_bytes)
    started = time.monotonic()
    deadline = started + timeout
    address = resolve(endpoint.host)

    def remaining() -> float:
        left = deadline - time.monotonic()
        if left <= 0:
            raise ExchangeTimeoutError(
                f"no complete response from {endpoint.host}:{endpoint.port} within {timeout}s")
        return left

    try:
        sock = socket.create_connection((address, endpoint.port), timeout=remaining())
    except ConnectionRefusedError as exc:
        raise ConnectRefusedError(f"connection refused by {endpoint.host}:{endpoint.port}") from exc
    except socket.timeout as exc:
        raise ExchangeTimeoutError(f"timed out connecting to {endpoint.host}:{endpoint.port}") from exc
    except OSError as exc:
        raise NetworkError(f"cannot connect to {endpoint.host}:{endpoint.port}: {exc}") from exc

    buf = bytearray()
    try:
        sock.settimeout(remaining())
        try:
            sock.sendall(request_bytes)
        except socket.timeout as exc:
            raise ExchangeTimeoutError("timed out sending request") from exc
        except OSError as exc:
            raise NetworkError(f"send failed: {exc}") from exc

        expected: Optional[int] = None
        header_done = False
        closed = False
        while True:
            if header_done and expected is not None and len(buf) >= expected:
                del buf[expected:]
                break
            sock.settimeout(remaining())
            try:
                chunk = sock.recv(_RECV_SIZE)
            except socket.timeout as exc:
                raise ExchangeTimeoutError(
                    f"timed out reading from {endpoint.host}:{endpoint.port}") from exc
            except ConnectionResetError:
                chunk = b""
            if not chunk:
                closed = True
                break
            buf += chunk
            if not header_done and split_head(bytes(buf)) is not None:
                header_done = True
                expected = _expected_length(bytes(buf), head)
    finally:
        sock.close()

    raw = bytes(buf)
    elapsed = time.monotonic() - started
    if closed:
        if b"\n" not in raw:
            raise PrematureCloseError("connection closed before the status line arrived", raw)
        if header_done and expected is not None and len(raw) < expected:
            _, body_start = split_head(raw)
            partial = raw[body_start:]
            raise TruncatedResponseError(
                f"connection closed after {len(partial)} of "
                f"{expected - body_start} promised body bytes",
                raw, partial, expected - body_start)
    return ExchangeResult(raw, elapsed, len(request_bytes), len(raw))


# -- URL-level client --------------------------------------------------------

def split_url(url: str) -> tuple[Endpoint, str]:
    """Split an ``http://`` URL into its endpoint and request target."""
    parts = urlsplit(url)
    if parts.scheme.lower() != "http":
        raise UnsupportedSchemeError(f"only http:// URLs are supported: {url!r}")
    if not parts.hostname:
        raise ValueError(f"URL has no host: {url!r}")
    target = parts.path or "/"
    if parts.query:
        target += "?" + parts.query
    return Endpoint(parts.hostname, parts.port or DEFAULT_PORT), target


def host_header(endpoint: Endpoint) -> str:
    if endpoint.port == DEFAULT_PORT:
        return endpoint.host
    return f"{endpoint.host}:{endpoint.port}"


@dataclass
class ClientConfig:
    timeout: float = DEFAULT_TIMEOUT
    version: Version = Version.HTTP_1_0
    headers: list[Header] = field(default_factory=list)


@dataclass
class Response:
    """A parsed response together with where and how it was fetched."""

    url: str
    method: str
    message: ResponseMessage
    exchange: ExchangeResult

    @property
    def status(self) -> int:
        return self.message.status

    @property
    def body(self) -> bytes:
        return self.message.body

    def header(self, name: str, default: Optional[str] = None) -> Optional[str]:
        return self.message.header(name, default)

    @property
    def headers(self):
        return self.message.headers


class HttpClient:
    """Plain HTTP client: no politeness, no retries."""

    def __init__(self, config: Optional[ClientConfig] = None):
        self.config = config or ClientConfig()

    def build(self, method: str, url: str, headers: Iterable[Header] = (),
              body: bytes = b"") -> tuple[Endpoint, RequestMessage]:
        endpoint, target = split_url(url)
        all_headers = list(self.config.headers) + list(headers)
        version = Version(self.config.version)
        if version is Version.HTTP_1_1 and not any(k.lower() == "host" for k, _ in all_headers):
            all_headers.insert(0, ("Host", host_header(endpoint)))
        if body and not any(k.lower() == "content-length" for k, _ in all_headers):
            all_headers.append(("Content-Length", str(len(body))))
        return endpoint, RequestMessage(Method(method), target, version, tuple(all_headers), body)

    def request(self, method: str, url: str, headers: Iterable[Header] = (),
                body: bytes = b"") -> Response:
        endpoint, req = self.build(method, url, headers, body)
        result = exchange(endpoint, serialize_request(req), self.config.timeout,
                          head=req.method is Method.HEAD)
        message = parse_response(result.raw, request_method=req.method.value)
        logger.debug("%s %s -> %d (%d bytes)", method, url, message.status, result.bytes_received)
        return Response(url, req.method.value, message, result)

    def get(self, url: str, headers: Iterable[Header] = ()) -> Response:
        return self.request("GET", url, headers)

    def head(self, url: str, headers: Iterable[Header] = ()) -> Response:
        return self.request("HEAD", url, headers)
