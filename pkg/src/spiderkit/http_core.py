"""HTTP/1.0 message values and wire codecs.

Everything here is pure: messages are frozen dataclasses, and the codec
functions turn them into bytes and back without touching the network.
The grammar is the plain request/response layout::

    GET /intl/en_ALL/images/logo.gif HTTP/1.0\r\n
    Name: value\r\n
    \r\n
    <body>

CRLF is emitted; CRLF and bare LF are both accepted when parsing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Optional

CRLF = b"\r\n"

Header = tuple[str, str]


class CodecError(ValueError):
    """A message violates one of its structural rules."""


class ParseError(CodecError):
    """Raw bytes could not be parsed; ``offset`` points at the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class Method(str, Enum):
    GET = "GET"
    HEAD = "HEAD"
    POST = "POST"
    TRACE = "TRACE"


class Version(str, Enum):
    HTTP_0_9 = "HTTP/0.9"
    HTTP_1_0 = "HTTP/1.0"
    HTTP_1_1 = "HTTP/1.1"


class StatusClass(str, Enum):
    INFORMATIONAL = "Informational"
    SUCCESSFUL = "Successful"
    REDIRECTION = "Redirection"
    CLIENT_ERROR = "Client Error"
    SERVER_ERROR = "Server Error"


class HeaderCategory(str, Enum):
    GENERAL = "General"
    REQUEST = "Request"
    RESPONSE = "Response"
    ENTITY = "Entity"
    UNKNOWN = "Unknown"


_CLASS_BY_DIGIT = {
    1: StatusClass.INFORMATIONAL,
    2: StatusClass.SUCCESSFUL,
    3: StatusClass.REDIRECTION,
    4: StatusClass.CLIENT_ERROR,
    5: StatusClass.SERVER_ERROR,
}

REASON_PHRASES: dict[int, str] = {
    100: "Continue",
    101: "Switching Protocols",
    200: "OK",
    201: "Created",
    202: "Accepted",
    203: "Non-Authoritative Information",
    204: "No Content",
    205: "Reset Content",
    206: "Partial Content",
    300: "Multiple Choices",
    301: "Moved Permanently",
    302: "Moved Temporarily",
    303: "See Other",
    304: "Not Modified",
    305: "Use Proxy",
    400: "Bad Request",
    401: "Unauthorized",
    402: "Payment Required",
    403: "Forbidden",
    404: "Not Found",
    405: "Method Not Allowed",
    406: "Not Acceptable",
    407: "Proxy Authentication Required",
    408: "Request Time-out",
    409: "Conflict",
    410: "Gone",
    411: "Length Required",
    412: "Precondition Failed",
    413: "Request Entity Too Large",
    414: "Request Too Long",
    415: "Unsupported Media Type",
    500: "Internal Server Error",
    501: "Not Implemented",
    502: "Bad Gateway",
    503: "Service Unavailable",
    504: "Gateway Time-out",
    505: "HTTP Version Not Supported",
}

_GENERAL_HEADERS = (
    "Cache-Control", "Connection", "Date", "MIME-Version", "Pragma",
    "Transfer-Encoding", "Upgrade", "Via",
)
_REQUEST_HEADERS = (
    "Accept", "Accept-Charset", "Accept-Encoding", "Accept-Language",
    "Authorization", "Cookie", "From", "Host", "If-Modified-Since",
    "If-Match", "If-None-Match", "If-Range", "If-Unmodified-Since",
    "Max-Forwards", "Proxy-Authorization", "Range", "Referer", "User-Agent",
)
_RESPONSE_HEADERS = (
    "Accept-Ranges", "Age", "Proxy-Authenticate", "Public", "Retry-After",
    "Server", "Set-Cookie", "Vary", "Warning", "WWW-Authenticate",
)
_ENTITY_HEADERS = (
    "Allow", "Content-Base", "Content-Encoding", "Content-Language",
    "Content-Length", "Content-Location", "Content-MD5", "Content-Range",
    "Content-Transfer-Encoding", "Content-Type", "Etag", "Expires",
    "Last-Modified", "Location", "URI",
)

HEADER_REGISTRY: dict[str, HeaderCategory] = {}
for _names, _cat in (
    (_GENERAL_HEADERS, HeaderCategory.GENERAL),
    (_REQUEST_HEADERS, HeaderCategory.REQUEST),
    (_RESPONSE_HEADERS, HeaderCategory.RESPONSE),
    (_ENTITY_HEADERS, HeaderCategory.ENTITY),
):
    for _name in _names:
        HEADER_REGISTRY[_name.lower()] = _cat
del _names, _cat, _name


def classify_status(code: int) -> StatusClass:
    """Map a status code to its class by leading digit."""
    if not isinstance(code, int) or not 100 <= code <= 599:
        raise ValueError(f"status code out of range: {code!r}")
    return _CLASS_BY_DIGIT[code // 100]


def status_reason(code: int) -> str:
    """Canonical reason phrase; unlisted codes fall back to the class name."""
    try:
        return REASON_PHRASES[code]
    except KeyError:
        return classify_status(code).value


def header_category(name: str) -> HeaderCategory:
    return HEADER_REGISTRY.get(name.strip().lower(), HeaderCategory.UNKNOWN)


# -- dates -----------------------------------------------------------------

_WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
_MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
           "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_DATE_RE = re.compile(
    r"(Mon|Tue|Wed|Thu|Fri|Sat|Sun), (\d{2}) "
    r"(Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec) "
    r"(\d{4}) (\d{2}):(\d{2}):(\d{2}) GMT"
)


def parse_http_date(text: str) -> datetime:
    """Parse ``Wdy, DD Mon YYYY HH:MM:SS GMT`` into an aware UTC datetime.

    The weekday name must be one of the seven abbreviations but is not
    cross-checked against the date.
    """
    m = _DATE_RE.fullmatch(text.strip())
    if m is None:
        raise ParseError(f"malformed HTTP date {text!r}")
    _, day, mon, year, hh, mm, ss = m.groups()
    try:
        return datetime(int(year), _MONTHS.index(mon) + 1, int(day),
                        int(hh), int(mm), int(ss), tzinfo=timezone.utc)
    except ValueError as exc:
        raise ParseError(f"invalid HTTP date {text!r}: {exc}") from None


def format_http_date(when: datetime | float | int) -> str:
    if not isinstance(when, datetime):
        when = datetime.fromtimestamp(int(when), tz=timezone.utc)
    elif when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    when = when.astimezone(timezone.utc)
    return (f"{_WEEKDAYS[when.weekday()]}, {when.day:02d} {_MONTHS[when.month - 1]} "
            f"{when.year:04d} {when.hour:02d}:{when.minute:02d}:{when.second:02d} GMT")


def try_parse_http_date(text: Optional[str]) -> Optional[datetime]:
    """Like :func:`parse_http_date` but returns None for missing or bad values."""
    if text is None:
        return None
    try:
        return parse_http_date(text)
    except ParseError:
        return None


# -- messages --------------------------------------------------------------

def find_header(headers: Iterable[Header], name: str) -> Optional[str]:
    """Case-insensitive lookup; the first occurrence wins."""
    key = name.lower()
    for k, v in headers:
        if k.lower() == key:
            return v
    return None


class _HeaderAccess:
    headers: tuple[Header, ...]

    def header(self, name: str, default: Optional[str] = None) -> Optional[str]:
        value = find_header(self.headers, name)
        return default if value is None else value

    def header_all(self, name: str) -> list[str]:
        key = name.lower()
        return [v for k, v in self.headers if k.lower() == key]

    @property
    def content_length(self) -> Optional[int]:
        value = self.header("Content-Length")
        if value is None or not value.strip().isdigit():
            return None
        return int(value.strip())


def _coerce_headers(headers: Iterable[Header]) -> tuple[Header, ...]:
    return tuple((str(k), str(v)) for k, v in headers)


@dataclass(frozen=True)
class RequestMessage(_HeaderAccess):
    method: Method
    target: str
    version: Version = Version.HTTP_1_0
    headers: tuple[Header, ...] = ()
    body: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "version", Version(self.version))
        object.__setattr__(self, "headers", _coerce_headers(self.headers))
        object.__setattr__(self, "body", bytes(self.body))

    def validate(self) -> None:
        if not self.target.startswith("/"):
            raise CodecError(f"target must begin with '/': {self.target!r}")
        if any(c.isspace() for c in self.target):
            raise CodecError(f"target must not contain whitespace: {self.target!r}")
        _validate_headers(self.headers)
        if self.method is Method.POST and self.body:
            declared = self.header("Content-Length")
            if declared is None:
                raise CodecError("POST with a body requires a Content-Length header")
            if declared.strip() != str(len(self.body)):
                raise CodecError(
                    f"Content-Length {declared!r} does not match body length {len(self.body)}")


@dataclass(frozen=True)
class ResponseMessage(_HeaderAccess):
    version: Version
    status: int
    reason: str = ""
    headers: tuple[Header, ...] = ()
    body: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "version", Version(self.version))
        object.__setattr__(self, "headers", _coerce_headers(self.headers))
        if not 100 <= self.status <= 599:
            raise CodecError(f"status must have three digits in 100-599: {self.status}")

    @property
    def status_class(self) -> StatusClass:
        return classify_status(self.status)

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300


_CTL_RE = re.compile(r"[\x00-\x1f\x7f]")


def _validate_headers(headers: Iterable[Header]) -> None:
    for name, value in headers:
        if not name:
            raise CodecError("header name must be non-empty")
        if _CTL_RE.search(name) or ":" in name or " " in name:
            raise CodecError(f"header name contains illegal characters: {name!r}")
        if "\r" in value or "\n" in value:
            raise CodecError(f"header value for {name!r} contains a line break")


def serialize_request(req: RequestMessage) -> bytes:
    req.validate()
    lines = [f"{req.method.value} {req.target} {req.version.value}"]
    lines.extend(f"{name}: {value}" for name, value in req.headers)
    head = "\r\n".join(lines) + "\r\n\r\n"
    return head.encode("latin-1") + req.body


def serialize_response(resp: ResponseMessage) -> bytes:
    _validate_headers(resp.headers)
    status_line = f"{resp.version.value} {resp.status}"
    if resp.reason:
        status_line += f" {resp.reason}"
    lines = [status_line]
    lines.extend(f"{name}: {value}" for name, value in resp.headers)
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + resp.body


def split_head(raw: bytes) -> Optional[tuple[int, int]]:
    """Locate the blank line ending the header block.

    Returns ``(head_end, body_start)`` or None if the block is incomplete.
    ``head_end`` is the offset just past the last header line terminator.
    """
    pos = 0
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            return None
        line = raw[pos:nl]
        if line in (b"", b"\r") and pos > 0:
            return pos, nl + 1
        pos = nl + 1


def _iter_lines(block: bytes, base: int):
    pos = 0
    while pos < len(block):
        nl = block.find(b"\n", pos)
        end = len(block) if nl < 0 else nl
        line = block[pos:end]
        if line.endswith(b"\r"):
            line = line[:-1]
        yield base + pos, line
        pos = end + 1


def _parse_header_lines(block: bytes, base: int) -> tuple[Header, ...]:
    headers = []
    for offset, line in _iter_lines(block, base):
        if not line:
            continue
        if line[:1] in (b" ", b"\t"):
            raise ParseError("folded header continuation lines are not supported", offset)
        colon = line.find(b":")
        if colon <= 0:
            raise ParseError("header line without a name and colon", offset)
        name = line[:colon].decode("latin-1")
        if _CTL_RE.search(name) or " " in name:
            raise ParseError(f"illegal header name {name!r}", offset)
        value = line[colon + 1:].decode("latin-1").strip(" \t")
        headers.append((name, value))
    return tuple(headers)


_VERSIONS = {v.value.encode(): v for v in Version}
_NO_BODY_STATUS = (204, 304)


def response_has_body(status: int, request_method: Optional[str]) -> bool:
    if request_method is not None and request_method.upper() == "HEAD":
        return False
    return not (100 <= status < 200 or status in _NO_BODY_STATUS)


def parse_response(raw: bytes, request_method: Optional[str] = None) -> ResponseMessage:
    """Parse a response.

    When ``request_method`` is given the read is treated as complete, and a
    body that disagrees with a parseable Content-Length is an error.
    """
    raw = bytes(raw)
    nl = raw.find(b"\n")
    status_line = raw if nl < 0 else raw[:nl]
    if status_line.endswith(b"\r"):
        status_line = status_line[:-1]
    parts = status_line.split(b" ", 2)
    if len(parts) < 2:
        raise ParseError("malformed status line", 0)
    version = _VERSIONS.get(parts[0])
    if version is None:
        raise ParseError(f"unknown protocol version {parts[0]!r}", 0)
    code = parts[1]
    if len(code) != 3 or not code.isdigit():
        raise ParseError(f"non-numeric status code {code!r}", len(parts[0]) + 1)
    status = int(code)
    if not 100 <= status <= 599:
        raise ParseError(f"status code out of range {status}", len(parts[0]) + 1)
    reason = parts[2].decode("latin-1").strip() if len(parts) == 3 else ""

    if nl < 0:
        return ResponseMessage(version, status, reason)
    bounds = split_head(raw)
    if bounds is None:
        # no blank line: everything after the status line is headers
        headers = _parse_header_lines(raw[nl + 1:], nl + 1)
        body = b""
    else:
        head_end, body_start = bounds
        headers = _parse_header_lines(raw[nl + 1:head_end], nl + 1)
        body = raw[body_start:]
    resp = ResponseMessage(version, status, reason, headers, body)
    if request_method is not None and response_has_body(status, request_method):
        declared = resp.content_length
        if declared is not None and declared != len(body):
            raise ParseError(
                f"body has {len(body)} bytes but Content-Length is {declared}",
                len(raw))
    return resp


def parse_request(raw: bytes) -> RequestMessage:
    """Parse a request; used by the fixture server and round-trip tests."""
    raw = bytes(raw)
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError("request line is not terminated", len(raw))
    line = raw[:nl].rstrip(b"\r")
    parts = line.split(b" ")
    if len(parts) != 3:
        raise ParseError("malformed request line", 0)
    method, target, version = (p.decode("latin-1") for p in parts)
    try:
        method_v = Method(method)
    except ValueError:
        raise ParseError(f"unsupported method {method!r}", 0) from None
    try:
        version_v = Version(version)
    except ValueError:
        raise ParseError(f"unknown protocol version {version!r}", len(method) + len(target) + 2) from None
    bounds = split_head(raw)
    if bounds is None:
        raise ParseError("header block is not terminated", len(raw))
    head_end, body_start = bounds
    headers = _parse_header_lines(raw[nl + 1:head_end], nl + 1)
    return RequestMessage(method_v, target, version_v, headers, raw[body_start:])
