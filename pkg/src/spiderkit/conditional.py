"""Fetching no more than necessary.

HEAD probes, validator caching (ETag / Last-Modified), conditional GETs,
ranged GETs and a change-driven watch loop. Functions take a ``client``,
anything with ``request(method, url, headers)`` returning a
:class:`~spiderkit.transport.Response`: a bare ``HttpClient`` or a
``PoliteClient``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import mimetypes
import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Union

from .http_core import ParseError, format_http_date, try_parse_http_date
from .politeness import PermanentFailure
from .transport import NetworkError, Response

logger = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """The server answered in a way the request cannot have produced."""


# -- metadata ------------------------------------------------------------------

@dataclass(frozen=True)
class ResourceMeta:
    url: str
    status: int
    etag: Optional[str] = None
    last_modified: Optional[datetime] = None
    content_length: Optional[int] = None
    content_type: Optional[str] = None
    accept_ranges: bool = False
    date: Optional[datetime] = None

    @classmethod
    def from_response(cls, url: str, resp: Response) -> "ResourceMeta":
        msg = resp.message
        accept = msg.header("Accept-Ranges")
        return cls(
            url=url,
            status=msg.status,
            etag=msg.header("ETag"),
            last_modified=try_parse_http_date(msg.header("Last-Modified")),
            content_length=msg.content_length,
            content_type=msg.header("Content-Type"),
            accept_ranges=accept is not None and accept.strip().lower() == "bytes",
            date=try_parse_http_date(msg.header("Date")),
        )

    @property
    def validator(self):
        """What identifies this copy: the ETag if any, else Last-Modified."""
        return self.etag if self.etag is not None else self.last_modified


def head(url: str, client) -> ResourceMeta:
    """HEAD ``url``; non-2xx statuses are reported in ``meta.status``."""
    return ResourceMeta.from_response(url, client.request("HEAD", url))


# -- cache ---------------------------------------------------------------------

@dataclass(frozen=True)
class CacheEntry:
    url: str
    body_ref: str
    stored_at: datetime
    etag: Optional[str] = None
    last_modified: Optional[datetime] = None
    content_type: Optional[str] = None
    content_length: Optional[int] = None

    @property
    def revalidatable(self) -> bool:
        return self.etag is not None or self.last_modified is not None

    def to_json(self) -> dict:
        return {
            "url": self.url,
            "etag": self.etag,
            "last_modified": format_http_date(self.last_modified) if self.last_modified else None,
            "content_type": self.content_type,
            "stored_at": format_http_date(self.stored_at),
            "body_path": self.body_ref,
            "content_length": self.content_length,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CacheEntry":
        return cls(
            url=data["url"],
            body_ref=data["body_path"],
            stored_at=try_parse_http_date(data.get("stored_at")) or datetime.now(timezone.utc),
            etag=data.get("etag"),
            last_modified=try_parse_http_date(data.get("last_modified")),
            content_type=data.get("content_type"),
            content_length=data.get("content_length"),
        )


class Cache:
    """Validators per URL plus content-addressed bodies.

    Layout under ``root``: ``index.jsonl`` (one JSON object per URL) and
    ``bodies/<sha256>``. Identical bodies share one file.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.bodies = self.root / "bodies"
        self.index_path = self.root / "index.jsonl"
        self.bodies.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._entries: dict[str, CacheEntry] = {}
        if self.index_path.exists():
            for line in self.index_path.read_text().splitlines():
                if line.strip():
                    entry = CacheEntry.from_json(json.loads(line))
                    self._entries[entry.url] = entry

    def get(self, url: str) -> Optional[CacheEntry]:
        with self._lock:
            return self._entries.get(url)

    def __len__(self) -> int:
        return len(self._entries)

    def store_body(self, body: bytes) -> str:
        digest = hashlib.sha256(body).hexdigest()
        path = self.bodies / digest
        if not path.exists():
            tmp = path.with_suffix(f".tmp{threading.get_ident()}")
            tmp.write_bytes(body)
            os.replace(tmp, path)
        return f"bodies/{digest}"

    def read(self, entry: CacheEntry) -> bytes:
        return (self.root / entry.body_ref).read_bytes()

    def store(self, url: str, body: bytes, meta: ResourceMeta) -> CacheEntry:
        ref = self.store_body(body)
        entry = CacheEntry(
            url=url, body_ref=ref,
            stored_at=datetime.now(timezone.utc).replace(microsecond=0),
            etag=meta.etag, last_modified=meta.last_modified,
            content_type=meta.content_type, content_length=len(body),
        )
        with self._lock:
            self._entries[url] = entry
            self._write_index()
        return entry

    def _write_index(self) -> None:
        tmp = self.index_path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            for entry in self._entries.values():
                fh.write(json.dumps(entry.to_json()) + "\n")
        os.replace(tmp, self.index_path)


# -- conditional GET -------------------------------------------------------------

@dataclass(frozen=True)
class Fresh:
    body: bytes
    meta: ResourceMeta
    entry: Optional[CacheEntry] = None


@dataclass(frozen=True)
class NotModified:
    entry: CacheEntry


@dataclass(frozen=True)
class Failed:
    status: int
    meta: ResourceMeta


FetchOutcome = Union[Fresh, NotModified, Failed]


def validator_headers(prior: Optional[CacheEntry]) -> list[tuple[str, str]]:
    """If-None-Match when an ETag is known, else If-Modified-Since, else none."""
    if prior is None:
        return []
    if prior.etag is not None:
        return [("If-None-Match", prior.etag)]
    if prior.last_modified is not None:
        return [("If-Modified-Since", format_http_date(prior.last_modified))]
    return []


def conditional_get(url: str, client, prior: Optional[CacheEntry] = None,
                    cache: Optional[Cache] = None) -> FetchOutcome:
    resp = client.request("GET", url, validator_headers(prior))
    meta = ResourceMeta.from_response(url, resp)
    if resp.status == 304:
        if prior is None:
            raise ProtocolError(f"{url} answered 304 to an unconditional GET")
        return NotModified(prior)
    if 200 <= resp.status < 300:
        entry = cache.store(url, resp.body, meta) if cache is not None else None
        return Fresh(resp.body, meta, entry)
    return Failed(resp.status, meta)


# -- ranges --------------------------------------------------------------------------

_CONTENT_RANGE_RE = re.compile(r"\s*(?:bytes\s+)?(\d+)-(\d+)/(\d+|\*)\s*", re.I)


def parse_content_range(value: str) -> tuple[int, int, Optional[int]]:
    """``[bytes ]first-last/total`` -> (first, last, total or None for ``*``)."""
    m = _CONTENT_RANGE_RE.fullmatch(value)
    if m is None:
        raise ValueError(f"malformed Content-Range: {value!r}")
    first, last = int(m.group(1)), int(m.group(2))
    if last < first:
        raise ValueError(f"Content-Range ends before it starts: {value!r}")
    total = None if m.group(3) == "*" else int(m.group(3))
    return first, last, total


@dataclass(frozen=True)
class RangeResult:
    body: bytes
    total: Optional[int]
    range_supported: bool = True


def ranged_get(url: str, first_byte: int, last_byte: int, client) -> RangeResult:
    """Fetch bytes ``first_byte..last_byte`` inclusive.

    Sends ``Range: bytes=first-last``. A 206, or a 200 carrying
    Content-Range, is a partial answer; a plain 200 means the server ignored
    the range, so the full body is sliced here and the result is flagged.
    """
    if not 0 <= first_byte <= last_byte:
        raise ValueError(f"bad byte range {first_byte}-{last_byte}")
    resp = client.request("GET", url, [("Range", f"bytes={first_byte}-{last_byte}")])
    content_range = resp.header("Content-Range")
    if resp.status == 206 or (resp.status == 200 and content_range is not None):
        if content_range is None:
            raise ProtocolError(f"{url} sent 206 without Content-Range")
        first, last, total = parse_content_range(content_range)
        if first != first_byte or len(resp.body) != last - first + 1:
            raise ProtocolError(
                f"{url} sent range {first}-{last} with {len(resp.body)} bytes "
                f"for a request of {first_byte}-{last_byte}")
        return RangeResult(resp.body, total, True)
    if resp.status == 200:
        logger.info("%s ignored the Range header; slicing locally", url)
        return RangeResult(resp.body[first_byte:last_byte + 1], len(resp.body), False)
    raise ProtocolError(f"{url} answered {resp.status} to a range request")


# -- watch -----------------------------------------------------------------------------

def extension_for(content_type: Optional[str]) -> str:
    if content_type:
        ext = mimetypes.guess_extension(content_type.split(";")[0].strip().lower())
        if ext:
            return ext.lstrip(".")
    return "bin"


class SnapshotDir:
    """Writes ``<epoch-seconds>.<ext>`` files; same-second clashes get ``-N``."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def add(self, body: bytes, content_type: Optional[str], when: float) -> Path:
        stem = str(int(when))
        ext = extension_for(content_type)
        target = self.path / f"{stem}.{ext}"
        n = 1
        while target.exists():
            target = self.path / f"{stem}-{n}.{ext}"
            n += 1
        target.write_bytes(body)
        return target


@dataclass
class Poll:
    index: int
    at: float
    status: Optional[int]
    downloaded: bool
    validator: object = None
    body: Optional[bytes] = None
    path: Optional[Path] = None
    error: Optional[str] = None


def watch(url: str, interval: float, max_polls: int, client,
          sink: Union[SnapshotDir, str, Path, None] = None,
          clock: Callable[[], float] = time.time,
          sleep: Callable[[float], None] = time.sleep) -> list[Poll]:
    """Poll ``url`` with HEAD; GET it only when its validator changed.

    The validator is the ETag when the server sends one, else Last-Modified,
    compared for equality only. A resource without either is downloaded on
    every poll. Failures are logged and recorded, never raised.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    if sink is not None and not isinstance(sink, SnapshotDir):
        sink = SnapshotDir(sink)
    polls: list[Poll] = []
    last_validator = None
    have_snapshot = False
    for i in range(max_polls):
        if i:
            sleep(interval)
        at = clock()
        try:
            meta = head(url, client)
            if not 200 <= meta.status < 300:
                polls.append(Poll(i, at, meta.status, False))
                continue
            current = meta.validator
            if have_snapshot and current is not None and current == last_validator:
                polls.append(Poll(i, at, meta.status, False, current))
                continue
            resp = client.request("GET", url)
            if not 200 <= resp.status < 300:
                polls.append(Poll(i, at, resp.status, False, current))
                continue
            got = ResourceMeta.from_response(url, resp)
            last_validator = got.validator if got.validator is not None else current
            have_snapshot = True
            path = sink.add(resp.body, got.content_type or meta.content_type, clock()) if sink else None
            polls.append(Poll(i, at, resp.status, True, last_validator, resp.body, path))
        except (NetworkError, PermanentFailure, ProtocolError, ParseError) as exc:
            logger.warning("poll %d of %s failed: %s", i, url, exc)
            polls.append(Poll(i, at, None, False, error=str(exc)))
    return polls
