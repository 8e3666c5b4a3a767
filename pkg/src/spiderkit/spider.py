"""Crawl and scrape jobs on top of robots, politeness and conditional fetch."""

from __future__ import annotations

import json
import logging
import os
import threading
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union
from urllib.parse import urljoin, urlsplit, urlunsplit

from . import conditional
from .conditional import Cache, Poll, SnapshotDir
from .html_extract import ExtractionRule, extract_after_marker, scan_links
from .http_core import ParseError, format_http_date
from .politeness import BudgetExhausted, PermanentFailure, PoliteClient
from .robots import RobotsCache
from .transport import NetworkError, Response, UnsupportedSchemeError, split_url

logger = logging.getLogger(__name__)

MAX_REDIRECTS = 5
PLACEHOLDER = "{id}"
_REDIRECTS = (301, 302, 303)


class RobotsDisallowed(PermissionError):
    pass


def normalize_url(url: str) -> str:
    """Canonical form used for the visited set.

    Lowercases scheme and host, drops ``:80`` and the fragment, turns an
    empty path into ``/``; path case and query are kept as they are.
    """
    parts = urlsplit(url.strip())
    scheme = parts.scheme.lower()
    if scheme != "http":
        raise UnsupportedSchemeError(f"unsupported scheme {parts.scheme!r} in {url!r}")
    host = (parts.hostname or "").lower()
    if not host:
        raise ValueError(f"URL has no host: {url!r}")
    port = parts.port
    netloc = host if port in (None, 80) else f"{host}:{port}"
    if parts.username:
        cred = parts.username + (f":{parts.password}" if parts.password else "")
        netloc = f"{cred}@{netloc}"
    return urlunsplit((scheme, netloc, parts.path or "/", parts.query, ""))


def host_key(url: str) -> str:
    """``host:port`` for robots lookups, port omitted when it is 80."""
    endpoint, _ = split_url(url)
    if endpoint.port == 80:
        return endpoint.host
    return f"{endpoint.host}:{endpoint.port}"


def request_path(url: str) -> str:
    return split_url(url)[1]


class Frontier:
    """FIFO of URLs still to fetch plus everything ever enqueued."""

    def __init__(self):
        self._pending: deque[str] = deque()
        self._seen: set[str] = set()
        self.visited: set[str] = set()
        self.depth: dict[str, int] = {}
        self.canonical: dict[str, str] = {}

    def add(self, url: str, depth: int = 0) -> bool:
        if url in self._seen:
            return False
        self._seen.add(url)
        self._pending.append(url)
        self.depth[url] = depth
        return True

    def mark_visited(self, url: str) -> None:
        """Record a URL fetched outside the queue (a redirect hop)."""
        self._seen.add(url)
        self.visited.add(url)

    def seen(self, url: str) -> bool:
        return url in self._seen

    def pop(self) -> str:
        url = self._pending.popleft()
        self.visited.add(url)
        return url

    @property
    def pending(self) -> list[str]:
        return list(self._pending)

    def __len__(self) -> int:
        return len(self._pending)

    def __bool__(self) -> bool:
        return bool(self._pending)


class Mode(str, Enum):
    CRAWL = "crawl"
    SEQUENCE = "sequence"
    WATCH = "watch"


class SinkFormat(str, Enum):
    JSONL = "jsonl"
    TSV = "tsv"


@dataclass
class ScrapeRecipe:
    mode: Mode
    seeds: list[str] = field(default_factory=list)
    url_template: Optional[str] = None
    id_start: int = 0
    id_end: int = 0
    extraction: Optional[ExtractionRule] = None
    link_scope: list[str] = field(default_factory=list)
    output: Optional[Path] = None
    output_format: SinkFormat = SinkFormat.JSONL
    max_depth: Optional[int] = None
    interval: float = 300.0
    max_polls: int = 1

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.output_format = SinkFormat(self.output_format)
        if self.output is not None:
            self.output = Path(self.output)

    def validate(self) -> None:
        if self.mode is Mode.CRAWL:
            if not self.seeds:
                raise ValueError("a crawl needs at least one seed URL")
            for seed in self.seeds:
                normalize_url(seed)
        elif self.mode is Mode.SEQUENCE:
            if not self.url_template or self.url_template.count(PLACEHOLDER) != 1:
                raise ValueError(f"url_template needs exactly one {PLACEHOLDER} placeholder")
            if self.id_start > self.id_end:
                raise ValueError("id_start must not exceed id_end")
        elif self.mode is Mode.WATCH:
            if len(self.seeds) != 1:
                raise ValueError("a watch needs exactly one URL")
            if self.interval <= 0:
                raise ValueError("interval must be positive")
            if self.output is None:
                raise ValueError("a watch needs an output directory")


@dataclass
class OutputRecord:
    url: str
    fetched_at: str
    status: Optional[int]
    extracted: Optional[str] = None
    body_path: Optional[str] = None
    key: Optional[str] = None
    error: Optional[str] = None

    @property
    def value(self) -> str:
        """What gets written for a scrape: the extracted text, or ``"0"``."""
        return self.extracted if self.extracted is not None else "0"

    def to_json(self) -> dict:
        data = {"url": self.url, "fetched_at": self.fetched_at, "status": self.status,
                "extracted": self.extracted, "value": self.value,
                "body_path": self.body_path}
        if self.key is not None:
            data["key"] = self.key
        if self.error is not None:
            data["error"] = self.error
        return data

    def to_tsv(self) -> str:
        key = self.key if self.key is not None else self.url
        status = "" if self.status is None else str(self.status)
        return f"{key}\t{status}\t{self.value}"


class Sink:
    """Append-only record file; each line is flushed and fsynced on write."""

    def __init__(self, path: Optional[Union[str, Path]], fmt: SinkFormat = SinkFormat.JSONL):
        self.path = Path(path) if path is not None else None
        self.format = SinkFormat(fmt)
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, record: OutputRecord) -> None:
        if self._fh is None:
            return
        if self.format is SinkFormat.JSONL:
            line = json.dumps(record.to_json(), sort_keys=True)
        else:
            line = record.to_tsv()
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _now() -> str:
    return format_http_date(datetime.now(timezone.utc))


@dataclass
class CrawlStats:
    fetched: int = 0
    disallowed: int = 0
    failed: int = 0
    skipped_links: int = 0
    halted: Optional[str] = None


class Spider:
    """Runs recipes with every request gated by robots.txt and politeness."""

    def __init__(self, client: PoliteClient, agent: Optional[str] = None,
                 obey_robots: bool = True, cache_dir: Optional[Union[str, Path]] = None,
                 workers: int = 1, robots_ttl: Optional[float] = None):
        self.client = client
        if agent is None:
            agent = client.identity.agent_name if client.identity else "*"
        self.agent = agent
        self.obey_robots = obey_robots
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.cache = Cache(self.cache_dir) if self.cache_dir is not None else None
        self.workers = max(1, workers)
        kwargs = {} if robots_ttl is None else {"ttl": robots_ttl}
        self.robots = RobotsCache(_ExemptFetcher(client), root=self.cache_dir,
                                  transient_errors=(NetworkError, PermanentFailure), **kwargs)
        self.stats = CrawlStats()
        self._stats_lock = threading.Lock()

    # -- gating ---------------------------------------------------------------------

    def allowed(self, url: str) -> bool:
        if not self.obey_robots:
            return True
        return self.robots.is_allowed(host_key(url), self.agent, request_path(url))

    def check_allowed(self, url: str) -> None:
        if not self.allowed(url):
            raise RobotsDisallowed(f"robots.txt disallows {url} for {self.agent}")

    def fetch(self, url: str, method: str = "GET", follow: bool = True,
              on_hop=None) -> tuple[str, Response]:
        """Fetch with robots checks on every hop; returns (final url, response).

        The final URL is the redirect target for 301 chains and the original
        URL once a 302/303 is involved.
        """
        self.check_allowed(url)
        current = url
        canonical = url
        permanent = True
        resp = self.client.request(method, current)
        for _ in range(MAX_REDIRECTS):
            if not follow or resp.status not in _REDIRECTS:
                break
            location = resp.header("Location")
            if not location:
                break
            try:
                target = normalize_url(urljoin(current, location))
            except (ValueError, UnsupportedSchemeError):
                logger.info("not following redirect from %s to %s", current, location)
                break
            if on_hop is not None and not on_hop(target):
                break
            self.check_allowed(target)
            permanent = permanent and resp.status == 301
            current = target
            if permanent:
                canonical = target
            if resp.status == 303:
                method = "GET"
            resp = self.client.request(method, current)
        return canonical, resp

    def _store(self, url: str, resp: Response) -> Optional[str]:
        if self.cache is None or not resp.body:
            return None
        meta = conditional.ResourceMeta.from_response(url, resp)
        return self.cache.store(url, resp.body, meta).body_ref

    def _count(self, **deltas) -> None:
        with self._stats_lock:
            for k, v in deltas.items():
                setattr(self.stats, k, getattr(self.stats, k) + v)

    # -- crawl ------------------------------------------------------------------------

    def _in_scope(self, url: str, scope: Sequence[str], seed_hosts: set[str]) -> bool:
        if not scope:
            return host_key(url) in seed_hosts
        path = request_path(url)
        for prefix in scope:
            if "://" in prefix:
                if url.startswith(prefix):
                    return True
            elif host_key(url) in seed_hosts and path.startswith(prefix):
                return True
        return False

    def _crawl_one(self, url: str, recipe: ScrapeRecipe, frontier: Frontier,
                   frontier_lock: threading.Lock, seed_hosts: set[str]):
        """Fetch one URL; returns (record or None, discovered links)."""
        try:
            self.check_allowed(url)
        except RobotsDisallowed:
            logger.info("robots.txt disallows %s", url)
            self._count(disallowed=1)
            return None, []

        def claim(target: str) -> bool:
            if not self._in_scope(target, recipe.link_scope, seed_hosts):
                return False
            with frontier_lock:
                if frontier.seen(target):
                    return False
                frontier.mark_visited(target)
            return True

        try:
            final, resp = self.fetch(url, on_hop=claim)
        except RobotsDisallowed as exc:
            self._count(disallowed=1)
            return OutputRecord(url, _now(), None, error=str(exc)), []
        except PermanentFailure as exc:
            self._count(failed=1)
            return OutputRecord(url, _now(), exc.status, error=str(exc)), []
        except (NetworkError, ParseError) as exc:
            self._count(failed=1)
            return OutputRecord(url, _now(), None, error=str(exc)), []
        self._count(fetched=1)
        if final != url:
            with frontier_lock:
                frontier.canonical[url] = final
        extracted = None
        if recipe.extraction is not None and resp.status < 300:
            extracted = extract_after_marker(resp.body, recipe.extraction)
        record = OutputRecord(final, _now(), resp.status, extracted, self._store(final, resp))
        links: list[str] = []
        ctype = (resp.header("Content-Type") or "text/html").lower()
        if 200 <= resp.status < 300 and "html" in ctype:
            scan = scan_links(resp.body, resp.url)
            skipped = scan.skipped
            for link in scan.links:
                try:
                    links.append(normalize_url(link))
                except (ValueError, UnsupportedSchemeError):
                    skipped += 1
            self._count(skipped_links=skipped)
        return record, links

    def crawl(self, recipe: ScrapeRecipe) -> list[OutputRecord]:
        """Breadth-first crawl from ``recipe.seeds`` within ``link_scope``."""
        recipe.validate()
        frontier = Frontier()
        lock = threading.Lock()
        seeds = [normalize_url(s) for s in recipe.seeds]
        seed_hosts = {host_key(s) for s in seeds}
        for s in seeds:
            frontier.add(s, 0)
        sink = Sink(recipe.output, recipe.output_format)
        records: list[OutputRecord] = []

        def accept(url: str, result) -> None:
            record, links = result
            if record is not None:
                records.append(record)
                sink.write(record)
            depth = frontier.depth.get(url, 0) + 1
            if recipe.max_depth is not None and depth > recipe.max_depth:
                return
            with lock:
                for link in links:
                    if self._in_scope(link, recipe.link_scope, seed_hosts):
                        frontier.add(link, depth)

        try:
            if self.workers == 1:
                while frontier:
                    url = frontier.pop()
                    accept(url, self._crawl_one(url, recipe, frontier, lock, seed_hosts))
            else:
                self._crawl_parallel(recipe, frontier, lock, seed_hosts, accept)
        except BudgetExhausted as exc:
            logger.info("stopping crawl: %s", exc)
            self.stats.halted = str(exc)
        finally:
            sink.close()
        return records

    def _crawl_parallel(self, recipe, frontier, lock, seed_hosts, accept) -> None:
        with ThreadPoolExecutor(self.workers) as pool:
            running = {}
            while True:
                with lock:
                    while frontier and len(running) < self.workers:
                        url = frontier.pop()
                        running[pool.submit(self._crawl_one, url, recipe, frontier,
                                            lock, seed_hosts)] = url
                if not running:
                    return
                done, _ = wait(list(running), return_when=FIRST_COMPLETED)
                for fut in done:
                    url = running.pop(fut)
                    try:
                        accept(url, fut.result())
                    except BudgetExhausted:
                        for other in running:
                            other.cancel()
                        raise

    # -- sequence -------------------------------------------------------------------------

    def run_sequence(self, recipe: ScrapeRecipe) -> list[OutputRecord]:
        """Visit ``url_template`` for every ID in ``[id_start, id_end]``."""
        recipe.validate()
        sink = Sink(recipe.output, recipe.output_format)
        records = []
        try:
            for ident in range(recipe.id_start, recipe.id_end + 1):
                url = recipe.url_template.replace(PLACEHOLDER, str(ident))
                record = self._sequence_one(url, str(ident), recipe)
                records.append(record)
                sink.write(record)
        except BudgetExhausted as exc:
            logger.info("stopping sequence: %s", exc)
            self.stats.halted = str(exc)
        finally:
            sink.close()
        return records

    def _sequence_one(self, url: str, key: str, recipe: ScrapeRecipe) -> OutputRecord:
        try:
            final, resp = self.fetch(url)
        except RobotsDisallowed as exc:
            self._count(disallowed=1)
            return OutputRecord(url, _now(), None, key=key, error=str(exc))
        except PermanentFailure as exc:
            self._count(failed=1)
            return OutputRecord(url, _now(), exc.status, key=key, error=str(exc))
        except (NetworkError, ParseError) as exc:
            self._count(failed=1)
            return OutputRecord(url, _now(), None, key=key, error=str(exc))
        self._count(fetched=1)
        extracted = None
        if recipe.extraction is not None and 200 <= resp.status < 300:
            extracted = extract_after_marker(resp.body, recipe.extraction)
        return OutputRecord(final, _now(), resp.status, extracted,
                            self._store(final, resp), key=key)

    # -- watch ----------------------------------------------------------------------------

    def run_watch(self, recipe: ScrapeRecipe) -> Path:
        """Archive every change of one URL into ``recipe.output``."""
        recipe.validate()
        url = normalize_url(recipe.seeds[0])
        self.check_allowed(url)
        interval = recipe.interval
        if interval < self.client.config.min_delay:
            logger.warning("watch interval %.3fs is below min_delay; using %.3fs",
                           interval, self.client.config.min_delay)
            interval = self.client.config.min_delay
        snapshots = SnapshotDir(recipe.output)
        self.last_polls: list[Poll] = conditional.watch(
            url, interval, recipe.max_polls, self.client, snapshots)
        return snapshots.path


class _ExemptFetcher:
    """robots.txt fetches skip the delay and page budget."""

    def __init__(self, client: PoliteClient):
        self.client = client

    def get(self, url: str) -> Response:
        return self.client.get(url, exempt=True)
