"""Crawler manners as enforceable policy.

Every request is identified (User-Agent + From), spaced at least
``min_delay`` from the previous request to the same host, held back while a
``Retry-After`` embargo is active, retried a bounded number of times with a
fixed wait, and counted against optional page/byte budgets.

The decision functions (:func:`acquire`, :func:`record_request`,
:func:`on_response`) are pure over :class:`HostState` values;
:class:`PoliteClient` owns the mutable per-host table and the sleeping.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

from .http_core import Header, find_header, try_parse_http_date
from .transport import HttpClient, NetworkError, Response, split_url

logger = logging.getLogger(__name__)

_BROWSER_TOKENS = ("mozilla", "explorer", "firefox", "netscape", "opera",
                   "safari", "chrome", "aol")


class BudgetExhausted(RuntimeError):
    """The job's page or byte budget is spent; the job must stop."""


class PermanentFailure(RuntimeError):
    """A URL kept failing past ``max_retries``; give up on it."""

    def __init__(self, url: str, attempts: int, status: Optional[int] = None,
                 error: Optional[BaseException] = None):
        detail = f"status {status}" if status is not None else f"{error}"
        super().__init__(f"giving up on {url} after {attempts} attempts ({detail})")
        self.url = url
        self.attempts = attempts
        self.status = status
        self.error = error


@dataclass(frozen=True)
class ClientIdentity:
    agent_name: str
    contact_email: str

    def __post_init__(self):
        if not self.agent_name:
            raise ValueError("agent_name must be non-empty")
        if not self.contact_email or "@" not in self.contact_email:
            raise ValueError(f"contact_email must be an e-mail address: {self.contact_email!r}")

    @property
    def masquerades(self) -> bool:
        lowered = self.agent_name.lower()
        return any(tok in lowered for tok in _BROWSER_TOKENS)


def identity_headers(identity: ClientIdentity, identify: bool = True) -> list[Header]:
    if not identify:
        return []
    if identity.masquerades:
        logger.warning("User-Agent %r impersonates a browser; you are responsible "
                       "for honoring the site's wishes", identity.agent_name)
    return [("User-Agent", identity.agent_name), ("From", identity.contact_email)]


@dataclass(frozen=True)
class PolitenessConfig:
    min_delay: float = 1.0
    retry_wait: float = 2.0
    max_retries: int = 5
    max_pages: Optional[int] = None
    max_bytes: Optional[int] = None
    identify: bool = True

    def __post_init__(self):
        if self.min_delay <= 0 or self.retry_wait <= 0:
            raise ValueError("min_delay and retry_wait must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class HostState:
    host: str
    last_request_at: Optional[float] = None
    consecutive_failures: int = 0
    embargo_until: Optional[float] = None
    bytes_downloaded: int = 0
    requests_made: int = 0
    total_wait: float = 0.0


@dataclass(frozen=True)
class Spent:
    pages: int = 0
    bytes: int = 0


def acquire(state: HostState, config: PolitenessConfig, now: float,
            spent: Optional[Spent] = None) -> float:
    """Seconds to wait before the next request to ``state.host``.

    ``spent`` is the job-wide usage checked against the budgets; without it
    the host's own counters are used.
    """
    pages = spent.pages if spent else state.requests_made
    used_bytes = spent.bytes if spent else state.bytes_downloaded
    if config.max_pages is not None and pages >= config.max_pages:
        raise BudgetExhausted(f"page budget of {config.max_pages} reached")
    if config.max_bytes is not None and used_bytes >= config.max_bytes:
        raise BudgetExhausted(f"byte budget of {config.max_bytes} reached")
    wait = 0.0
    if state.last_request_at is not None:
        wait = max(wait, state.last_request_at + config.min_delay - now)
    if state.embargo_until is not None:
        wait = max(wait, state.embargo_until - now)
    return max(wait, 0.0)


def record_request(state: HostState, now: float, counted: bool = True,
                   waited: float = 0.0) -> HostState:
    return replace(state, last_request_at=now,
                   requests_made=state.requests_made + (1 if counted else 0),
                   total_wait=state.total_wait + waited)


def parse_retry_after(value: Optional[str], now: float) -> Optional[float]:
    """Absolute time named by a Retry-After value (seconds or HTTP-date)."""
    if value is None:
        return None
    value = value.strip()
    if value.isdigit():
        return now + int(value)
    when = try_parse_http_date(value)
    return when.timestamp() if when else None


def on_response(state: HostState, status: Optional[int], headers: Iterable[Header],
                now: float, config: PolitenessConfig, body_bytes: int = 0) -> HostState:
    """Fold one outcome into the host state.

    ``status`` None means the request failed at the network level. Raises
    :class:`PermanentFailure` once failures exceed ``max_retries``; the
    returned state is still recorded by callers via the exception path.
    """
    state = replace(state, bytes_downloaded=state.bytes_downloaded + body_bytes)
    if status is not None and status < 500:
        return replace(state, consecutive_failures=0)

    failures = state.consecutive_failures + 1
    resume = now + config.retry_wait
    if status == 503:
        retry_at = parse_retry_after(find_header(list(headers), "Retry-After"), now)
        if retry_at is not None and retry_at > now:
            resume = retry_at
    embargo = resume if state.embargo_until is None else max(state.embargo_until, resume)
    return replace(state, consecutive_failures=failures, embargo_until=embargo)


def should_abandon(state: HostState, config: PolitenessConfig) -> bool:
    return state.consecutive_failures > config.max_retries


class PoliteClient:
    """HTTP client that waits, identifies itself, retries and keeps score.

    Safe to share between threads; at most one request per host is in
    flight at any time.
    """

    def __init__(self, config: Optional[PolitenessConfig] = None,
                 identity: Optional[ClientIdentity] = None,
                 client: Optional[HttpClient] = None,
                 clock: Callable[[], float] = time.time,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config or PolitenessConfig()
        self.identity = identity
        self.client = client or HttpClient()
        self.clock = clock
        self.sleep = sleep
        self._states: dict[str, HostState] = {}
        self._spent = Spent()
        self._lock = threading.Lock()
        self._host_locks: dict[str, threading.Lock] = {}
        if self.config.identify and identity is None:
            raise ValueError("identification is enabled but no identity was given")
        self._identity_headers = (identity_headers(identity, self.config.identify)
                                  if identity is not None else [])

    # -- state table ---------------------------------------------------------

    def state(self, host: str) -> HostState:
        with self._lock:
            return self._states.get(host) or HostState(host)

    def states(self) -> list[HostState]:
        with self._lock:
            return list(self._states.values())

    @property
    def spent(self) -> Spent:
        with self._lock:
            return self._spent

    def _host_lock(self, host: str) -> threading.Lock:
        with self._lock:
            return self._host_locks.setdefault(host, threading.Lock())

    def _update(self, host: str, fn) -> HostState:
        with self._lock:
            new = fn(self._states.get(host) or HostState(host))
            self._states[host] = new
            return new

    # -- requests ------------------------------------------------------------

    def request(self, method: str, url: str, headers: Iterable[Header] = (),
                body: bytes = b"", exempt: bool = False) -> Response:
        """Fetch with politeness; returns the first non-5xx response.

        ``exempt`` requests (robots.txt) skip the delay and page budget but
        still count towards bytes and still space out later requests.
        """
        endpoint, _ = split_url(url)
        host = f"{endpoint.host}:{endpoint.port}"
        all_headers = self._identity_headers + list(headers)
        attempts = 0
        with self._host_lock(host):
            while True:
                waited = 0.0
                if not exempt:
                    with self._lock:
                        state = self._states.get(host) or HostState(host)
                        wait = acquire(state, self.config, self.clock(), self._spent)
                    if wait > 0:
                        logger.debug("waiting %.3fs before %s", wait, url)
                        self.sleep(wait)
                        waited = wait
                now = self.clock()
                self._update(host, lambda s: record_request(s, now, not exempt, waited))
                if not exempt:
                    with self._lock:
                        self._spent = replace(self._spent, pages=self._spent.pages + 1)
                attempts += 1
                try:
                    resp = self.client.request(method, url, all_headers, body)
                except NetworkError as exc:
                    logger.warning("%s %s failed: %s", method, url, exc)
                    resp, error = None, exc
                else:
                    error = None
                status = resp.status if resp else None
                received = resp.exchange.bytes_received if resp else 0
                new = self._update(host, lambda s: on_response(
                    s, status, resp.headers if resp else (), self.clock(),
                    self.config, received))
                with self._lock:
                    self._spent = replace(self._spent, bytes=self._spent.bytes + received)
                if resp is not None and status < 500:
                    return resp
                if should_abandon(new, self.config):
                    self._update(host, lambda s: replace(s, consecutive_failures=0))
                    raise PermanentFailure(url, attempts, status, error)
                logger.info("%s %s answered %s; retry %d of %d", method, url,
                            status if status is not None else "no response",
                            attempts, self.config.max_retries)

    def get(self, url: str, headers: Iterable[Header] = (), exempt: bool = False) -> Response:
        return self.request("GET", url, headers, exempt=exempt)

    def head(self, url: str, headers: Iterable[Header] = ()) -> Response:
        return self.request("HEAD", url, headers)

    def report(self) -> str:
        """Plain-text per-host totals, one line per host."""
        lines = []
        for st in sorted(self.states(), key=lambda s: s.host):
            lines.append(f"{st.host}\trequests={st.requests_made}\t"
                         f"bytes={st.bytes_downloaded}\twaited={st.total_wait:.3f}s")
        spent = self.spent
        lines.append(f"total\trequests={spent.pages}\tbytes={spent.bytes}")
        return "\n".join(lines)
