"""robots.txt parsing and evaluation.

Records are formed from one or more ``User-agent`` lines followed by
``Allow``/``Disallow`` lines. A blank line closes the current record;
comment-only lines are ignored; unknown fields (``Crawl-delay``,
``Sitemap``...) are skipped. Rules are evaluated first-match in file order,
and a rule with an empty path never matches.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

from .http_core import format_http_date, try_parse_http_date
from .transport import NetworkError

logger = logging.getLogger(__name__)

DEFAULT_TTL = 24 * 3600.0
_LINE_SPLIT = re.compile(r"\r\n|\r|\n")


class RuleKind(str, Enum):
    ALLOW = "Allow"
    DISALLOW = "Disallow"


@dataclass(frozen=True)
class Rule:
    kind: RuleKind
    path_prefix: str

    def matches(self, path: str) -> bool:
        return bool(self.path_prefix) and path.startswith(self.path_prefix)


@dataclass(frozen=True)
class AgentRecord:
    agent_pattern: str
    rules: tuple[Rule, ...] = ()


@dataclass(frozen=True)
class RobotsPolicy:
    records: tuple[AgentRecord, ...] = ()
    fetched_at: Optional[datetime] = None
    origin: str = ""

    def record(self, agent_pattern: str) -> Optional[AgentRecord]:
        key = agent_pattern.lower()
        for rec in self.records:
            if rec.agent_pattern.lower() == key:
                return rec
        return None

    def is_allowed(self, agent: str, path: str) -> bool:
        return is_allowed(self, agent, path)

    def to_json(self) -> dict:
        return {
            "origin": self.origin,
            "fetched_at": format_http_date(self.fetched_at) if self.fetched_at else None,
            "records": [
                {"agent": r.agent_pattern,
                 "rules": [[rule.kind.value, rule.path_prefix] for rule in r.rules]}
                for r in self.records
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "RobotsPolicy":
        records = tuple(
            AgentRecord(r["agent"], tuple(Rule(RuleKind(k), p) for k, p in r["rules"]))
            for r in data.get("records", [])
        )
        return cls(records, try_parse_http_date(data.get("fetched_at")), data.get("origin", ""))


def _to_text(text: Union[str, bytes]) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8", errors="replace")
    return text


def parse_robots(text: Union[str, bytes], origin: str = "",
                 fetched_at: Optional[datetime] = None) -> RobotsPolicy:
    merged: dict[str, list] = {}   # lowercased agent -> [pattern, rules]
    agents: list[str] = []          # agents of the open record
    seen_rule = False               # open record already has rules
    open_record = False

    for raw_line in _LINE_SPLIT.split(_to_text(text)):
        stripped = raw_line.strip()
        if not stripped:
            open_record, agents, seen_rule = False, [], False
            continue
        if stripped.startswith("#"):
            continue
        line = stripped.split("#", 1)[0]
        name, sep, value = line.partition(":")
        if not sep:
            continue
        name = name.strip().lower()
        value = value.strip()
        if name == "user-agent":
            if not value:
                continue
            if not open_record or seen_rule:
                agents, seen_rule = [], False
            open_record = True
            agents.append(value)
            merged.setdefault(value.lower(), [value, []])
        elif name in ("allow", "disallow"):
            if not open_record:
                continue
            seen_rule = True
            kind = RuleKind.ALLOW if name == "allow" else RuleKind.DISALLOW
            for agent in agents:
                merged[agent.lower()][1].append(Rule(kind, value))

    records = tuple(AgentRecord(pattern, tuple(rules)) for pattern, rules in merged.values())
    return RobotsPolicy(records, fetched_at, origin)


def select_record(policy: RobotsPolicy, agent: str) -> Optional[AgentRecord]:
    """First record naming a substring of ``agent``, else the ``*`` record."""
    if not agent:
        raise ValueError("agent must be non-empty")
    lowered = agent.lower()
    star = None
    for rec in policy.records:
        pattern = rec.agent_pattern.lower()
        if pattern == "*":
            if star is None:
                star = rec
        elif pattern in lowered:
            return rec
    return star


def is_allowed(policy: RobotsPolicy, agent: str, path: str) -> bool:
    rec = select_record(policy, agent)
    if rec is None:
        return True
    for rule in rec.rules:
        if rule.matches(path):
            return rule.kind is RuleKind.ALLOW
    return True


def fetch_policy(host: str, fetcher) -> RobotsPolicy:
    """GET ``/robots.txt`` from ``host`` (``name`` or ``name:port``).

    ``fetcher`` needs a ``get(url)`` method returning an object with
    ``status`` and ``body``. Any non-2xx answer yields the allow-all policy;
    network errors propagate.
    """
    url = f"http://{host}/robots.txt"
    resp = fetcher.get(url)
    now = datetime.now(timezone.utc).replace(microsecond=0)
    if 200 <= resp.status < 300:
        return parse_robots(resp.body, origin=host, fetched_at=now)
    logger.info("robots.txt for %s answered %d; allowing all", host, resp.status)
    return RobotsPolicy((), now, host)


class RobotsCache:
    """Per-host policy cache with a TTL and optional JSON persistence.

    Lookups are concurrent; fetching for any one host is serialized.
    """

    def __init__(self, fetcher, ttl: float = DEFAULT_TTL, root: Optional[Path] = None,
                 retries: int = 2, clock: Callable[[], float] = time.time,
                 transient_errors: tuple = (NetworkError,)):
        self.fetcher = fetcher
        self.transient_errors = transient_errors
        self.ttl = ttl
        self.root = Path(root) if root is not None else None
        self.retries = retries
        self.clock = clock
        self._entries: dict[str, tuple[float, RobotsPolicy]] = {}
        self._lock = threading.Lock()
        self._host_locks: dict[str, threading.Lock] = {}

    def _host_lock(self, host: str) -> threading.Lock:
        with self._lock:
            return self._host_locks.setdefault(host, threading.Lock())

    def _path(self, host: str) -> Optional[Path]:
        if self.root is None:
            return None
        return self.root / "robots" / f"{host.replace(':', '_')}.json"

    def _fresh(self, host: str) -> Optional[RobotsPolicy]:
        entry = self._entries.get(host)
        if entry and self.clock() - entry[0] < self.ttl:
            return entry[1]
        path = self._path(host)
        if path is not None and path.exists():
            try:
                data = json.loads(path.read_text())
                stored = float(data["stored"])
                if self.clock() - stored < self.ttl:
                    policy = RobotsPolicy.from_json(data["policy"])
                    self._entries[host] = (stored, policy)
                    return policy
            except (ValueError, KeyError, TypeError):
                logger.warning("ignoring unreadable robots cache file %s", path)
        return None

    def policy_for(self, host: str) -> RobotsPolicy:
        policy = self._fresh(host)
        if policy is not None:
            return policy
        with self._host_lock(host):
            policy = self._fresh(host)
            if policy is not None:
                return policy
            policy = self._fetch(host)
            stored = self.clock()
            self._entries[host] = (stored, policy)
            path = self._path(host)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps({"stored": stored, "policy": policy.to_json()}))
            return policy

    def _fetch(self, host: str) -> RobotsPolicy:
        last_exc: Optional[Exception] = None
        for _ in range(self.retries + 1):
            try:
                return fetch_policy(host, self.fetcher)
            except self.transient_errors as exc:
                last_exc = exc
        logger.warning("robots.txt for %s unreachable (%s); allowing all", host, last_exc)
        return RobotsPolicy((), None, host)

    def is_allowed(self, host: str, agent: str, path: str) -> bool:
        return is_allowed(self.policy_for(host), agent, path)
