"""``spiderkit`` command line.

Exit codes: 0 success (or "allowed"), 1 disallowed or job failure, 2 usage
error. Settings come from flags, then a ``key=value`` config file
(``--config``), then defaults. ``SPIDERKIT_CACHE_DIR`` sets the cache
directory when no flag or config value does.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import ftp
from .conditional import ProtocolError
from .html_extract import ExtractionRule, Filter
from .http_core import ParseError
from .politeness import (
    BudgetExhausted,
    ClientIdentity,
    PermanentFailure,
    PoliteClient,
    PolitenessConfig,
)
from .robots import is_allowed, parse_robots
from .spider import (
    Mode,
    RobotsDisallowed,
    ScrapeRecipe,
    SinkFormat,
    Spider,
    host_key,
    normalize_url,
)
from .transport import ClientConfig, HttpClient, NetworkError, UnsupportedSchemeError

logger = logging.getLogger("spiderkit")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
CACHE_ENV = "SPIDERKIT_CACHE_DIR"

_CONFIG_KEYS = {
    "user_agent": str, "from_email": str, "min_delay": float, "retry_wait": float,
    "max_retries": int, "max_pages": int, "max_bytes": int, "cache_dir": str,
    "obey_robots": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
    "timeout": float, "workers": int,
}


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    user_agent: str = "spiderkit/0.1"
    from_email: str = "nobody@example.invalid"
    min_delay: float = 1.0
    retry_wait: float = 2.0
    max_retries: int = 5
    max_pages: Optional[int] = None
    max_bytes: Optional[int] = None
    cache_dir: Optional[str] = None
    obey_robots: bool = True
    timeout: float = 30.0
    workers: int = 1
    identify: bool = True


def read_config_file(path: str) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: expected one of {sorted(_CONFIG_KEYS)} as key=value")
        try:
            values[key] = _CONFIG_KEYS[key](value.strip())
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def build_config(args: argparse.Namespace) -> CliConfig:
    cfg = CliConfig()
    if os.environ.get(CACHE_ENV):
        cfg.cache_dir = os.environ[CACHE_ENV]
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            setattr(cfg, key, value)
    for key in ("user_agent", "from_email", "min_delay", "retry_wait", "max_retries",
                "max_pages", "max_bytes", "cache_dir", "timeout", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "ignore_robots", False):
        if not getattr(args, "i_take_responsibility", False):
            raise UsageError("--ignore-robots requires --i-take-responsibility")
        cfg.obey_robots = False
    if getattr(args, "anonymous", False):
        cfg.identify = False
    if not cfg.obey_robots and not getattr(args, "i_take_responsibility", False):
        raise UsageError("obey_robots=false requires --i-take-responsibility")
    return cfg


def build_spider(cfg: CliConfig) -> Spider:
    """The single path every network subcommand goes through."""
    try:
        politeness = PolitenessConfig(cfg.min_delay, cfg.retry_wait, cfg.max_retries,
                                      cfg.max_pages, cfg.max_bytes, cfg.identify)
        identity = ClientIdentity(cfg.user_agent, cfg.from_email)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    client = PoliteClient(politeness, identity, HttpClient(ClientConfig(timeout=cfg.timeout)))
    return Spider(client, agent=cfg.user_agent, obey_robots=cfg.obey_robots,
                  cache_dir=cfg.cache_dir, workers=cfg.workers)


def _url(value: str) -> str:
    try:
        return normalize_url(value)
    except (ValueError, UnsupportedSchemeError) as exc:
        raise UsageError(str(exc)) from None


def _print_report(spider: Spider) -> None:
    print(spider.client.report(), file=sys.stderr)


# -- subcommands ----------------------------------------------------------------------

def cmd_fetch(args, cfg: CliConfig) -> int:
    url = _url(args.url)
    spider = build_spider(cfg)
    method = "HEAD" if args.head else "GET"
    _, resp = spider.fetch(url, method=method)
    msg = resp.message
    print(f"{msg.version.value} {msg.status} {msg.reason}".rstrip())
    for name, value in msg.headers:
        print(f"{name}: {value}")
    if args.out and not args.head:
        Path(args.out).write_bytes(resp.body)
        print(f"saved {len(resp.body)} bytes to {args.out}", file=sys.stderr)
    return EXIT_OK if resp.status < 400 else EXIT_FAIL


def cmd_watch(args, cfg: CliConfig) -> int:
    url = _url(args.url)
    if args.polls < 0:
        raise UsageError("--polls must be >= 0")
    spider = build_spider(cfg)
    recipe = ScrapeRecipe(Mode.WATCH, seeds=[url], interval=args.interval,
                          max_polls=args.polls, output=args.out_dir)
    try:
        recipe.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = spider.run_watch(recipe)
    downloaded = sum(1 for p in spider.last_polls if p.downloaded)
    for p in spider.last_polls:
        state = "downloaded" if p.downloaded else ("failed" if p.error else "unchanged")
        print(f"poll {p.index}\t{p.status if p.status is not None else '-'}\t{state}"
              + (f"\t{p.path}" if p.path else ""))
    print(f"{downloaded} snapshot(s) in {out}")
    _print_report(spider)
    return EXIT_OK


def cmd_crawl(args, cfg: CliConfig) -> int:
    seed = _url(args.seed)
    spider = build_spider(cfg)
    recipe = ScrapeRecipe(Mode.CRAWL, seeds=[seed], link_scope=args.scope or [],
                          output=args.out, output_format=args.format,
                          max_depth=args.max_depth)
    records = spider.crawl(recipe)
    for r in records:
        print(f"{r.status if r.status is not None else '-'}\t{r.url}")
    st = spider.stats
    print(f"fetched={st.fetched} disallowed={st.disallowed} failed={st.failed}"
          + (f" halted: {st.halted}" if st.halted else ""), file=sys.stderr)
    _print_report(spider)
    return EXIT_OK if st.failed == 0 else EXIT_FAIL


def _parse_ids(text: str) -> tuple[int, int]:
    start, sep, end = text.partition("..")
    try:
        a = int(start)
        b = int(end) if sep else a
    except ValueError:
        raise UsageError(f"--ids expects A..B, got {text!r}") from None
    if a > b:
        raise UsageError(f"--ids start {a} exceeds end {b}")
    return a, b


def cmd_scrape(args, cfg: CliConfig) -> int:
    a, b = _parse_ids(args.ids)
    if args.template.count("{id}") != 1:
        raise UsageError("--template needs exactly one {id} placeholder")
    _url(args.template.replace("{id}", str(a)))
    spider = build_spider(cfg)
    rule = ExtractionRule(args.marker, args.max_chars,
                          Filter.ANY if args.any_chars else Filter.DIGITS)
    recipe = ScrapeRecipe(Mode.SEQUENCE, url_template=args.template, id_start=a, id_end=b,
                          extraction=rule, output=args.out, output_format=args.format)
    records = spider.run_sequence(recipe)
    for r in records:
        print(r.to_tsv())
    _print_report(spider)
    if spider.stats.halted:
        return EXIT_FAIL
    return EXIT_OK


def cmd_robots(args, cfg: CliConfig) -> int:
    if not args.path.startswith("/"):
        raise UsageError("--path must begin with '/'")
    if args.file:
        policy = parse_robots(Path(args.file).read_bytes())
        allowed = is_allowed(policy, args.agent, args.path)
    else:
        host = args.host
        if "://" in host:
            url = _url(host)
            host = host_key(url)
        spider = build_spider(cfg)
        allowed = spider.robots.is_allowed(host, args.agent, args.path)
    print("allowed" if allowed else "disallowed")
    return EXIT_OK if allowed else EXIT_FAIL


def cmd_ftp_get(args, cfg: CliConfig) -> int:
    host, _, port = args.host.partition(":")
    try:
        port_n = int(port) if port else ftp.FTP_PORT
        mode = ftp.Mode.parse(args.mode)
    except (ValueError, ftp.UnsupportedModeError) as exc:
        raise UsageError(str(exc)) from None
    with ftp.connect_login(host, args.user, args.password, port=port_n,
                           timeout=cfg.timeout) as session:
        session.set_mode(mode)
        n = session.download(args.remote, args.local)
    print(f"{n} bytes written to {args.local}")
    return EXIT_OK


def cmd_serve(args, cfg: CliConfig) -> int:
    from .testbed import FixtureScript, HttpFixture

    script = FixtureScript.load(args.script)
    fixture = HttpFixture(script, port=args.port).start()
    print(fixture.url("/"), flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        for e in fixture.stop():
            print(f"{e.timestamp:.3f}\t{e.method}\t{e.path}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("politeness")
    g.add_argument("--config", help="key=value settings file")
    g.add_argument("--user-agent")
    g.add_argument("--from", dest="from_email", metavar="EMAIL")
    g.add_argument("--min-delay", type=float)
    g.add_argument("--retry-wait", type=float)
    g.add_argument("--max-retries", type=int)
    g.add_argument("--max-pages", type=int)
    g.add_argument("--max-bytes", type=int)
    g.add_argument("--cache-dir")
    g.add_argument("--timeout", type=float)
    g.add_argument("--workers", type=int)
    g.add_argument("--anonymous", action="store_true",
                   help="send no User-Agent/From headers")
    g.add_argument("--ignore-robots", action="store_true")
    g.add_argument("--i-take-responsibility", action="store_true",
                   help="required to disable robots.txt checks")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spiderkit", description="Polite spider and scraper toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fetch", help="GET or HEAD one URL")
    p.add_argument("url")
    p.add_argument("--head", action="store_true")
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("watch", help="archive a resource each time it changes")
    p.add_argument("url")
    p.add_argument("--interval", type=float, default=300.0)
    p.add_argument("--polls", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    _common(p)
    p.set_defaults(func=cmd_watch)

    p = sub.add_parser("crawl", help="breadth-first crawl from a seed")
    p.add_argument("seed")
    p.add_argument("--scope", action="append", metavar="PREFIX")
    p.add_argument("--max-depth", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=[f.value for f in SinkFormat], default="jsonl")
    _common(p)
    p.set_defaults(func=cmd_crawl)

    p = sub.add_parser("scrape", help="visit a numbered URL template and extract a field")
    p.add_argument("--template", required=True, help="URL with one {id} placeholder")
    p.add_argument("--ids", required=True, metavar="A..B")
    p.add_argument("--marker", required=True)
    p.add_argument("--max-chars", type=int, default=3)
    p.add_argument("--any-chars", action="store_true", help="do not stop at non-digits")
    p.add_argument("--out")
    p.add_argument("--format", choices=[f.value for f in SinkFormat], default="tsv")
    _common(p)
    p.set_defaults(func=cmd_scrape)

    p = sub.add_parser("robots", help="check a path against a host's robots.txt")
    p.add_argument("host", help="host[:port] or http:// URL")
    p.add_argument("--agent", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--file", help="evaluate a local robots.txt instead of fetching")
    _common(p)
    p.set_defaults(func=cmd_robots)

    p = sub.add_parser("ftp-get", help="download one file over FTP")
    p.add_argument("host", help="host[:port]")
    p.add_argument("remote")
    p.add_argument("local")
    p.add_argument("--user", default="anonymous")
    p.add_argument("--password", default="")
    p.add_argument("--mode", default="binary", choices=["ascii", "binary"])
    _common(p)
    p.set_defaults(func=cmd_ftp_get)

    p = sub.add_parser("serve", help="run a fixture server from a JSON script")
    p.add_argument("script")
    p.add_argument("--port", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"spiderkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RobotsDisallowed as exc:
        print(f"spiderkit: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (NetworkError, PermanentFailure, BudgetExhausted, ParseError, ProtocolError,
            ftp.FtpError, OSError) as exc:
        print(f"spiderkit: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
