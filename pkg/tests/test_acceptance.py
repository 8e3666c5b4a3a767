"""Acceptance criteria, one test each.

Every test prints a ``[PASS]``/``[FAIL]`` line. Run under pytest, or
directly with ``python tests/test_acceptance.py`` for just the summary.
"""

import functools
import os
import random
import sys
import tempfile
import time
import traceback
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from conftest import polite  # noqa: E402
from test_robots import ARXIV, oracle, random_model, render  # noqa: E402

from spiderkit.conditional import parse_content_range, ranged_get, watch  # noqa: E402
from spiderkit.encoding import form_headers  # noqa: E402
from spiderkit.ftp import connect_login  # noqa: E402
from spiderkit.html_extract import ExtractionRule, tokenize  # noqa: E402
from spiderkit.http_core import (  # noqa: E402
    HeaderCategory,
    Method,
    RequestMessage,
    StatusClass,
    classify_status,
    header_category,
    parse_response,
    serialize_request,
    status_reason,
)
from spiderkit.robots import is_allowed, parse_robots  # noqa: E402
from spiderkit.spider import Mode, ScrapeRecipe, Spider  # noqa: E402
from spiderkit.testbed import (  # noqa: E402
    FixtureScript,
    FtpFixture,
    HttpFixture,
    Resource,
    ScriptedResponse,
    assert_log,
    min_gap,
    no_duplicates,
    not_robots,
    where,
)
from spiderkit.transport import HttpClient  # noqa: E402

RESULTS = []


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            started = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException as exc:
                line = f"[FAIL] criterion {number:>2}: {title} ({type(exc).__name__}: {exc})"
                _emit(line)
                raise
            line = f"[PASS] criterion {number:>2}: {title} ({time.perf_counter() - started:.2f}s)"
            _emit(line)
        run.criterion = (number, title)
        return run
    return wrap


def _emit(line):
    RESULTS.append(line)
    if "pytest" not in sys.modules:
        print(line)


def crlf(text):
    return text.replace("\n", "\r\n").encode("latin-1")


def fixture(script=None, **kw):
    return HttpFixture(script or FixtureScript(), **kw)


# -- 1 ------------------------------------------------------------------------------

@criterion(1, "byte-exact request serialization")
def test_byte_exact_serialization():
    started = time.perf_counter()
    get = RequestMessage(Method.GET, "/intl/en_ALL/images/logo.gif")
    assert serialize_request(get) == b"GET /intl/en_ALL/images/logo.gif HTTP/1.0\r\n\r\n"
    body, headers = form_headers([("a1", "lga"), ("a2", "cpt")])
    post = RequestMessage(Method.POST, "/dist/", headers=headers, body=body)
    assert serialize_request(post) == crlf(
        "POST /dist/ HTTP/1.0\n"
        "Content-type: application/x-www-form-urlencoded\n"
        "Content-length: 13\n"
        "\n"
        "a1=lga&a2=cpt")
    assert time.perf_counter() - started < 1.0


# -- 2 ------------------------------------------------------------------------------

LOGO = crlf("""HTTP/1.0 200 OK
Content-Type: image/gif
Last-Modified: Wed, 07 Jun 2006 19:38:24 GMT
Expires: Sun, 17 Jan 2038 19:14:07 GMT
Server: gws
Content-Length: 8558
Date: Fri, 12 Oct 2007 18:10:56 GMT
Connection: Keep-Alive

""") + b"GIF89a\x14\x01n\x00"

AIRPORT = crlf("""HTTP/1.1 200 OK
Date: Sat, 13 Oct 2007 02:23:08 GMT
Server: Apache/2.0.54 (Fedora)
Last-Modified: Thu, 10 May 2007 12:11:10 GMT
ETag: "1783ac-7d3b-8bd43380"
Accept-Ranges: bytes
Content-Length: 32059
Cache-Control: max-age=3600
Expires: Sat, 13 Oct 2007 03:23:08 GMT
Connection: close
Content-Type: image/jpeg

""")

NOT_MODIFIED = crlf("HTTP/1.0 304 Not Modified \n"
                    "Last-Modified: Thu, 10 May 2007 12:11:10 GMT \n"
                    "Content-Type: image/jpeg \n\n")


@criterion(2, "byte-exact response parsing")
def test_byte_exact_parsing():
    logo = parse_response(LOGO)
    head = parse_response(AIRPORT, request_method="HEAD")
    nm = parse_response(NOT_MODIFIED, request_method="GET")
    assert [logo.status, head.status, nm.status] == [200, 200, 304]
    assert logo.content_length == 8558
    assert logo.header("Last-Modified") == "Wed, 07 Jun 2006 19:38:24 GMT"
    assert head.header("ETag") == '"1783ac-7d3b-8bd43380"'
    assert head.content_length == 32059
    assert head.header("Last-Modified") == "Thu, 10 May 2007 12:11:10 GMT"
    assert nm.header("Last-Modified") == "Thu, 10 May 2007 12:11:10 GMT"
    assert nm.header("Content-Type") == "image/jpeg"


# -- 3 ------------------------------------------------------------------------------

STATUS_TABLE = [
    (100, "Continue"), (101, "Switching Protocols"),
    (200, "OK"), (201, "Created"), (202, "Accepted"),
    (203, "Non-Authoritative Information"), (204, "No Content"),
    (205, "Reset Content"), (206, "Partial Content"),
    (300, "Multiple Choices"), (301, "Moved Permanently"), (302, "Moved Temporarily"),
    (303, "See Other"), (304, "Not Modified"), (305, "Use Proxy"),
    (400, "Bad Request"), (401, "Unauthorized"), (402, "Payment Required"),
    (403, "Forbidden"), (404, "Not Found"), (405, "Method Not Allowed"),
    (406, "Not Acceptable"), (407, "Proxy Authentication Required"),
    (408, "Request Time-out"), (409, "Conflict"), (410, "Gone"),
    (411, "Length Required"), (412, "Precondition Failed"),
    (413, "Request Entity Too Large"), (414, "Request Too Long"),
    (415, "Unsupported Media Type"),
    (500, "Internal Server Error"), (501, "Not Implemented"), (502, "Bad Gateway"),
    (503, "Service Unavailable"), (504, "Gateway Time-out"),
    (505, "HTTP Version Not Supported"),
]

CLASS_TABLE = {1: "Informational", 2: "Successful", 3: "Redirection",
               4: "Client Error", 5: "Server Error"}

HEADER_TABLE = {
    HeaderCategory.GENERAL: "Cache-Control Connection Date MIME-Version Pragma "
                            "Transfer-Encoding Upgrade Via",
    HeaderCategory.REQUEST: "Accept Accept-Charset Accept-Encoding Accept-Language "
                            "Authorization Cookie From Host If-Modified-Since If-Match "
                            "If-None-Match If-Range If-Unmodified-Since Max-Forwards "
                            "Proxy-Authorization Range Referer User-Agent",
    HeaderCategory.RESPONSE: "Accept-Ranges Age Proxy-Authenticate Public Retry-After "
                             "Server Set-Cookie Vary Warning WWW-Authenticate",
    HeaderCategory.ENTITY: "Allow Content-Base Content-Encoding Content-Language "
                           "Content-Length Content-Location Content-MD5 Content-Range "
                           "Content-Transfer-Encoding Content-Type Etag Expires "
                           "Last-Modified Location URI",
}


@criterion(3, "status and header registries match the tables")
def test_registries():
    # the reference tables hold 37 rows; every one is checked
    assert len(STATUS_TABLE) == 37
    for code, reason in STATUS_TABLE:
        assert status_reason(code) == reason, code
        assert classify_status(code) is StatusClass(CLASS_TABLE[code // 100]), code
    counts = {cat: len(names.split()) for cat, names in HEADER_TABLE.items()}
    assert counts == {HeaderCategory.GENERAL: 8, HeaderCategory.REQUEST: 18,
                      HeaderCategory.RESPONSE: 10, HeaderCategory.ENTITY: 15}
    for cat, names in HEADER_TABLE.items():
        for name in names.split():
            assert header_category(name) is cat, name
            assert header_category(name.upper()) is cat, name


# -- 4 ------------------------------------------------------------------------------

@criterion(4, "robots evaluation matches brute-force reference")
def test_robots_oracle():
    started = time.perf_counter()
    rng = random.Random(20071013)
    mismatches = 0
    for _ in range(1000):
        model = random_model(rng)
        policy = parse_robots(render(model, rng))
        agent = rng.choice(["bot", "MyCrawler/1.0", "SPIDERbot", "other", "x"])
        path = "/" + "".join(rng.choice("ab/") for _ in range(rng.randint(0, 4)))
        mismatches += is_allowed(policy, agent, path) != oracle(model, agent, path)
    assert mismatches == 0
    arxiv = parse_robots(ARXIV)
    assert is_allowed(arxiv, "Googlebot", "/archive")
    for agent in ("Googlebot", "MyRobot", "*"):
        assert not is_allowed(arxiv, agent, "/cgi-bin/")
        assert not is_allowed(arxiv, agent, "/cgi-bin/anything")
    assert time.perf_counter() - started < 5.0


# -- 5 ------------------------------------------------------------------------------

def versions():
    frames = [Resource(bytes([65 + i]) * 4096, "image/jpeg", etag=f'"frame-{i}"')
              for i in range(3)]
    return [frames[0]] * 3 + [frames[1]] * 4 + [frames[2]] * 3


@criterion(5, "watch downloads only changed bodies")
def test_conditional_bandwidth():
    timeline = versions()
    with fixture(FixtureScript().timeline("/cam.jpg", timeline)) as fx:
        polls = watch(fx.url("/cam.jpg"), 0.001, 10, HttpClient(), sleep=lambda s: None)
    with fixture(FixtureScript().add("GET", "/cam.jpg", *(v.response() for v in timeline))) as naive:
        for _ in range(10):
            HttpClient().get(naive.url("/cam.jpg"))
    assert sum(p.downloaded for p in polls) == 3
    assert fx.log.count("HEAD") == 10
    assert fx.log.count("GET") == 3
    assert naive.log.count("GET") == 10
    used, baseline = fx.log.body_bytes(), naive.log.body_bytes()
    assert baseline == 10 * 4096 and used == 3 * 4096
    assert 10 * used <= 3 * baseline  # savings of at least 70%


# -- 6 ------------------------------------------------------------------------------

@criterion(6, "request spacing and Retry-After embargo")
def test_politeness_timing():
    started = time.perf_counter()
    script = FixtureScript().add("GET", "/busy",
                                 ScriptedResponse(503, [("Retry-After", "1")]),
                                 ScriptedResponse(200, body=b"ok"))
    with fixture(script) as fx:
        spider = Spider(polite(min_delay=0.2, retry_wait=0.2))
        for i in range(20):
            spider.fetch(fx.url(f"/p{i}"))
        assert spider.fetch(fx.url("/busy"))[1].status == 200
    pages = [e for e in fx.log.entries if not_robots(e)]
    assert len(pages) == 22
    check = assert_log(fx.log, [where(not_robots, min_gap(0.18))])
    assert check, check.message
    busy = [e.timestamp for e in fx.log.entries if e.path == "/busy"]
    assert len(busy) == 2 and busy[1] - busy[0] >= 1.0
    assert time.perf_counter() - started < 15.0


# -- 7 ------------------------------------------------------------------------------

def html(*links):
    body = "".join(f'<a href="{l}">x</a>' for l in links).encode()
    return ScriptedResponse(200, [("Content-Type", "text/html")], body)


@criterion(7, "crawls terminate and never refetch")
def test_loop_safety():
    cycle = (FixtureScript().add("GET", "/A", html("/B"))
             .add("GET", "/B", html("/A", "/C")).add("GET", "/C", html("/B", "/A")))
    with fixture(cycle) as fx:
        Spider(polite()).crawl(ScrapeRecipe(Mode.CRAWL, seeds=[fx.url("/A")]))
    assert [p for p in fx.log.paths() if p != "/robots.txt"] == ["/A", "/B", "/C"]

    rng = random.Random(7)
    for _ in range(10):
        with fixture() as fx:
            for i in range(100):
                links = [f"/n{rng.randrange(100)}" for _ in range(rng.randint(1, 6))]
                links.append(fx.url(f"/n{rng.randrange(100)}#frag"))
                fx.script.add("GET", f"/n{i}", html(*links))
            Spider(polite()).crawl(ScrapeRecipe(Mode.CRAWL, seeds=[fx.url("/n0")]))
        check = assert_log(fx.log, [no_duplicates()])
        assert check, check.message


# -- 8 ------------------------------------------------------------------------------

@criterion(8, "sequence recipe emits every ID with planted ages")
def test_scrape_recipe():
    rng = random.Random(42)
    ids = range(1, 21)
    missing = set(rng.sample(list(ids), 3))
    ages = {i: rng.randint(10, 99) for i in ids if i not in missing}
    script = FixtureScript()
    for i in ids:
        if i in missing:
            body = b"<html><b>Name</font>nobody</html>"
        else:
            body = b"<html><b>Name</font>x<br><b>Age</font>%d<br></html>" % ages[i]
        script.add("GET", f"/users.php?ID={i}", ScriptedResponse(body=body))
    with tempfile.TemporaryDirectory() as tmp, fixture(script) as fx:
        out = Path(tmp) / "ages.tsv"
        recipe = ScrapeRecipe(Mode.SEQUENCE, url_template=fx.url("/users.php?ID={id}"),
                              id_start=1, id_end=20,
                              extraction=ExtractionRule("<b>Age</font>", 3),
                              output=out, output_format="tsv")
        records = Spider(polite()).run_sequence(recipe)
        lines = out.read_text().splitlines()
    assert len(records) == 20 and len(lines) == 20
    expected = [f"{i}\t200\t{ages.get(i, 0)}" for i in ids]
    assert lines == expected
    assert sum(r.extracted is not None for r in records) == 17


# -- 9 ------------------------------------------------------------------------------

def content_range_in_200(body):
    """Old-style partial answer: 200 plus ``Content-range: a-b/total``."""
    def handler(req, occurrence):
        first, last = (int(x) for x in req.header("Range").split("=")[1].split("-"))
        return ScriptedResponse(200, [("Content-range", f"{first}-{last}/{len(body)}")],
                                body[first:last + 1])
    return handler


@criterion(9, "ranged gets reassemble the full body")
def test_range_reassembly():
    assert parse_content_range("0-250/152000") == (0, 250, 152000)
    body = random.Random(9).randbytes(1000)
    script = (FixtureScript().resource("/std", Resource(body))
              .handle("GET", "/old", content_range_in_200(body)))
    with fixture(script) as fx:
        for path in ("/std", "/old"):
            parts = [ranged_get(fx.url(path), a, b, HttpClient())
                     for a, b in ((0, 332), (333, 665), (666, 999))]
            assert b"".join(p.body for p in parts) == body
            assert all(p.total == 1000 and p.range_supported for p in parts)


# -- 10 -----------------------------------------------------------------------------

@criterion(10, "FTP binary download is byte-identical")
def test_ftp_fidelity():
    data = os.urandom(64 * 1024)
    with tempfile.TemporaryDirectory() as tmp, FtpFixture({"random.bin": data}) as fx:
        host, port = fx.address
        with connect_login(host, "anonymous", "me@example.org", port=port, timeout=10) as s:
            s.set_mode("binary")
            s.download("random.bin", Path(tmp) / "random.bin")
        got = (Path(tmp) / "random.bin").read_bytes()
        commands = fx.commands()
    assert got == data
    assert commands[-1] == "QUIT"
    assert commands[:-1] == ["USER anonymous", "PASS", "TYPE I", "PASV", "RETR random.bin"]


# -- 11 -----------------------------------------------------------------------------

def fuzz_inputs(seed, n=10_000):
    rng = random.Random(seed)
    pieces = [b"<", b">", b"</", b"<\\", b"<!--", b"-->", b"=", b'"', b"'", b"&amp;",
              b"User-agent:", b"Disallow:", b"Allow:", b"#", b"\n", b"\r\n", b"\r",
              b"\x00", b"\xff\xfe", b"\xc3", b" ", b"/", b"*"]
    for i in range(n):
        if i % 2:
            yield rng.randbytes(rng.randint(0, 256))
        else:
            yield b"".join(rng.choice(pieces) for _ in range(rng.randint(0, 60)))


@criterion(11, "tokenizer and robots parser are total")
def test_fuzz_totality():
    for data in fuzz_inputs(11):
        tokenize(data)
    for data in fuzz_inputs(12):
        parse_robots(data)


def _all_criteria():
    return sorted((obj for obj in globals().values() if hasattr(obj, "criterion")),
                  key=lambda f: f.criterion[0])


if __name__ == "__main__":
    failed = 0
    for check in _all_criteria():
        try:
            check()
        except Exception:
            failed += 1
            traceback.print_exc(file=sys.stderr)
    print(f"{11 - failed}/11 criteria passed")
    sys.exit(1 if failed else 0)
