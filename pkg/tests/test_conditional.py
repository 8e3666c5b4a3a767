import pytest

from spiderkit.conditional import (
    Cache,
    Failed,
    Fresh,
    NotModified,
    ProtocolError,
    SnapshotDir,
    conditional_get,
    extension_for,
    head,
    parse_content_range,
    ranged_get,
    validator_headers,
    watch,
)
from spiderkit.http_core import parse_http_date
from spiderkit.testbed import FixtureScript, Resource, ScriptedResponse
from spiderkit.transport import HttpClient

LM = "Thu, 10 May 2007 12:11:10 GMT"
ETAG = '"1783ac-7d3b-8bd43380"'
JPEG = Resource(b"\xff\xd8jpeg-bytes" * 100, "image/jpeg", etag=ETAG, last_modified=LM)


def test_head_reads_validators(serve):
    fx = serve(FixtureScript().resource("/airport/airport_00329.jpg", JPEG))
    meta = head(fx.url("/airport/airport_00329.jpg"), HttpClient())
    assert meta.etag == ETAG
    assert meta.last_modified == parse_http_date(LM)
    assert meta.content_length == len(JPEG.body)
    assert meta.accept_ranges and meta.validator == ETAG
    assert fx.log[0].method == "HEAD"


def test_revalidation_with_etag(serve, tmp_path):
    fx = serve(FixtureScript().resource("/img", JPEG))
    cache = Cache(tmp_path)
    client = HttpClient()
    first = conditional_get(fx.url("/img"), client, cache.get(fx.url("/img")), cache)
    assert isinstance(first, Fresh) and first.body == JPEG.body
    second = conditional_get(fx.url("/img"), client, cache.get(fx.url("/img")), cache)
    assert isinstance(second, NotModified)
    assert cache.read(second.entry) == JPEG.body
    sent = fx.log[1]
    assert sent.header("If-None-Match") == ETAG
    assert sent.header("If-Modified-Since") is None


def test_revalidation_with_date_only(serve, tmp_path):
    doc = Resource(b"<html></html>", "text/html", last_modified=LM)
    fx = serve(FixtureScript().resource("/p", doc))
    cache = Cache(tmp_path)
    conditional_get(fx.url("/p"), HttpClient(), None, cache)
    out = conditional_get(fx.url("/p"), HttpClient(), cache.get(fx.url("/p")), cache)
    assert isinstance(out, NotModified)
    assert fx.log[1].header("If-Modified-Since") == LM


def test_validator_header_choice():
    assert validator_headers(None) == []


def test_unsolicited_304_is_a_protocol_error(serve):
    fx = serve(FixtureScript().add("GET", "/", ScriptedResponse(304, add_content_length=False)))
    with pytest.raises(ProtocolError):
        conditional_get(fx.url("/"), HttpClient())


def test_failed_status(serve):
    fx = serve()
    out = conditional_get(fx.url("/nope"), HttpClient())
    assert isinstance(out, Failed) and out.status == 404


def test_cache_survives_reload_and_dedupes(tmp_path, serve):
    fx = serve(FixtureScript().resource("/a", JPEG).resource("/b", JPEG))
    cache = Cache(tmp_path)
    conditional_get(fx.url("/a"), HttpClient(), None, cache)
    conditional_get(fx.url("/b"), HttpClient(), None, cache)
    assert len(list((tmp_path / "bodies").iterdir())) == 1
    again = Cache(tmp_path)
    assert len(again) == 2
    entry = again.get(fx.url("/a"))
    assert entry.etag == ETAG and entry.last_modified == parse_http_date(LM)
    assert again.read(entry) == JPEG.body


# -- ranges -----------------------------------------------------------------------------

@pytest.mark.parametrize("value, expected", [
    ("0-250/152000", (0, 250, 152000)),
    ("bytes 0-250/152000", (0, 250, 152000)),
    ("bytes 10-19/*", (10, 19, None)),
])
def test_parse_content_range(value, expected):
    assert parse_content_range(value) == expected


@pytest.mark.parametrize("value", ["0-250", "bytes 9-1/10", "bytes a-b/c", ""])
def test_parse_content_range_rejects(value):
    with pytest.raises(ValueError):
        parse_content_range(value)


def test_range_honored(serve):
    body = bytes(range(256)) * 4
    fx = serve(FixtureScript().resource("/f", Resource(body)))
    got = ranged_get(fx.url("/f"), 10, 19, HttpClient())
    assert got.body == body[10:20] and got.total == 1024 and got.range_supported
    assert fx.log[0].header("Range") == "bytes=10-19"


def test_range_in_200_with_content_range(serve):
    raw = b"HTTP/1.1 200 OK\r\nContent-range: 0-250/152000\r\nContent-Length: 251\r\n\r\n" + b"x" * 251
    fx = serve(FixtureScript().add("GET", "/afile.html", ScriptedResponse(raw=raw)))
    got = ranged_get(fx.url("/afile.html"), 0, 250, HttpClient())
    assert (len(got.body), got.total, got.range_supported) == (251, 152000, True)


def test_range_ignored_is_sliced_locally(serve):
    body = b"0123456789" * 10
    fx = serve(FixtureScript().resource("/f", Resource(body, honor_ranges=False)))
    got = ranged_get(fx.url("/f"), 5, 14, HttpClient())
    assert got.body == body[5:15] and not got.range_supported and got.total == 100


def test_bad_range_arguments():
    with pytest.raises(ValueError):
        ranged_get("http://127.0.0.1:1/", 5, 4, HttpClient())


def test_mismatched_range_reply(serve):
    raw = b"HTTP/1.1 206 Partial\r\nContent-Range: bytes 0-9/100\r\nContent-Length: 10\r\n\r\n0123456789"
    fx = serve(FixtureScript().add("GET", "/", ScriptedResponse(raw=raw)))
    with pytest.raises(ProtocolError):
        ranged_get(fx.url("/"), 20, 29, HttpClient())


# -- watch ---------------------------------------------------------------------------------

def version(n):
    return Resource(f"frame {n}".encode() * 50, "image/jpeg", etag=f'"v{n}"',
                    last_modified=f"Thu, 10 May 2007 12:1{n}:10 GMT")


def test_watch_downloads_only_changes(serve, tmp_path):
    v0, v1 = version(0), version(1)
    fx = serve(FixtureScript().timeline("/cam.jpg", [v0, v0, v1, v1, v1]))
    polls = watch(fx.url("/cam.jpg"), 1.0, 5, HttpClient(), tmp_path, sleep=lambda s: None)
    assert [p.downloaded for p in polls] == [True, False, True, False, False]
    assert fx.log.count("HEAD") == 5 and fx.log.count("GET") == 2
    files = sorted(tmp_path.iterdir())
    assert len(files) == 2 and all(f.suffix in (".jpg", ".jpeg") for f in files)


def test_watch_without_validators_downloads_every_time(serve):
    plain = Resource(b"same", "text/plain")
    fx = serve(FixtureScript().resource("/t", plain))
    polls = watch(fx.url("/t"), 1.0, 3, HttpClient(), sleep=lambda s: None)
    assert all(p.downloaded for p in polls)


def test_watch_records_failures(serve):
    fx = serve(FixtureScript().add("HEAD", "/x", ScriptedResponse(500), ScriptedResponse(raw=b"junk\r\n\r\n")))
    polls = watch(fx.url("/x"), 1.0, 2, HttpClient(), sleep=lambda s: None)
    assert polls[0].status == 500 and not polls[0].downloaded
    assert polls[1].error is not None


def test_snapshot_names_do_not_collide(tmp_path):
    snaps = SnapshotDir(tmp_path)
    a = snaps.add(b"1", "image/gif", 1192241588.9)
    b = snaps.add(b"2", "image/gif", 1192241588.1)
    assert (a.name, b.name) == ("1192241588.gif", "1192241588-1.gif")


def test_extension_for():
    assert extension_for("text/html; charset=utf-8") in ("html", "htm")
    assert extension_for(None) == "bin"
    assert extension_for("application/x-unknown-thing") == "bin"
