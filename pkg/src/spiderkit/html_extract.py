"""Flat HTML tokenizing, link extraction and marker-based scraping.

There is no tree: tokens come out left to right, and a missing end tag
(``<LI>`` items, for instance) simply produces no ``EndTag``. End tags may be
written ``</X>`` or ``<\\X>``. Every token remembers the source span it came
from, so joining the spans gives back the input exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Sequence, Union
from urllib.parse import urldefrag, urljoin, urlsplit

Span = tuple[int, int]

_ENTITIES = (("&lt;", "<"), ("&gt;", ">"), ("&quot;", '"'), ("&amp;", "&"))
_FOLLOWABLE_SCHEMES = ("http", "https", "ftp")


@dataclass(frozen=True)
class StartTag:
    name: str
    attributes: tuple[tuple[str, str], ...] = ()
    span: Span = (0, 0)

    def attr(self, name: str) -> Optional[str]:
        name = name.lower()
        for k, v in self.attributes:
            if k == name:
                return v
        return None


@dataclass(frozen=True)
class EndTag:
    name: str
    span: Span = (0, 0)


@dataclass(frozen=True)
class Text:
    content: str
    span: Span = (0, 0)


@dataclass(frozen=True)
class Comment:
    content: str
    span: Span = (0, 0)


Token = Union[StartTag, EndTag, Text, Comment]


def decode_document(html: Union[str, bytes]) -> str:
    """Bytes become text losslessly (undecodable bytes survive as escapes)."""
    if isinstance(html, bytes):
        return html.decode("utf-8", errors="surrogateescape")
    return html


def decode_entities(value: str) -> str:
    for entity, char in _ENTITIES:
        value = value.replace(entity, char)
    return value


_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9:_.-]*")
_ATTR_RE = re.compile(
    r"""\s*([^\s"'<>/=]+)(?:\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+)))?""")


def _tag_end(src: str, start: int) -> int:
    """Index of the ``>`` closing the tag opened at ``start``, or -1.

    Quoted attribute values may contain ``>``; if quoting never balances
    we fall back to the first ``>``.
    """
    quote = None
    i = start + 1
    n = len(src)
    while i < n:
        c = src[i]
        if quote:
            if c == quote:
                quote = None
        elif c in "\"'" and src[i - 1] in "= \t\n":
            quote = c
        elif c == ">":
            return i
        i += 1
    return src.find(">", start + 1)


def _parse_attributes(inner: str) -> tuple[tuple[str, str], ...]:
    attrs = []
    for m in _ATTR_RE.finditer(inner):
        name = m.group(1).lower()
        value = next((g for g in m.group(2, 3, 4) if g is not None), "")
        attrs.append((name, decode_entities(value)))
    return tuple(attrs)


def _iter_tokens(src: str) -> Iterator[Token]:
    n = len(src)
    pos = 0
    text_start = 0

    def flush(upto: int):
        if upto > text_start:
            return Text(src[text_start:upto], (text_start, upto))
        return None

    while pos < n:
        lt = src.find("<", pos)
        if lt < 0:
            break
        nxt = src[lt + 1:lt + 2]
        if src.startswith("<!--", lt):
            close = src.find("-->", lt + 4)
            if close < 0:
                break
            tok = flush(lt)
            if tok:
                yield tok
            end = close + 3
            yield Comment(src[lt + 4:close], (lt, end))
            pos = text_start = end
            continue
        if nxt in ("/", "\\"):
            m = _NAME_RE.match(src, lt + 2)
            if m is None:
                pos = lt + 1
                continue
            gt = src.find(">", m.end())
            if gt < 0:
                break
            tok = flush(lt)
            if tok:
                yield tok
            yield EndTag(m.group(0).upper(), (lt, gt + 1))
            pos = text_start = gt + 1
            continue
        if nxt == "!" or nxt == "?" or (nxt and _NAME_RE.match(nxt)):
            gt = _tag_end(src, lt)
            if gt < 0:
                break
            tok = flush(lt)
            if tok:
                yield tok
            if nxt in ("!", "?"):
                # declarations and processing instructions carry no attributes
                name = nxt + (src[lt + 2:gt].split(None, 1) or [""])[0]
                yield StartTag(name.upper(), (), (lt, gt + 1))
            else:
                m = _NAME_RE.match(src, lt + 1)
                inner = src[m.end():gt]
                yield StartTag(m.group(0).upper(), _parse_attributes(inner), (lt, gt + 1))
            pos = text_start = gt + 1
            continue
        pos = lt + 1

    tok = flush(n)
    if tok:
        yield tok


def tokenize(html: Union[str, bytes]) -> list[Token]:
    """Total: any input yields a token list; an unterminated tag is text."""
    return list(_iter_tokens(decode_document(html)))


def reconstruct(html: Union[str, bytes], tokens: Sequence[Token]) -> str:
    src = decode_document(html)
    return "".join(src[t.span[0]:t.span[1]] for t in tokens)


@dataclass
class LinkScan:
    links: list[str]
    skipped: int = 0


def scan_links(html: Union[str, bytes], base_url: str) -> LinkScan:
    """Absolute, fragment-free ``<A href>`` targets in document order."""
    scan = LinkScan([])
    for tok in tokenize(html):
        if not isinstance(tok, StartTag) or tok.name != "A":
            continue
        href = tok.attr("href")
        if href is None:
            continue
        href = href.strip()
        try:
            absolute = urljoin(base_url, href)
            absolute, _ = urldefrag(absolute)
            parts = urlsplit(absolute)
            parts.port  # raises on a malformed port
        except ValueError:
            scan.skipped += 1
            continue
        if parts.scheme.lower() not in _FOLLOWABLE_SCHEMES or not parts.netloc:
            scan.skipped += 1
            continue
        scan.links.append(absolute)
    return scan


def extract_links(html: Union[str, bytes], base_url: str) -> list[str]:
    return scan_links(html, base_url).links


class Filter(str, Enum):
    DIGITS = "digits"
    ANY = "any"


@dataclass(frozen=True)
class ExtractionRule:
    """Take up to ``max_chars`` characters right after ``marker``.

    ``until``, when set, also stops the capture at that string.
    """

    marker: str
    max_chars: int = 3
    filter: Filter = Filter.DIGITS
    until: Optional[str] = None

    def __post_init__(self):
        if not self.marker:
            raise ValueError("marker must be non-empty")
        if self.max_chars < 1:
            raise ValueError("max_chars must be at least 1")
        object.__setattr__(self, "filter", Filter(self.filter))


def _apply(html: str, rule: ExtractionRule, start: int) -> tuple[Optional[str], int]:
    """Returns (value, position after the captured text); -1 if no marker."""
    pos = html.find(rule.marker, start)
    if pos < 0:
        return None, -1
    begin = pos + len(rule.marker)
    chunk = html[begin:begin + rule.max_chars]
    if rule.until:
        cut = chunk.find(rule.until)
        if cut >= 0:
            chunk = chunk[:cut]
    if rule.filter is Filter.DIGITS:
        i = 0
        while i < len(chunk) and chunk[i] in "0123456789":
            i += 1
        chunk = chunk[:i]
    return (chunk or None), begin + len(chunk)


def extract_after_marker(html: Union[str, bytes], rule: ExtractionRule) -> Optional[str]:
    value, _ = _apply(decode_document(html), rule, 0)
    return value


def extract_repeated(html: Union[str, bytes], rules: Sequence[ExtractionRule],
                     max_count: int = 10) -> list[tuple[Optional[str], ...]]:
    """Apply ``rules`` in sequence, over and over, each search starting where
    the previous one stopped. Ends when any marker runs out or after
    ``max_count`` rows.
    """
    if not rules:
        raise ValueError("at least one rule is required")
    src = decode_document(html)
    rows = []
    pos = 0
    while len(rows) < max_count:
        row = []
        for rule in rules:
            value, pos = _apply(src, rule, pos)
            if pos < 0:
                return rows
            row.append(value)
        rows.append(tuple(row))
    return rows


def attribute_values(html: Union[str, bytes], tag: str, attribute: str) -> list[str]:
    tag = tag.upper()
    out = []
    for tok in tokenize(html):
        if isinstance(tok, StartTag) and tok.name == tag:
            value = tok.attr(attribute)
            if value is not None:
                out.append(value)
    return out
