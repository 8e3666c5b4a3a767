"""Query strings, form bodies and the GET-or-POST rule.

Names and values are UTF-8 encoded, then every byte outside
``ALPHA / DIGIT / "-" / "." / "_" / "~"`` is percent-encoded. Space becomes
``%20`` in both query strings and form bodies, so the two encodings of the
same parameters are identical.
"""

from __future__ import annotations

from enum import Enum
from typing import Iterable, Sequence
from urllib.parse import quote

FORM_CONTENT_TYPE = "application/x-www-form-urlencoded"
MAX_URL_LENGTH = 2083

Param = tuple[str, str]


class ChosenMethod(str, Enum):
    GET = "GET"
    POST = "POST"


def percent_encode(text: str) -> str:
    return quote(text, safe="", encoding="utf-8", errors="strict")


def encode_params(params: Iterable[Param]) -> str:
    """``name=value`` pairs joined by ``&``, in the given order."""
    pairs = []
    for name, value in params:
        if not name:
            raise ValueError("parameter names must be non-empty")
        pairs.append(f"{percent_encode(name)}={percent_encode(value)}")
    return "&".join(pairs)


def encode_query(base_url: str, params: Sequence[Param]) -> str:
    if "?" in base_url:
        raise ValueError(f"base URL already carries a query string: {base_url!r}")
    encoded = encode_params(params)
    return f"{base_url}?{encoded}" if encoded else base_url


def encode_form_body(params: Iterable[Param]) -> tuple[bytes, str, int]:
    """Return ``(body, content_type, content_length)`` for a form POST."""
    body = encode_params(params).encode("ascii")
    return body, FORM_CONTENT_TYPE, len(body)


def choose_method(encoded_url_length: int, idempotent: bool) -> ChosenMethod:
    """GET for idempotent requests whose URL fits, POST otherwise."""
    if encoded_url_length < 0:
        raise ValueError("URL length must be non-negative")
    if not idempotent or encoded_url_length > MAX_URL_LENGTH:
        return ChosenMethod.POST
    return ChosenMethod.GET


def form_headers(params: Iterable[Param]) -> tuple[bytes, list[tuple[str, str]]]:
    """Body plus the two headers a form POST needs, spelled as on the wire."""
    body, ctype, length = encode_form_body(params)
    return body, [("Content-type", ctype), ("Content-length", str(length))]
