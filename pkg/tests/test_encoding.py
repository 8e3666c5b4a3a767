import pytest
from hypothesis import given
from hypothesis import strategies as st

from spiderkit.encoding import (
    FORM_CONTENT_TYPE,
    MAX_URL_LENGTH,
    ChosenMethod,
    choose_method,
    encode_form_body,
    encode_params,
    encode_query,
    form_headers,
    percent_encode,
)

UNRESERVED = set(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~")


def decode_by_hand(encoded: str) -> str:
    out = bytearray()
    i = 0
    while i < len(encoded):
        c = encoded[i]
        if c == "%":
            out.append(int(encoded[i + 1:i + 3], 16))
            i += 3
        else:
            assert ord(c) in UNRESERVED, f"unescaped {c!r}"
            out.append(ord(c))
            i += 1
    return out.decode("utf-8")


def test_airport_query():
    url = encode_query("http://www.world-airport-codes.com/dist/", [("a1", "lga"), ("a2", "ber")])
    assert url == "http://www.world-airport-codes.com/dist/?a1=lga&a2=ber"


def test_form_body_for_post():
    body, ctype, length = encode_form_body([("a1", "lga"), ("a2", "cpt")])
    assert (body, ctype, length) == (b"a1=lga&a2=cpt", FORM_CONTENT_TYPE, 13)
    assert form_headers([("a1", "lga"), ("a2", "cpt")])[1] == [
        ("Content-type", "application/x-www-form-urlencoded"), ("Content-length", "13")]


def test_reserved_characters_escaped():
    assert percent_encode("a b&c=d/é") == "a%20b%26c%3Dd%2F%C3%A9"


def test_empty_params_leave_base_alone():
    assert encode_query("http://h/p", []) == "http://h/p"


def test_existing_query_rejected():
    with pytest.raises(ValueError):
        encode_query("http://h/p?x=1", [("a", "b")])


def test_empty_name_rejected():
    with pytest.raises(ValueError):
        encode_params([("", "v")])


@pytest.mark.parametrize("length, idempotent, expected", [
    (100, True, ChosenMethod.GET),
    (MAX_URL_LENGTH, True, ChosenMethod.GET),
    (MAX_URL_LENGTH + 1, True, ChosenMethod.POST),
    (10, False, ChosenMethod.POST),
])
def test_choose_method(length, idempotent, expected):
    assert choose_method(length, idempotent) is expected


scalar_text = st.text(st.characters(blacklist_categories=("Cs",)))


@given(scalar_text)
def test_percent_encoding_inverts(text):
    assert decode_by_hand(percent_encode(text)) == text


@given(st.lists(st.tuples(scalar_text.filter(bool), scalar_text), max_size=6))
def test_params_round_trip(params):
    encoded = encode_params(params)
    pairs = [p.split("=") for p in encoded.split("&")] if encoded else []
    assert [(decode_by_hand(k), decode_by_hand(v)) for k, v in pairs] == params
