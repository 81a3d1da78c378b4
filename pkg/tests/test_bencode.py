import random

import pytest

from btweb import bencode
from btweb.bencode import (
    MalformedInput,
    InvalidValue,
    decode,
    decode_lenient,
    encode,
    top_level_spans,
)

from bvalgen import random_bvalue, mangle


def test_decode_integer():
    assert decode(b"i42e") == 42
    assert decode(b"i0e") == 0
    assert decode(b"i-7e") == -7


def test_decode_string():
    assert decode(b"4:spam") == b"spam"
    assert decode(b"0:") == b""


def test_decode_list():
    assert decode(b"l4:spami42ee") == [b"spam", 42]
    assert decode(b"le") == []


def test_decode_dict():
    raw = b"d2:id20:" + b"\xaa" * 20 + b"e"
    assert decode(raw) == {b"id": b"\xaa" * 20}
    assert decode(b"de") == {}


def test_encode_examples():
    assert encode(0) == b"i0e"
    assert encode(-3) == b"i-3e"
    assert encode(b"") == b"0:"
    assert encode({b"a": 1, b"b": b"x"}) == b"d1:ai1e1:b1:xe"
    assert encode([1, [2]]) == b"li1eli2eee"


def test_encode_sorts_keys_by_raw_bytes():
    # insertion order must not leak into the encoding
    assert encode({b"b": 1, b"a": 2}) == b"d1:ai2e1:bi1ee"
    # shorter key sorts before its extension
    assert encode({b"ab": 1, b"a": 2}) == b"d1:ai2e2:abi1ee"


def test_encode_accepts_str_and_bool():
    assert encode("ab") == b"2:ab"
    assert encode(True) == b"i1e"
    assert encode(False) == b"i0e"
    assert encode({"k": "v"}) == b"d1:k1:ve"


def test_encode_rejects_unrepresentable():
    with pytest.raises(InvalidValue):
        encode(1.5)
    with pytest.raises(InvalidValue):
        encode({1: b"x"})
    with pytest.raises(InvalidValue):
        encode(None)


def test_encode_rejects_keys_that_collide_after_normalization():
    with pytest.raises(InvalidValue):
        encode({b"a": 1, "a": 2})


@pytest.mark.parametrize(
    "raw,offset",
    [
        (b"i042e", 0),
        (b"i-0e", 0),
        (b"01:x", 0),
        (b"d1:bi1e1:ai2ee", 7),  # keys out of order; second key starts at byte 7
        (b"d1:ai1e1:ai2ee", 7),  # duplicate key
    ],
)
def test_strict_rejects_non_canonical_with_offset(raw, offset):
    with pytest.raises(MalformedInput) as exc:
        decode(raw)
    assert exc.value.offset == offset


@pytest.mark.parametrize(
    "raw",
    [
        b"",
        b"i42",
        b"i e",
        b"ie",
        b"i--1e",
        b"5:spam",
        b"4spam",
        b"l4:spam",
        b"d2:id",
        b"di1ei2ee",  # non-string key
        b"d1:ae",  # key without value
        b"x",
        b"i42etrail",
        b"4:spamx",
    ],
)
def test_grammar_errors_raise(raw):
    with pytest.raises(MalformedInput):
        decode(raw)


def test_error_offsets_point_at_problem():
    with pytest.raises(MalformedInput) as exc:
        decode(b"l4:spamx")
    assert exc.value.offset == 7
    with pytest.raises(MalformedInput) as exc:
        decode(b"i42eX")
    assert exc.value.offset == 4


def test_depth_limit_decode():
    deep_ok = b"l" * 128 + b"e" * 128
    assert decode(deep_ok) is not None
    too_deep = b"l" * 129 + b"e" * 129
    with pytest.raises(MalformedInput):
        decode(too_deep)
    with pytest.raises(MalformedInput):
        decode_lenient(too_deep)


def test_depth_limit_encode():
    v = []
    for _ in range(200):
        v = [v]
    with pytest.raises(InvalidValue):
        encode(v)


def test_lenient_parses_and_reports():
    value, violations = decode_lenient(b"i042e")
    assert value == 42
    assert len(violations) == 1
    assert violations[0].offset == 0
    assert "leading zero" in violations[0].reason

    value, violations = decode_lenient(b"d1:bi1e1:ai2ee")
    assert value == {b"b": 1, b"a": 2}
    assert violations[0].offset == 7
    assert "not sorted" in violations[0].reason

    # duplicate key: last occurrence wins, deviation reported
    value, violations = decode_lenient(b"d1:ai1e1:ai2ee")
    assert value == {b"a": 2}
    assert any("duplicate" in v.reason for v in violations)

    value, violations = decode_lenient(b"i-0e")
    assert value == 0
    assert any("negative zero" in v.reason for v in violations)

    value, violations = decode_lenient(b"i1eXYZ")
    assert value == 1
    assert any("trailing" in v.reason for v in violations)


def test_lenient_clean_input_has_no_violations():
    value, violations = decode_lenient(b"d2:id20:" + b"\x00" * 20 + b"e")
    assert violations == []


def test_lenient_still_raises_on_grammar_errors():
    with pytest.raises(MalformedInput):
        decode_lenient(b"i42")
    with pytest.raises(MalformedInput):
        decode_lenient(b"9:ab")


def test_roundtrip_property():
    rng = random.Random(0xBE7C0DE)
    for _ in range(2000):
        tree = random_bvalue(rng)
        raw = encode(tree)
        assert decode(raw) == tree
        value, violations = decode_lenient(raw)
        assert value == tree
        assert violations == []


def test_encode_is_deterministic_across_insertion_orders():
    rng = random.Random(7)
    for _ in range(200):
        tree = random_bvalue(rng)
        if not isinstance(tree, dict) or len(tree) < 2:
            continue
        items = list(tree.items())
        rng.shuffle(items)
        assert encode(dict(items)) == encode(tree)


def test_fuzz_never_hangs_or_crashes_unexpectedly():
    rng = random.Random(0xF055)
    for _ in range(2000):
        raw = encode(random_bvalue(rng))
        bad = mangle(rng, raw)
        try:
            decode(bad)
        except MalformedInput as exc:
            assert 0 <= exc.offset <= len(bad)
        try:
            decode_lenient(bad)
        except MalformedInput:
            pass


def test_top_level_spans_identifies_value_bytes():
    info = b"d4:name3:webe"
    raw = b"d8:announce3:url4:info" + info + b"e"
    spans = top_level_spans(raw)
    assert [k for k, _, _ in spans] == [b"announce", b"info"]
    key, start, end = spans[1]
    assert raw[start:end] == info


def test_top_level_spans_tolerates_non_canonical_order():
    raw = b"d1:bi1e1:ai2ee"
    spans = top_level_spans(raw)
    assert [k for k, _, _ in spans] == [b"b", b"a"]


def test_top_level_spans_rejects_non_dict():
    with pytest.raises(MalformedInput):
        top_level_spans(b"le")
    with pytest.raises(MalformedInput):
        top_level_spans(b"i1e")


def test_top_level_spans_roundtrip_property():
    rng = random.Random(1234)
    seen = 0
    while seen < 300:
        tree = random_bvalue(rng)
        if not isinstance(tree, dict) or not tree:
            continue
        seen += 1
        raw = encode(tree)
        spans = top_level_spans(raw)
        assert len(spans) == len(tree)
        for key, start, end in spans:
            assert decode(raw[start:end]) == tree[key]
