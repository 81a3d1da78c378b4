"""Bencode: the serialization underneath every file and wire message here.

Grammar (BEP003 conventions): ``i<digits>e`` integers, ``<len>:<bytes>``
byte strings, ``l...e`` lists, ``d<key><value>...e`` dictionaries.
Canonical form additionally requires dictionary keys strictly ascending in
raw byte order, no leading zeros in integers or length prefixes, and no
negative zero.

``decode`` rejects non-canonical input outright.  ``decode_lenient`` parses
it anyway and reports every deviation, which is what the forensic tooling
wants when chewing on files written by unknown clients.  Both are bounded:
nesting deeper than ``MAX_DEPTH`` containers is always an error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

BValue = Union[int, bytes, list, dict]

MAX_DEPTH = 128


class MalformedInput(ValueError):
    """Input violates the bencode grammar (or, in strict mode, canonical form)."""

    def __init__(self, reason: str, offset: int):
        super().__init__(f"{reason} (at byte {offset})")
        self.reason = reason
        self.offset = offset


class InvalidValue(ValueError):
    """Value handed to encode() has no canonical bencode representation."""


@dataclass(frozen=True)
class Violation:
    """One canonical-form deviation found by lenient decoding."""

    offset: int
    reason: str


class _Decoder:
    __slots__ = ("data", "pos", "strict", "violations")

    def __init__(self, data: bytes, strict: bool):
        self.data = data
        self.pos = 0
        self.strict = strict
        self.violations: list[Violation] = []

    def fail(self, reason: str, offset: int | None = None):
        raise MalformedInput(reason, self.pos if offset is None else offset)

    def flag(self, reason: str, offset: int):
        # Grammar still holds; only canonical form is broken.
        if self.strict:
            raise MalformedInput(reason, offset)
        self.violations.append(Violation(offset, reason))

    def peek(self) -> int:
        if self.pos >= len(self.data):
            self.fail("unexpected end of input")
        return self.data[self.pos]

    def value(self, depth: int) -> BValue:
        c = self.peek()
        if c == 0x69:  # i
            return self.integer()
        if 0x30 <= c <= 0x39:  # 0-9
            return self.string()
        if c == 0x6C:  # l
            return self.list(depth)
        if c == 0x64:  # d
            return self.dict(depth)
        self.fail(f"invalid type prefix {bytes([c])!r}")

    def digits(self) -> bytes:
        start = self.pos
        while self.pos < len(self.data) and 0x30 <= self.data[self.pos] <= 0x39:
            self.pos += 1
        if self.pos == start:
            self.fail("expected digits")
        return self.data[start : self.pos]

    def integer(self) -> int:
        start = self.pos
        self.pos += 1  # i
        negative = False
        if self.pos < len(self.data) and self.data[self.pos] == 0x2D:  # -
            negative = True
            self.pos += 1
        num = self.digits()
        if self.pos >= len(self.data) or self.data[self.pos] != 0x65:  # e
            self.fail("unterminated integer", start)
        self.pos += 1
        if num[0] == 0x30 and len(num) > 1:
            self.flag("integer with leading zeros", start)
        if negative and num == b"0":
            self.flag("negative zero", start)
        value = int(num)
        return -value if negative else value

    def string(self) -> bytes:
        start = self.pos
        num = self.digits()
        if num[0] == 0x30 and len(num) > 1:
            self.flag("length prefix with leading zeros", start)
        if self.pos >= len(self.data) or self.data[self.pos] != 0x3A:  # :
            self.fail("expected ':' after length prefix")
        self.pos += 1
        length = int(num)
        if self.pos + length > len(self.data):
            self.fail("byte string truncated", start)
        out = self.data[self.pos : self.pos + length]
        self.pos += length
        return out

    def list(self, depth: int) -> list:
        if depth >= MAX_DEPTH:
            self.fail("container depth limit exceeded")
        self.pos += 1  # l
        items = []
        while self.peek() != 0x65:  # e
            items.append(self.value(depth + 1))
        self.pos += 1
        return items

    def dict(self, depth: int) -> dict:
        if depth >= MAX_DEPTH:
            self.fail("container depth limit exceeded")
        self.pos += 1  # d
        out: dict[bytes, BValue] = {}
        prev_key: bytes | None = None
        while self.peek() != 0x65:  # e
            key_at = self.pos
            c = self.data[self.pos]
            if not 0x30 <= c <= 0x39:
                self.fail("dictionary key must be a byte string")
            key = self.string()
            if prev_key is not None:
                if key == prev_key:
                    self.flag(f"duplicate dictionary key {key!r}", key_at)
                elif key < prev_key:
                    self.flag(f"dictionary keys not sorted at {key!r}", key_at)
            if key in out and key != prev_key:
                self.flag(f"duplicate dictionary key {key!r}", key_at)
            prev_key = key
            out[key] = self.value(depth + 1)
        self.pos += 1
        return out


def decode(data: bytes) -> BValue:
    """Decode one canonical bencoded value spanning all of ``data``.

    Raises MalformedInput (with the byte offset) for grammar errors,
    truncation, trailing bytes, unsorted or duplicate dictionary keys,
    leading zeros, and negative zero.
    """
    dec = _Decoder(data, strict=True)
    if not data:
        dec.fail("empty input")
    value = dec.value(0)
    if dec.pos != len(data):
        dec.fail("trailing data after value", dec.pos)
    return value


def decode_lenient(data: bytes) -> tuple[BValue, list[Violation]]:
    """Decode tolerating non-canonical form; returns (value, violations).

    Grammar errors (truncation, bad prefixes, depth abuse) still raise
    MalformedInput: a file that cannot be parsed at all has no value to
    return.  Trailing bytes after the first value are reported, not fatal.
    """
    dec = _Decoder(data, strict=False)
    if not data:
        dec.fail("empty input")
    value = dec.value(0)
    if dec.pos != len(data):
        dec.violations.append(Violation(dec.pos, "trailing data after value"))
    return value, dec.violations


def _encode(parts: list[bytes], value, depth: int) -> None:
    if depth > MAX_DEPTH:
        raise InvalidValue("container depth limit exceeded")
    if isinstance(value, bool):
        parts.append(b"i1e" if value else b"i0e")
    elif isinstance(value, int):
        parts.append(b"i%de" % value)
    elif isinstance(value, (bytes, bytearray, memoryview)):
        raw = bytes(value)
        parts.append(b"%d:" % len(raw))
        parts.append(raw)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        parts.append(b"%d:" % len(raw))
        parts.append(raw)
    elif isinstance(value, (list, tuple)):
        parts.append(b"l")
        for item in value:
            _encode(parts, item, depth + 1)
        parts.append(b"e")
    elif isinstance(value, dict):
        items = []
        for key, val in value.items():
            if isinstance(key, str):
                key = key.encode("utf-8")
            elif isinstance(key, (bytearray, memoryview)):
                key = bytes(key)
            elif not isinstance(key, bytes):
                raise InvalidValue(f"dictionary key must be bytes or str, not {type(key).__name__}")
            items.append((key, val))
        items.sort(key=lambda kv: kv[0])
        for (k1, _), (k2, _) in zip(items, items[1:]):
            if k1 == k2:
                raise InvalidValue(f"duplicate dictionary key {k1!r}")
        parts.append(b"d")
        for key, val in items:
            parts.append(b"%d:" % len(key))
            parts.append(key)
            _encode(parts, val, depth + 1)
        parts.append(b"e")
    else:
        raise InvalidValue(f"cannot bencode {type(value).__name__}")


def encode(value: BValue) -> bytes:
    """Canonical bencoding of ``value``.

    Accepts int (bools become 0/1), bytes-like, str (UTF-8), list/tuple and
    dict with bytes or str keys.  Dictionary keys are sorted by raw bytes;
    decode(encode(v)) == v for every valid tree.
    """
    parts: list[bytes] = []
    _encode(parts, value, 0)
    return b"".join(parts)


def _skip(data: bytes, pos: int, depth: int = 0) -> int:
    """Return the end offset of the value starting at ``pos``.

    Grammar-only scan: canonical-form deviations are ignored so the caller
    can locate byte spans inside files from arbitrary writers.
    """
    if depth > MAX_DEPTH:
        raise MalformedInput("container depth limit exceeded", pos)
    if pos >= len(data):
        raise MalformedInput("unexpected end of input", pos)
    c = data[pos]
    if c == 0x69:  # i
        end = data.find(b"e", pos + 1)
        if end < 0:
            raise MalformedInput("unterminated integer", pos)
        return end + 1
    if 0x30 <= c <= 0x39:
        colon = data.find(b":", pos)
        if colon < 0:
            raise MalformedInput("expected ':' after length prefix", pos)
        try:
            length = int(data[pos:colon])
        except ValueError:
            raise MalformedInput("bad length prefix", pos) from None
        end = colon + 1 + length
        if end > len(data):
            raise MalformedInput("byte string truncated", pos)
        return end
    if c in (0x6C, 0x64):  # l, d
        is_dict = c == 0x64
        pos += 1
        while True:
            if pos >= len(data):
                raise MalformedInput("unterminated container", pos)
            if data[pos] == 0x65:  # e
                return pos + 1
            if is_dict:
                pos = _skip(data, pos, depth + 1)  # key
                if pos >= len(data) or data[pos] == 0x65:
                    raise MalformedInput("dictionary key without value", pos)
            pos = _skip(data, pos, depth + 1)
    raise MalformedInput(f"invalid type prefix {bytes([c])!r}", pos)


def top_level_spans(data: bytes) -> list[tuple[bytes, int, int]]:
    """Byte span of each value in a top-level dictionary, in file order.

    Returns (key, value_start, value_end) triples.  Tolerates non-canonical
    key order and duplicate keys; the spans index the input exactly as
    stored, which is what infohash computation over third-party files needs.
    """
    if not data or data[0] != 0x64:
        raise MalformedInput("top-level value is not a dictionary", 0)
    spans = []
    pos = 1
    while True:
        if pos >= len(data):
            raise MalformedInput("unterminated container", pos)
        if data[pos] == 0x65:
            break
        key_end = _skip(data, pos)
        colon = data.find(b":", pos)
        if colon < 0 or colon >= key_end:
            raise MalformedInput("dictionary key must be a byte string", pos)
        key = data[colon + 1 : key_end]
        if key_end >= len(data) or data[key_end] == 0x65:
            raise MalformedInput("dictionary key without value", key_end)
        value_end = _skip(data, key_end)
        spans.append((key, key_end, value_end))
        pos = value_end
    return spans
