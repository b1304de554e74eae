"""Protocol value types, service matching and the line-oriented wire codec.

Every message is a single LF-terminated line of ``|``-separated fields.
List items inside a field group are ``;``-separated.  The bytes ``|``,
``;``, ``%`` and LF inside strings are percent-encoded so the framing
characters never appear raw in a payload.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Optional, Union

NodeId = int

MAX_FIELD_BYTES = 1024


class MalformedMessage(ValueError):
    """Raised when a byte string is not the canonical encoding of a message."""


class FieldTooLong(ValueError):
    """Raised when an escaped string field exceeds MAX_FIELD_BYTES."""


class RouteStatus(enum.Enum):
    TEMPORARY = "temporary"
    PERMANENT = "permanent"


def _check_id(value, name):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")


@dataclass(frozen=True)
class RouteEntry:
    """One routing-table row: destination, freshness, distance and next hop."""

    destination: NodeId
    sequence_number: int
    hop_count: int
    next_node: NodeId
    status: RouteStatus = RouteStatus.PERMANENT
    precursors: frozenset = frozenset()

    @property
    def is_temporary(self) -> bool:
        return self.status is RouteStatus.TEMPORARY


@dataclass(frozen=True)
class ServiceEntry:
    provider: NodeId
    service_name: str
    service_type: str
    description: str = ""
    expiration_time: float = math.inf

    def __post_init__(self):
        _check_id(self.provider, "provider")
        if not self.service_name or not self.service_type:
            raise ValueError("service_name and service_type must be non-empty")
        if math.isnan(self.expiration_time) or self.expiration_time < 0:
            raise ValueError(f"bad expiration_time {self.expiration_time!r}")

    @property
    def key(self) -> tuple:
        return (self.provider, self.service_name, self.service_type)


@dataclass(frozen=True)
class ServiceQuery:
    service_type: str
    service_name: Optional[str] = None

    def __post_init__(self):
        if not self.service_type:
            raise ValueError("service_type must be non-empty")
        # An empty name is indistinguishable from "absent" on the wire.
        if self.service_name == "":
            raise ValueError("service_name must be non-empty when given")


@dataclass(frozen=True, order=True)
class RequestId:
    origin: NodeId
    counter: int


@dataclass(frozen=True, order=True)
class ErrorId:
    origin: NodeId
    counter: int


@dataclass(frozen=True)
class AdvertEntry:
    service: ServiceEntry
    hops_to_provider: int
    provider_seq: int


@dataclass(frozen=True)
class Ust:
    sender: NodeId
    sender_seq: int
    adverts: tuple

    tag = "UST"

    def __post_init__(self):
        object.__setattr__(self, "adverts", tuple(self.adverts))
        if not self.adverts:
            raise ValueError("UST must carry at least one advert")
        for a in self.adverts:
            if a.service.provider == self.sender and a.hops_to_provider != 0:
                raise ValueError("sender's own adverts must have hops_to_provider 0")


@dataclass(frozen=True)
class Sreq:
    request_id: RequestId
    origin: NodeId
    query: ServiceQuery
    hop_count: int = 0

    tag = "SREQ"

    def __post_init__(self):
        if self.request_id.origin != self.origin:
            raise ValueError("request_id.origin must equal origin")


@dataclass(frozen=True)
class Srep:
    request_id: RequestId
    origin: NodeId
    provider: NodeId
    services: tuple
    hops_to_provider: int = 0

    tag = "SREP"

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        if self.request_id.origin != self.origin:
            raise ValueError("request_id.origin must equal origin")
        if not self.services:
            raise ValueError("SREP must carry at least one service")
        if any(s.provider != self.provider for s in self.services):
            raise ValueError("every SREP service must belong to its provider")


@dataclass(frozen=True)
class Rerr:
    error_id: ErrorId
    unreachable: tuple

    tag = "RERR"

    def __post_init__(self):
        object.__setattr__(self, "unreachable", tuple(tuple(p) for p in self.unreachable))
        if not self.unreachable:
            raise ValueError("RERR must list at least one destination")

    @property
    def destinations(self) -> dict:
        return dict(self.unreachable)


@dataclass(frozen=True)
class Data:
    source: NodeId
    destination: NodeId
    payload_tag: str = ""

    tag = "DATA"


Message = Union[Ust, Sreq, Srep, Rerr, Data]


def service_matches(query: ServiceQuery, entry: ServiceEntry, now: float) -> bool:
    """Exact, case-sensitive match of a query against a live table entry."""
    if entry.expiration_time < now:
        return False
    if entry.service_type != query.service_type:
        return False
    return query.service_name is None or query.service_name == entry.service_name


# --------------------------------------------------------------------------
# codec

_ESCAPES = {"%": "%25", "|": "%7C", ";": "%3B", "\n": "%0A"}
_UNESCAPES = {v: k for k, v in _ESCAPES.items()}
_ESCAPE_RE = re.compile(r"[%|;\n]")
_PCT_RE = re.compile(r"%(..)?")
_INT_RE = re.compile(r"(0|[1-9][0-9]*)\Z")
_TIME_RE = re.compile(r"(0|[1-9][0-9]*)\.[0-9]{3}\Z")


def _esc(text: str) -> str:
    out = _ESCAPE_RE.sub(lambda m: _ESCAPES[m.group()], text)
    if len(out.encode("utf-8")) > MAX_FIELD_BYTES:
        raise FieldTooLong(f"field exceeds {MAX_FIELD_BYTES} bytes: {text[:32]!r}...")
    return out


def _int(value: int) -> str:
    _check_id(value, "integer field")
    return str(value)


def format_time(t: float) -> str:
    if t == math.inf:
        return "inf"
    if math.isnan(t) or t < 0:
        raise ValueError(f"timestamp must be >= 0, got {t!r}")
    return f"{t:.3f}"


def _service_items(s: ServiceEntry) -> list:
    return [_int(s.provider), _esc(s.service_name), _esc(s.service_type),
            _esc(s.description), format_time(s.expiration_time)]


def encode_message(msg: Message) -> bytes:
    if isinstance(msg, Ust):
        fields = ["UST", _int(msg.sender), _int(msg.sender_seq), _int(len(msg.adverts))]
        for a in msg.adverts:
            items = _service_items(a.service) + [_int(a.hops_to_provider), _int(a.provider_seq)]
            fields.append(";".join(items))
    elif isinstance(msg, Sreq):
        q = msg.query
        fields = ["SREQ", _int(msg.request_id.origin), _int(msg.request_id.counter),
                  _int(msg.origin), _esc(q.service_type), _esc(q.service_name or ""),
                  _int(msg.hop_count)]
    elif isinstance(msg, Srep):
        fields = ["SREP", _int(msg.request_id.origin), _int(msg.request_id.counter),
                  _int(msg.origin), _int(msg.provider), _int(msg.hops_to_provider),
                  _int(len(msg.services))]
        fields.extend(";".join(_service_items(s)) for s in msg.services)
    elif isinstance(msg, Rerr):
        fields = ["RERR", _int(msg.error_id.origin), _int(msg.error_id.counter),
                  _int(len(msg.unreachable))]
        fields.extend(f"{_int(d)};{_int(s)}" for d, s in msg.unreachable)
    elif isinstance(msg, Data):
        fields = ["DATA", _int(msg.source), _int(msg.destination), _esc(msg.payload_tag)]
    else:
        raise TypeError(f"not a message: {msg!r}")
    return ("|".join(fields) + "\n").encode("utf-8")


def _dec_int(text: str) -> int:
    if not _INT_RE.match(text):
        raise MalformedMessage(f"bad integer field {text!r}")
    return int(text)


def _dec_time(text: str) -> float:
    if text == "inf":
        return math.inf
    if not _TIME_RE.match(text):
        raise MalformedMessage(f"bad timestamp field {text!r}")
    value = float(text)
    if format_time(value) != text:
        raise MalformedMessage(f"timestamp {text!r} is not exactly representable")
    return value


def _dec_str(text: str) -> str:
    if len(text.encode("utf-8")) > MAX_FIELD_BYTES:
        raise MalformedMessage("string field too long")
    if ";" in text or "\n" in text:
        raise MalformedMessage(f"unescaped reserved character in {text!r}")

    def repl(m):
        try:
            return _UNESCAPES[m.group()]
        except KeyError:
            raise MalformedMessage(f"bad percent escape {m.group()!r}") from None

    return _PCT_RE.sub(repl, text)


def _dec_service(group: str, extra: int = 0) -> tuple:
    items = group.split(";")
    if len(items) != 5 + extra:
        raise MalformedMessage(f"expected {5 + extra} items in {group!r}")
    entry = ServiceEntry(
        provider=_dec_int(items[0]),
        service_name=_dec_str(items[1]),
        service_type=_dec_str(items[2]),
        description=_dec_str(items[3]),
        expiration_time=_dec_time(items[4]),
    )
    return entry, items[5:]


def _counted(fields: list, fixed: int) -> list:
    n = _dec_int(fields[fixed - 1])
    groups = fields[fixed:]
    if len(groups) != n:
        raise MalformedMessage(f"count {n} does not match {len(groups)} groups")
    return groups


def decode_message(raw: bytes) -> Message:
    """Parse one canonical line; anything else raises MalformedMessage."""
    try:
        text = bytes(raw).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedMessage("not valid UTF-8") from exc
    if not text.endswith("\n") or "\n" in text[:-1]:
        raise MalformedMessage("message must be exactly one LF-terminated line")
    fields = text[:-1].split("|")
    tag = fields[0]
    try:
        return _DECODERS[tag](fields)
    except KeyError:
        raise MalformedMessage(f"unknown tag {tag!r}") from None
    except MalformedMessage:
        raise
    except (ValueError, IndexError) as exc:
        raise MalformedMessage(str(exc)) from exc


def _decode_ust(fields):
    if len(fields) < 4:
        raise MalformedMessage("UST needs at least 4 fields")
    adverts = []
    for group in _counted(fields, 4):
        service, rest = _dec_service(group, extra=2)
        adverts.append(AdvertEntry(service, _dec_int(rest[0]), _dec_int(rest[1])))
    return Ust(sender=_dec_int(fields[1]), sender_seq=_dec_int(fields[2]), adverts=tuple(adverts))


def _decode_sreq(fields):
    if len(fields) != 7:
        raise MalformedMessage("SREQ needs 7 fields")
    name = _dec_str(fields[5])
    return Sreq(
        request_id=RequestId(_dec_int(fields[1]), _dec_int(fields[2])),
        origin=_dec_int(fields[3]),
        query=ServiceQuery(_dec_str(fields[4]), name or None),
        hop_count=_dec_int(fields[6]),
    )


def _decode_srep(fields):
    if len(fields) < 7:
        raise MalformedMessage("SREP needs at least 7 fields")
    services = tuple(_dec_service(g)[0] for g in _counted(fields, 7))
    return Srep(
        request_id=RequestId(_dec_int(fields[1]), _dec_int(fields[2])),
        origin=_dec_int(fields[3]),
        provider=_dec_int(fields[4]),
        hops_to_provider=_dec_int(fields[5]),
        services=services,
    )


def _decode_rerr(fields):
    if len(fields) < 4:
        raise MalformedMessage("RERR needs at least 4 fields")
    pairs = []
    for group in _counted(fields, 4):
        items = group.split(";")
        if len(items) != 2:
            raise MalformedMessage(f"bad RERR pair {group!r}")
        pairs.append((_dec_int(items[0]), _dec_int(items[1])))
    return Rerr(error_id=ErrorId(_dec_int(fields[1]), _dec_int(fields[2])), unreachable=tuple(pairs))


def _decode_data(fields):
    if len(fields) != 4:
        raise MalformedMessage("DATA needs 4 fields")
    return Data(_dec_int(fields[1]), _dec_int(fields[2]), _dec_str(fields[3]))


_DECODERS = {
    "UST": _decode_ust,
    "SREQ": _decode_sreq,
    "SREP": _decode_srep,
    "RERR": _decode_rerr,
    "DATA": _decode_data,
}
