"""Per-node protocol state machine.

Each ``on_*`` function is a pure transition: it takes a :class:`NodeState`,
an input and the current time, and returns ``(new_state, effects)``.  The
input state is never mutated, so callers can keep old snapshots around.
Nothing here owns a clock, a random generator or a transport; the
simulator interprets the returned effects.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .proto import (
    AdvertEntry,
    Data,
    ErrorId,
    Message,
    NodeId,
    RequestId,
    Rerr,
    RouteEntry,
    RouteStatus,
    ServiceQuery,
    Srep,
    Sreq,
    Ust,
    service_matches,
)

TEMPORARY = RouteStatus.TEMPORARY
PERMANENT = RouteStatus.PERMANENT


@dataclass(frozen=True)
class NodeParams:
    broadcast_period: float = 6.0
    broadcast_enabled: bool = True
    sreq_ttl: int = 16
    service_lifetime: float = 18.0
    max_ust_entries: int = 64
    dup_cache_ttl: Optional[float] = None

    def __post_init__(self):
        if self.dup_cache_ttl is None:
            object.__setattr__(self, "dup_cache_ttl", 2 * self.broadcast_period)


# --------------------------------------------------------------------------
# effects


@dataclass(frozen=True)
class Broadcast:
    msg: Message


@dataclass(frozen=True)
class Unicast:
    to: NodeId
    msg: Message


@dataclass(frozen=True)
class DiscoveryCompleted:
    request_id: RequestId
    provider: NodeId
    services: tuple


@dataclass(frozen=True)
class DiscoveryLocalHit:
    query: ServiceQuery
    provider: NodeId
    services: tuple


@dataclass(frozen=True)
class DataDelivered:
    msg: Data


@dataclass(frozen=True)
class TimerSet:
    at: float


Effect = Union[Broadcast, Unicast, DiscoveryCompleted, DiscoveryLocalHit, DataDelivered, TimerSet]


# --------------------------------------------------------------------------
# state


@dataclass
class NodeState:
    """Everything one node knows.

    ``routing_table`` is keyed by destination, ``service_table`` by
    ``(provider, name, type)``.  ``seen_rerr`` maps error ids to the time
    they were first seen; ``seen_sreq`` maps request ids to
    ``(first_seen, upstream)`` where ``upstream`` is the neighbor the first
    copy came from (None for our own requests).  ``pending`` maps this
    node's outstanding discoveries to ``(query, start_time)``.
    """

    id: NodeId
    can_store: bool = True
    own_services: tuple = ()
    service_table: dict = field(default_factory=dict)
    routing_table: dict = field(default_factory=dict)
    own_seq: int = 0
    next_broadcast_at: float = 0.0
    seen_sreq: dict = field(default_factory=dict)
    seen_rerr: dict = field(default_factory=dict)
    next_request_counter: int = 0
    next_error_counter: int = 0
    pending: dict = field(default_factory=dict)
    params: NodeParams = field(default_factory=NodeParams)

    def __post_init__(self):
        self.own_services = tuple(self.own_services)
        for s in self.own_services:
            if s.provider != self.id or s.expiration_time != math.inf:
                raise ValueError(f"own service {s!r} must be provided by {self.id} with infinite expiry")

    def clone(self) -> "NodeState":
        new = copy.copy(self)
        new.service_table = dict(self.service_table)
        new.routing_table = dict(self.routing_table)
        new.seen_sreq = dict(self.seen_sreq)
        new.seen_rerr = dict(self.seen_rerr)
        new.pending = dict(self.pending)
        return new

    def permanent_route(self, destination: NodeId) -> Optional[RouteEntry]:
        route = self.routing_table.get(destination)
        if route is None or route.is_temporary:
            return None
        return route


def _fresher(candidate: RouteEntry, existing: RouteEntry) -> bool:
    if candidate.sequence_number > existing.sequence_number:
        return True
    if candidate.sequence_number == existing.sequence_number and candidate.hop_count < existing.hop_count:
        return True
    return existing.is_temporary and not candidate.is_temporary


def route_upsert(table: dict, candidate: RouteEntry) -> dict:
    """Return a copy of ``table`` with ``candidate`` applied under the freshness rule."""
    existing = table.get(candidate.destination)
    if existing is not None and not _fresher(candidate, existing):
        return table
    if existing is not None:
        candidate = replace(candidate, precursors=candidate.precursors | existing.precursors)
    new = dict(table)
    new[candidate.destination] = candidate
    return new


def _upsert_into(state: NodeState, candidate: RouteEntry) -> None:
    state.routing_table = route_upsert(state.routing_table, candidate)


def _known_seq(state: NodeState, destination: NodeId) -> int:
    route = state.routing_table.get(destination)
    return route.sequence_number if route is not None else 0


def _route_hops(state: NodeState, provider: NodeId) -> Optional[int]:
    if provider == state.id:
        return 0
    route = state.permanent_route(provider)
    return route.hop_count if route is not None else None


def _best_local_match(state: NodeState, query: ServiceQuery, now: float,
                      exclude_via: Optional[NodeId] = None):
    """Pick the nearest provider able to serve ``query`` from local knowledge.

    Stored entries only count when a permanent route to their provider
    exists (and, for relayed queries, that route does not lead straight
    back to the asking neighbor).  Returns ``(provider, services, hops)``
    or None.
    """
    candidates = {}
    for s in state.own_services:
        if service_matches(query, s, now):
            candidates.setdefault(state.id, []).append(s)
    for s in state.service_table.values():
        if s.provider == state.id or not service_matches(query, s, now):
            continue
        route = state.permanent_route(s.provider)
        if route is None or (exclude_via is not None and route.next_node == exclude_via):
            continue
        candidates.setdefault(s.provider, []).append(s)
    if not candidates:
        return None
    provider = min(candidates, key=lambda p: (_route_hops(state, p), p))
    return provider, tuple(candidates[provider]), _route_hops(state, provider)


# --------------------------------------------------------------------------
# transitions


def on_timer(state: NodeState, now: float):
    """Periodic maintenance block, optionally followed by a UST broadcast."""
    p = state.params
    s = state.clone()
    effects = []

    s.routing_table = {d: r for d, r in s.routing_table.items() if not r.is_temporary}
    horizon = now - p.dup_cache_ttl
    s.seen_sreq = {k: v for k, v in s.seen_sreq.items() if v[0] >= horizon}
    s.seen_rerr = {k: t for k, t in s.seen_rerr.items() if t >= horizon}
    s.service_table = {k: e for k, e in s.service_table.items() if e.expiration_time >= now}

    if p.broadcast_enabled:
        adverts = [
            AdvertEntry(replace(svc, expiration_time=now + p.service_lifetime), 0, s.own_seq)
            for svc in s.own_services
        ]
        for svc in s.service_table.values():
            route = s.permanent_route(svc.provider)
            if route is not None:
                adverts.append(AdvertEntry(svc, route.hop_count, route.sequence_number))
        adverts.sort(key=lambda a: (a.hops_to_provider, a.service.provider,
                                    a.service.service_type, a.service.service_name))
        adverts = adverts[: p.max_ust_entries]
        if adverts:
            effects.append(Broadcast(Ust(s.id, s.own_seq, tuple(adverts))))

    s.own_seq += 1
    s.next_broadcast_at = now + p.broadcast_period
    effects.append(TimerSet(s.next_broadcast_at))
    return s, effects


def on_ust(state: NodeState, msg: Ust, sender: NodeId, now: float, jitter: float):
    """Learn adverts (if this node stores them) and push back our own broadcast.

    ``jitter`` is drawn by the caller from [period/2, period].
    """
    s = state.clone()
    effects = []
    if s.can_store:
        for advert in msg.adverts:
            svc = advert.service
            if svc.provider == s.id:
                continue
            old = s.service_table.get(svc.key)
            if old is None or svc.expiration_time > old.expiration_time:
                s.service_table[svc.key] = svc
            _upsert_into(s, RouteEntry(
                destination=svc.provider,
                sequence_number=advert.provider_seq,
                hop_count=advert.hops_to_provider + 1,
                next_node=sender,
                status=PERMANENT,
            ))
    deferred = max(s.next_broadcast_at, now + jitter)
    if deferred != s.next_broadcast_at:
        s.next_broadcast_at = deferred
        effects.append(TimerSet(deferred))
    return s, effects


def begin_discovery(state: NodeState, query: ServiceQuery, now: float):
    hit = _best_local_match(state, query, now)
    if hit is not None:
        provider, services, _ = hit
        return state, [DiscoveryLocalHit(query, provider, services)]
    s = state.clone()
    rid = RequestId(s.id, s.next_request_counter)
    s.next_request_counter += 1
    s.pending[rid] = (query, now)
    s.seen_sreq[rid] = (now, None)
    return s, [Broadcast(Sreq(rid, s.id, query, 0))]


def on_sreq(state: NodeState, msg: Sreq, sender: NodeId, now: float):
    if msg.request_id in state.seen_sreq or msg.origin == state.id:
        return state, []
    s = state.clone()
    s.seen_sreq[msg.request_id] = (now, sender)
    # Reverse routes never displace a forward route other flows rely on.
    if s.permanent_route(msg.origin) is None:
        _upsert_into(s, RouteEntry(
            destination=msg.origin,
            sequence_number=_known_seq(s, msg.origin),
            hop_count=msg.hop_count + 1,
            next_node=sender,
            status=TEMPORARY,
        ))

    hit = _best_local_match(s, msg.query, now, exclude_via=sender)
    if hit is not None:
        provider, services, hops = hit
        reply = Srep(msg.request_id, msg.origin, provider, services, hops)
        return s, [Unicast(sender, reply)]
    if msg.hop_count + 1 < s.params.sreq_ttl:
        return s, [Broadcast(replace(msg, hop_count=msg.hop_count + 1))]
    return s, []


def on_srep(state: NodeState, msg: Srep, sender: NodeId, now: float):
    s = state.clone()
    if msg.provider != s.id:
        _upsert_into(s, RouteEntry(
            destination=msg.provider,
            sequence_number=_known_seq(s, msg.provider),
            hop_count=msg.hops_to_provider + 1,
            next_node=sender,
            status=PERMANENT,
        ))

    if msg.origin == s.id:
        if msg.request_id not in s.pending:
            return s, []
        del s.pending[msg.request_id]
        return s, [DiscoveryCompleted(msg.request_id, msg.provider, msg.services)]

    # Retrace the path the request took; the reverse route is the fallback.
    back = s.routing_table.get(msg.origin)
    upstream = s.seen_sreq.get(msg.request_id, (None, None))[1]
    if upstream is None:
        if back is None:
            return s, []
        upstream = back.next_node
    if back is not None and back.is_temporary:
        del s.routing_table[msg.origin]
    forward = s.routing_table.get(msg.provider)
    if forward is not None and upstream != s.id:
        s.routing_table[msg.provider] = replace(forward, precursors=forward.precursors | {upstream})
    return s, [Unicast(upstream, replace(msg, hops_to_provider=msg.hops_to_provider + 1))]


def _notify(state: NodeState, removed: list, error_id: ErrorId, skip=()):
    unreachable = tuple(sorted((r.destination, r.sequence_number) for r in removed))
    rerr = Rerr(error_id, unreachable)
    precursors = set()
    for r in removed:
        precursors |= r.precursors
    if not precursors:
        return [Broadcast(rerr)]
    return [Unicast(t, rerr) for t in sorted(precursors - {state.id, *skip})]


def on_link_down(state: NodeState, lost: NodeId, now: float):
    broken = [r for r in state.routing_table.values()
              if r.next_node == lost or r.destination == lost]
    if not broken:
        return state, []
    s = state.clone()
    for r in broken:
        del s.routing_table[r.destination]
    eid = ErrorId(s.id, s.next_error_counter)
    s.next_error_counter += 1
    s.seen_rerr[eid] = now
    return s, _notify(s, broken, eid, skip=(lost,))


def on_rerr(state: NodeState, msg: Rerr, sender: NodeId, now: float):
    if msg.error_id in state.seen_rerr:
        return state, []
    s = state.clone()
    s.seen_rerr[msg.error_id] = now
    listed = msg.destinations
    removed = []
    for dest, seq in listed.items():
        route = s.routing_table.get(dest)
        if route is not None and route.next_node == sender and route.sequence_number <= seq:
            removed.append(route)
            del s.routing_table[dest]
    if not removed:
        return s, []
    return s, _notify(s, removed, msg.error_id, skip=(sender,))


def forward_data(state: NodeState, msg: Data, now: float):
    if msg.destination == state.id:
        return state, [DataDelivered(msg)]
    route = state.permanent_route(msg.destination)
    if route is None:
        return state, []
    return state, [Unicast(route.next_node, msg)]


def handle_message(state: NodeState, msg: Message, sender: NodeId, now: float, jitter: float = 0.0):
    """Dispatch a received message to its transition by tag."""
    if isinstance(msg, Ust):
        return on_ust(state, msg, sender, now, jitter)
    if isinstance(msg, Sreq):
        return on_sreq(state, msg, sender, now)
    if isinstance(msg, Srep):
        return on_srep(state, msg, sender, now)
    if isinstance(msg, Rerr):
        return on_rerr(state, msg, sender, now)
    if isinstance(msg, Data):
        return forward_data(state, msg, now)
    raise TypeError(f"unknown message {msg!r}")
