"""Deterministic discrete-event network: topology, churn, transit and timers."""

from __future__ import annotations

import heapq
import itertools
from collections import deque

from . import engine
from .config import ConfigInvalid, ScenarioConfig, stream
from .engine import (
    Broadcast,
    DataDelivered,
    DiscoveryCompleted,
    DiscoveryLocalHit,
    NodeParams,
    NodeState,
    TimerSet,
    Unicast,
)
from .proto import Data, Ust, encode_message
from .workload import (
    Outcome,
    RequestRecord,
    assign_services,
    build_report,
    generate_workload,
    tick_times,
)


DELIVER, TIMER, CHURN, WORKLOAD = "Deliver", "Timer", "Churn", "WorkloadTick"


class Topology:
    """Undirected simple graph over nodes ``0..n-1``."""

    __slots__ = ("n", "neighbors")

    def __init__(self, n: int, neighbors=None):
        self.n = n
        if neighbors is None:
            neighbors = [frozenset()] * n
        self.neighbors = tuple(frozenset(s) for s in neighbors)

    @classmethod
    def from_edges(cls, n: int, edges) -> "Topology":
        nbrs = [set() for _ in range(n)]
        for a, b in edges:
            if a == b:
                raise ValueError("self-loops are not allowed")
            nbrs[a].add(b)
            nbrs[b].add(a)
        return cls(n, nbrs)

    @classmethod
    def from_matrix(cls, matrix) -> "Topology":
        n = len(matrix)
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if matrix[i][j]]
        for i in range(n):
            for j in range(n):
                if bool(matrix[i][j]) != bool(matrix[j][i]) or (i == j and matrix[i][j]):
                    raise ValueError("adjacency must be symmetric with a zero diagonal")
        return cls.from_edges(n, edges)

    @property
    def adjacency(self) -> list:
        return [[j in self.neighbors[i] for j in range(self.n)] for i in range(self.n)]

    def has_edge(self, a: int, b: int) -> bool:
        return b in self.neighbors[a]

    def edges(self) -> list:
        return [(a, b) for a in range(self.n) for b in sorted(self.neighbors[a]) if a < b]

    def absent_pairs(self) -> list:
        return [(a, b) for a in range(self.n) for b in range(a + 1, self.n)
                if b not in self.neighbors[a]]

    def _with(self, a, b, present):
        nbrs = list(self.neighbors)
        if present:
            nbrs[a] = nbrs[a] | {b}
            nbrs[b] = nbrs[b] | {a}
        else:
            nbrs[a] = nbrs[a] - {b}
            nbrs[b] = nbrs[b] - {a}
        return Topology(self.n, nbrs)

    def with_edge(self, a, b) -> "Topology":
        return self._with(a, b, True)

    def without_edge(self, a, b) -> "Topology":
        return self._with(a, b, False)

    def components(self) -> list:
        seen = set()
        comps = []
        for start in range(self.n):
            if start in seen:
                continue
            comp = []
            todo = deque([start])
            seen.add(start)
            while todo:
                u = todo.popleft()
                comp.append(u)
                for v in self.neighbors[u]:
                    if v not in seen:
                        seen.add(v)
                        todo.append(v)
            comps.append(sorted(comp))
        return comps

    def __eq__(self, other):
        return isinstance(other, Topology) and self.neighbors == other.neighbors

    def __repr__(self):
        return f"Topology(n={self.n}, edges={self.edges()})"


def build_topology(cfg: ScenarioConfig, rng) -> Topology:
    edges = [(a, b) for a in range(cfg.num_nodes) for b in range(a + 1, cfg.num_nodes)
             if rng.random() < cfg.link_probability]
    topo = Topology.from_edges(cfg.num_nodes, edges)
    if cfg.link_repair:
        comps = topo.components()
        for here, nxt in zip(comps, comps[1:]):
            edges.append((here[0], nxt[0]))
        topo = Topology.from_edges(cfg.num_nodes, edges)
    return topo


def apply_churn(topology: Topology, cfg: ScenarioConfig, rng):
    """One churn step: add a random absent link or remove a random present one.

    Returns ``(new_topology, removed_edges)``.
    """
    if rng.random() < cfg.churn_probability:
        absent = topology.absent_pairs()
        if absent:
            a, b = absent[rng.randrange(len(absent))]
            return topology.with_edge(a, b), []
        return topology, []
    present = topology.edges()
    if present:
        a, b = present[rng.randrange(len(present))]
        return topology.without_edge(a, b), [(a, b)]
    return topology, []


class Simulator:
    """Runs one scenario over a set of :class:`engine.NodeState` values.

    ``topology``, ``services``, ``can_store`` and ``workload`` default to
    the seeded draws for ``cfg``; tests pass explicit ones.  With
    ``data_on_completion`` every completed discovery immediately sends a
    Data packet from the requester toward the provider.
    """

    def __init__(self, cfg: ScenarioConfig, *, topology=None, services=None, can_store=None,
                 workload=None, trace=False, data_on_completion=False):
        cfg.validate()
        self.cfg = cfg
        seed = cfg.seed
        self.topology = topology if topology is not None else build_topology(cfg, stream(seed, "topology"))
        if self.topology.n != cfg.num_nodes:
            raise ConfigInvalid("topology size does not match num_nodes")
        if services is None:
            services = assign_services(cfg, stream(seed, "services"))
        if can_store is None:
            caps = stream(seed, "capabilities")
            can_store = [caps.random() < cfg.store_probability for _ in range(cfg.num_nodes)]
        if workload is None:
            workload = generate_workload(cfg, stream(seed, "workload"))
        self.workload = sorted(workload, key=lambda w: w[0])
        self._churn_rng = stream(seed, "churn")
        self._jitter_rng = stream(seed, "jitter")
        timer_rng = stream(seed, "timers")

        params = NodeParams(
            broadcast_period=cfg.broadcast_period_s,
            broadcast_enabled=cfg.broadcast_enabled,
            sreq_ttl=cfg.sreq_ttl,
            service_lifetime=cfg.service_lifetime_s,
            max_ust_entries=cfg.max_ust_entries,
            dup_cache_ttl=cfg.dup_cache_ttl_s,
        )
        self.nodes = [
            NodeState(
                id=i,
                can_store=bool(can_store[i]),
                own_services=tuple(services.get(i, ())),
                next_broadcast_at=timer_rng.uniform(0, cfg.broadcast_period_s),
                params=params,
            )
            for i in range(cfg.num_nodes)
        ]
        self.now = 0.0
        self._queue = []
        self._seq = itertools.count()
        self._edge_gen = {}
        self.records = []
        self._by_request = {}
        self.messages_sent = {}
        self.data_delivered = 0
        self.data_dropped = 0
        self.data_on_completion = data_on_completion
        self.trace_enabled = trace
        self.trace_lines = []
        self.listeners = []
        self.completion_listeners = []
        self._started = False

    # -- scheduling ---------------------------------------------------------

    def _push(self, at, kind, *payload):
        heapq.heappush(self._queue, (at, next(self._seq), kind, payload))

    def _trace(self, kind, node, detail):
        self.trace_lines.append(f"{self.now:.6f}|{kind}|{node}|{detail}")

    def start(self):
        if self._started:
            return
        self._started = True
        for node in self.nodes:
            self._push(node.next_broadcast_at, TIMER, node.id)
        by_time = {}
        for t, node, query in self.workload:
            by_time.setdefault(t, []).append((node, query))
        if self.cfg.churn_enabled:
            churn_at = [t for t in tick_times(self.cfg) if t > 0]
        else:
            churn_at = []
        churn_set = set(churn_at)
        for t in sorted(churn_set | set(by_time)):
            if t in churn_set:
                self._push(t, CHURN)
            if t in by_time:
                tick = round(t / self.cfg.churn_interval_s)
                self._push(t, WORKLOAD, tick, by_time[t])

    def run(self):
        self.start()
        self.run_until(self.cfg.sim_duration_s)
        return self.report()

    def run_until(self, horizon: float):
        self.start()
        queue = self._queue
        while queue and queue[0][0] <= horizon:
            at, _, kind, payload = heapq.heappop(queue)
            self.now = at
            if kind == DELIVER:
                self._deliver(*payload)
            elif kind == TIMER:
                self._timer(*payload)
            elif kind == CHURN:
                self._churn()
            else:
                self._workload(*payload)
        self.now = max(self.now, horizon)

    def report(self):
        return build_report(self.records, self.messages_sent, self.cfg.bucket_width_s,
                            self.data_delivered, self.data_dropped)

    # -- event handlers -----------------------------------------------------

    def _timer(self, node_id):
        state = self.nodes[node_id]
        if state.next_broadcast_at != self.now:
            return  # superseded by a reschedule
        if self.trace_enabled:
            self._trace(TIMER, node_id, f"seq={state.own_seq}")
        self._apply(node_id, *engine.on_timer(state, self.now))

    def _churn(self):
        before = self.topology
        self.topology, removed = apply_churn(before, self.cfg, self._churn_rng)
        if self.trace_enabled:
            if removed:
                detail = "remove " + " ".join(f"{a}-{b}" for a, b in removed)
            elif self.topology is not before:
                added = [(a, b) for a in range(before.n)
                         for b in self.topology.neighbors[a] - before.neighbors[a] if a < b]
                detail = "add " + " ".join(f"{a}-{b}" for a, b in added)
            else:
                detail = "noop"
            self._trace(CHURN, "-", detail)
        for a, b in removed:
            self._link_broken(a, b)

    def _link_broken(self, a, b):
        key = (min(a, b), max(a, b))
        self._edge_gen[key] = self._edge_gen.get(key, 0) + 1
        self._apply(a, *engine.on_link_down(self.nodes[a], b, self.now))
        self._apply(b, *engine.on_link_down(self.nodes[b], a, self.now))

    def break_link(self, a, b):
        """Remove edge ``(a, b)`` now and notify both endpoints."""
        self.start()
        self.topology = self.topology.without_edge(a, b)
        if self.trace_enabled:
            self._trace(CHURN, "-", f"remove {min(a, b)}-{max(a, b)}")
        self._link_broken(a, b)

    def _workload(self, tick, requests):
        if self.trace_enabled:
            detail = " ".join(f"{node}:{q.service_type}" for node, q in requests)
            self._trace(WORKLOAD, "-", f"tick={tick} n={len(requests)} {detail}".rstrip())
        for slot, (node, query) in enumerate(requests):
            self.request(node, query, key=(node, tick, slot))

    def request(self, node, query, key=None):
        """Start a discovery at ``node`` now and return its record."""
        record = RequestRecord(key or (node, -1, len(self.records)), query, self.now)
        self.records.append(record)
        state, effects = engine.begin_discovery(self.nodes[node], query, self.now)
        for eff in effects:
            if isinstance(eff, DiscoveryLocalHit):
                record.end = self.now
                record.outcome = Outcome.LOCAL_HIT
                record.provider = eff.provider
            elif isinstance(eff, Broadcast):
                self._by_request[eff.msg.request_id] = record
        self._apply(node, state, effects)
        return record

    def send_data(self, source, destination, tag=""):
        self._data_step(source, Data(source, destination, tag), hops=0)

    def _deliver(self, to, sender, msg, gen, hops):
        key = (to, sender) if to < sender else (sender, to)
        if sender not in self.topology.neighbors[to] or self._edge_gen.get(key, 0) != gen:
            if isinstance(msg, Data):
                self.data_dropped += 1
            return
        if self.trace_enabled:
            line = encode_message(msg).decode("utf-8").rstrip("\n")
            self._trace(DELIVER, to, f"from={sender} {line}")
        for fn in self.listeners:
            fn(self.now, to, sender, msg)
        if isinstance(msg, Data):
            self._data_step(to, msg, hops)
            return
        jitter = 0.0
        if isinstance(msg, Ust):
            period = self.cfg.broadcast_period_s
            jitter = self._jitter_rng.uniform(period / 2, period)
        self._apply(to, *engine.handle_message(self.nodes[to], msg, sender, self.now, jitter))

    def _data_step(self, node, msg, hops):
        state, effects = engine.forward_data(self.nodes[node], msg, self.now)
        if not effects:
            self.data_dropped += 1
            return
        eff = effects[0]
        if isinstance(eff, DataDelivered):
            self.data_delivered += 1
        elif hops >= self.cfg.num_nodes:
            self.data_dropped += 1  # forwarding loop
        elif not self.topology.has_edge(node, eff.to):
            self.data_dropped += 1
            self._apply(node, *engine.on_link_down(state, eff.to, self.now))
        else:
            self._transmit(node, eff.to, msg, hops + 1)

    def _transmit(self, sender, to, msg, hops=0):
        key = (to, sender) if to < sender else (sender, to)
        self._push(self.now + self.cfg.per_hop_delay_s, DELIVER,
                   to, sender, msg, self._edge_gen.get(key, 0), hops)

    def _count(self, msg):
        self.messages_sent[msg.tag] = self.messages_sent.get(msg.tag, 0) + 1

    def _apply(self, node_id, state, effects):
        self.nodes[node_id] = state
        for eff in effects:
            if isinstance(eff, Broadcast):
                self._count(eff.msg)
                for nb in sorted(self.topology.neighbors[node_id]):
                    self._transmit(node_id, nb, eff.msg)
            elif isinstance(eff, Unicast):
                self._count(eff.msg)
                if self.topology.has_edge(node_id, eff.to):
                    self._transmit(node_id, eff.to, eff.msg)
                else:
                    self._apply(node_id, *engine.on_link_down(self.nodes[node_id], eff.to, self.now))
            elif isinstance(eff, TimerSet):
                self._push(eff.at, TIMER, node_id)
            elif isinstance(eff, DiscoveryCompleted):
                record = self._by_request.pop(eff.request_id, None)
                if record is not None:
                    record.end = self.now
                    record.outcome = Outcome.COMPLETED
                    record.provider = eff.provider
                    for fn in self.completion_listeners:
                        fn(node_id, record)
                    if self.data_on_completion:
                        self.send_data(node_id, eff.provider)


def run(cfg: ScenarioConfig, workload=None, **kwargs):
    """Run ``cfg`` to its horizon and return the MetricsReport."""
    return Simulator(cfg, workload=workload, **kwargs).run()
