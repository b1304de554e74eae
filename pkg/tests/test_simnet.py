import random
from collections import deque

import pytest

from sdsim.config import ConfigInvalid, ScenarioConfig, stream
from sdsim.proto import Data, ServiceEntry, ServiceQuery, Sreq
from sdsim.simnet import Simulator, Topology, apply_churn, build_topology, run
from sdsim.workload import Outcome

PRINTER = ServiceQuery("printer")


def line_sim(**kw):
    cfg = ScenarioConfig(num_nodes=3, broadcast_enabled=False, churn_enabled=False,
                         sim_duration_s=3.0, num_services=1)
    services = {2: [ServiceEntry(2, "hp", "printer")]}
    return Simulator(cfg, topology=Topology.from_edges(3, [(0, 1), (1, 2)]),
                     services=services, can_store=[True] * 3,
                     workload=[(1.0, 0, PRINTER)], **kw)


# -- topology -------------------------------------------------------------------

def test_two_nodes_full_density():
    cfg = ScenarioConfig(num_nodes=2, link_probability=1.0)
    assert build_topology(cfg, random.Random(0)).edges() == [(0, 1)]


def test_zero_density_repaired_into_path():
    cfg = ScenarioConfig(num_nodes=4, link_probability=0.0)
    topo = build_topology(cfg, random.Random(0))
    assert topo.edges() == [(0, 1), (1, 2), (2, 3)]
    cfg = ScenarioConfig(num_nodes=4, link_probability=0.0, link_repair=False)
    assert build_topology(cfg, random.Random(0)).edges() == []


def test_topology_seed_determinism():
    cfg = ScenarioConfig(seed=42, num_nodes=50, link_probability=0.08)
    a = build_topology(cfg, stream(42, "topology"))
    b = build_topology(cfg, stream(42, "topology"))
    assert a.adjacency == b.adjacency
    assert len(a.components()) == 1


def test_topology_invariants():
    with pytest.raises(ValueError):
        Topology.from_matrix([[False, True], [False, False]])
    with pytest.raises(ValueError):
        Topology.from_matrix([[True, False], [False, False]])
    topo = Topology.from_matrix([[False, True], [True, False]])
    assert topo.has_edge(1, 0) and topo.without_edge(0, 1).edges() == []


def test_churn_noops():
    full = Topology.from_edges(3, [(0, 1), (0, 2), (1, 2)])
    add = ScenarioConfig(churn_probability=1.0)
    assert apply_churn(full, add, random.Random(1)) == (full, [])
    empty = Topology(3)
    remove = ScenarioConfig(churn_probability=0.0)
    assert apply_churn(empty, remove, random.Random(1)) == (empty, [])


def test_churn_replays():
    cfg = ScenarioConfig(num_nodes=10)

    def history(seed):
        topo, out = build_topology(cfg, stream(seed, "topology")), []
        rng = stream(seed, "churn")
        for _ in range(40):
            topo, removed = apply_churn(topo, cfg, rng)
            out.append((tuple(topo.edges()), tuple(removed)))
        return out

    assert history(7) == history(7)
    assert history(7) != history(8)


# -- line scenario -----------------------------------------------------------------

def test_line_discovery_timing_and_route():
    sim = line_sim()
    done = []
    sim.completion_listeners.append(lambda node, rec: done.append((sim.now, node, rec)))
    report = sim.run()
    (t, node, rec), = done
    assert node == 0 and rec.provider == 2
    assert t == pytest.approx(1.04, abs=1e-9)
    assert sim.nodes[0].routing_table[2].hop_count == 2
    assert report.completed == 1 and report.histogram == [(0.0, 0.2, 1)]


def test_line_data_reuses_route():
    sim = line_sim(data_on_completion=True)
    seen = []
    sim.listeners.append(lambda now, to, frm, msg: seen.append((now, msg)))
    report = sim.run()
    data = [m for _, m in seen if isinstance(m, Data)]
    assert len(data) == 2 and report.data_delivered == 1 and report.data_dropped == 0
    sreqs_after = [t for t, m in seen if isinstance(m, Sreq) and t > 1.04 + 1e-9]
    assert sreqs_after == []
    assert report.messages_sent_by_kind.get("SREQ") == 2  # origin + node 1


def test_line_link_break_drops_route():
    sim = line_sim()
    sim.run_until(2.0)
    sim.break_link(1, 2)
    sim.run_until(3.0)
    assert 2 not in sim.nodes[0].routing_table
    assert 2 not in sim.nodes[1].routing_table


def test_zero_duration_empty_report():
    report = run(ScenarioConfig(sim_duration_s=0.0, num_nodes=5))
    assert report.total_requests == 0 and report.histogram == []


def test_topology_size_mismatch():
    with pytest.raises(ConfigInvalid):
        Simulator(ScenarioConfig(num_nodes=3), topology=Topology(4))


# -- properties over seeded runs ----------------------------------------------------------

class Recording(Simulator):
    """Remembers send times so deliveries can be checked against them."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.sent = {}
        self.violations = []
        self.listeners.append(self._check)

    def _transmit(self, sender, to, msg, hops=0):
        self.sent.setdefault((sender, to, id(msg)), deque()).append(self.now)
        super()._transmit(sender, to, msg, hops)

    def _check(self, now, to, sender, msg):
        if not self.topology.has_edge(to, sender):
            self.violations.append(("link", now, sender, to))
        sent_at = self.sent[(sender, to, id(msg))].popleft()
        if now + 1e-12 < sent_at + self.cfg.per_hop_delay_s:
            self.violations.append(("causality", now, sent_at))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_causality_and_link_consistency(seed):
    cfg = ScenarioConfig(seed=seed, num_nodes=30, sim_duration_s=15.0)
    sim = Recording(cfg)
    sim.run()
    assert sim.violations == []


@pytest.mark.parametrize("broadcast", [True, False])
def test_run_determinism(broadcast):
    cfg = ScenarioConfig(seed=5, num_nodes=30, broadcast_enabled=broadcast)
    a, b = Simulator(cfg, trace=True), Simulator(cfg, trace=True)
    assert a.run() == b.run()
    assert a.trace_lines == b.trace_lines and a.trace_lines


@pytest.mark.parametrize("seed", range(4))
def test_conservation(seed):
    cfg = ScenarioConfig(seed=seed, num_nodes=40)
    sim = Simulator(cfg)
    report = sim.run()
    assert report.completed + report.unanswered == report.total_requests == len(sim.workload)
    assert sum(c for _, _, c in report.histogram) == report.completed
    assert report.local_hits <= report.completed
    for rec in sim.records:
        if rec.outcome is Outcome.LOCAL_HIT:
            assert rec.latency == 0
        if rec.outcome is Outcome.UNANSWERED:
            assert rec.end is None
        else:
            assert rec.end >= rec.start


def diameter(topo):
    best = 0
    for src in range(topo.n):
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in topo.neighbors[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        assert len(dist) == topo.n
        best = max(best, max(dist.values()))
    return best


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("broadcast", [True, False])
def test_static_network_answers_everything(seed, broadcast):
    cfg = ScenarioConfig(seed=seed, num_nodes=25, num_services=10, link_probability=0.12,
                         churn_enabled=False, broadcast_enabled=broadcast)
    topo = build_topology(cfg, stream(seed, "topology"))
    cfg = cfg.with_overrides(sreq_ttl=max(diameter(topo), 1) + 1)
    report = Simulator(cfg, topology=topo).run()
    assert report.total_requests > 0 and report.unanswered == 0


def test_without_broadcast_sends_no_ust():
    report = run(ScenarioConfig(seed=3, num_nodes=20, broadcast_enabled=False))
    assert "UST" not in report.messages_sent_by_kind
    report = run(ScenarioConfig(seed=3, num_nodes=20))
    assert report.messages_sent_by_kind["UST"] > 0
