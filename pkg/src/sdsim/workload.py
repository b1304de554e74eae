"""Service placement, request workload, request records and latency histograms."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Optional

from .config import ScenarioConfig
from .proto import ServiceEntry, ServiceQuery


class Outcome(enum.Enum):
    LOCAL_HIT = "local_hit"
    COMPLETED = "completed"
    UNANSWERED = "unanswered"


@dataclass
class RequestRecord:
    request_key: tuple  # (node, tick index, slot)
    query: ServiceQuery
    start: float
    end: Optional[float] = None
    outcome: Outcome = Outcome.UNANSWERED
    provider: Optional[int] = None

    @property
    def latency(self) -> Optional[float]:
        return None if self.end is None else self.end - self.start


@dataclass
class MetricsReport:
    total_requests: int = 0
    completed: int = 0
    local_hits: int = 0
    unanswered: int = 0
    histogram: list = field(default_factory=list)
    messages_sent_by_kind: dict = field(default_factory=dict)
    data_delivered: int = 0
    data_dropped: int = 0

    def first_bucket_fraction(self) -> float:
        if not self.total_requests:
            return 0.0
        first = self.histogram[0][2] if self.histogram else 0
        return first / self.total_requests


def service_type_name(index: int) -> str:
    return f"svc-{index}"


def assign_services(cfg: ScenarioConfig, rng) -> dict:
    """Place each of ``num_services`` types on one uniformly random node."""
    placement = {n: [] for n in range(cfg.num_nodes)}
    for i in range(cfg.num_services):
        node = rng.randrange(cfg.num_nodes)
        kind = service_type_name(i)
        placement[node].append(ServiceEntry(
            provider=node,
            service_name=f"{kind}@{node}",
            service_type=kind,
            description=f"urn:sdsim:{kind}:{node}",
        ))
    return placement


def tick_times(cfg: ScenarioConfig) -> list:
    count = math.ceil(cfg.sim_duration_s / cfg.churn_interval_s - 1e-9)
    return [k * cfg.churn_interval_s for k in range(max(count, 0))]


def generate_workload(cfg: ScenarioConfig, rng) -> list:
    """Requests as ``(time, node, query)``; a uniform 0..max draw per tick."""
    requests = []
    for t in tick_times(cfg):
        r = rng.randint(0, cfg.max_requests_per_tick)
        for _ in range(r):
            node = rng.randrange(cfg.num_nodes)
            kind = rng.randrange(cfg.num_services)
            requests.append((t, node, ServiceQuery(service_type_name(kind))))
    return requests


def bucket_index(latency: float, width: float) -> int:
    k = math.floor(latency / width)
    # Guard against float division landing one bucket off at a boundary.
    if (k + 1) * width <= latency:
        k += 1
    elif k * width > latency:
        k -= 1
    return k


def bucketize(latencies, bucket_width: float) -> list:
    """Half-open buckets ``[k*w, (k+1)*w)``, trailing empties omitted."""
    if bucket_width <= 0:
        raise ValueError("bucket_width must be > 0")
    counts = {}
    for lat in latencies:
        if lat < 0:
            raise ValueError(f"negative latency {lat!r}")
        k = bucket_index(lat, bucket_width)
        counts[k] = counts.get(k, 0) + 1
    if not counts:
        return []
    return [(k * bucket_width, (k + 1) * bucket_width, counts.get(k, 0))
            for k in range(max(counts) + 1)]


def build_report(records, messages_sent_by_kind, bucket_width, data_delivered=0, data_dropped=0):
    done = [r for r in records if r.outcome is not Outcome.UNANSWERED]
    return MetricsReport(
        total_requests=len(records),
        completed=len(done),
        local_hits=sum(r.outcome is Outcome.LOCAL_HIT for r in records),
        unanswered=len(records) - len(done),
        histogram=bucketize([r.latency for r in done], bucket_width),
        messages_sent_by_kind=dict(sorted(messages_sent_by_kind.items())),
        data_delivered=data_delivered,
        data_dropped=data_dropped,
    )


HISTOGRAM_HEADER = "bucket_start_s,bucket_end_s,count"
SUMMARY_HEADER = "total,completed,local_hits,unanswered"


def histogram_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    out.write(HISTOGRAM_HEADER + "\n")
    for start, end, count in report.histogram:
        out.write(f"{start:.3f},{end:.3f},{count}\n")
    return out.getvalue()


def summary_csv(report: MetricsReport) -> str:
    return (f"{SUMMARY_HEADER}\n"
            f"{report.total_requests},{report.completed},{report.local_hits},{report.unanswered}\n")
