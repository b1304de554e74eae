"""Scenario parameters, the ``key = value`` scenario file format and seeded streams."""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, fields


class ConfigInvalid(ValueError):
    pass


class UnknownKey(ConfigInvalid):
    def __init__(self, name, line):
        super().__init__(f"line {line}: unknown key {name!r}")
        self.name = name
        self.line = line


class ConfigTypeError(ConfigInvalid):
    def __init__(self, key, line, detail=""):
        super().__init__(f"line {line}: bad value for {key!r}{': ' + detail if detail else ''}")
        self.key = key
        self.line = line


class RangeError(ConfigInvalid):
    def __init__(self, key, detail=""):
        super().__init__(f"{key}: {detail or 'out of range'}")
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    num_nodes: int = 50
    sim_duration_s: float = 30.0
    broadcast_enabled: bool = True
    store_probability: float = 0.5
    num_services: int = 25
    link_probability: float = 0.08
    link_repair: bool = True
    churn_enabled: bool = True
    churn_interval_s: float = 0.5
    churn_probability: float = 0.5
    max_requests_per_tick: int = 5
    per_hop_delay_s: float = 0.01
    broadcast_period_s: float = 6.0
    sreq_ttl: int = 16
    service_lifetime_s: float = 18.0
    max_ust_entries: int = 64
    bucket_width_s: float = 0.2

    @property
    def dup_cache_ttl_s(self) -> float:
        return 2 * self.broadcast_period_s

    def validate(self) -> "ScenarioConfig":
        for name in ("churn_interval_s", "per_hop_delay_s", "broadcast_period_s",
                     "service_lifetime_s", "bucket_width_s"):
            if not getattr(self, name) > 0:
                raise RangeError(name, "must be > 0")
        if self.sim_duration_s < 0:
            raise RangeError("sim_duration_s", "must be >= 0")
        for name in ("store_probability", "link_probability", "churn_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise RangeError(name, "must lie in [0, 1]")
        if self.num_nodes < 2:
            raise RangeError("num_nodes", "must be >= 2")
        if self.num_services < 1:
            raise RangeError("num_services", "must be >= 1")
        if self.max_requests_per_tick < 0:
            raise RangeError("max_requests_per_tick", "must be >= 0")
        if self.sreq_ttl < 1:
            raise RangeError("sreq_ttl", "must be >= 1")
        if self.max_ust_entries < 1:
            raise RangeError("max_ust_entries", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise RangeError("seed", "must fit in 64 unsigned bits")
        return self

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes).validate()


FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def parse_value(key: str, text: str, line: int = 0):
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text, 10)
        return float(text)
    except ValueError:
        raise ConfigTypeError(key, line, f"expected {kind}, got {text!r}") from None


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse a scenario file. Omitted keys keep the defaults (or ``base``)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigTypeError(line, lineno, "expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in FIELD_TYPES:
            raise UnknownKey(key, lineno)
        values[key] = parse_value(key, value, lineno)
    return dataclasses.replace(base or ScenarioConfig(), **values).validate()


def format_config(cfg: ScenarioConfig) -> str:
    lines = ["# service discovery scenario"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


STREAMS = ("topology", "churn", "services", "workload", "capabilities", "jitter", "timers")


def stream(seed: int, name: str) -> random.Random:
    """Independent generator for one concern, so toggling one never shifts another."""
    if name not in STREAMS:
        raise KeyError(name)
    return random.Random(f"sdsim:{seed}:{name}")
