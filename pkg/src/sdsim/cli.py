"""Command-line front end.

Value precedence, lowest to highest: built-in defaults, the scenario file,
the ``SDSIM_SEED`` environment variable (seed only), ``--set key=value``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .config import FIELD_TYPES, ConfigInvalid, ScenarioConfig, format_config, parse_config, parse_value
from .simnet import Simulator
from .workload import HISTOGRAM_HEADER, histogram_csv, summary_csv

log = logging.getLogger("sdsim")

BUILTIN_PREFIX = "builtin:"
ARMS = (("broadcast", True), ("no_broadcast", False))


def read_config_text(config_path: str) -> str:
    if config_path.startswith(BUILTIN_PREFIX):
        name = config_path[len(BUILTIN_PREFIX):]
        ref = resources.files("sdsim.scenarios").joinpath(f"{name}.conf")
        if not ref.is_file():
            raise FileNotFoundError(f"no bundled scenario {name!r}")
        return ref.read_text(encoding="utf-8")
    return Path(config_path).read_text(encoding="utf-8")


def load_config(config_path: str, overrides=(), environ=None) -> ScenarioConfig:
    environ = os.environ if environ is None else environ
    cfg = parse_config(read_config_text(config_path))
    changes = {}
    if environ.get("SDSIM_SEED"):
        changes["seed"] = parse_value("seed", environ["SDSIM_SEED"])
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigInvalid(f"--set expects key=value, got {item!r}")
        if key not in FIELD_TYPES:
            raise ConfigInvalid(f"--set: unknown key {key!r}")
        changes[key] = parse_value(key, value)
    return dataclasses.replace(cfg, **changes).validate()


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def summary_line(report) -> str:
    return (f"total={report.total_requests} completed={report.completed} "
            f"local_hits={report.local_hits} unanswered={report.unanswered} "
            f"first_bucket_fraction={report.first_bucket_fraction():.4f}")


def cmd_run(config_path, out_dir, overrides=(), trace=False) -> int:
    try:
        cfg = load_config(config_path, overrides)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        sim = Simulator(cfg, trace=trace)
        report = sim.run()
        _write(out / "histogram.csv", histogram_csv(report))
        _write(out / "summary.csv", summary_csv(report))
        if trace:
            _write(out / "trace.log", "".join(line + "\n" for line in sim.trace_lines))
    except (OSError, ConfigInvalid) as exc:
        print(f"sdsim: error: {config_path}: {exc}", file=sys.stderr)
        return 1
    print(summary_line(report))
    return 0


def _run_arm(cfg):
    return Simulator(cfg).run()


def compare_runs(cfg: ScenarioConfig, seed_count: int, jobs: int = 1) -> list:
    """Paired runs over seeds ``cfg.seed .. cfg.seed + seed_count - 1``.

    Returns ``[(seed, {arm: MetricsReport})]``; both arms of a seed share
    topology, churn, placement and workload draws.
    """
    if seed_count < 1:
        raise ConfigInvalid("seed_count must be >= 1")
    configs = [
        (cfg.seed + i, arm, dataclasses.replace(cfg, seed=cfg.seed + i, broadcast_enabled=enabled))
        for i in range(seed_count)
        for arm, enabled in ARMS
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_arm, [c for _, _, c in configs]))
    else:
        reports = [_run_arm(c) for _, _, c in configs]
    results = {}
    for (seed, arm, _), report in zip(configs, reports):
        results.setdefault(seed, {})[arm] = report
    return sorted(results.items())


def compare_tables(results) -> tuple:
    rows = ["seed,arm," + HISTOGRAM_HEADER]
    summary = ["seed,first_bucket_fraction_broadcast,first_bucket_fraction_no_broadcast,paired_difference"]
    diffs, with_b, without_b = [], [], []
    for seed, arms in results:
        for arm, _ in ARMS:
            for start, end, count in arms[arm].histogram:
                rows.append(f"{seed},{arm},{start:.3f},{end:.3f},{count}")
        fb = arms["broadcast"].first_bucket_fraction()
        fn = arms["no_broadcast"].first_bucket_fraction()
        with_b.append(fb)
        without_b.append(fn)
        diffs.append(fb - fn)
        summary.append(f"{seed},{fb:.6f},{fn:.6f},{fb - fn:.6f}")
    k = len(diffs)
    summary.append(f"mean,{sum(with_b) / k:.6f},{sum(without_b) / k:.6f},{sum(diffs) / k:.6f}")
    return "\n".join(rows) + "\n", "\n".join(summary) + "\n"


def cmd_compare(config_path, out_dir, seed_count=1, overrides=(), jobs=1) -> int:
    try:
        cfg = load_config(config_path, overrides)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        results = compare_runs(cfg, seed_count, jobs)
        compare_text, summary_text = compare_tables(results)
        _write(out / "compare.csv", compare_text)
        _write(out / "compare_summary.csv", summary_text)
    except (OSError, ConfigInvalid) as exc:
        print(f"sdsim: error: {config_path}: {exc}", file=sys.stderr)
        return 1
    print(summary_text.splitlines()[-1])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdsim", description="MANET service discovery simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("config", help="scenario file, or builtin:reference-50 / builtin:reference-100")
    p_run.add_argument("--out", default="out", help="output directory (default: out)")
    p_run.add_argument("--trace", action="store_true", help="also write trace.log")
    p_run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p_cmp = sub.add_parser("compare", help="paired with/without-broadcast runs")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--seeds", type=int, default=1)
    p_cmp.add_argument("--out", default="out")
    p_cmp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_cmp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    sub.add_parser("print-config", help="print the all-defaults scenario file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.overrides, args.trace)
    if args.command == "compare":
        if args.seeds < 1:
            print("sdsim: error: --seeds must be >= 1", file=sys.stderr)
            return 1
        return cmd_compare(args.config, args.out, args.seeds, args.overrides, args.jobs)
    sys.stdout.write(format_config(ScenarioConfig()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
