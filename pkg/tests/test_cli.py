import subprocess
import sys

import pytest

from sdsim.cli import load_config, main
from sdsim.config import (
    ConfigTypeError,
    RangeError,
    ScenarioConfig,
    UnknownKey,
    format_config,
    parse_config,
)

SMALL = "num_nodes = 12\nsim_duration_s = 6\nnum_services = 5  # few types\n"


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.conf"
    path.write_text(SMALL)
    return path


# -- parse_config --------------------------------------------------------------

def test_empty_file_gives_defaults():
    assert parse_config("") == ScenarioConfig()
    assert parse_config("# only a comment\n\n") == ScenarioConfig()


def test_reference_scenario():
    cfg = parse_config("num_nodes = 50\nnum_services = 25\nsim_duration_s = 30\n")
    assert (cfg.num_nodes, cfg.num_services, cfg.sim_duration_s) == (50, 25, 30.0)


def test_range_error():
    with pytest.raises(RangeError) as info:
        parse_config("store_probability = 1.5\n")
    assert info.value.key == "store_probability"


def test_unknown_key_reports_line():
    with pytest.raises(UnknownKey) as info:
        parse_config("seed = 3\n\nnodes = 4\n")
    assert (info.value.name, info.value.line) == ("nodes", 3)


def test_type_error_reports_key_and_line():
    with pytest.raises(ConfigTypeError) as info:
        parse_config("seed = 3\nnum_nodes = lots\n")
    assert (info.value.key, info.value.line) == ("num_nodes", 2)
    with pytest.raises(ConfigTypeError):
        parse_config("broadcast_enabled = maybe\n")


def test_bool_spellings():
    assert parse_config("broadcast_enabled = off").broadcast_enabled is False
    assert parse_config("link_repair = Yes").link_repair is True


def test_defaults_round_trip():
    text = format_config(ScenarioConfig())
    assert parse_config(text) == ScenarioConfig()
    assert set(line.split(" = ")[0] for line in text.splitlines()[1:]) == \
        set(ScenarioConfig.__dataclass_fields__)


def test_print_config(capsys):
    assert main(["print-config"]) == 0
    assert parse_config(capsys.readouterr().out) == ScenarioConfig()


# -- precedence -----------------------------------------------------------------

def test_env_seed_and_set_precedence(small):
    assert load_config(str(small), environ={}).seed == 1
    assert load_config(str(small), environ={"SDSIM_SEED": "9"}).seed == 9
    cfg = load_config(str(small), ["seed=4", "num_nodes=20"], environ={"SDSIM_SEED": "9"})
    assert (cfg.seed, cfg.num_nodes) == (4, 20)


# -- run --------------------------------------------------------------------------

def test_run_writes_outputs(small, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(small), "--out", str(out)]) == 0
    assert (out / "histogram.csv").read_text().startswith("bucket_start_s,bucket_end_s,count\n")
    assert (out / "summary.csv").read_text().startswith("total,completed,local_hits,unanswered\n")
    assert not (out / "trace.log").exists()
    assert "total=" in capsys.readouterr().out


def test_run_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.conf"
    assert main(["run", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_run_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("churn_probability = 2\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "churn_probability" in capsys.readouterr().err


def test_run_byte_identical(small, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", str(small), "--out", str(out), "--trace"]) == 0
        outs.append(out)
    for f in ("histogram.csv", "summary.csv", "trace.log"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert b"\r\n" not in (outs[0] / "trace.log").read_bytes()


def test_builtin_scenarios():
    assert load_config("builtin:reference-50", environ={}).num_nodes == 50
    assert load_config("builtin:reference-100", environ={}).num_nodes == 100


def test_stream_isolation_between_arms(small, tmp_path):
    logs = {}
    for flag in ("true", "false"):
        out = tmp_path / flag
        main(["run", str(small), "--out", str(out), "--trace", "--set", f"broadcast_enabled={flag}"])
        lines = (out / "trace.log").read_text().splitlines()
        logs[flag] = [ln for ln in lines if ln.split("|")[1] in ("Churn", "WorkloadTick")]
    assert logs["true"] and logs["true"] == logs["false"]


# -- compare ------------------------------------------------------------------------

def test_compare_arity(small, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", str(small), "--seeds", "3", "--out", str(out)]) == 0
    rows = (out / "compare.csv").read_text().splitlines()
    assert rows[0] == "seed,arm,bucket_start_s,bucket_end_s,count"
    assert {tuple(r.split(",")[:2]) for r in rows[1:]} <= {
        (str(s), arm) for s in (1, 2, 3) for arm in ("broadcast", "no_broadcast")}
    summary = (out / "compare_summary.csv").read_text().splitlines()
    assert summary[0].startswith("seed,first_bucket_fraction_broadcast")
    assert [r.split(",")[0] for r in summary[1:]] == ["1", "2", "3", "mean"]


def test_compare_parallel_matches_serial(small, tmp_path):
    for jobs in ("1", "2"):
        main(["compare", str(small), "--seeds", "2", "--jobs", jobs, "--out", str(tmp_path / jobs)])
    for f in ("compare.csv", "compare_summary.csv"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "2" / f).read_bytes()


def test_compare_rejects_zero_seeds(small, capsys):
    assert main(["compare", str(small), "--seeds", "0"]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sdsim", "print-config"],
                          capture_output=True, text=True, check=True)
    assert "num_nodes = 50" in proc.stdout
