import csv
import io
import json

import pytest

from duetsim.cli import main
from duetsim.config import AREA_DEFAULTS, ConfigError, parse_config
from duetsim.experiment import (
    COLUMNS,
    SCHEMA,
    cells,
    compute_adp,
    compute_speedup,
    platform_area,
    read_csv,
    report,
    run_config,
    to_csv,
)
from duetsim.trace import load_trace

LATENCY = """\
[experiment]
kind = latency
frequencies_mhz = sweep
check = false
"""

SMALL_BENCH = """\
[experiment]
benchmarks = sort32, popcount
modes = processor_only, fpsoc, duet

[benchmark.sort32]
slices = 1

[benchmark.popcount]
n = 4
"""


# -- config ----------------------------------------------------------------------------
def test_defaults_and_known_sections():
    cfg = parse_config(SMALL_BENCH + "\n[platform]\nsync_stages = 3\n[cache]\nmem_latency = 60\n[area]\nariane_mm2 = 2.0\n")
    assert cfg.kind == "benchmarks" and cfg.frequencies_mhz is None
    assert cfg.params == {"sort32": {"slices": 1}, "popcount": {"n": 4}}
    assert cfg.platform == {"sync_stages": 3}
    assert cfg.overrides()["cache"].mem_latency == 60
    assert cfg.area["ariane_mm2"] == 2.0 and cfg.area["socket_mm2"] == AREA_DEFAULTS["socket_mm2"]


@pytest.mark.parametrize(
    "text, line, needle",
    [
        ("[experiment]\nkind = latency\nfrobnicate = 1\n", 3, "frobnicate"),
        ("[experiment]\n\n[platform]\nsync_stages = 2\nwarp_drive = yes\n", 5, "warp_drive"),
        ("[cache]\nline_bytes = 16\nways = 4\n", 3, "ways"),
        ("[experiment]\nkind = fft\n", 2, "kind"),
        ("[experiment]\nbenchmarks = tangent, fft\n", 2, "fft"),
        ("[platform]\nfifo_depth = deep\n", 2, "fifo_depth"),
        ("[benchmark.sort32]\nslices = 1\ncolour = 3\n", 3, "colour"),
        ("[telemetry]\nx = 1\n", 1, "telemetry"),
    ],
)
def test_config_errors_name_line_and_field(text, line, needle):
    with pytest.raises(ConfigError) as ei:
        parse_config(text, "exp.ini")
    assert f"exp.ini:{line}" in str(ei.value)
    assert needle in str(ei.value)


def test_invalid_platform_values_are_rejected():
    with pytest.raises(ConfigError, match="positive"):
        parse_config("[platform]\nsync_stages = 0\n")


def test_overrides_apply_and_change_the_hash():
    a = parse_config(LATENCY)
    b = parse_config(LATENCY, overrides=["platform.sync_stages=3", "experiment.frequencies_mhz=100"])
    assert b.platform["sync_stages"] == 3 and b.frequencies_mhz == [100]
    assert a.sha256 != b.sha256
    with pytest.raises(ConfigError, match="section.key"):
        parse_config(LATENCY, overrides=["sync_stages"])


def test_unknown_key_is_rejected_before_simulation(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nkind = latency\nfrequncies_mhz = 100\n")
    assert main(["run", str(p), "-o", str(tmp_path / "out.csv")]) == 2
    assert "bad.ini:3" in capsys.readouterr().err
    assert not (tmp_path / "out.csv").exists()


# -- cells and CSV ---------------------------------------------------------------------
def test_latency_sweep_has_36_rows():
    cfg = parse_config(LATENCY)
    rows = run_config(cfg, 1)
    assert len(rows) == 36
    assert {r["benchmark"] for r in rows} == {c.name for c in cells(cfg)}
    for r in rows:
        parts = sum(float(r[f"{p}_ns"]) for p in ("noc", "fast_cache", "slow_cache", "cdc"))
        assert parts == pytest.approx(float(r["runtime_ns"]))


def test_benchmark_cells_run_the_baseline_once():
    cfg = parse_config(SMALL_BENCH, overrides=["experiment.frequencies_mhz=100, 200"])
    cs = cells(cfg)
    assert [c.mode for c in cs if c.name == "sort32"] == ["processor_only", "fpsoc", "fpsoc", "duet", "duet"]


def test_golden_schema():
    assert COLUMNS == (
        "experiment", "benchmark", "mode", "instance", "n_processors", "fpga_mhz", "runtime_ns",
        "noc_ns", "fast_cache_ns", "slow_cache_ns", "cdc_ns", "bytes", "gbps", "ok", "violations",
        "adapter_error", "digest", "note",
    )
    types = dict(SCHEMA)
    assert types["runtime_ns"] is float and types["fpga_mhz"] is int and types["digest"] is str


def test_csv_round_trip_and_types(tmp_path):
    cfg = parse_config(SMALL_BENCH)
    rows = run_config(cfg, 1)
    text = to_csv(rows, cfg.sha256)
    assert text.splitlines()[0] == f"# duetsim schema=1 config_sha256={cfg.sha256}"
    assert next(csv.reader(io.StringIO(text.splitlines()[1]))) == list(COLUMNS)
    p = tmp_path / "r.csv"
    p.write_text(text)
    meta, typed = read_csv(str(p))
    assert meta["config_sha256"] == cfg.sha256
    for r in typed:
        assert isinstance(r["runtime_ns"], float) and r["ok"] == 1 and r["violations"] == 0
        assert r["fpga_mhz"] is None if r["mode"] == "processor_only" else isinstance(r["fpga_mhz"], int)


def test_same_config_twice_is_byte_identical_serial_or_parallel(tmp_path):
    cfg = tmp_path / "b.ini"
    cfg.write_text(SMALL_BENCH)
    outs = []
    for j in ("1", "1", "3"):
        out = tmp_path / f"o{len(outs)}.csv"
        assert main(["run", str(cfg), "-o", str(out), "-j", j]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_frequency_refusal_becomes_a_failed_row():
    cfg = parse_config(SMALL_BENCH, overrides=["experiment.frequencies_mhz=500", "experiment.modes=duet"])
    rows = run_config(cfg, 1)
    assert all(r["ok"] == "0" and "timing" in r["note"] for r in rows)
    relaxed = parse_config(SMALL_BENCH, overrides=["experiment.frequencies_mhz=500", "experiment.modes=duet",
                                                   "experiment.strict_frequency=false"])
    assert all(r["ok"] == "1" for r in run_config(relaxed, 1))


def test_cli_check_and_report(tmp_path, capsys):
    cfg = tmp_path / "b.ini"
    cfg.write_text(SMALL_BENCH)
    out = tmp_path / "r.csv"
    assert main(["sweep", str(cfg), "-o", str(out), "--trace-dir", str(tmp_path / "tr"), "--set", "benchmark.sort32.slices=2"]) == 0
    traces = sorted((tmp_path / "tr").iterdir())
    assert len(traces) == 6
    assert main(["check", str(traces[0])]) == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    table = capsys.readouterr().out
    assert "geomean" in table and "sort32" in table


def test_check_flags_a_corrupted_trace(tmp_path, capsys):
    cfg = tmp_path / "b.ini"
    cfg.write_text(SMALL_BENCH)
    assert main(["run", str(cfg), "-o", str(tmp_path / "r.csv"), "--trace-dir", str(tmp_path / "tr")]) == 0
    path = tmp_path / "tr" / "popcount.duet.max.jsonl"
    events = [list(ev) for ev in load_trace(str(path))]
    ld = next(ev for ev in events if ev[0] == "ld")
    ld[-1] ^= 1  # a load that returns a value nobody wrote
    path.write_text("".join(json.dumps(ev) + "\n" for ev in events))
    assert main(["check", str(path)]) == 1
    assert "data" in capsys.readouterr().out


# -- speedup and ADP -------------------------------------------------------------------
def test_speedup_examples():
    base = {"runtime_ns": 2e6, "digest": "d"}
    assert compute_speedup(base, {"runtime_ns": 1e6, "digest": "d"}) == 2.0
    assert compute_speedup(base, dict(base)) == 1.0
    with pytest.raises(ValueError, match="digest"):
        compute_speedup(base, {"runtime_ns": 1e6, "digest": "e"})


def test_area_examples():
    a = AREA_DEFAULTS
    assert platform_area("processor_only", 4, 0, None, a) == pytest.approx(4 * (1.56 + 1.1))
    tile = 1.56 + 1.1
    assert platform_area("fpsoc", 1, 0, "tangent", a) == pytest.approx(tile + 0.47 * tile)
    assert platform_area("duet", 1, 0, "tangent", a) == pytest.approx(tile + 0.47 * tile + 0.21 + 1.1)
    assert platform_area("duet", 1, 2, "sort32", a) == pytest.approx(tile + 6.29 * tile + 0.21 + 2 * 0.04 + 2 * 1.1)
    with pytest.raises(ValueError, match="socket_mm2"):
        platform_area("duet", 1, 1, "popcount", {"ariane_mm2": 1.56})


def test_adp_is_monotone_in_area():
    a = AREA_DEFAULTS
    assert compute_adp(100.0, "duet", 1, 1, "popcount", a) > compute_adp(100.0, "fpsoc", 1, 1, "popcount", a)
    assert compute_adp(100.0, "fpsoc", 1, 1, "popcount", a) > compute_adp(100.0, "processor_only", 1, 1, None, a)


def test_report_refuses_mismatched_inputs():
    rows = [
        {"experiment": "benchmarks", "benchmark": "sort32", "mode": "processor_only", "fpga_mhz": None,
         "runtime_ns": 10.0, "digest": "a", "ok": 1},
        {"experiment": "benchmarks", "benchmark": "sort32", "mode": "duet", "fpga_mhz": 228,
         "runtime_ns": 5.0, "digest": "b", "ok": 1},
    ]
    with pytest.raises(ValueError, match="digest"):
        report(rows, AREA_DEFAULTS)
    rows[1]["digest"] = "a"
    (line,) = report(rows, AREA_DEFAULTS)
    assert line.speedup == 2.0
    assert line.norm_adp == pytest.approx(0.5 * platform_area("duet", 1, 2, "sort32", AREA_DEFAULTS) / (1.56 + 1.1))
