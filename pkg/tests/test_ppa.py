import os
import stat

import pytest

from tpugen.arith import Unit, parse_unit
from tpugen.config import TpuConfig
from tpugen.ppa import (MOCK_VERSION, AdapterError, AdapterUnavailable, MockAdapter, PpaMetrics, ReportParseError,
                        ToolError, Workload, YosysAdapter, get_adapter, mock_ppa, mult_area, parse_openroad_report,
                        parse_yosys_report, pau_area, run_ppa)
from tpugen.rtl_emitter import emit_project
from tpugen.simulator import cycle_count


def test_mock_exact_by_hand():
    # [DERIVED] gate table arithmetic for a 4x4 exact 8-bit array
    cell = 1.0 + 4.5
    mult = 64 * cell
    adder = 28 * 4.5
    regs = (2 * 9 + 28) * 5.0
    buffers = 16 * (2 * 5.0 + 1.2)
    area = 16 * (mult + adder + regs + buffers)
    got = mock_ppa(TpuConfig(4, 8, 8))
    assert got.area_um2 == pytest.approx(area) == pytest.approx(14195.2)
    assert got.power_mw == pytest.approx(6e-4 * area * 0.5 + 2e-5 * area + 0.1)
    assert got.critical_path_ns == pytest.approx(16 * 0.04 + 28 * 0.04 + 0.08)
    assert got.latency_ms == pytest.approx(256 * 256 * cycle_count(4, 1024) * 2.0 * 1e-6)
    assert got.tool == MOCK_VERSION


def test_area_scales_with_square_without_pau():
    a4 = mock_ppa(TpuConfig(4, 8, 8, parse_unit("bam", "mult"))).area_um2
    a16 = mock_ppa(TpuConfig(16, 8, 8, parse_unit("bam", "mult"))).area_um2
    assert a16 == pytest.approx(16 * a4)


def test_approximate_units_are_cheaper():
    exact = mult_area(Unit("mult", "exact"), 16)
    for kind in ("bam", "drum", "trunc", "alm_loa", "dralm"):
        assert mult_area(Unit("mult", kind), 16) < exact
    assert pau_area(Unit("mult", "bam"), 8) == 0 and pau_area(Unit("mult", "drum"), 8) > 0


def test_workload_cycles_split_k():
    wl = Workload(8, 5000, 8)
    assert wl.cycles(4) == 4 * (cycle_count(4, 4096) + cycle_count(4, 904))
    with pytest.raises(ValueError):
        Workload(0, 1, 1)


def test_metrics_validation_and_round_trip():
    m = PpaMetrics(1.0, 2.0, 3.0, 4.0, "x")
    assert PpaMetrics.from_dict(m.to_dict()) == m and m.area_mm2 == 1e-6
    with pytest.raises(ValueError):
        PpaMetrics(-1.0, 2.0, 3.0, 4.0, "x")
    with pytest.raises(ValueError):
        PpaMetrics(float("nan"), 2.0, 3.0, 4.0, "x")


def test_mock_adapter_reads_header():
    cfg = TpuConfig(4, 8, 8, parse_unit("roba", "mult"))
    assert run_ppa("mock", emit_project(cfg)) == mock_ppa(cfg)
    assert MockAdapter().version() == MOCK_VERSION
    with pytest.raises(AdapterError):
        get_adapter("spice")


YOSYS_LOG = """\
Yosys 0.38 (git sha1 abc)
   Chip area for module '\\fifo_w8_d8': 100.5
   Chip area for module '\\tpu_top': 12345.678
Latest arrival time in '\\tpu_top' is 1534.2:
"""


def test_parse_yosys_report():
    rep = parse_yosys_report(YOSYS_LOG)
    assert rep == {"area_um2": 12345.678, "critical_path_ns": pytest.approx(1.5342)}
    with pytest.raises(ReportParseError):
        parse_yosys_report("Chip area for module 'other': 1\n")
    with pytest.raises(ReportParseError):
        parse_yosys_report("   Chip area for module '\\tpu_top': 5\n")


def test_parse_openroad_report():
    text = ("Design area 5000.25 u^2 43% utilization.\n"
            "Total                  1.0e-03   2.0e-03   5.0e-06   3.005e-03 100.0%\n"
            "core_clock period_min = 1.85 fmax = 540.54\n")
    rep = parse_openroad_report(text)
    assert rep["area_um2"] == 5000.25 and rep["critical_path_ns"] == 1.85
    assert rep["power_mw"] == pytest.approx(3.005)
    with pytest.raises(ReportParseError, match="Total power"):
        parse_openroad_report(text.splitlines()[0])


def test_tools_unavailable(monkeypatch, tmp_path):
    monkeypatch.setenv("PATH", str(tmp_path))
    monkeypatch.delenv("TPUGEN_YOSYS", raising=False)
    monkeypatch.delenv("TPUGEN_OPENROAD", raising=False)
    for name in ("synth_tool", "pnr_tool"):
        with pytest.raises(AdapterUnavailable):
            get_adapter(name)


def _script(path, body):
    path.write_text("#!/bin/sh\n" + body)
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


def test_yosys_adapter_with_fake_tool(tmp_path):
    log = tmp_path / "canned.log"
    log.write_text(YOSYS_LOG)
    fake = _script(tmp_path / "yosys", f'if [ "$1" = "-V" ]; then echo "Yosys 0.38 (fake)"; exit 0; fi\n'
                                        f'cp {log} yosys.log\n')
    lib = tmp_path / "cells.lib"
    lib.write_text("library(x) {}\n")
    cfg = TpuConfig(4, 8, 8)
    got = YosysAdapter(binary=fake, liberty=str(lib)).run(emit_project(cfg))
    assert got.area_um2 == 12345.678 and got.critical_path_ns == pytest.approx(1.5342)
    assert got.tool == "yosys 0.38 (power from area model)"
    assert got.latency_ms == mock_ppa(cfg).latency_ms
    failing = _script(tmp_path / "yosys_bad", 'if [ "$1" = "-V" ]; then echo "Yosys 0.38"; exit 0; fi\nexit 3\n')
    with pytest.raises(ToolError):
        YosysAdapter(binary=failing, liberty=str(lib)).run(emit_project(cfg))
    with pytest.raises(AdapterUnavailable):
        YosysAdapter(binary=fake, liberty=str(tmp_path / "missing.lib"))


@pytest.mark.skipif(os.name != "posix", reason="shell scripts")
def test_yosys_version_check(tmp_path):
    fake = _script(tmp_path / "yosys", 'echo "something else"\n')
    lib = tmp_path / "c.lib"
    lib.write_text("")
    with pytest.raises(AdapterUnavailable):
        YosysAdapter(binary=fake, liberty=str(lib)).version()
