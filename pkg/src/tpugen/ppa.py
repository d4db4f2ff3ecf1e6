"""Power/performance/area for TPU projects.

The ``mock`` adapter is a closed-form, explicitly synthetic model built from a
small gate table; it exists so the dataset and search tooling run offline.
The ``synth_tool`` (Yosys) and ``pnr_tool`` (OpenROAD) adapters run the real
tools in a private work directory and parse their reports with anchored
patterns; anything they cannot parse is an error, never a default.

Mock model, per configuration (W = operand width, N = accumulator width):

    area_um2 = S^2 * (mult + adder + regs + buffers) + 2S * pau
    power_mw = BETA * area_um2 * f_clk_ghz + LEAK * area_um2 + P_IDLE
    critical_path_ns = mult depth + adder depth + register overhead
    latency_ms = tiles * cycles(S, K) * clock_period

Buffers (the per-lane FIFOs of depth 2S and the tile memories) are folded into
the S^2 term, so for units without a PAU the area scales exactly with S^2.
"""
from __future__ import annotations

import math
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

from .arith import K_MAX, Unit, has_conditioning
from .config import TpuConfig
from .project import VerilogProject, write_project
from .rtl_arith import shift_bits
from .rtl_emitter import TOP_NAME, bus_width
from .simulator import cycle_count

__all__ = [
    "Workload",
    "PpaMetrics",
    "AdapterError",
    "AdapterUnavailable",
    "ReportParseError",
    "ToolError",
    "MockAdapter",
    "YosysAdapter",
    "OpenRoadAdapter",
    "ADAPTERS",
    "get_adapter",
    "run_ppa",
    "mock_ppa",
    "mult_area",
    "adder_area",
    "pau_area",
    "parse_yosys_report",
    "parse_openroad_report",
    "GATE",
    "MOCK_VERSION",
]

MOCK_VERSION = "mock-ppa 1"

# um^2 per cell and ns per level; synthetic, order-of-magnitude 45 nm values
GATE = {"and": 1.0, "or": 1.0, "mux": 2.0, "fa": 4.5, "dff": 5.0, "sram_bit": 1.2}
DELAY = {"gate": 0.02, "mux": 0.03, "fa": 0.04, "reg": 0.08}
BETA = 6e-4        # mW per um^2 per GHz of switching
LEAK = 2e-5        # mW per um^2
P_IDLE = 0.1       # mW


class AdapterError(RuntimeError):
    pass


class AdapterUnavailable(AdapterError):
    pass


class ReportParseError(AdapterError):
    pass


class ToolError(AdapterError):
    pass


@dataclass(frozen=True)
class Workload:
    """A GEMM of M x K by K x N, run in S x S output tiles."""

    M: int = 1024
    K: int = 1024
    N: int = 1024

    def __post_init__(self):
        if min(self.M, self.K, self.N) < 1:
            raise ValueError("workload dimensions must be positive")

    def cycles(self, S: int) -> int:
        tiles = math.ceil(self.M / S) * math.ceil(self.N / S)
        full, rest = divmod(self.K, K_MAX)
        per_tile = full * cycle_count(S, K_MAX) + (cycle_count(S, rest) if rest else 0)
        return tiles * per_tile

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PpaMetrics:
    area_um2: float
    power_mw: float
    critical_path_ns: float
    latency_ms: float
    tool: str

    def __post_init__(self):
        for name in ("area_um2", "power_mw", "critical_path_ns", "latency_ms"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v!r}")

    @property
    def area_mm2(self) -> float:
        return self.area_um2 / 1e6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PpaMetrics":
        return cls(float(d["area_um2"]), float(d["power_mw"]), float(d["critical_path_ns"]),
                   float(d["latency_ms"]), str(d["tool"]))


def _r(x: float) -> float:
    # fixed precision keeps serialized metrics platform-stable
    return round(x, 9)


# ---------------------------------------------------------------------------
# mock model: unit costs


def adder_area(unit: Unit, n: int) -> float:
    m = unit.param_dict(n)["m"] if unit.kind != "exact" else 0
    g = GATE
    if unit.kind == "exact" or m == 0:
        return n * g["fa"]
    if unit.kind == "loa":
        return (n - m) * g["fa"] + m * g["or"] + g["and"]
    if unit.kind == "loa_nocarry":
        return (n - m) * g["fa"] + m * g["or"]
    return (n - m) * g["fa"]     # trunc, soa: constant low part


def adder_delay(unit: Unit, n: int) -> float:
    m = unit.param_dict(n)["m"] if unit.kind != "exact" else 0
    if unit.kind == "exact" or m == 0:
        return n * DELAY["fa"]
    return max(n - m, 0) * DELAY["fa"] + DELAY["gate"]


def _mitchell(n: int, log_adder: Unit, m: int):
    g = GATE
    c = shift_bits(n)
    L = c + n - 1
    adder = Unit("adder", "exact") if m == 0 else Unit("adder", log_adder.kind, (("m", m),))
    area = (2 * n * g["or"] + 2 * n * c * g["mux"] + adder_area(adder, L) + 2 * n * (c + 1) * g["mux"])
    delay = c * DELAY["gate"] + c * DELAY["mux"] + adder_delay(adder, L) + (c + 1) * DELAY["mux"]
    return area, delay


_LOG_ADDER = {"alm_loa": "loa", "alm_maa3": "loa", "alm_soa": "soa"}


def _mult_cost(unit: Unit, w: int):
    p = unit.param_dict(w)
    g = GATE
    cell = g["and"] + g["fa"]
    c = shift_bits(w)
    k = unit.kind
    if k == "exact":
        return w * w * cell, 2 * w * DELAY["fa"]
    if k == "bam":
        vbl = p["vbl"]
        dropped = sum(1 for i in range(w) for j in range(w) if i + j < vbl)
        return (w * w - dropped) * cell, (2 * w - vbl / 2) * DELAY["fa"]
    if k == "trunc":
        n = w - p["mult_dw"]
        return n * n * cell, 2 * n * DELAY["fa"]
    if k in _LOG_ADDER:
        return _mitchell(w, Unit("adder", _LOG_ADDER[k], (("m", max(p["m"], 1)),)), p["m"])
    if k == "dralm":
        n = max(w - p["mult_dw"], 1)
        area, delay = _mitchell(n, Unit("adder", "exact"), 0)
        return area + 2 * w * c * g["mux"], delay + c * DELAY["mux"]
    if k == "drum":
        kk = p["k"]
        return kk * kk * cell + 2 * w * c * g["mux"], 2 * kk * DELAY["fa"] + c * DELAY["mux"]
    if k == "roba":
        return 3 * 2 * w * c * g["mux"] + 2 * 2 * w * g["fa"], c * DELAY["mux"] + 2 * w * DELAY["fa"]
    if k == "asm":
        nw, alph = p["nibble_width"], p["alphabets"]
        nibbles = w // nw
        area = alph * w * g["fa"] + nibbles * 2 * w * g["mux"] + max(nibbles - 1, 0) * 2 * w * g["fa"]
        return area, w * DELAY["fa"] + DELAY["mux"] + 2 * w * DELAY["fa"]
    raise AdapterError(f"mock model has no entry for multiplier {k!r}")


def mult_area(unit: Unit, w: int) -> float:
    """Area of the per-cell multiplier (the core, for PAU-conditioned kinds)."""
    return _mult_cost(unit, w)[0]


def pau_area(unit: Unit, w: int) -> float:
    """One edge PAU; zero for kinds without operand conditioning."""
    if not has_conditioning(unit):
        return 0.0
    g = GATE
    c = shift_bits(w)
    if unit.kind == "dralm":
        return w * g["and"] + w * g["or"] + w * c * g["mux"]
    if unit.kind == "roba":
        return w * (g["or"] + g["and"] + g["mux"])
    return w * g["or"] + w * c * g["mux"]     # drum: leading-one detect + segment select


def mock_ppa(cfg: TpuConfig, workload: Workload = Workload()) -> PpaMetrics:
    S, w, n = cfg.S, cfg.width, cfg.acc_width
    g = GATE
    m_area, m_delay = _mult_cost(cfg.mult, w)
    regs = (2 * bus_width(cfg) + n) * g["dff"]
    # per-lane FIFOs (2S deep) plus an S-deep tile buffer per lane, spread over the S^2 cells
    buffers = (cfg.dw + cfg.ww) * (2 * g["dff"] + g["sram_bit"])
    pe = m_area + adder_area(cfg.adder, n) + regs + buffers
    area = S * S * pe + 2 * S * pau_area(cfg.mult, w)
    f_ghz = 1.0 / cfg.clock_period_ns
    power = BETA * area * f_ghz + LEAK * area + P_IDLE
    crit = m_delay + adder_delay(cfg.adder, n) + DELAY["reg"]
    latency = workload.cycles(S) * cfg.clock_period_ns * 1e-6
    return PpaMetrics(_r(area), _r(power), _r(crit), _r(latency), MOCK_VERSION)


# ---------------------------------------------------------------------------
# adapters


def _project_config(project: VerilogProject) -> TpuConfig:
    from .validator import HeaderError, extract_config_from_top
    try:
        return extract_config_from_top(project.top)
    except (HeaderError, ValueError) as e:
        raise AdapterError(f"project header unreadable: {e}") from None


class MockAdapter:
    name = "mock"

    def version(self) -> str:
        return MOCK_VERSION

    def run(self, project: VerilogProject, workload: Workload = Workload()) -> PpaMetrics:
        return mock_ppa(_project_config(project), workload)


_FLOAT = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"
_YOSYS_VERSION = re.compile(r"^Yosys (0\.\d+)", re.M)
_YOSYS_AREA = re.compile(r"^\s*Chip area for (?:top )?module\s*(?:'\\?(\S+?)')?:\s*(" + _FLOAT + r")\s*$", re.M)
_YOSYS_ARRIVAL = re.compile(r"^\s*Latest arrival time in '\\?(\S+?)' is (" + _FLOAT + r"):?\s*$", re.M)


def parse_yosys_report(text: str, top: str = TOP_NAME) -> dict:
    """Area (um^2) and critical path (ns, from ps) of ``top`` in a Yosys log."""
    areas = [(mod, float(v)) for mod, v in _YOSYS_AREA.findall(text) if mod in ("", top)]
    if not areas:
        raise ReportParseError(f"no 'Chip area for module' line for {top}")
    arrivals = [float(v) for mod, v in _YOSYS_ARRIVAL.findall(text) if mod == top]
    if not arrivals:
        raise ReportParseError(f"no 'Latest arrival time' line for {top}")
    return {"area_um2": areas[-1][1], "critical_path_ns": arrivals[-1] / 1000.0}


_OR_AREA = re.compile(r"^Design area (" + _FLOAT + r") u\^2 \d+% utilization\.\s*$", re.M)
_OR_POWER = re.compile(r"^Total\s+(" + _FLOAT + r")\s+(" + _FLOAT + r")\s+(" + _FLOAT + r")\s+("
                       + _FLOAT + r")\s+100\.0%\s*$", re.M)
_OR_PERIOD = re.compile(r"^\S+ period_min = (" + _FLOAT + r") fmax = " + _FLOAT + r"\s*$", re.M)


def parse_openroad_report(text: str) -> dict:
    """Area, total power and minimum clock period from OpenROAD report output.

    Expects ``report_design_area``, ``report_power`` (watts) and
    ``report_clock_min_period`` lines.
    """
    a = _OR_AREA.findall(text)
    p = _OR_POWER.findall(text)
    t = _OR_PERIOD.findall(text)
    missing = [name for name, v in (("Design area", a), ("Total power", p), ("period_min", t)) if not v]
    if missing:
        raise ReportParseError(f"OpenROAD report lacks: {', '.join(missing)}")
    return {"area_um2": float(a[-1]), "power_mw": float(p[-1][3]) * 1000.0, "critical_path_ns": float(t[-1])}


def _which(env_var: str, default: str) -> str:
    path = os.environ.get(env_var) or shutil.which(default)
    if not path or not (Path(path).is_file() or shutil.which(path)):
        raise AdapterUnavailable(f"{default} not found (set {env_var})")
    return path


def _run(cmd: list, cwd: Path, timeout: float) -> str:
    try:
        proc = subprocess.run(cmd, cwd=cwd, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise ToolError(f"{cmd[0]} timed out after {timeout} s") from None
    except OSError as e:
        raise AdapterUnavailable(f"cannot run {cmd[0]}: {e}") from None
    if proc.returncode != 0:
        raise ToolError(f"{cmd[0]} exited with {proc.returncode}: {proc.stderr.strip()[-400:]}")
    return proc.stdout


class YosysAdapter:
    """Synthesis with Yosys against a Liberty file (TPUGEN_LIBERTY).

    Power is not reported by synthesis; it is derived from the reported area
    with the mock switching model, and the tool string says so.
    """

    name = "synth_tool"

    def __init__(self, binary=None, liberty=None, timeout: float = 3600.0):
        self.binary = binary or _which("TPUGEN_YOSYS", "yosys")
        self.liberty = liberty or os.environ.get("TPUGEN_LIBERTY")
        if not self.liberty or not Path(self.liberty).is_file():
            raise AdapterUnavailable("Yosys adapter needs a Liberty file (set TPUGEN_LIBERTY)")
        self.timeout = timeout

    def version(self) -> str:
        out = _run([self.binary, "-V"], Path.cwd(), 60)
        m = _YOSYS_VERSION.search(out)
        if not m:
            raise AdapterUnavailable(f"unrecognised Yosys version string {out.strip()!r}")
        return f"yosys {m.group(1)}"

    def run(self, project: VerilogProject, workload: Workload = Workload()) -> PpaMetrics:
        cfg = _project_config(project)
        tool = self.version()
        with tempfile.TemporaryDirectory(prefix="tpugen-yosys-") as tmp:
            root = write_project(project, tmp)
            files = " ".join(f"rtl/{m.name}.v" for m in project.modules) + " top.v"
            script = (f"read_verilog {files}\nsynth -top {TOP_NAME}\n"
                      f"dfflibmap -liberty {self.liberty}\nabc -liberty {self.liberty}\n"
                      f"stat -liberty {self.liberty}\nsta\n")
            (root / "flow.ys").write_text(script)
            rep = parse_yosys_report(_run([self.binary, "-q", "-l", "yosys.log", "flow.ys"], root, self.timeout)
                                     + (root / "yosys.log").read_text(errors="replace"))
        area = rep["area_um2"]
        power = BETA * area / cfg.clock_period_ns + LEAK * area + P_IDLE
        latency = workload.cycles(cfg.S) * cfg.clock_period_ns * 1e-6
        return PpaMetrics(_r(area), _r(power), _r(rep["critical_path_ns"]), _r(latency),
                          f"{tool} (power from area model)")


class OpenRoadAdapter:
    """Place-and-route with a user flow script (TPUGEN_OPENROAD_SCRIPT).

    The script runs in a directory holding the written project and must print
    the design area, power and minimum period reports.
    """

    name = "pnr_tool"

    def __init__(self, binary=None, script=None, timeout: float = 4 * 3600.0):
        self.binary = binary or _which("TPUGEN_OPENROAD", "openroad")
        self.script = script or os.environ.get("TPUGEN_OPENROAD_SCRIPT")
        if not self.script or not Path(self.script).is_file():
            raise AdapterUnavailable("OpenROAD adapter needs a flow script (set TPUGEN_OPENROAD_SCRIPT)")
        self.timeout = timeout

    def version(self) -> str:
        out = _run([self.binary, "-version"], Path.cwd(), 60).strip()
        if not re.match(r"^v?\d+\.\d+", out):
            raise AdapterUnavailable(f"unrecognised OpenROAD version string {out!r}")
        return f"openroad {out.split()[0]}"

    def run(self, project: VerilogProject, workload: Workload = Workload()) -> PpaMetrics:
        cfg = _project_config(project)
        tool = self.version()
        with tempfile.TemporaryDirectory(prefix="tpugen-openroad-") as tmp:
            root = write_project(project, tmp)
            out = _run([self.binary, "-no_init", "-exit", str(Path(self.script).resolve())], root, self.timeout)
        rep = parse_openroad_report(out)
        latency = workload.cycles(cfg.S) * cfg.clock_period_ns * 1e-6
        return PpaMetrics(_r(rep["area_um2"]), _r(rep["power_mw"]), _r(rep["critical_path_ns"]),
                          _r(latency), tool)


ADAPTERS = {"mock": MockAdapter, "synth_tool": YosysAdapter, "pnr_tool": OpenRoadAdapter}


def get_adapter(name: str):
    if name not in ADAPTERS:
        raise AdapterError(f"unknown PPA adapter {name!r}; known: {sorted(ADAPTERS)}")
    return ADAPTERS[name]()


def run_ppa(adapter, project: VerilogProject, workload: Workload = Workload()) -> PpaMetrics:
    if isinstance(adapter, str):
        adapter = get_adapter(adapter)
    return adapter.run(project, workload)
