"""Design-grid enumeration and multi-level dataset records.

A record pairs one configuration with its code identity, PPA, unit error
statistics and three description levels: a high-level paragraph (the same
template the prompt generator renders), one-line block summaries and, for the
deepest level, references to the commented module sources.
"""
from __future__ import annotations

import datetime as _dt
import itertools
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .arith import ADDERS, MULTIPLIERS, Unit, acc_width_for, parse_unit
from .config import ConfigError, TpuConfig, spec_from_config
from .error_metrics import ErrorReport, exhaustive_report, sampled_report
from .project import digest
from .rtl_emitter import emit_project, emit_top
from .spec_parser import DATA_WIDTHS, SUPPORTED_SIZES, WEIGHT_WIDTHS, render_prompt
from .validator import validate
from .ppa import PpaMetrics, Workload, get_adapter

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "GridError",
    "DatasetError",
    "GridSpec",
    "default_grid",
    "load_grid",
    "enumerate_grid",
    "DatasetRecord",
    "Rejected",
    "unit_error_summary",
    "build_record",
    "build_dataset",
    "write_dataset",
    "read_dataset",
    "write_rejected",
    "SCHEMA_VERSION",
    "RECORD_ERROR_SAMPLES",
]

SCHEMA_VERSION = 1
RECORD_ERROR_SAMPLES = 20_000
EXHAUSTIVE_RECORD_W = 8


class GridError(ValueError):
    pass


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grid


def _expand_units(items, role: str) -> list:
    """Unit entries: specifier strings, or tables {kind=..., <param>=[values]}."""
    out = []
    for item in items:
        if isinstance(item, str):
            out.append(parse_unit(item, role))
            continue
        if not isinstance(item, dict) or "kind" not in item:
            raise GridError(f"bad {role} entry {item!r}")
        kind = str(item["kind"]).lower()
        names = sorted(k for k in item if k != "kind")
        axes = [item[n] if isinstance(item[n], list) else [item[n]] for n in names]
        for combo in itertools.product(*axes):
            out.append(Unit(role, kind, tuple(zip(names, (int(v) for v in combo)))))
    seen, uniq = set(), []
    for u in out:
        if u not in seen:
            seen.add(u)
            uniq.append(u)
    return uniq


def _int_axis(values, name) -> list:
    """Integers, or "a..b" inclusive range strings, sorted and deduplicated."""
    out = set()
    for v in values if isinstance(values, list) else [values]:
        if isinstance(v, str) and ".." in v:
            lo, hi = v.split("..", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(v))
    return sorted(out)


@dataclass(frozen=True)
class GridSpec:
    sizes: tuple
    dws: tuple
    wws: tuple
    mults: tuple
    adders: tuple
    clock_period_ns: float = 2.0

    def __post_init__(self):
        for name in ("sizes", "dws", "wws", "mults", "adders"):
            if not getattr(self, name):
                raise GridError(f"grid axis {name} is empty")
        bad = [s for s in self.sizes if s not in SUPPORTED_SIZES]
        bad += [d for d in self.dws if d not in DATA_WIDTHS]
        bad += [w for w in self.wws if w not in WEIGHT_WIDTHS]
        if bad:
            raise GridError(f"grid values outside the supported ranges: {bad}")

    @property
    def axes(self) -> tuple:
        return (self.sizes, self.dws, self.wws, self.mults, self.adders)

    def __len__(self) -> int:
        n = 1
        for axis in self.axes:
            n *= len(axis)
        return n

    def check_units(self) -> None:
        """Every unit must be legal at every operand width the grid produces."""
        widths = sorted({max(d, w) for d in self.dws for w in self.wws})
        problems = []
        for unit in self.mults + self.adders:
            for w in widths:
                try:
                    unit.param_dict(w if unit.role == "mult" else acc_width_for(w))
                except ValueError as e:
                    problems.append(f"{unit} at W={w}: {e}")
                    break
        if problems:
            raise GridError("grid holds illegal unit/width pairs: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "dws": list(self.dws), "wws": list(self.wws),
                "mults": [str(u) for u in self.mults], "adders": [str(u) for u in self.adders],
                "clock_period_ns": self.clock_period_ns}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        unknown = set(d) - {"sizes", "dws", "wws", "mults", "adders", "clock_period_ns"}
        if unknown:
            raise GridError(f"unknown grid keys {sorted(unknown)}")
        try:
            return cls(
                sizes=tuple(_int_axis(d.get("sizes", [8]), "sizes")),
                dws=tuple(_int_axis(d.get("dws", [8]), "dws")),
                wws=tuple(_int_axis(d.get("wws", [8]), "wws")),
                mults=tuple(_expand_units(d.get("mults", ["exact"]), "mult")),
                adders=tuple(_expand_units(d.get("adders", ["exact"]), "adder")),
                clock_period_ns=float(d.get("clock_period_ns", 2.0)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, GridError):
                raise
            raise GridError(f"bad grid: {e}") from None


def default_grid() -> GridSpec:
    """Every size, data width and weight width; every multiplier whose defaults
    are legal at all widths (ASM needs W divisible by its nibble width and is
    left out); every adder at defaults.  7 * 3 * 30 * 9 * 5 = 28,350 points."""
    mults = [Unit("mult", k) for k in sorted(MULTIPLIERS) if k != "asm"]
    adders = [Unit("adder", k) for k in sorted(ADDERS)]
    return GridSpec(SUPPORTED_SIZES, DATA_WIDTHS, WEIGHT_WIDTHS, tuple(mults), tuple(adders))


def load_grid(path) -> GridSpec:
    """GridSpec from a TOML or JSON file."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if p.suffix.lower() == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise GridError(f"cannot read grid file {p}: {e}") from None
    return GridSpec.from_dict(data.get("grid", data))


def enumerate_grid(grid: GridSpec, start: int = 0):
    """Configurations in lexicographic axis order (size, dw, ww, mult, adder).

    ``start`` skips directly to that index without generating the prefix.
    """
    grid.check_units()
    axes = grid.axes
    total = len(grid)
    if not 0 <= start <= total:
        raise GridError(f"start {start} outside [0, {total}]")
    for idx in range(start, total):
        digits, rest = [], idx
        for axis in reversed(axes):
            rest, d = divmod(rest, len(axis))
            digits.append(axis[d])
        S, dw, ww, mult, adder = reversed(digits)
        yield TpuConfig(S, dw, ww, mult, adder, clock_period_ns=grid.clock_period_ns)


# ---------------------------------------------------------------------------
# records


_ERROR_CACHE: dict = {}


def unit_error_summary(cfg: TpuConfig, seed: int = 0) -> dict:
    """Multiplier statistics at the operand width (exhaustive up to W=8) and
    accumulator-adder statistics (sampled) at the accumulator width."""
    w, n = cfg.width, cfg.acc_width
    mkey, akey = (cfg.mult, w, seed), (cfg.adder, n, seed)
    if mkey not in _ERROR_CACHE:
        if w <= EXHAUSTIVE_RECORD_W:
            _ERROR_CACHE[mkey] = exhaustive_report(cfg.mult, w).to_dict()
        else:
            _ERROR_CACHE[mkey] = sampled_report(cfg.mult, w, RECORD_ERROR_SAMPLES, seed).to_dict()
    if akey not in _ERROR_CACHE:
        _ERROR_CACHE[akey] = sampled_report(cfg.adder, n, RECORD_ERROR_SAMPLES, seed).to_dict()
    return {"mult": dict(_ERROR_CACHE[mkey]), "adder": dict(_ERROR_CACHE[akey])}


@dataclass
class DatasetRecord:
    id: str
    config: TpuConfig
    description: dict
    code: dict
    ppa: PpaMetrics
    error: dict
    provenance: dict = field(default_factory=dict)

    def content(self) -> dict:
        """Everything the id covers (provenance excluded)."""
        return {"config": self.config.to_dict(), "description": self.description, "code": self.code,
                "ppa": self.ppa.to_dict(), "error": self.error}

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA_VERSION, "id": self.id}
        d.update(self.content())
        d["provenance"] = self.provenance
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        if d.get("schema") != SCHEMA_VERSION:
            raise DatasetError(f"unsupported record schema {d.get('schema')!r}")
        rec = cls(d["id"], TpuConfig.from_dict(d["config"]), d["description"], d["code"],
                  PpaMetrics.from_dict(d["ppa"]), d["error"], d.get("provenance", {}))
        if rec.compute_id() != rec.id:
            raise DatasetError(f"record {rec.id} does not match its content digest")
        return rec

    def compute_id(self) -> str:
        return digest(json.dumps(self.content(), sort_keys=True))[:24]


@dataclass
class Rejected:
    config: TpuConfig
    reasons: list

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "reasons": self.reasons}


def _summary_line(source: str) -> str:
    first = source.split("\n", 1)[0]
    return first[3:].split(": ", 1)[-1] if first.startswith("// ") else ""


def describe(cfg: TpuConfig, project) -> dict:
    return {
        "high_level": render_prompt(spec_from_config(cfg)),
        "block_summary": {m.name: _summary_line(m.source) for m in [project.top] + project.modules},
        "detailed": {m.name: {"file": f"rtl/{m.name}.v", "digest": m.digest} for m in project.modules},
    }


def build_record(cfg: TpuConfig, store=None, adapter="mock", workload: Workload = Workload(),
                 seed: int = 0, timestamp: bool = True):
    """Emit, validate, measure and describe one configuration.

    Returns a :class:`DatasetRecord`, or a :class:`Rejected` entry when the
    project is Invalid.
    """
    if isinstance(adapter, str):
        adapter = get_adapter(adapter)
    project = emit_project(cfg)
    report = validate(project, spec_from_config(cfg), store, seed=seed)
    if not report.valid:
        return Rejected(cfg, [r.to_dict() for r in report.reasons])
    ppa = adapter.run(project, workload)
    rec = DatasetRecord(
        id="",
        config=cfg,
        description=describe(cfg, project),
        code={"top": project.top.name, "top_digest": project.top.digest, "project_id": project.project_id,
              "modules": [m.name for m in project.modules]},
        ppa=ppa,
        error=unit_error_summary(cfg, seed),
        provenance={"seed": seed, "adapter": adapter.name, "workload": workload.to_dict(),
                    "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
                    if timestamp else None},
    )
    rec.id = rec.compute_id()
    return rec


def build_dataset(configs, store=None, adapter="mock", workload: Workload = Workload(), seed: int = 0,
                  timestamp: bool = True, jobs: int = 1):
    """(records, rejected) over ``configs``, in input order."""
    if isinstance(adapter, str):
        adapter = get_adapter(adapter)
    configs = list(configs)
    if jobs > 1 and adapter.name == "mock":
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_build_one, [(c, adapter.name, workload, seed, timestamp) for c in configs],
                                    chunksize=8))
    else:
        results = [build_record(c, store, adapter, workload, seed, timestamp) for c in configs]
    records = [r for r in results if isinstance(r, DatasetRecord)]
    rejected = [r for r in results if isinstance(r, Rejected)]
    return records, rejected


def _build_one(args):
    cfg, adapter, workload, seed, timestamp = args
    return build_record(cfg, None, adapter, workload, seed, timestamp)


def write_dataset(records, path, tops_dir=None) -> Path:
    """JSONL, one record per line; with ``tops_dir`` also the flat top-file variant."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    if tops_dir is not None:
        tops = Path(tops_dir)
        tops.mkdir(parents=True, exist_ok=True)
        for rec in records:
            top = emit_top(rec.config)
            if top.digest != rec.code["top_digest"]:
                raise DatasetError(f"record {rec.id}: regenerated top differs from the recorded digest")
            (tops / f"{rec.id}.v").write_text(top.source, encoding="utf-8")
    return path


def read_dataset(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(DatasetRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError, ConfigError) as e:
                raise DatasetError(f"{path}:{lineno}: malformed record: {e}") from None
    return out


def write_rejected(rejected, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in rejected:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return path


def error_report_from_dict(d: dict) -> ErrorReport:
    return ErrorReport(**d)
