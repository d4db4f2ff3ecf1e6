"""Prompt -> LLM -> top file -> store assembly -> validation, with a repair loop.

Two backends share one contract (prompt text in, completion text out):
:class:`StubBackend` answers from the RTL emitter with scripted faults, and
:class:`HttpBackend` posts ``{"prompt": ...}`` to an endpoint expecting
``{"text": ...}`` back.  The pass@k harness at the bottom scores backends on
module-level and integration-level validity.
"""
from __future__ import annotations

import csv
import json
import math
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .config import config_from_spec
from .module_store import assemble_project
from .project import DependencyCycleError, MissingModuleError, VerilogModule, VerilogProject
from .rtl_emitter import TOP_NAME, ape_name, bus_width, emit_project, emit_top
from .spec_parser import DesignSpec, SpecError, canonicalize, parse_spec, render_prompt
from .validator import (HeaderError, Reason, ValidationReport, check_arith_rtl, extract_config_from_top,
                        validate)
from .verilog import VerilogParseError, parse_source

__all__ = [
    "FAULTS",
    "DEFAULT_CAP",
    "DEFAULT_MAX_ITERS",
    "BackendError",
    "TransportError",
    "BackendTimeout",
    "ResponseTooLarge",
    "ExtractionError",
    "StubBackend",
    "HttpBackend",
    "llm_complete",
    "extract_top",
    "extract_project",
    "TranscriptEntry",
    "PipelineResult",
    "generate",
    "generate_without_rag",
    "repair_prompt",
    "pass_at_k",
    "EvalRow",
    "evaluate_backend",
    "write_eval_csv",
    "read_eval_csv",
]

FAULTS = ("ok", "truncate_output", "hallucinate_module_name", "wrong_port_width", "bad_header")
DEFAULT_CAP = 16 * 1024
DEFAULT_MAX_ITERS = 3
REPAIR_MARK = "### Validation errors"
FULL_PROJECT_MARK = "### Output"
FULL_PROJECT_NOTE = (f"{FULL_PROJECT_MARK}\nReturn the complete project in one Verilog file: "
                     "every submodule followed by the top-level module.")
HALLUCINATED_SUFFIX = "_fast"


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class ResponseTooLarge(BackendError):
    pass


class ExtractionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# backends


def _prompt_body(prompt: str) -> str:
    cut = len(prompt)
    for mark in (REPAIR_MARK, FULL_PROJECT_MARK):
        i = prompt.find(mark)
        if i >= 0:
            cut = min(cut, i)
    return prompt[:cut]


def _inject(fault: str, text: str, top: str, cfg) -> str:
    """Apply ``fault`` to a response whose top-level source is ``top``."""
    if fault == "ok":
        return text
    if fault == "truncate_output":
        raw = text.encode("utf-8")
        return raw[: len(raw) // 2].decode("utf-8", errors="ignore")
    if fault == "hallucinate_module_name":
        ape = ape_name(cfg)
        bad = top.replace(f"{ape} pe", f"{ape}{HALLUCINATED_SUFFIX} pe")
    elif fault == "wrong_port_width":
        bw = bus_width(cfg)
        bad = top.replace(f"wire [{bw - 1}:0] ah0_0;", f"wire [{bw - 2}:0] ah0_0;", 1)
    elif fault == "bad_header":
        lines = top.split("\n")
        lines[1] = "// TPUGEN {" + lines[1][len("// TPUGEN {"):].replace('"', "", 2)
        bad = "\n".join(lines)
    else:
        raise ValueError(f"unknown fault {fault!r}; known: {FAULTS}")
    return text.replace(top, bad)


@dataclass
class StubBackend:
    """Deterministic backend that answers from the emitter.

    Call ``i`` uses ``fault_plan[i]``; past the end the last entry repeats, or
    the plan restarts when ``cycle`` is set.
    """

    fault_plan: list = field(default_factory=lambda: ["ok"])
    cycle: bool = False
    calls: int = 0
    kind: str = "deterministic_stub"

    def __post_init__(self):
        if not self.fault_plan:
            raise ValueError("fault_plan must not be empty")
        for f in self.fault_plan:
            if f not in FAULTS:
                raise ValueError(f"unknown fault {f!r}; known: {FAULTS}")

    def next_fault(self) -> str:
        i = self.calls
        self.calls += 1
        if self.cycle:
            return self.fault_plan[i % len(self.fault_plan)]
        return self.fault_plan[min(i, len(self.fault_plan) - 1)]

    def reset(self):
        self.calls = 0

    def complete(self, prompt: str) -> str:
        fault = self.next_fault()
        try:
            spec = canonicalize(parse_spec(_prompt_body(prompt)))
            cfg = config_from_spec(spec)
        except (SpecError, ValueError) as e:
            return f"// cannot design this: {e}\n"
        if FULL_PROJECT_MARK in prompt:
            project = emit_project(cfg)
            body, top = project.as_single_file(), project.top.source
        else:
            top = emit_top(cfg).source
            body = top
        return _inject(fault, f"```verilog\n{body}```\n", top, cfg)


@dataclass
class HttpBackend:
    """POST ``{"prompt": text}``; expects ``{"text": completion}``.

    Endpoint and bearer token default to TPUGEN_LLM_ENDPOINT and
    TPUGEN_LLM_TOKEN.
    """

    endpoint: Optional[str] = None
    token: Optional[str] = None
    timeout_s: float = 60.0
    kind: str = "http_endpoint"

    def __post_init__(self):
        self.endpoint = self.endpoint or os.environ.get("TPUGEN_LLM_ENDPOINT")
        self.token = self.token or os.environ.get("TPUGEN_LLM_TOKEN")

    def complete(self, prompt: str, cap: int = DEFAULT_CAP) -> str:
        if not self.endpoint:
            raise TransportError("no endpoint configured (set TPUGEN_LLM_ENDPOINT)")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(self.endpoint, data=json.dumps({"prompt": prompt}).encode("utf-8"),
                                     headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                # read one byte past the cap: enough to know it was exceeded
                raw = resp.read(4 * cap + 1024 + 1)
        except TimeoutError as e:
            raise BackendTimeout(f"no response within {self.timeout_s} s") from e
        except urllib.error.URLError as e:
            if isinstance(e.reason, TimeoutError):
                raise BackendTimeout(f"no response within {self.timeout_s} s") from e
            raise TransportError(f"request to {self.endpoint} failed: {e.reason}") from e
        except (OSError, ValueError) as e:
            raise TransportError(f"request to {self.endpoint} failed: {e}") from e
        try:
            text = json.loads(raw.decode("utf-8"))["text"]
        except (ValueError, KeyError, TypeError) as e:
            if len(raw) > 4 * cap + 1024:
                raise ResponseTooLarge(f"response body over {4 * cap + 1024} bytes") from None
            raise TransportError(f"malformed response body: {e}") from None
        if not isinstance(text, str):
            raise TransportError("response field 'text' is not a string")
        return text


def llm_complete(backend, prompt: str, cap: int = DEFAULT_CAP) -> str:
    """Completion text, refused when it exceeds ``cap`` bytes."""
    if isinstance(backend, HttpBackend):
        text = backend.complete(prompt, cap)
    else:
        text = backend.complete(prompt)
    size = len(text.encode("utf-8"))
    if size > cap:
        raise ResponseTooLarge(f"response of {size} bytes exceeds the {cap}-byte cap")
    return text


# ---------------------------------------------------------------------------
# extraction

_FENCE = re.compile(r"```[^\n]*\n(.*?)(?:```|\Z)", re.S)
_MODULE_START = re.compile(r"^\s*module\b", re.M)
_ENDMODULE = re.compile(r"\bendmodule\b[^\n]*\n?")


def _code_of(text: str) -> str:
    m = _FENCE.search(text)
    if m:
        return m.group(1)
    start = _MODULE_START.search(text)
    if not start:
        raise ExtractionError("response contains no module")
    # keep the comment lines directly above the module: the header lives there
    head = text.rfind("\n\n", 0, start.start())
    return text[head + 2 if head >= 0 else 0:]


def _split_modules(code: str) -> list:
    """Split Verilog text into per-module chunks (leading comments kept)."""
    chunks, pos = [], 0
    for m in _ENDMODULE.finditer(code):
        chunk = code[pos:m.end()]
        if chunk.endswith("endmodule"):
            chunk += "\n"
        chunks.append(chunk.lstrip("\n"))
        pos = m.end()
    if code[pos:].strip():
        # an unterminated trailing module: kept so the parser reports it
        chunks.append(code[pos:].lstrip("\n"))
    return [c for c in chunks if _MODULE_START.search(c)]


def extract_top(text: str) -> VerilogModule:
    """The single top-level module in a response."""
    chunks = _split_modules(_code_of(text))
    if not chunks:
        raise ExtractionError("response contains no module")
    if len(chunks) > 1:
        raise ExtractionError(f"response holds {len(chunks)} modules; expected one top-level module")
    try:
        return VerilogModule.from_source(chunks[0])
    except VerilogParseError as e:
        raise ExtractionError(f"top module does not parse: {e}") from None


def extract_project(text: str) -> VerilogProject:
    """A whole project from one response: the top is the one module nobody instantiates."""
    chunks = _split_modules(_code_of(text))
    if not chunks:
        raise ExtractionError("response contains no module")
    mods = []
    for c in chunks:
        try:
            mods.append(VerilogModule.from_source(c))
        except VerilogParseError as e:
            raise ExtractionError(f"module does not parse: {e}") from None
    used = {d for m in mods for d in m.deps}
    tops = [m for m in mods if m.name not in used]
    if len(tops) != 1:
        raise ExtractionError(f"expected one top-level candidate, found {[m.name for m in tops]}")
    top = tops[0]
    return VerilogProject(top, [m for m in mods if m is not top])


# ---------------------------------------------------------------------------
# generation loop


@dataclass
class TranscriptEntry:
    prompt: str
    response: Optional[str]
    report: ValidationReport

    def to_dict(self) -> dict:
        return {"prompt": self.prompt, "response": self.response, "report": self.report.to_dict()}


@dataclass
class PipelineResult:
    verdict: str                       # "Valid" or "Failed"
    project: Optional[VerilogProject]
    iterations: int
    transcript: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.verdict == "Valid"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "iterations": self.iterations,
                "project_id": self.project.project_id if self.project else None,
                "transcript": [t.to_dict() for t in self.transcript]}


def _invalid(code: str, detail: str, names=()) -> ValidationReport:
    return ValidationReport("Invalid", [Reason(code, detail, tuple(names))], [])


def repair_prompt(spec: DesignSpec, report: ValidationReport, full_project: bool = False) -> str:
    """The original prompt plus a fixed-format section listing every reason."""
    lines = [render_prompt(spec).rstrip("\n")]
    if full_project:
        lines.append(FULL_PROJECT_NOTE)
    lines.append(REPAIR_MARK)
    lines.append("The previous answer was rejected. Fix these problems:")
    for r in report.reasons:
        entry = f"- {r.code}"
        if r.names:
            entry += f" [{', '.join(r.names)}]"
        if r.detail:
            entry += f": {r.detail}"
        lines.append(entry)
    return "\n".join(lines) + "\n"


def _attempt(spec, backend, prompt, store, cap, rag: bool, seed: int):
    """One LLM round trip; returns (response, report, project or None)."""
    try:
        text = llm_complete(backend, prompt, cap)
    except BackendError as e:
        return None, _invalid("BackendError", f"{type(e).__name__}: {e}"), None
    try:
        if rag:
            top = extract_top(text)
        else:
            project = extract_project(text)
    except ExtractionError as e:
        return text, _invalid("Unparseable", str(e)), None
    if rag:
        try:
            project = assemble_project(store, top)
        except (MissingModuleError, DependencyCycleError):
            # the validator names what is missing
            project = VerilogProject(top, [])
    report = validate(project, spec, store if rag else None, seed=seed)
    return text, report, project


def _loop(spec, backend, store, max_iters, cap, rag, seed) -> PipelineResult:
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    spec = canonicalize(spec)
    prompt = render_prompt(spec) + ("" if rag else FULL_PROJECT_NOTE + "\n")
    transcript = []
    for it in range(1, max_iters + 1):
        text, report, project = _attempt(spec, backend, prompt, store, cap, rag, seed)
        transcript.append(TranscriptEntry(prompt, text, report))
        if report.valid:
            return PipelineResult("Valid", project, it, transcript)
        prompt = repair_prompt(spec, report, full_project=not rag)
    return PipelineResult("Failed", None, max_iters, transcript)


def generate(spec: DesignSpec, backend, store, max_iters: int = DEFAULT_MAX_ITERS,
             cap: int = DEFAULT_CAP, seed: int = 0) -> PipelineResult:
    """Top file from the backend, dependencies from ``store``."""
    if store is None:
        raise ValueError("generate needs a module store; use generate_without_rag otherwise")
    return _loop(spec, backend, store, max_iters, cap, True, seed)


def generate_without_rag(spec: DesignSpec, backend, max_iters: int = DEFAULT_MAX_ITERS,
                         cap: int = DEFAULT_CAP, seed: int = 0) -> PipelineResult:
    """The backend must return every module in one response."""
    return _loop(spec, backend, None, max_iters, cap, False, seed)


# ---------------------------------------------------------------------------
# pass@k harness


def pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Unbiased estimate 1 - C(n-c, k) / C(n, k), as an exact fraction."""
    for name, v in (("n", n), ("c", c), ("k", k)):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValueError(f"{name} must be an integer")
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return 1 - Fraction(math.comb(n - c, k), math.comb(n, k))


@dataclass(frozen=True)
class EvalRow:
    spec_id: str
    check: str          # "module" or "integration"
    k: int
    pass_rate: float


def _module_ok(text: str, store) -> bool:
    """Extracted module(s) parse, the header is readable and the arithmetic RTL matches its rule."""
    try:
        chunks = _split_modules(_code_of(text))
        mods = [parse_source(c)[0] for c in chunks]
    except (ExtractionError, VerilogParseError, IndexError):
        return False
    if not mods:
        return False
    top_chunk = next((c for c in chunks if re.search(rf"^\s*module\s+{TOP_NAME}\b", c, re.M)), chunks[-1])
    try:
        cfg = extract_config_from_top(top_chunk)
    except (HeaderError, ValueError):
        return False
    library = dict(_parsed_store(store)) if store is not None else {}
    library.update((m.name, m) for m in mods)
    return not check_arith_rtl(library, cfg)


_PARSED_STORES: dict = {}


def _parsed_store(store) -> dict:
    if store.digest not in _PARSED_STORES:
        _PARSED_STORES[store.digest] = {n: store.get(n).parsed() for n in store.names}
    return _PARSED_STORES[store.digest]


def evaluate_backend(specs, backend, n_attempts: int, ks, store=None, cap: int = DEFAULT_CAP,
                     seed: int = 0) -> list:
    """Per-spec and aggregate pass@k rows for the module and integration checks.

    Each attempt is one completion without repair.  With ``store`` the
    backend writes the top and the store supplies dependencies; without it the
    backend must return the whole project.
    """
    ks = sorted(set(ks))
    if not ks or n_attempts < ks[-1]:
        raise ValueError("n_attempts must be at least max(ks)")
    rag = store is not None
    rows, totals = [], {"module": [], "integration": []}
    for idx, spec in enumerate(specs):
        spec = canonicalize(spec)
        spec_id = spec.label or f"spec{idx}"
        prompt = render_prompt(spec) + ("" if rag else FULL_PROJECT_NOTE + "\n")
        c_mod = c_int = 0
        for _ in range(n_attempts):
            text, report, _ = _attempt(spec, backend, prompt, store, cap, rag, seed)
            c_int += report.valid
            c_mod += text is not None and _module_ok(text, store)
        for check, c in (("module", c_mod), ("integration", c_int)):
            totals[check].append(c)
            for k in ks:
                rows.append(EvalRow(spec_id, check, k, float(pass_at_k(n_attempts, c, k))))
    for check in ("module", "integration"):
        for k in ks:
            vals = [pass_at_k(n_attempts, c, k) for c in totals[check]]
            if vals:
                rows.append(EvalRow("ALL", check, k, float(sum(vals) / len(vals))))
    return rows


def write_eval_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["spec_id", "check", "k", "pass_rate"])
        for r in rows:
            w.writerow([r.spec_id, r.check, r.k, repr(r.pass_rate)])


def read_eval_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["spec_id", "check", "k", "pass_rate"]:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [EvalRow(r["spec_id"], r["check"], int(r["k"]), float(r["pass_rate"])) for r in reader]
