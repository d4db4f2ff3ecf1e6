"""``tpugen`` command line.

Machine-readable results go to stdout (or the ``--out`` target); the
effective-configuration banner and human summaries go to stderr.  Exit
codes: 0 success, 1 domain failure (Invalid, Failed, infeasible, tool
error), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

log = logging.getLogger("tpugen")

HELP_WIDTH = 100
_GLOBALS = ("out", "seed", "log_level", "config")


class UsageError(ValueError):
    pass


class DomainFailure(Exception):
    pass


def _fmt(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=32)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, formatter_class=_fmt)
    g = p.add_argument_group("global options")
    g.add_argument("--out", default=argparse.SUPPRESS,
                   help="output target: project directory (gen), JSONL file (dataset build), CSV (eval), else a JSON file")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every random choice (default 0)")
    g.add_argument("--log-level", default=argparse.SUPPRESS,
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="stderr log level (default WARNING)")
    g.add_argument("--config", default=argparse.SUPPRESS,
                   help="TOML/JSON file of option defaults, keyed by option name")
    return p


def _design_args(p):
    g = p.add_argument_group("design selection")
    g.add_argument("--spec", help="free-form design description")
    g.add_argument("--size", type=int, help="array size S (overrides --spec)")
    g.add_argument("--dw", type=int, help="data width")
    g.add_argument("--ww", type=int, help="weight width")
    g.add_argument("--mult", help="multiplier specifier, e.g. drum:k=6")
    g.add_argument("--adder", help="accumulator adder specifier, e.g. loa:m=4")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="tpugen", parents=[common], formatter_class=_fmt,
        description="Generate, validate and characterize output-stationary systolic-array TPUs.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_, formatter_class=_fmt)

    p = add("parse-spec", "extract a canonical design spec from text")
    p.add_argument("text", nargs="?", help="description text (read from stdin when absent)")
    p.add_argument("--render", action="store_true", help="also emit the rendered prompt")

    p = add("gen", "generate a Verilog project")
    _design_args(p)
    p.add_argument("--backend", choices=["stub", "http"], help="run the LLM pipeline instead of the emitter")
    p.add_argument("--fault-plan", default="ok", help="comma-separated stub faults (default ok)")
    p.add_argument("--no-rag", action="store_true", help="backend must return the whole project")
    p.add_argument("--store", help="module store directory (default: built-in library)")
    p.add_argument("--max-iters", type=int, default=3, help="repair iterations (default 3)")
    p.add_argument("--cap", type=int, default=16384, help="response size cap in bytes (default 16384)")
    p.add_argument("--endpoint", help="HTTP endpoint (default $TPUGEN_LLM_ENDPOINT)")
    p.add_argument("--timeout", type=float, default=60.0, help="HTTP timeout in seconds (default 60)")

    p = add("simulate", "run the cycle-level array model on one tile")
    _design_args(p)
    p.add_argument("--k", type=int, default=None, help="inner dimension for random matrices (default S)")
    p.add_argument("--a", help="JSON file holding matrix A (S x K)")
    p.add_argument("--b", help="JSON file holding matrix B (K x S)")

    p = add("metrics", "error statistics of one arithmetic unit")
    unit = p.add_mutually_exclusive_group(required=True)
    unit.add_argument("--mult", help="multiplier specifier")
    unit.add_argument("--adder", help="adder specifier")
    p.add_argument("--width", type=int, required=True, help="operand width W")
    p.add_argument("--mode", choices=["exhaustive", "sampled", "auto"], default="auto",
                   help="evaluation mode (default auto: exhaustive up to W=10)")
    p.add_argument("--samples", type=int, default=100_000, help="sampled pair count (default 100000)")

    p = add("retrieve", "resolve a top file's dependencies or rank modules for a query")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--top", help="Verilog top file whose closure to resolve")
    what.add_argument("--query", help="free-text query")
    p.add_argument("-k", type=int, default=5, help="results for --query (default 5)")
    p.add_argument("--store", help="module store directory (default: built-in library)")
    p.add_argument("--save-store", help="also write the store used to this directory")

    p = add("validate", "classify a project directory as Valid or Invalid")
    p.add_argument("project", help="project directory (top.v, rtl/, manifest.json)")
    p.add_argument("--spec", help="design description the header must agree with")
    p.add_argument("--store", help="module store directory for modules the project lacks")

    p = add("dataset", "dataset tooling")
    dsub = p.add_subparsers(dest="dataset_command", metavar="ACTION")
    dsub.required = True
    b = dsub.add_parser("build", parents=[common], formatter_class=_fmt,
                        help="build records over a design grid", description="build records over a design grid")
    b.add_argument("--grid", help="grid TOML/JSON file (default: the full built-in grid)")
    b.add_argument("--ppa", choices=["mock", "synth_tool", "pnr_tool"], default="mock",
                   help="PPA adapter (default mock)")
    b.add_argument("--tops", help="also write the flat top-file directory here")
    b.add_argument("--rejected", help="JSONL log of rejected configurations")
    b.add_argument("--start", type=int, default=0, help="first grid index (default 0)")
    b.add_argument("--limit", type=int, help="number of grid points to build")
    b.add_argument("--workload", default="1024,1024,1024", help="GEMM M,K,N for latency (default 1024,1024,1024)")
    b.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    b.add_argument("--no-timestamp", action="store_true", help="leave provenance timestamps empty")

    p = add("search", "choose a configuration under a PPA budget")
    p.add_argument("--budget", required=True, help="e.g. power=100mW,area=0.25mm2,latency=48ms")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", help="dataset JSONL to search")
    src.add_argument("--grid", help="grid file evaluated with the mock model (default: built-in grid)")
    p.add_argument("--objective", choices=["power", "area", "latency", "weighted"], default="power",
                   help="quantity to minimize (default power)")
    p.add_argument("--weights", help="weights for --objective weighted, e.g. power=1,area=2")
    p.add_argument("--workload", default="1024,1024,1024", help="GEMM M,K,N for grid latency")
    p.add_argument("--no-pareto", action="store_true", help="omit the Pareto list from the output")

    p = add("eval", "pass@k harness over a backend")
    p.add_argument("--specs", required=True, help="text file, one design description per line")
    p.add_argument("--backend", choices=["stub", "http"], default="stub", help="backend (default stub)")
    p.add_argument("--fault-plan", default="ok", help="comma-separated stub faults, cycled (default ok)")
    p.add_argument("--n", type=int, default=10, help="attempts per spec (default 10)")
    p.add_argument("--k", default="1,3,5,10", help="comma-separated k values (default 1,3,5,10)")
    p.add_argument("--no-rag", action="store_true", help="backend must return the whole project")
    p.add_argument("--cap", type=int, default=16384, help="response size cap in bytes (default 16384)")
    p.add_argument("--endpoint", help="HTTP endpoint (default $TPUGEN_LLM_ENDPOINT)")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _load_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read --config {path}: {e}") from None
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            from .dataset import tomllib
            data = tomllib.loads(text)
    except ValueError as e:
        raise UsageError(f"cannot parse --config {path}: {e}") from None
    if not isinstance(data, dict):
        raise UsageError("--config must hold a table of option defaults")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _emit(args, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    out = getattr(args, "out", None)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config(args):
    from .arith import parse_unit
    from .config import config_from_spec
    from .spec_parser import DesignSpec, canonicalize, parse_spec
    spec = parse_spec(args.spec) if args.spec else DesignSpec()
    changes = {}
    if args.size is not None:
        changes["rows"] = changes["cols"] = args.size
    if args.dw is not None:
        changes["dw"] = args.dw
    if args.ww is not None:
        changes["ww"] = args.ww
    if args.mult:
        changes["mult"] = parse_unit(args.mult, "mult")
    if args.adder:
        changes["adder"] = parse_unit(args.adder, "adder")
    spec = replace(spec, **changes)
    spec = canonicalize(spec)
    return spec, config_from_spec(spec)


def _workload(text):
    from .ppa import Workload
    try:
        m, k, n = (int(v) for v in text.split(","))
        return Workload(m, k, n)
    except ValueError:
        raise UsageError(f"--workload wants M,K,N integers, got {text!r}") from None


def _store(path, configs=()):
    from .module_store import library_index, load_store
    return load_store(path) if path else library_index(configs)


def _backend(args):
    from .pipeline import HttpBackend, StubBackend
    if args.backend == "http":
        return HttpBackend(endpoint=args.endpoint, timeout_s=getattr(args, "timeout", 60.0))
    return StubBackend([f.strip() for f in args.fault_plan.split(",") if f.strip()],
                       cycle=args.command == "eval")


_BUDGET_UNITS = {"power": {"mw": 1.0, "w": 1000.0}, "area": {"mm2": 1.0, "um2": 1e-6},
                 "latency": {"ms": 1.0, "s": 1000.0, "us": 1e-3}}


def parse_budget(text: str):
    """``power=100mW,area=0.25mm2,latency=48ms`` -> Budget (units optional)."""
    import re
    from .spec_parser import Budget
    values = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        m = re.fullmatch(r"(power|area|latency)\s*=\s*([0-9.eE+-]+)\s*([A-Za-z0-9]*)", part)
        if not m:
            raise UsageError(f"bad budget term {part!r}")
        key, num, unit = m.group(1), float(m.group(2)), m.group(3).lower()
        table = _BUDGET_UNITS[key]
        if unit and unit not in table:
            raise UsageError(f"unit {unit!r} not allowed for {key}; use one of {sorted(table)}")
        values[{"power": "power_mw", "area": "area_mm2", "latency": "latency_ms"}[key]] = \
            num * table.get(unit or next(iter(table)), 1.0)
    if not values:
        raise UsageError("empty budget")
    if any(v <= 0 for v in values.values()):
        raise UsageError("budget values must be positive")
    return Budget(**values)


# ---------------------------------------------------------------------------
# commands


def cmd_parse_spec(args):
    from .spec_parser import canonicalize, parse_spec, render_prompt
    text = args.text if args.text is not None else sys.stdin.read()
    spec = canonicalize(parse_spec(text))
    payload = {"spec": spec.to_dict()}
    if args.render:
        payload["prompt"] = render_prompt(spec)
    _emit(args, payload)


def cmd_gen(args):
    from .project import write_project
    from .rtl_emitter import emit_project
    spec, cfg = _config(args)
    out = getattr(args, "out", None)
    if not out:
        raise UsageError("gen needs --out DIR")
    if args.backend is None:
        project = emit_project(cfg)
        write_project(project, out)
        print(json.dumps({"verdict": "Valid", "project_id": project.project_id, "out": out}, sort_keys=True))
        return
    from .pipeline import generate, generate_without_rag
    backend = _backend(args)
    if args.no_rag:
        res = generate_without_rag(spec, backend, args.max_iters, args.cap, args.seed)
    else:
        res = generate(spec, backend, _store(args.store, [cfg]), args.max_iters, args.cap, args.seed)
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "transcript.json").write_text(json.dumps(res.to_dict(), indent=2) + "\n", encoding="utf-8")
    if res.valid:
        write_project(res.project, out)
    print(json.dumps({"verdict": res.verdict, "iterations": res.iterations,
                      "project_id": res.project.project_id if res.project else None, "out": out}, sort_keys=True))
    if not res.valid:
        raise DomainFailure(f"pipeline failed after {res.iterations} iterations")


def _read_matrix(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read matrix {path}: {e}") from None


def cmd_simulate(args):
    from .simulator import simulate
    _, cfg = _config(args)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    k = args.k or cfg.S
    A = _read_matrix(args.a) if args.a else rng.integers(0, 1 << cfg.dw, size=(cfg.S, k)).tolist()
    B = _read_matrix(args.b) if args.b else rng.integers(0, 1 << cfg.ww, size=(k, cfg.S)).tolist()
    res = simulate(cfg, A, B)
    _emit(args, {"config": cfg.to_dict(), "a": A, "b": B, **res.to_dict()})


def cmd_metrics(args):
    from .arith import parse_unit
    from .error_metrics import unit_report
    unit = parse_unit(args.mult, "mult") if args.mult else parse_unit(args.adder, "adder")
    rep = unit_report(unit, args.width, args.mode, args.samples, args.seed)
    _emit(args, rep.to_dict())


def cmd_retrieve(args):
    from .module_store import MissingModuleError, resolve_closure, retrieve_by_text, save_store
    from .project import VerilogModule
    top = None
    if args.top is not None:
        try:
            top = VerilogModule.from_source(Path(args.top).read_text(encoding="utf-8"))
        except OSError as e:
            raise UsageError(f"cannot read {args.top}: {e}") from None
    configs = []
    if top is not None and not args.store:
        from .validator import HeaderError, extract_config_from_top
        try:
            configs.append(extract_config_from_top(top))      # library plus the header's design modules
        except HeaderError:
            pass
    store = _store(args.store, configs)
    if args.save_store:
        save_store(store, args.save_store)
    if args.query is not None:
        if args.k < 1:
            raise UsageError("-k must be at least 1")
        _emit(args, {"query": args.query,
                     "results": [{"name": n, "score": s} for n, s in retrieve_by_text(store, args.query, args.k)]})
        return
    try:
        closure = resolve_closure(store, top)
    except MissingModuleError as e:
        _emit(args, {"top": top.name, "missing": list(e.names)})
        raise DomainFailure(str(e)) from None
    _emit(args, {"top": top.name, "closure": [m.name for m in closure]})


def cmd_validate(args):
    from .module_store import load_store
    from .project import load_project
    from .spec_parser import canonicalize, parse_spec
    from .validator import validate
    if not (Path(args.project) / "top.v").is_file():
        raise UsageError(f"{args.project} has no top.v")
    project = load_project(args.project)
    spec = canonicalize(parse_spec(args.spec)) if args.spec else None
    store = load_store(args.store) if args.store else None
    rep = validate(project, spec, store, seed=args.seed)
    payload = rep.to_dict()
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if not rep.valid:
        raise DomainFailure("project is Invalid: " + ", ".join(rep.codes))


def cmd_dataset(args):
    from .dataset import build_dataset, default_grid, enumerate_grid, load_grid, write_dataset, write_rejected
    import itertools
    out = getattr(args, "out", None)
    if not out:
        raise UsageError("dataset build needs --out FILE.jsonl")
    grid = load_grid(args.grid) if args.grid else default_grid()
    configs = enumerate_grid(grid, args.start)
    if args.limit is not None:
        configs = itertools.islice(configs, args.limit)
    records, rejected = build_dataset(configs, None, args.ppa, _workload(args.workload), args.seed,
                                      timestamp=not args.no_timestamp, jobs=args.jobs)
    write_dataset(records, out, args.tops)
    if args.rejected:
        write_rejected(rejected, args.rejected)
    print(json.dumps({"records": len(records), "rejected": len(rejected), "out": out}, sort_keys=True))
    if rejected:
        raise DomainFailure(f"{len(rejected)} configurations rejected")


def cmd_search(args):
    from .dataset import default_grid, enumerate_grid, load_grid, read_dataset
    from .search import entries_from_grid, entries_from_records, search
    budget = parse_budget(args.budget)
    if args.dataset:
        entries = entries_from_records(read_dataset(args.dataset))
    else:
        grid = load_grid(args.grid) if args.grid else default_grid()
        entries = entries_from_grid(enumerate_grid(grid), _workload(args.workload))
    weights = None
    if args.weights:
        try:
            weights = {k.strip(): float(v) for k, v in (p.split("=") for p in args.weights.split(","))}
        except ValueError:
            raise UsageError(f"bad --weights {args.weights!r}") from None
    outcome = search(budget, entries, args.objective, weights)
    payload = outcome.to_dict()
    if args.no_pareto:
        payload.pop("pareto")
    _emit(args, payload)
    if not outcome.feasible:
        raise DomainFailure("no configuration meets the budget")


def cmd_eval(args):
    from .pipeline import evaluate_backend, write_eval_csv
    from .spec_parser import canonicalize, parse_spec
    from .config import config_from_spec
    try:
        lines = [ln.strip() for ln in Path(args.specs).read_text(encoding="utf-8").splitlines()]
    except OSError as e:
        raise UsageError(f"cannot read {args.specs}: {e}") from None
    specs = [canonicalize(parse_spec(ln)) for ln in lines if ln and not ln.startswith("#")]
    if not specs:
        raise UsageError("no specs given")
    try:
        ks = [int(k) for k in args.k.split(",")]
    except ValueError:
        raise UsageError(f"bad --k {args.k!r}") from None
    store = None if args.no_rag else _store(None, [config_from_spec(s) for s in specs])
    rows = evaluate_backend(specs, _backend(args), args.n, ks, store, args.cap, args.seed)
    out = getattr(args, "out", None)
    if out:
        write_eval_csv(rows, out)
    else:
        sys.stdout.write("spec_id,check,k,pass_rate\n")
        for r in rows:
            sys.stdout.write(f"{r.spec_id},{r.check},{r.k},{r.pass_rate!r}\n")


COMMANDS = {"parse-spec": cmd_parse_spec, "gen": cmd_gen, "simulate": cmd_simulate, "metrics": cmd_metrics,
            "retrieve": cmd_retrieve, "validate": cmd_validate, "dataset": cmd_dataset, "search": cmd_search,
            "eval": cmd_eval}


def _apply_defaults(parser: argparse.ArgumentParser, defaults: dict) -> None:
    """Make ``defaults`` the default of matching options, relaxing ``required``."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_defaults(sub, defaults)
        elif action.dest in defaults and action.dest not in _GLOBALS:
            action.default = defaults[action.dest]
            action.required = False
    for group in parser._mutually_exclusive_groups:
        if any(a.dest in defaults for a in group._group_actions):
            group.required = False


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        defaults = _load_config_file(known.config) if known.config else {}
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"tpugen: error: {e}\n")
        return 2
    _apply_defaults(parser, defaults)
    args = parser.parse_args(argv)
    try:
        for key, value in (("out", None), ("seed", 0), ("log_level", "WARNING"), ("config", None)):
            if not hasattr(args, key):
                setattr(args, key, defaults.get(key, value))
        logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(message)s")
        banner = {k: v for k, v in sorted(vars(args).items())}
        sys.stderr.write("# tpugen " + json.dumps(banner, sort_keys=True, default=str) + "\n")
        COMMANDS[args.command](args)
        return 0
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"tpugen: error: {e}\n")
        return 2
    except DomainFailure as e:
        sys.stderr.write(f"tpugen: {e}\n")
        return 1
    except Exception as e:  # domain errors raised by the library
        from .ppa import AdapterError
        from .pipeline import BackendError
        if isinstance(e, (AdapterError, BackendError)):
            sys.stderr.write(f"tpugen: {type(e).__name__}: {e}\n")
            return 1
        if isinstance(e, (ValueError, LookupError)):
            sys.stderr.write(f"tpugen: error: {type(e).__name__}: {e}\n")
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
