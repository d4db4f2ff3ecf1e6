"""Verilog module and project containers, manifests and on-disk layout."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .verilog import Module, parse_module

__all__ = ["VerilogModule", "VerilogProject", "digest", "make_manifest", "write_project", "load_project",
           "topo_order", "MissingModuleError", "DependencyCycleError"]


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class VerilogModule:
    """One module: its name, source text, ports and instantiated module names."""

    name: str
    source: str
    ports: tuple = ()      # (name, direction, width)
    deps: tuple = ()
    description: str = ""

    @classmethod
    def from_source(cls, source: str, description: str = "") -> "VerilogModule":
        mod = parse_module(source)
        return cls(mod.name, source, tuple((p.name, p.direction, p.width) for p in mod.ports),
                   tuple(mod.deps), description)

    def parsed(self) -> Module:
        return parse_module(self.source)

    @property
    def digest(self) -> str:
        return digest(self.source)


def make_manifest(top: VerilogModule, modules: list) -> dict:
    """Manifest derived only from source contents, so equal projects get equal manifests."""
    from .validator import HeaderError, extract_config_from_top  # local: validator imports project
    try:
        config = extract_config_from_top(top).to_dict()
    except (HeaderError, ValueError):
        config = None
    entries = [{"name": m.name, "digest": m.digest} for m in modules]
    pid = digest(json.dumps({"top": top.digest, "modules": entries}, sort_keys=True))[:16]
    return {
        "project_id": pid,
        "config": config,
        "top": {"name": top.name, "digest": top.digest},
        "modules": entries,
    }


@dataclass
class VerilogProject:
    top: VerilogModule
    modules: list = field(default_factory=list)   # dependency order, leaves first
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.manifest:
            self.manifest = make_manifest(self.top, self.modules)

    @property
    def project_id(self) -> str:
        return self.manifest["project_id"]

    def module_map(self) -> dict:
        return {m.name: m for m in self.modules}

    def total_bytes(self) -> int:
        return len(self.top.source.encode()) + sum(len(m.source.encode()) for m in self.modules)

    def as_single_file(self) -> str:
        """All modules followed by the top, as one Verilog text."""
        return "".join(m.source for m in self.modules) + self.top.source


def write_project(project: VerilogProject, out_dir, use_id: bool = False) -> Path:
    """Write ``top.v``, ``rtl/<module>.v`` and ``manifest.json``.

    With ``use_id`` the files go into ``out_dir/<project_id>``.
    """
    root = Path(out_dir)
    if use_id:
        root = root / project.project_id
    (root / "rtl").mkdir(parents=True, exist_ok=True)
    (root / "top.v").write_text(project.top.source, encoding="utf-8")
    for m in project.modules:
        (root / "rtl" / f"{m.name}.v").write_text(m.source, encoding="utf-8")
    (root / "manifest.json").write_text(json.dumps(project.manifest, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return root


def load_project(path) -> VerilogProject:
    """Read a project directory; module order comes from the manifest when present.

    Sources that fail to parse are kept with an empty port list so the
    validator can report them.
    """
    root = Path(path)
    top_src = (root / "top.v").read_text(encoding="utf-8")
    manifest_path = root / "manifest.json"
    order = []
    if manifest_path.exists():
        try:
            order = [e["name"] for e in json.loads(manifest_path.read_text(encoding="utf-8"))["modules"]]
        except (ValueError, KeyError, TypeError):
            order = []
    files = {p.stem: p for p in sorted((root / "rtl").glob("*.v"))} if (root / "rtl").is_dir() else {}
    names = [n for n in order if n in files] + [n for n in sorted(files) if n not in order]
    modules = [_lenient_module(files[n].read_text(encoding="utf-8"), n) for n in names]
    return VerilogProject(_lenient_module(top_src, "top"), modules)


def _lenient_module(source: str, fallback_name: str) -> VerilogModule:
    try:
        return VerilogModule.from_source(source)
    except ValueError:
        return VerilogModule(fallback_name, source)


class MissingModuleError(LookupError):
    def __init__(self, names):
        self.names = tuple(names)
        super().__init__("missing module(s): " + ", ".join(self.names))


class DependencyCycleError(ValueError):
    pass


def topo_order(roots, lookup) -> list:
    """Leaves-first order of everything reachable from ``roots``.

    ``lookup(name)`` returns a :class:`VerilogModule` or None.  Depth-first,
    children visited in instantiation order, so the result is deterministic.
    All missing names are collected before raising.
    """
    order, state, missing = [], {}, []

    def visit(name, path):
        st = state.get(name)
        if st == 2:
            return
        if st == 1:
            raise DependencyCycleError("dependency cycle: " + " -> ".join(path + [name]))
        mod = lookup(name)
        if mod is None:
            if name not in missing:
                missing.append(name)
            state[name] = 2
            return
        state[name] = 1
        for dep in mod.deps:
            visit(dep, path + [name])
        state[name] = 2
        order.append(mod)

    for r in roots:
        visit(r, [])
    if missing:
        raise MissingModuleError(missing)
    return order
