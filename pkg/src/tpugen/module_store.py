"""Retrieval store of Verilog modules: name-keyed dependency resolution plus
lexical TF-IDF search over module descriptions.

Scores are cosine similarities of smoothed TF-IDF vectors, rounded to 12
decimal places before ranking so orderings do not depend on float summation
details; ties go to the lexicographically smaller name.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .project import (DependencyCycleError, MissingModuleError, VerilogModule, VerilogProject, digest,
                      topo_order)
from .verilog import VerilogParseError, parse_instantiations

__all__ = [
    "StoreError",
    "StoreIndex",
    "MissingModuleError",
    "DependencyCycleError",
    "build_index",
    "parse_instantiations",
    "resolve_closure",
    "retrieve_by_text",
    "assemble_project",
    "save_store",
    "load_store",
    "tokenize_text",
    "library_index",
    "SCORE_DECIMALS",
]

SCORE_DECIMALS = 12
STOP_WORDS = frozenset("a an the of for with and or to in on by is at as from that this be it its into".split())
_TOKEN = re.compile(r"[a-z]+|\d+")


class StoreError(ValueError):
    pass


def tokenize_text(text: str) -> list:
    """Lowercase alphabetic runs and digit runs, stop words removed."""
    return [t for t in _TOKEN.findall(text.lower()) if t not in STOP_WORDS]


@dataclass
class StoreIndex:
    by_name: dict = field(default_factory=dict)       # name -> VerilogModule
    doc_meta: dict = field(default_factory=dict)      # name -> description text
    term_index: dict = field(default_factory=dict)    # token -> [(name, weight)]
    idf: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)
    digest: str = ""

    def get(self, name):
        return self.by_name.get(name)

    def __len__(self):
        return len(self.by_name)

    def __contains__(self, name):
        return name in self.by_name

    @property
    def names(self) -> list:
        return sorted(self.by_name)


def _doc_text(mod: VerilogModule, description: str) -> str:
    return description or mod.name.replace("_", " ")


def build_index(sources) -> StoreIndex:
    """Index modules.

    ``sources`` holds :class:`VerilogModule` objects or ``(source, description)``
    pairs.  Duplicate names and unparseable sources are rejected.
    """
    mods = []
    for item in sources:
        if isinstance(item, VerilogModule):
            mods.append(item)
            continue
        src, desc = item
        try:
            mods.append(VerilogModule.from_source(src, desc))
        except VerilogParseError as e:
            raise StoreError(f"unparseable store source: {e}") from None
    idx = StoreIndex()
    for m in mods:
        if m.name in idx.by_name:
            raise StoreError(f"duplicate module name {m.name}")
        idx.by_name[m.name] = m
        idx.doc_meta[m.name] = m.description
    n = len(mods)
    tfs = {name: {} for name in idx.by_name}
    df = {}
    for name in sorted(idx.by_name):
        for tok in tokenize_text(_doc_text(idx.by_name[name], idx.doc_meta[name])):
            tfs[name][tok] = tfs[name].get(tok, 0) + 1
        for tok in tfs[name]:
            df[tok] = df.get(tok, 0) + 1
    idx.idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in sorted(df.items())}
    for name in sorted(tfs):
        sq = 0.0
        for tok, tf in sorted(tfs[name].items()):
            w = tf * idx.idf[tok]
            idx.term_index.setdefault(tok, []).append((name, w))
            sq += w * w
        idx.norms[name] = math.sqrt(sq)
    idx.digest = digest(json.dumps(
        [[name, idx.by_name[name].digest, idx.doc_meta[name]] for name in sorted(idx.by_name)]))
    return idx


def _top_module(top) -> VerilogModule:
    if isinstance(top, VerilogModule):
        return top
    return VerilogModule.from_source(str(top))


def resolve_closure(index: StoreIndex, top) -> list:
    """Dependencies of ``top``, leaves first; raises MissingModuleError naming every absent module."""
    return topo_order(_top_module(top).deps, index.get)


def retrieve_by_text(index: StoreIndex, query: str, k: int = 5) -> list:
    """Top-``k`` (name, score) pairs by TF-IDF cosine similarity."""
    if k < 1:
        raise ValueError("k must be at least 1")
    qtf = {}
    for tok in tokenize_text(query):
        if tok in index.idf:
            qtf[tok] = qtf.get(tok, 0) + 1
    if not qtf:
        return []
    qvec = {t: c * index.idf[t] for t, c in qtf.items()}
    qnorm = math.sqrt(sum(v * v for v in qvec.values()))
    dots = {}
    for tok in sorted(qvec):
        for name, w in index.term_index.get(tok, ()):
            dots[name] = dots.get(name, 0.0) + qvec[tok] * w
    scored = []
    for name, dot in dots.items():
        score = round(dot / (qnorm * index.norms[name]), SCORE_DECIMALS)
        if score > 0:
            scored.append((name, score))
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored[:k]


def assemble_project(index: StoreIndex, top) -> VerilogProject:
    top = _top_module(top)
    return VerilogProject(top, resolve_closure(index, top))


def save_store(index: StoreIndex, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {}
    for name in sorted(index.by_name):
        mod = index.by_name[name]
        (root / f"{name}.v").write_text(mod.source, encoding="utf-8")
        meta[name] = {"file": f"{name}.v", "description": index.doc_meta[name], "digest": mod.digest}
    (root / "store.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return root


def load_store(path) -> StoreIndex:
    root = Path(path)
    try:
        meta = json.loads((root / "store.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise StoreError(f"cannot read store.json: {e}") from None
    items = []
    for name in sorted(meta):
        entry = meta[name]
        src = (root / entry["file"]).read_text(encoding="utf-8")
        if digest(src) != entry["digest"]:
            raise StoreError(f"digest mismatch for {name}")
        mod = VerilogModule.from_source(src, entry.get("description", ""))
        if mod.name != name:
            raise StoreError(f"{entry['file']} declares {mod.name}, expected {name}")
        items.append(mod)
    return build_index(items)


def library_index(configs=(), widths=(8, 16, 32)) -> StoreIndex:
    """Index of the standard unit library plus every module the given configs need."""
    from .rtl_emitter import project_modules, standard_library
    mods = {m.name: m for m in standard_library(widths)}
    for cfg in configs:
        for name, m in project_modules(cfg).items():
            if name in mods and mods[name].source != m.source:
                raise StoreError(f"conflicting sources for {name}")
            mods.setdefault(name, m)
    return build_index([mods[n] for n in sorted(mods)])
