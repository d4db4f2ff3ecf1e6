import json
import math

import pytest

from tpugen.arith import parse_unit
from tpugen.config import TpuConfig
from tpugen.module_store import (StoreError, assemble_project, build_index, library_index, load_store,
                                 resolve_closure, retrieve_by_text, save_store, tokenize_text)
from tpugen.project import MissingModuleError
from tpugen.rtl_emitter import emit_top
from tpugen.validator import validate

CFG = TpuConfig(4, 8, 8, parse_unit("drum:k=4", "mult"))


@pytest.fixture(scope="module")
def lib():
    return library_index([CFG])


def test_tokenizer():
    assert tokenize_text("The 8-bit DRUM_k4 multiplier") == ["8", "bit", "drum", "k", "4", "multiplier"]


def test_retrieval_ranking(lib):
    hits = retrieve_by_text(lib, "DRUM multiplier 8-bit", k=3)
    assert hits[0][0] == "mul_drum_w8_k4"
    assert [s for _, s in hits] == sorted((s for _, s in hits), reverse=True)
    assert all(0 < s <= 1 for _, s in hits)
    assert retrieve_by_text(lib, "zzz qqq") == []
    with pytest.raises(ValueError):
        retrieve_by_text(lib, "drum", k=0)


def _toy():
    return build_index([
        ("module a1(input x, output y);\n  assign y = x;\nendmodule\n", "red apple"),
        ("module b1(input x, output y);\n  assign y = x;\nendmodule\n", "green apple pie"),
        ("module c1(input x, output y);\n  assign y = x;\nendmodule\n", "blue sky"),
    ])


def test_tfidf_scores_by_hand():
    idx = _toy()
    # smooth idf: ln((1+n)/(1+df)) + 1 with n = 3
    idf = {t: math.log(4 / (1 + d)) + 1 for t, d in {"red": 1, "apple": 2, "green": 1, "pie": 1}.items()}
    q = [idf["apple"], idf["red"]]
    a1 = [idf["apple"], idf["red"]]
    b1 = [idf["apple"], 0.0]
    b1_norm = math.sqrt(idf["green"] ** 2 + idf["apple"] ** 2 + idf["pie"] ** 2)
    qn = math.hypot(*q)
    hits = dict(retrieve_by_text(idx, "red apple", k=5))
    assert hits["a1"] == pytest.approx(sum(x * y for x, y in zip(q, a1)) / (qn * math.hypot(*a1)))
    assert hits["b1"] == pytest.approx(q[0] * b1[0] / (qn * b1_norm))
    assert "c1" not in hits


def test_ties_break_by_name():
    idx = build_index([
        ("module zz(input x, output y);\n  assign y = x;\nendmodule\n", "same words"),
        ("module aa(input x, output y);\n  assign y = x;\nendmodule\n", "same words"),
    ])
    assert [n for n, _ in retrieve_by_text(idx, "same")] == ["aa", "zz"]


def test_build_rejects_duplicates_and_garbage():
    src = "module a1(input x, output y);\n  assign y = x;\nendmodule\n"
    with pytest.raises(StoreError):
        build_index([(src, ""), (src, "")])
    with pytest.raises(StoreError):
        build_index([("module broken(", "")])


def test_closure_and_assembly(lib):
    top = emit_top(CFG)
    names = [m.name for m in resolve_closure(lib, top)]
    assert names[-1].startswith("ape_") or "ape_drum_exact_w8_k4" in names
    assert validate(assemble_project(lib, top)).valid
    with pytest.raises(MissingModuleError) as ei:
        resolve_closure(library_index([], widths=(8,)), top)
    assert "controller_os_s4" in ei.value.names


def test_save_load_round_trip(lib, tmp_path):
    save_store(lib, tmp_path / "store")
    back = load_store(tmp_path / "store")
    assert back.digest == lib.digest and back.names == lib.names
    assert retrieve_by_text(back, "loa adder 16") == retrieve_by_text(lib, "loa adder 16")


def test_load_detects_tampering(tmp_path):
    idx = _toy()
    root = save_store(idx, tmp_path / "s")
    (root / "a1.v").write_text((root / "a1.v").read_text() + "// edit\n")
    with pytest.raises(StoreError):
        load_store(root)
    with pytest.raises(StoreError):
        load_store(tmp_path / "nowhere")
    meta = json.loads((root / "store.json").read_text())
    assert set(meta) == {"a1", "b1", "c1"}


def test_index_digest_is_stable():
    assert _toy().digest == _toy().digest
    assert len(library_index([CFG])) > len(library_index())
