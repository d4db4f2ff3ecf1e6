import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpugen.project import (DependencyCycleError, MissingModuleError, VerilogModule, VerilogProject, load_project,
                            topo_order, write_project)
from tpugen.verilog import EvalError, VerilogParseError, evaluate, parse_instantiations, parse_module, parse_source

ALU = """module alu(input [7:0] a, input [7:0] b, output [15:0] y, output z, output [3:0] hi);
  wire [15:0] t;
  assign t = a + b * 2 - 1;
  assign y = t;
  assign z = a == b ? 1'b1 : 1'b0;
  assign hi = a[7:4];
endmodule
"""


def _lib(*srcs):
    return {m.name: m for s in srcs for m in parse_source(s)}


def test_ports_and_nets():
    m = parse_module(ALU)
    assert [(p.name, p.direction, p.width) for p in m.ports] == [
        ("a", "input", 8), ("b", "input", 8), ("y", "output", 16), ("z", "output", 1), ("hi", "output", 4)]
    assert m.width_of("t") == 16 and m.width_of("nope") is None


def test_non_ansi_ports_and_params():
    src = """module n(a, y);
  parameter W = 4;
  localparam H = W * 2;
  input [W-1:0] a;
  output [H-1:0] y;
  assign y = {a, a};
endmodule
"""
    m = parse_module(src)
    assert [p.width for p in m.ports] == [4, 8]
    assert evaluate({"n": m}, "n", {"a": 0xA})["y"] == 0xAA


def test_precedence_and_masking():
    out = evaluate(_lib(ALU), "alu", {"a": 3, "b": 4})
    assert out["y"] == 10 and out["z"] == 0
    out = evaluate(_lib(ALU), "alu", {"a": 0, "b": 0})
    assert out["y"] == 0xFFFF          # 0 - 1 wraps at the 16-bit net
    assert evaluate(_lib(ALU), "alu", {"a": 0xB7, "b": 0})["hi"] == 0xB


@given(st.integers(0, 255), st.integers(0, 255), st.integers(1, 7))
def test_expression_semantics(a, b, s):
    src = f"""module e(input [7:0] a, input [7:0] b, output [31:0] p, output [31:0] q, output r);
  assign p = a - b - {s};
  assign q = (a << {s}) | b & 8'h0f ^ a;
  assign r = a > b && b != 0 || a == 8'd255;
endmodule
"""
    out = evaluate(_lib(src), "e", {"a": a, "b": b})
    assert out["p"] == (a - b - s) % 2 ** 32
    assert out["q"] == ((a << s) | ((b & 0x0F) ^ a)) % 2 ** 32
    assert out["r"] == int((a > b and b != 0) or a == 255)


def test_hierarchy_evaluation():
    top = """module top2(input [7:0] x, output [15:0] y);
  wire [15:0] y0;
  alu u0(.a(x), .b(x), .y(y0), .z(), .hi());
  assign y = y0 + 1;
endmodule
"""
    lib = _lib(ALU, top)
    assert lib["top2"].deps == ["alu"]
    assert evaluate(lib, "top2", {"x": 5})["y"] == 5 + 10 - 1 + 1
    assert parse_instantiations(top) == {"alu"}
    with pytest.raises(EvalError):
        evaluate(lib, "alu", {"a": 1})


@pytest.mark.parametrize("src,line,col", [
    ("module m(input a); generate endgenerate endmodule", 1, 20),
    ("module m(input a);\n assign = ;\nendmodule", 2, 9),
    ("module m(input a); sub u(.x(a)); sub u(.x(a)); endmodule", 1, 34),
])
def test_errors_carry_position(src, line, col):
    with pytest.raises(VerilogParseError) as ei:
        parse_source(src)
    assert (ei.value.line, ei.value.col) == (line, col)
    assert str(ei.value).startswith(f"line {line}, col {col}:")


def test_parse_module_requires_one():
    with pytest.raises(VerilogParseError):
        parse_module(ALU + ALU.replace("alu", "alu2"))
    with pytest.raises(VerilogParseError):
        parse_module("// nothing here\n")


def test_parse_is_memoized():
    assert parse_source(ALU)[0] is parse_source(ALU)[0]


def test_always_blocks_are_opaque():
    src = """module r(input clk, input [3:0] d, output reg [3:0] q);
  always @(posedge clk) q <= d;
endmodule
"""
    m = parse_module(src)
    assert {"clk", "d", "q"} <= m.referenced


# ------------------------------------------------------------------ project

LEAF = "module leaf(input a, output y);\n  assign y = ~a;\nendmodule\n"
MID = "module mid(input a, output y);\n  leaf l0(.a(a), .y(y));\nendmodule\n"
TOP = "module top(input a, output y);\n  mid m0(.a(a), .y(y));\nendmodule\n"


def _mods(*srcs):
    return {m.name: m for m in (VerilogModule.from_source(s) for s in srcs)}


def test_module_container():
    m = VerilogModule.from_source(MID, "a wrapper")
    assert m.name == "mid" and m.deps == ("leaf",)
    assert m.ports == (("a", "input", 1), ("y", "output", 1))
    assert len(m.digest) == 64 and m.parsed().name == "mid"


def test_topo_order_leaves_first():
    mods = _mods(LEAF, MID)
    assert [m.name for m in topo_order(["mid"], mods.get)] == ["leaf", "mid"]


def test_topo_order_reports_all_missing():
    with pytest.raises(MissingModuleError) as ei:
        topo_order(["top", "other"], _mods(TOP).get)
    assert ei.value.names == ("mid", "other")


def test_topo_order_cycle():
    a = "module ca(input x, output y);\n  cb b0(.x(x), .y(y));\nendmodule\n"
    b = "module cb(input x, output y);\n  ca a0(.x(x), .y(y));\nendmodule\n"
    with pytest.raises(DependencyCycleError):
        topo_order(["ca"], _mods(a, b).get)


def test_project_round_trip(tmp_path):
    mods = _mods(LEAF, MID, TOP)
    proj = VerilogProject(mods["top"], topo_order(["mid"], mods.get))
    root = write_project(proj, tmp_path, use_id=True)
    assert root.name == proj.project_id
    assert sorted(p.name for p in (root / "rtl").iterdir()) == ["leaf.v", "mid.v"]
    back = load_project(root)
    assert back.manifest == proj.manifest
    assert [m.name for m in back.modules] == ["leaf", "mid"]
    assert back.as_single_file() == LEAF + MID + TOP
    assert back.total_bytes() == len((LEAF + MID + TOP).encode())
    manifest = json.loads((root / "manifest.json").read_text())
    assert manifest["config"] is None and manifest["top"]["name"] == "top"


def test_project_id_is_content_addressed():
    mods = _mods(LEAF, MID, TOP)
    p1 = VerilogProject(mods["top"], [mods["leaf"], mods["mid"]])
    p2 = VerilogProject(VerilogModule.from_source(TOP), [mods["leaf"], mods["mid"]])
    assert p1.project_id == p2.project_id
    p3 = VerilogProject(VerilogModule.from_source(TOP.replace("m0", "m1")), [mods["leaf"], mods["mid"]])
    assert p3.project_id != p1.project_id


def test_load_keeps_unparseable_sources(tmp_path):
    (tmp_path / "rtl").mkdir()
    (tmp_path / "top.v").write_text(TOP)
    (tmp_path / "rtl" / "mid.v").write_text("module mid(input a; endmodule\n")
    proj = load_project(tmp_path)
    assert proj.modules[0].name == "mid" and proj.modules[0].ports == ()
