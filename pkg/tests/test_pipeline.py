import json
import threading
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from tpugen.arith import parse_unit
from tpugen.config import config_from_spec
from tpugen.module_store import library_index
from tpugen.pipeline import (FAULTS, FULL_PROJECT_MARK, REPAIR_MARK, EvalRow, ExtractionError, HttpBackend,
                             ResponseTooLarge, StubBackend, TransportError, evaluate_backend, extract_project,
                             extract_top, generate, generate_without_rag, llm_complete, pass_at_k, read_eval_csv,
                             repair_prompt, write_eval_csv)
from tpugen.spec_parser import DesignSpec, canonicalize, render_prompt
from tpugen.validator import Reason, ValidationReport

SPEC = canonicalize(DesignSpec(rows=4, cols=4, mult=parse_unit("drum:k=4", "mult"), label="t4"))


@pytest.fixture(scope="module")
def store():
    return library_index([config_from_spec(SPEC)])


def test_stub_valid_first_try(store):
    res = generate(SPEC, StubBackend(), store)
    assert res.valid and res.iterations == 1
    assert res.project.top.name == "tpu_top"
    assert json.loads(json.dumps(res.to_dict()))["verdict"] == "Valid"


@pytest.mark.parametrize("fault,code", [
    ("truncate_output", "Unparseable"),
    ("hallucinate_module_name", "MissingModule"),
    ("wrong_port_width", "WidthMismatch"),
    ("bad_header", "BadHeader"),
])
def test_fault_then_repair(store, fault, code):
    res = generate(SPEC, StubBackend([fault, "ok"]), store)
    assert res.valid and res.iterations == 2
    assert code in res.transcript[0].report.codes
    repair = res.transcript[1].prompt
    assert REPAIR_MARK in repair and f"- {code}" in repair
    assert repair.startswith(render_prompt(SPEC).rstrip("\n"))


def test_gives_up_after_max_iters(store):
    res = generate(SPEC, StubBackend(["bad_header"]), store, max_iters=2)
    assert res.verdict == "Failed" and res.project is None and len(res.transcript) == 2
    with pytest.raises(ValueError):
        generate(SPEC, StubBackend(), store, max_iters=0)
    with pytest.raises(ValueError):
        generate(SPEC, StubBackend(), None)


def test_cap_rejects_large_responses(store):
    res = generate(SPEC, StubBackend(), store, max_iters=1, cap=1000)
    assert res.transcript[0].report.codes == ["BackendError"]
    assert res.transcript[0].response is None


def test_without_rag_full_project():
    res = generate_without_rag(SPEC, StubBackend(), cap=10 ** 6)
    assert res.valid
    assert FULL_PROJECT_MARK in res.transcript[0].prompt
    assert len(res.project.modules) > 3


def test_stub_plan_semantics():
    b = StubBackend(["ok", "bad_header"])
    assert [b.next_fault() for _ in range(4)] == ["ok", "bad_header", "bad_header", "bad_header"]
    b = StubBackend(["ok", "bad_header"], cycle=True)
    assert [b.next_fault() for _ in range(4)] == ["ok", "bad_header", "ok", "bad_header"]
    with pytest.raises(ValueError):
        StubBackend(["explode"])
    with pytest.raises(ValueError):
        StubBackend([])
    assert FAULTS[0] == "ok"


def test_extraction():
    top = "// t\nmodule t(input a, output y);\n  assign y = a;\nendmodule\n"
    leaf = "module l(input a, output y);\n  assign y = a;\nendmodule\n"
    user = "module u(input a, output y);\n  l l0(.a(a), .y(y));\nendmodule\n"
    assert extract_top(f"Here you go:\n\n```verilog\n{top}```\nDone.").name == "t"
    assert extract_top("Sure.\n\n" + top).source == top
    with pytest.raises(ExtractionError):
        extract_top("no code at all")
    with pytest.raises(ExtractionError):
        extract_top(f"```\n{top}{leaf}```")
    with pytest.raises(ExtractionError):
        extract_top("```\nmodule t(input a;\n```")
    proj = extract_project(f"```\n{leaf}{user}```")
    assert proj.top.name == "u" and [m.name for m in proj.modules] == ["l"]
    with pytest.raises(ExtractionError):
        extract_project(f"```\n{leaf}{top}```")


def test_repair_prompt_format():
    rep = ValidationReport("Invalid", [Reason("MissingModule", "fifo_x", ("fifo_x",)), Reason("BadHeader")])
    text = repair_prompt(SPEC, rep)
    assert text.splitlines()[-2:] == ["- MissingModule [fifo_x]: fifo_x", "- BadHeader"]
    assert FULL_PROJECT_MARK in repair_prompt(SPEC, rep, full_project=True)


# [DERIVED] pass@k against direct subset enumeration
@given(st.integers(1, 30), st.data())
def test_pass_at_k_oracle(n, data):
    c = data.draw(st.integers(0, n))
    k = data.draw(st.integers(1, n))
    got = pass_at_k(n, c, k)
    assert isinstance(got, Fraction) and got == O.pass_at_k_direct(n, c, k)


def test_pass_at_k_values_and_errors():
    assert pass_at_k(10, 0, 5) == 0 and pass_at_k(10, 10, 1) == 1
    assert pass_at_k(5, 1, 1) == Fraction(1, 5)
    assert pass_at_k(10, 6, 5) == 1      # fewer failures than draws
    for bad in [(5, 6, 1), (5, 1, 0), (5, 1, 6), (5, -1, 1), (5.0, 1, 1), (True, 1, 1)]:
        with pytest.raises(ValueError):
            pass_at_k(*bad)


def test_evaluate_and_csv(store, tmp_path):
    specs = [SPEC, canonicalize(DesignSpec(rows=4, cols=4, label="t4e"))]
    rows = evaluate_backend(specs, StubBackend(["ok", "bad_header"], cycle=True), 4, [1, 2],
                            store=library_index([config_from_spec(s) for s in specs]))
    by = {(r.spec_id, r.check, r.k): r.pass_rate for r in rows}
    # two valid answers out of four
    assert by[("t4", "integration", 1)] == 0.5
    assert by[("t4", "integration", 2)] == float(pass_at_k(4, 2, 2))
    assert ("ALL", "module", 2) in by
    path = tmp_path / "eval.csv"
    write_eval_csv(rows, path)
    assert read_eval_csv(path) == rows
    with pytest.raises(ValueError):
        evaluate_backend(specs, StubBackend(), 1, [2])


def test_eval_csv_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_eval_csv(p)
    assert EvalRow("a", "module", 1, 0.5).k == 1


class _Handler(BaseHTTPRequestHandler):
    reply = b""

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        assert "prompt" in body
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(type(self).reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_http_backend(server):
    url = f"http://127.0.0.1:{server.server_address[1]}/"
    _Handler.reply = json.dumps({"text": "hello"}).encode()
    assert llm_complete(HttpBackend(url, timeout_s=5), "prompt") == "hello"
    _Handler.reply = b"not json"
    with pytest.raises(TransportError):
        llm_complete(HttpBackend(url, timeout_s=5), "prompt")
    _Handler.reply = json.dumps({"text": "x" * 5000}).encode()
    with pytest.raises(ResponseTooLarge):
        llm_complete(HttpBackend(url, timeout_s=5), "prompt", cap=100)


def test_http_backend_without_endpoint(monkeypatch):
    monkeypatch.delenv("TPUGEN_LLM_ENDPOINT", raising=False)
    with pytest.raises(TransportError):
        HttpBackend().complete("x")
