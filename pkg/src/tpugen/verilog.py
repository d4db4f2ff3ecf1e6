"""Parser and expression evaluator for the synthesizable Verilog subset the
toolchain emits and accepts.

Accepted module items: ANSI or non-ANSI port declarations with ``[msb:lsb]``
ranges, ``parameter``/``localparam``, ``wire``/``reg``/``integer``
declarations, continuous ``assign``, ``always``/``initial`` blocks (kept
opaque and only scanned for identifiers), and module instantiations with
named port connections.  Anything else raises :class:`VerilogParseError`
carrying a line and column.

The evaluator walks the continuous assigns and instantiations of
combinational modules with unbounded integers, masking every net to its
declared width on assignment.
"""
from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field
from typing import Optional

__all__ = [
    "VerilogParseError",
    "EvalError",
    "Port",
    "Instance",
    "Module",
    "parse_source",
    "parse_module",
    "parse_instantiations",
    "expr_width",
    "evaluate",
    "PRIMITIVES",
]

PRIMITIVES = frozenset({"and", "or", "nand", "nor", "xor", "xnor", "not", "buf", "bufif0", "bufif1",
                        "notif0", "notif1"})

KEYWORDS = frozenset({
    "module", "endmodule", "input", "output", "inout", "wire", "reg", "integer", "parameter",
    "localparam", "assign", "always", "initial", "begin", "end", "if", "else", "case", "casez",
    "casex", "endcase", "default", "posedge", "negedge", "or", "for", "while", "repeat", "forever",
    "fork", "join", "signed", "unsigned", "generate", "endgenerate", "genvar", "function",
    "endfunction", "task", "endtask", "specify", "endspecify", "defparam", "tri", "supply0",
    "supply1", "real", "time", "event", "wait", "disable",
}) | PRIMITIVES

_UNSUPPORTED = {"generate", "endgenerate", "genvar", "function", "task", "specify", "defparam",
                "endfunction", "endtask", "endspecify", "real", "time", "event", "tri"}


class VerilogParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        super().__init__(f"line {line}, col {col}: {message}")


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<lcomment>//[^\n]*)
  | (?P<bcomment>/\*.*?\*/)
  | (?P<num>(?:\d[\d_]*)?\s*'[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ?_]+|\d[\d_]*)
  | (?P<id>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<sys>\$[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<dir>`[A-Za-z_]\w*)
  | (?P<op><<<|>>>|===|!==|==|!=|<=|>=|&&|\|\||<<|>>|\+:|-:|\*\*|~&|~\||~\^|\^~|[()\[\]{};:,.#=?+\-*/%&|^~!<>@])
""", re.X | re.S)


@dataclass(slots=True)
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Tok]:
    toks = []
    line, line_start = 1, 0
    pos, n = 0, len(src)
    match = _TOKEN_RE.match
    while pos < n:
        m = match(src, pos)
        if m is None:
            raise VerilogParseError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "bcomment":
            nls = text.count("\n")
            if nls:
                line += nls
                line_start = pos + text.rfind("\n") + 1
        elif kind not in ("ws", "lcomment"):
            toks.append(Tok(kind, text, line, pos - line_start + 1))
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - line_start + 1))
    return toks


def _parse_number(text: str) -> tuple[int, Optional[int]]:
    """(value, width or None for unsized)."""
    text = text.replace("_", "").replace(" ", "").replace("\t", "")
    if "'" not in text:
        return int(text), None
    size, rest = text.split("'", 1)
    rest = rest.lstrip("sS")
    base = {"b": 2, "o": 8, "d": 10, "h": 16}[rest[0].lower()]
    digits = rest[1:]
    if re.search(r"[xXzZ?]", digits):
        digits = re.sub(r"[xXzZ?]", "0", digits)
    value = int(digits, base)
    width = int(size) if size else None
    if width is not None:
        value &= (1 << width) - 1
    return value, width


# ---------------------------------------------------------------------------
# syntax tree


@dataclass
class Port:
    name: str
    direction: str
    width: Optional[int]
    msb: int = 0
    lsb: int = 0


@dataclass
class Instance:
    module: str
    name: str
    connections: dict
    params: dict
    line: int
    positional: bool = False


@dataclass
class Module:
    name: str
    ports: list
    params: dict
    nets: dict            # name -> (msb, lsb)
    assigns: list         # (target expr, value expr)
    instances: list
    referenced: set       # identifiers read inside always/initial blocks
    line: int
    source: str = ""
    _schedule: Optional[list] = field(default=None, repr=False)
    _instance_names: set = field(default_factory=set, repr=False, compare=False)

    @property
    def port_map(self) -> dict:
        return {p.name: p for p in self.ports}

    @property
    def deps(self) -> list[str]:
        out = []
        for inst in self.instances:
            if inst.module not in PRIMITIVES and inst.module not in out:
                out.append(inst.module)
        return out

    def width_of(self, name: str) -> Optional[int]:
        if name in self.nets:
            msb, lsb = self.nets[name]
            return abs(msb - lsb) + 1
        return None


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k=1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def err(self, msg, tok=None):
        tok = tok or self.tok
        return VerilogParseError(msg, tok.line, tok.col)

    def next(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def at(self, text) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("op", "id")

    def accept(self, text) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text) -> Tok:
        if not self.at(text):
            raise self.err(f"expected {text!r}, found {self.tok.text or 'end of file'!r}")
        return self.next()

    def ident(self) -> str:
        t = self.tok
        if t.kind != "id" or t.text in KEYWORDS:
            raise self.err(f"expected identifier, found {t.text or 'end of file'!r}")
        self.i += 1
        return t.text

    # ------------------------------------------------------------------
    def source(self) -> list[Module]:
        mods = []
        while self.tok.kind != "eof":
            t = self.tok
            if t.kind == "dir":
                raise self.err(f"compiler directive {t.text} outside the accepted subset")
            if t.text != "module":
                raise self.err(f"expected 'module', found {t.text!r}")
            mods.append(self.module())
        return mods

    def module(self) -> Module:
        start = self.expect("module")
        name = self.ident()
        mod = Module(name, [], {}, {}, [], [], set(), start.line)
        if self.accept("#"):
            self.expect("(")
            while not self.at(")"):
                self.accept("parameter")
                self._range_opt(mod)
                pname = self.ident()
                self.expect("=")
                mod.params[pname] = self.const(self.expr(), mod)
                if not self.accept(","):
                    break
            self.expect(")")
        body_ports = []
        if self.accept("("):
            if not self.at(")"):
                if self.tok.text in ("input", "output", "inout"):
                    self._ansi_ports(mod)
                else:
                    while True:
                        body_ports.append(self.ident())
                        if not self.accept(","):
                            break
            self.expect(")")
        self.expect(";")
        while not self.at("endmodule"):
            if self.tok.kind == "eof":
                raise self.err(f"missing endmodule for module {name}")
            self.item(mod)
        self.expect("endmodule")
        if body_ports:
            declared = mod.port_map
            missing = [p for p in body_ports if p not in declared]
            if missing:
                raise self.err(f"port {missing[0]} of {name} has no direction declaration")
            mod.ports.sort(key=lambda p: body_ports.index(p.name))
        return mod

    def _range_opt(self, mod) -> Optional[tuple[int, int]]:
        if not self.accept("["):
            return None
        msb = self.const(self.expr(), mod)
        self.expect(":")
        lsb = self.const(self.expr(), mod)
        self.expect("]")
        return msb, lsb

    def _ansi_ports(self, mod):
        direction = None
        while True:
            if self.tok.text in ("input", "output", "inout"):
                direction = self.next().text
                self.accept("wire") or self.accept("reg")
                self.accept("signed")
                rng = self._range_opt(mod)
            elif direction is None:
                raise self.err("port list must start with a direction")
            name = self.ident()
            self._add_port(mod, name, direction, rng)
            if not self.accept(","):
                break

    def _add_port(self, mod, name, direction, rng):
        msb, lsb = rng if rng else (0, 0)
        if name in mod.port_map:
            raise self.err(f"duplicate port {name}")
        mod.ports.append(Port(name, direction, abs(msb - lsb) + 1, msb, lsb))
        mod.nets[name] = (msb, lsb)

    def item(self, mod: Module):
        t = self.tok
        if t.kind == "dir":
            raise self.err(f"compiler directive {t.text} outside the accepted subset")
        if t.kind != "id":
            raise self.err(f"unexpected {t.text!r}")
        kw = t.text
        if kw in _UNSUPPORTED or kw in ("for", "if", "case", "begin"):
            raise self.err(f"'{kw}' is outside the accepted Verilog subset")
        if kw in ("input", "output", "inout"):
            self.next()
            self.accept("wire") or self.accept("reg")
            self.accept("signed")
            rng = self._range_opt(mod)
            while True:
                self._add_port(mod, self.ident(), kw, rng)
                if not self.accept(","):
                    break
            self.expect(";")
        elif kw in ("wire", "reg", "integer"):
            self.next()
            self.accept("signed")
            rng = (31, 0) if kw == "integer" else self._range_opt(mod)
            while True:
                ntok = self.tok
                name = self.ident()
                if self.at("["):  # memory array
                    self._range_opt(mod)
                if name in mod.nets and name not in mod.port_map:
                    raise self.err(f"duplicate declaration of {name}", ntok)
                if name not in mod.port_map:
                    mod.nets[name] = rng or (0, 0)
                if self.accept("="):
                    mod.assigns.append((("id", name), self.expr()))
                if not self.accept(","):
                    break
            self.expect(";")
        elif kw in ("parameter", "localparam"):
            self.next()
            self._range_opt(mod)
            while True:
                pname = self.ident()
                self.expect("=")
                mod.params[pname] = self.const(self.expr(), mod)
                if not self.accept(","):
                    break
            self.expect(";")
        elif kw == "assign":
            self.next()
            while True:
                target = self.lvalue()
                self.expect("=")
                mod.assigns.append((target, self.expr()))
                if not self.accept(","):
                    break
            self.expect(";")
        elif kw in ("always", "initial"):
            self.next()
            if kw == "always":
                if self.accept("@"):
                    if self.accept("*"):
                        pass
                    else:
                        self.expect("(")
                        self._skip_balanced(mod, ")")
            self._skip_statement(mod)
        elif kw in KEYWORDS and kw not in PRIMITIVES:
            raise self.err(f"'{kw}' is outside the accepted Verilog subset")
        else:
            self.instance(mod)

    def _skip_balanced(self, mod, closer):
        depth = 1
        pairs = {"(": ")", "[": "]", "{": "}"}
        stack = [closer]
        while stack:
            t = self.next()
            if t.kind == "eof":
                raise self.err("unbalanced brackets", t)
            if t.kind == "id" and t.text not in KEYWORDS:
                mod.referenced.add(t.text)
            if t.text in pairs and t.kind == "op":
                stack.append(pairs[t.text])
            elif t.kind == "op" and t.text == stack[-1]:
                stack.pop()
        return depth

    def _skip_statement(self, mod):
        t = self.tok
        if t.kind == "eof":
            raise self.err("unexpected end of file in procedural block")
        text = t.text
        if text == "begin":
            self.next()
            if self.accept(":"):
                self.next()
            while not self.at("end"):
                if self.tok.kind == "eof":
                    raise self.err("missing 'end'")
                self._skip_statement(mod)
            self.next()
        elif text == "fork":
            self.next()
            while not self.at("join"):
                if self.tok.kind == "eof":
                    raise self.err("missing 'join'")
                self._skip_statement(mod)
            self.next()
        elif text in ("case", "casez", "casex"):
            self.next()
            self.expect("(")
            self._skip_balanced(mod, ")")
            while not self.at("endcase"):
                if self.tok.kind == "eof":
                    raise self.err("missing 'endcase'")
                # case item labels up to ':' then a statement
                if self.accept("default"):
                    self.accept(":")
                else:
                    while not self.at(":"):
                        if self.tok.kind == "eof":
                            raise self.err("missing ':' in case item")
                        tk = self.next()
                        if tk.kind == "id" and tk.text not in KEYWORDS:
                            mod.referenced.add(tk.text)
                    self.next()
                self._skip_statement(mod)
            self.next()
        elif text == "if":
            self.next()
            self.expect("(")
            self._skip_balanced(mod, ")")
            self._skip_statement(mod)
            if self.accept("else"):
                self._skip_statement(mod)
        elif text in ("for", "while", "repeat"):
            self.next()
            self.expect("(")
            self._skip_balanced(mod, ")")
            self._skip_statement(mod)
        elif text == "forever":
            self.next()
            self._skip_statement(mod)
        elif text in ("#", "@"):
            self.next()
            if self.accept("("):
                self._skip_balanced(mod, ")")
            elif self.tok.kind in ("num", "id") or self.at("*"):
                tk = self.next()
                if tk.kind == "id" and tk.text not in KEYWORDS:
                    mod.referenced.add(tk.text)
            self._skip_statement(mod)
        elif text == ";":
            self.next()
        elif t.kind == "dir":
            raise self.err(f"compiler directive {text} outside the accepted subset")
        elif text in _UNSUPPORTED or text in ("module", "endmodule", "assign", "wire", "reg"):
            raise self.err(f"'{text}' not allowed inside a procedural block")
        else:
            while not self.at(";"):
                tk = self.next()
                if tk.kind == "eof":
                    raise self.err("missing ';'", tk)
                if tk.text in ("end", "endcase", "endmodule", "join") and tk.kind == "id":
                    raise self.err(f"unexpected '{tk.text}' (missing ';'?)", tk)
                if tk.kind == "id" and tk.text not in KEYWORDS:
                    mod.referenced.add(tk.text)
                elif tk.kind == "op" and tk.text in "([{":
                    self._skip_balanced(mod, {"(": ")", "[": "]", "{": "}"}[tk.text])
            self.next()

    def instance(self, mod: Module):
        mtok = self.tok
        mtype = self.next().text
        params = {}
        if self.accept("#"):
            self.expect("(")
            if not self.at(")"):
                while True:
                    self.expect(".")
                    pname = self.ident()
                    self.expect("(")
                    params[pname] = self.expr()
                    self.expect(")")
                    if not self.accept(","):
                        break
            self.expect(")")
        if self.tok.kind != "id":
            raise self.err(f"expected an instance name after {mtype!r}")
        iname = self.ident()
        self.expect("(")
        conns = {}
        positional = False
        if not self.at(")"):
            if self.at("."):
                while True:
                    self.expect(".")
                    ptok = self.tok
                    pname = self.ident()
                    self.expect("(")
                    conns[pname] = None if self.at(")") else self.expr()
                    self.expect(")")
                    if pname in conns and list(conns).count(pname) > 1:
                        raise self.err(f"port {pname} connected twice", ptok)
                    if not self.accept(","):
                        break
            elif mtype in PRIMITIVES:
                positional = True
                idx = 0
                while True:
                    conns[str(idx)] = self.expr()
                    idx += 1
                    if not self.accept(","):
                        break
            else:
                raise self.err(f"instance {iname} of {mtype} must use named port connections")
        self.expect(")")
        self.expect(";")
        if iname in mod._instance_names:
            raise self.err(f"duplicate instance name {iname}", mtok)
        mod._instance_names.add(iname)
        mod.instances.append(Instance(mtype, iname, conns, params, mtok.line, positional))

    # ------------------------------------------------------------------
    # expressions (precedence climbing)

    _BINARY = [
        ("||",), ("&&",), ("|", "~|"), ("^", "~^", "^~"), ("&", "~&"), ("==", "!=", "===", "!=="),
        ("<", "<=", ">", ">="), ("<<", ">>", "<<<", ">>>"), ("+", "-"), ("*", "/", "%"), ("**",),
    ]
    _PREC = {op: level for level, ops in enumerate(_BINARY) for op in ops}

    def lvalue(self):
        e = self.primary()
        if e[0] not in ("id", "bit", "part", "ipart", "concat"):
            raise self.err("invalid assignment target")
        return e

    def expr(self):
        cond = self.binary(0)
        if self.accept("?"):
            a = self.expr()
            self.expect(":")
            b = self.expr()
            return ("tern", cond, a, b)
        return cond

    def binary(self, min_level=0):
        # precedence climbing; every binary operator is left-associative
        left = self.unary()
        prec = self._PREC
        while True:
            t = self.toks[self.i]
            level = prec.get(t.text) if t.kind == "op" else None
            if level is None or level < min_level:
                return left
            self.i += 1
            left = ("bin", t.text, left, self.binary(level + 1))

    def unary(self):
        t = self.tok
        if t.kind == "op" and t.text in ("!", "~", "-", "+", "&", "|", "^", "~&", "~|", "~^", "^~"):
            self.next()
            return ("un", t.text, self.unary())
        return self.primary()

    def primary(self):
        t = self.tok
        if t.kind == "num":
            self.next()
            value, width = _parse_number(t.text)
            return ("num", value, width)
        if t.kind == "str":
            self.next()
            return ("str", t.text)
        if t.kind == "sys":
            self.next()
            args = []
            if self.accept("("):
                if not self.at(")"):
                    while True:
                        args.append(self.expr())
                        if not self.accept(","):
                            break
                self.expect(")")
            return ("call", t.text, args)
        if t.kind == "id":
            name = self.ident()
            if self.accept("["):
                first = self.expr()
                if self.accept(":"):
                    second = self.expr()
                    self.expect("]")
                    return ("part", name, first, second)
                if self.at("+:") or self.at("-:"):
                    op = self.next().text
                    w = self.expr()
                    self.expect("]")
                    return ("ipart", name, first, w, op)
                self.expect("]")
                return ("bit", name, first)
            return ("id", name)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.accept("{"):
            first = self.expr()
            if self.accept("{"):
                items = [self.expr()]
                while self.accept(","):
                    items.append(self.expr())
                self.expect("}")
                self.expect("}")
                return ("repl", first, items)
            items = [first]
            while self.accept(","):
                items.append(self.expr())
            self.expect("}")
            return ("concat", items)
        raise self.err(f"unexpected {t.text or 'end of file'!r} in expression")

    def const(self, e, mod):
        try:
            return _eval(e, _ConstEnv(mod.params))
        except (EvalError, KeyError) as exc:
            raise self.err(f"not a constant expression: {exc}") from None


@functools.lru_cache(maxsize=4096)
def _parse_cached(src: str) -> tuple:
    mods = _Parser(src).source()
    for m in mods:
        m.source = src if len(mods) == 1 else ""
    return tuple(mods)


def parse_source(src: str) -> list[Module]:
    """Parse every module in ``src``.

    Results are memoized by source text; treat returned modules as read-only.
    """
    return list(_parse_cached(src))


def parse_module(src: str) -> Module:
    """Parse a source that must hold exactly one module."""
    mods = parse_source(src)
    if len(mods) != 1:
        raise VerilogParseError(f"expected exactly one module, found {len(mods)}", 1, 1)
    return mods[0]


def parse_instantiations(src: str) -> set[str]:
    """Names of all non-primitive module types instantiated in ``src``."""
    out = set()
    for m in parse_source(src):
        out.update(m.deps)
    return out


# ---------------------------------------------------------------------------
# evaluation


class _ConstEnv:
    def __init__(self, params):
        self.params = params

    def value(self, name):
        if name not in self.params:
            raise EvalError(f"unknown parameter {name}")
        return self.params[name]

    def net(self, name):
        return (31, 0)


class _NetEnv:
    def __init__(self, mod: Module, values: dict):
        self.mod = mod
        self.values = values

    def value(self, name):
        v = self.values.get(name)
        if v is None:
            if name in self.mod.params:
                return self.mod.params[name]
            raise EvalError(f"{self.mod.name}: net {name} has no value")
        return v

    def net(self, name):
        if name in self.mod.nets:
            return self.mod.nets[name]
        if name in self.mod.params:
            return (31, 0)
        raise EvalError(f"{self.mod.name}: unknown net {name}")


def _mask(n):
    return (1 << n) - 1


def _width(e, env) -> int:
    kind = e[0]
    if kind == "num":
        return e[2] or 32
    if kind == "id":
        msb, lsb = env.net(e[1])
        return abs(msb - lsb) + 1
    if kind == "bit":
        return 1
    if kind == "part":
        return abs(_eval(e[2], env) - _eval(e[3], env)) + 1
    if kind == "ipart":
        return _eval(e[3], env)
    if kind == "concat":
        return sum(_width(x, env) for x in e[1])
    if kind == "repl":
        return _eval(e[1], env) * sum(_width(x, env) for x in e[2])
    if kind == "un":
        if e[1] in ("~", "-", "+"):
            return _width(e[2], env)
        return 1
    if kind == "bin":
        op = e[1]
        if op in ("==", "!=", "===", "!==", "<", "<=", ">", ">=", "&&", "||"):
            return 1
        if op in ("<<", ">>", "<<<", ">>>", "**"):
            return _width(e[2], env)
        return max(_width(e[2], env), _width(e[3], env))
    if kind == "tern":
        return max(_width(e[2], env), _width(e[3], env))
    if kind == "call" and e[1] == "$clog2":
        return 32
    raise EvalError(f"cannot size expression {kind}")


def _eval(e, env) -> int:
    kind = e[0]
    if kind == "num":
        return e[1]
    if kind == "id":
        return env.value(e[1])
    if kind == "bin":
        op = e[1]
        a = _eval(e[2], env)
        if op == "&&":
            return int(bool(a) and bool(_eval(e[3], env)))
        if op == "||":
            return int(bool(a) or bool(_eval(e[3], env)))
        b = _eval(e[3], env)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "&":
            return a & b
        if op == "|":
            return a | b
        if op == "^":
            return a ^ b
        if op in ("<<", "<<<"):
            return a << b
        if op in (">>", ">>>"):
            return a >> b
        if op in ("==", "==="):
            return int(a == b)
        if op in ("!=", "!=="):
            return int(a != b)
        if op == "<":
            return int(a < b)
        if op == "<=":
            return int(a <= b)
        if op == ">":
            return int(a > b)
        if op == ">=":
            return int(a >= b)
        if op == "/":
            if b == 0:
                raise EvalError("division by zero")
            return a // b
        if op == "%":
            if b == 0:
                raise EvalError("modulo by zero")
            return a % b
        if op == "**":
            return a ** b
        if op in ("~|", "~^", "^~", "~&"):
            w = max(_width(e[2], env), _width(e[3], env))
            base = {"~|": a | b, "~&": a & b}.get(op, a ^ b)
            return base ^ _mask(w)
        raise EvalError(f"operator {op}")
    if kind == "tern":
        return _eval(e[2], env) if _eval(e[1], env) else _eval(e[3], env)
    if kind == "bit":
        msb, lsb = env.net(e[1])
        idx = _eval(e[2], env)
        off = idx - lsb if msb >= lsb else lsb - idx
        if off < 0:
            return 0
        return (env.value(e[1]) >> off) & 1
    if kind == "part":
        msb, lsb = env.net(e[1])
        hi, lo = _eval(e[2], env), _eval(e[3], env)
        off = lo - lsb
        return (env.value(e[1]) >> off) & _mask(hi - lo + 1)
    if kind == "ipart":
        msb, lsb = env.net(e[1])
        base, w = _eval(e[2], env), _eval(e[3], env)
        lo = base if e[4] == "+:" else base - w + 1
        return (env.value(e[1]) >> (lo - lsb)) & _mask(w)
    if kind == "concat":
        out = 0
        for x in e[1]:
            w = _width(x, env)
            out = (out << w) | (_eval(x, env) & _mask(w))
        return out
    if kind == "repl":
        n = _eval(e[1], env)
        unit = _eval(("concat", e[2]), env)
        w = sum(_width(x, env) for x in e[2])
        out = 0
        for _ in range(n):
            out = (out << w) | unit
        return out
    if kind == "un":
        op = e[1]
        v = _eval(e[2], env)
        if op == "!":
            return int(v == 0)
        if op == "~":
            return v ^ _mask(_width(e[2], env))
        if op == "-":
            return -v
        if op == "+":
            return v
        w = _width(e[2], env)
        v &= _mask(w)
        if op == "&":
            return int(v == _mask(w))
        if op == "|":
            return int(v != 0)
        if op == "^":
            return bin(v).count("1") & 1
        if op == "~&":
            return int(v != _mask(w))
        if op == "~|":
            return int(v == 0)
        return 1 - (bin(v).count("1") & 1)
    if kind == "call" and e[1] == "$clog2":
        v = _eval(e[2][0], env)
        return max(0, (v - 1).bit_length())
    raise EvalError(f"cannot evaluate {kind}")


def expr_width(e, mod: Module) -> int:
    """Self-determined bit width of an expression inside ``mod``."""
    return _width(e, _NetEnv(mod, {}))


def _reads(e, out: set):
    kind = e[0]
    if kind == "id":
        out.add(e[1])
    elif kind in ("bit",):
        out.add(e[1])
        _reads(e[2], out)
    elif kind == "part":
        out.add(e[1])
        _reads(e[2], out)
        _reads(e[3], out)
    elif kind == "ipart":
        out.add(e[1])
        _reads(e[2], out)
        _reads(e[3], out)
    elif kind == "concat":
        for x in e[1]:
            _reads(x, out)
    elif kind == "repl":
        _reads(e[1], out)
        for x in e[2]:
            _reads(x, out)
    elif kind == "un":
        _reads(e[2], out)
    elif kind == "bin":
        _reads(e[2], out)
        _reads(e[3], out)
    elif kind == "tern":
        for x in e[1:]:
            _reads(x, out)
    elif kind == "call":
        for x in e[2]:
            _reads(x, out)
    return out


def _schedule(mod: Module, library: dict) -> list:
    """Order assigns and instances so every net is written before it is read."""
    if mod._schedule is not None:
        return mod._schedule
    if mod.referenced:
        raise EvalError(f"{mod.name} has procedural blocks; only combinational modules can be walked")
    nodes = []
    for target, value in mod.assigns:
        if target[0] != "id":
            raise EvalError(f"{mod.name}: only whole-net assign targets can be walked")
        nodes.append((("assign", target[1], value), {target[1]}, _reads(value, set())))
    for inst in mod.instances:
        if inst.module not in library:
            raise EvalError(f"{mod.name}: module {inst.module} not available")
        child = library[inst.module]
        writes, reads = set(), set()
        for pname, conn in inst.connections.items():
            port = child.port_map.get(pname)
            if port is None:
                raise EvalError(f"{inst.module} has no port {pname}")
            if conn is None:
                continue
            if port.direction == "output":
                if conn[0] != "id":
                    raise EvalError(f"{inst.name}.{pname}: output must connect to a whole net")
                writes.add(conn[1])
            else:
                _reads(conn, reads)
        nodes.append((("inst", inst), writes, reads))
    produced = {}
    for idx, (_, writes, _) in enumerate(nodes):
        for w in writes:
            if w in produced:
                raise EvalError(f"{mod.name}: net {w} has multiple drivers")
            produced[w] = idx
    order, state = [], [0] * len(nodes)

    def visit(i):
        if state[i] == 2:
            return
        if state[i] == 1:
            raise EvalError(f"{mod.name}: combinational loop")
        state[i] = 1
        for r in nodes[i][2]:
            if r in produced:
                visit(produced[r])
        state[i] = 2
        order.append(nodes[i][0])

    for i in range(len(nodes)):
        visit(i)
    mod._schedule = order
    return order


def evaluate(library: dict, name: str, inputs: dict) -> dict:
    """Evaluate combinational module ``name`` on ``inputs``; returns all net values.

    ``library`` maps module names to parsed :class:`Module` objects and must
    contain every instantiated submodule.
    """
    mod = library[name]
    values = {}
    for p in mod.ports:
        if p.direction == "input":
            if p.name not in inputs:
                raise EvalError(f"{name}: input {p.name} not driven")
            values[p.name] = inputs[p.name] & _mask(p.width)
    env = _NetEnv(mod, values)
    for node in _schedule(mod, library):
        if node[0] == "assign":
            _, target, expr = node
            values[target] = _eval(expr, env) & _mask(mod.width_of(target) or 32)
        else:
            inst = node[1]
            child = library[inst.module]
            child_in = {}
            for pname, conn in inst.connections.items():
                port = child.port_map[pname]
                if port.direction == "input" and conn is not None:
                    child_in[pname] = _eval(conn, env)
            child_out = evaluate(library, inst.module, child_in)
            for pname, conn in inst.connections.items():
                port = child.port_map[pname]
                if port.direction == "output" and conn is not None:
                    values[conn[1]] = child_out[pname] & _mask(mod.width_of(conn[1]) or 32)
    return values
