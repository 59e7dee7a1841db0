"""S-expression reader and printer for .gls programs.

A program is a sequence of `(var NAME (shape d ...))` headers followed by a
single expression. Comments run from `;` to end of line. The printer emits a
canonical form that reparses to a structurally identical tree.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import ir
from .ir import (
    AccelCall,
    Access,
    AccessPatternShape,
    CartProd,
    Compute,
    Concat,
    Dims,
    Expr,
    Flatten,
    NamedOp,
    Pair,
    Reshape,
    Slice,
    Squeeze,
    Transpose,
    Var,
    Windows,
    decompose,
    infer_shape,
)


@dataclass(frozen=True)
class SourceSpan:
    start: int
    end: int
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


class ParseError(Exception):
    def __init__(self, message: str, span: SourceSpan | None = None):
        super().__init__(message)
        self.message = message
        self.span = span

    def diagnostic(self, filename: str = "<input>") -> str:
        where = f"{self.span.line}:{self.span.col}" if self.span else "?"
        return f"{filename}:{where}: error: {self.message}"


OPERATOR_SPELLINGS = {
    "dotProd": ir.DOT_PROD,
    "dot-product": ir.DOT_PROD,
    "reduceSum": ir.REDUCE_SUM,
    "reduce-sum": ir.REDUCE_SUM,
    "reduceMax": ir.REDUCE_MAX,
    "reduce-max": ir.REDUCE_MAX,
}


# ---------------------------------------------------------------------------
# Reader

@dataclass(frozen=True)
class _Atom:
    text: str
    span: SourceSpan


@dataclass(frozen=True)
class _Form:
    items: tuple
    span: SourceSpan


def _tokenize(text: str):
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            tokens.append((ch, SourceSpan(i, i + 1, line, col)))
            i += 1
            col += 1
        else:
            start, sline, scol = i, line, col
            while i < n and not text[i].isspace() and text[i] not in "();":
                i += 1
                col += 1
            tokens.append((text[start:i], SourceSpan(start, i, sline, scol)))
    return tokens


def _read_all(text: str):
    tokens = _tokenize(text)
    pos = 0

    def read_one():
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input",
                             SourceSpan(len(text), len(text), text.count("\n") + 1, 1))
        tok, span = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while True:
                if pos >= len(tokens):
                    raise ParseError("unclosed form", span)
                if tokens[pos][0] == ")":
                    end_span = tokens[pos][1]
                    pos += 1
                    return _Form(tuple(items),
                                 SourceSpan(span.start, end_span.end, span.line, span.col))
                items.append(read_one())
        if tok == ")":
            raise ParseError("unbalanced ')'", span)
        return _Atom(tok, span)

    forms = []
    while pos < len(tokens):
        forms.append(read_one())
    return forms


# ---------------------------------------------------------------------------
# Elaboration: raw forms -> Expr

def _int(item, what: str) -> int:
    if not isinstance(item, _Atom):
        raise ParseError(f"{what} must be an integer", item.span)
    try:
        v = int(item.text)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {item.text!r}", item.span) from None
    if v < 0:
        raise ParseError(f"{what} must be non-negative, got {v}", item.span)
    return v


def _head(form: _Form) -> str:
    if not form.items or not isinstance(form.items[0], _Atom):
        raise ParseError("empty form", form.span)
    return form.items[0].text


def _want(form: _Form, n: int):
    if len(form.items) != n + 1:
        raise ParseError(
            f"({_head(form)} ...) wants {n} arguments, got {len(form.items) - 1}", form.span)


def _dims_form(item, head: str = "shape") -> Dims:
    if not isinstance(item, _Form) or not item.items or _head(item) != head:
        span = item.span if isinstance(item, (_Form, _Atom)) else None
        raise ParseError(f"expected ({head} ...) form", span)
    return tuple(_int(x, "dimension") for x in item.items[1:])


class Parser:
    def __init__(self, env: dict[str, Dims]):
        self.env = env

    def expr(self, item) -> Expr:
        if isinstance(item, _Atom):
            name = item.text
            if name not in self.env:
                raise ParseError(f"undeclared variable {name!r}", item.span)
            return Var(name, self.env[name])
        head = _head(item)
        method = _FORMS.get(head)
        if method is None:
            raise ParseError(f"unknown form {head!r}", item.span)
        return method(self, item)

    def _shape_pair(self, item) -> AccessPatternShape:
        if isinstance(item, _Form) and item.items and _head(item) == "shape-pair":
            _want(item, 2)
            return AccessPatternShape(_dims_form(item.items[1]), _dims_form(item.items[2]))
        if isinstance(item, _Form) and item.items and _head(item) == "shape-of":
            _want(item, 1)
            inner = self.expr(item.items[1])
            try:
                return infer_shape(inner, self.env)
            except ir.IRError as err:
                raise ParseError(f"cannot resolve shape-of: {err}", item.span) from None
        raise ParseError("expected (shape-pair (shape ...) (shape ...)) or (shape-of e)",
                         item.span if isinstance(item, (_Form, _Atom)) else None)

    def _plain_shape(self, item) -> Dims:
        if isinstance(item, _Form) and item.items and _head(item) == "shape-of":
            _want(item, 1)
            inner = self.expr(item.items[1])
            try:
                return infer_shape(inner, self.env).concat
            except ir.IRError as err:
                raise ParseError(f"cannot resolve shape-of: {err}", item.span) from None
        return _dims_form(item)

    def p_access(self, f):
        _want(f, 2)
        return Access(self.expr(f.items[1]), _int(f.items[2], "access position"))

    def p_transpose(self, f):
        _want(f, 2)
        return Transpose(self.expr(f.items[1]), _dims_form(f.items[2], "list"))

    def p_cartprod(self, f):
        _want(f, 2)
        return CartProd(self.expr(f.items[1]), self.expr(f.items[2]))

    def p_windows(self, f):
        _want(f, 3)
        return Windows(self.expr(f.items[1]), _dims_form(f.items[2]), _dims_form(f.items[3]))

    def p_slice(self, f):
        _want(f, 4)
        return Slice(self.expr(f.items[1]), _int(f.items[2], "slice dim"),
                     _int(f.items[3], "slice lo"), _int(f.items[4], "slice hi"))

    def p_squeeze(self, f):
        _want(f, 2)
        return Squeeze(self.expr(f.items[1]), _int(f.items[2], "squeeze dim"))

    def p_flatten(self, f):
        _want(f, 1)
        return Flatten(self.expr(f.items[1]))

    def p_reshape(self, f):
        _want(f, 2)
        return Reshape(self.expr(f.items[1]), self._shape_pair(f.items[2]))

    def p_pair(self, f):
        _want(f, 2)
        return Pair(self.expr(f.items[1]), self.expr(f.items[2]))

    def p_concat(self, f):
        _want(f, 3)
        return Concat(self.expr(f.items[1]), self.expr(f.items[2]), _int(f.items[3], "concat dim"))

    def p_compute(self, f):
        _want(f, 2)
        op_item = f.items[1]
        if not isinstance(op_item, _Atom) or op_item.text not in OPERATOR_SPELLINGS:
            span = op_item.span if isinstance(op_item, (_Atom, _Form)) else f.span
            raise ParseError("expected an operator (dotProd, reduceSum, reduceMax)", span)
        return Compute(OPERATOR_SPELLINGS[op_item.text], self.expr(f.items[2]))

    def p_named2(self, f):
        _want(f, 2)
        return NamedOp(_head(f), (self.expr(f.items[1]), self.expr(f.items[2])))

    def p_reshape_op(self, f):
        _want(f, 2)
        return NamedOp("reshape_op", (self.expr(f.items[1]),), self._plain_shape(f.items[2]))

    def p_flatten_op(self, f):
        _want(f, 1)
        return NamedOp("flatten_op", (self.expr(f.items[1]),))

    def p_systolic(self, f):
        _want(f, 4)
        return AccelCall("systolicArray",
                         (_int(f.items[1], "rows"), _int(f.items[2], "cols")),
                         (self.expr(f.items[3]), self.expr(f.items[4])))

    def p_vta_dense(self, f):
        _want(f, 2)
        return AccelCall("vta_dense", (), (self.expr(f.items[1]), self.expr(f.items[2])))

    def p_hlscnn(self, f):
        _want(f, 5)
        return AccelCall("hlscnn_conv2d",
                         (_int(f.items[3], "group"), _int(f.items[4], "stride h"),
                          _int(f.items[5], "stride w")),
                         (self.expr(f.items[1]), self.expr(f.items[2])))


_FORMS = {
    "access": Parser.p_access,
    "transpose": Parser.p_transpose,
    "cartProd": Parser.p_cartprod,
    "cartesian-product": Parser.p_cartprod,
    "windows": Parser.p_windows,
    "slice": Parser.p_slice,
    "squeeze": Parser.p_squeeze,
    "flatten": Parser.p_flatten,
    "reshape": Parser.p_reshape,
    "pair": Parser.p_pair,
    "concat": Parser.p_concat,
    "compute": Parser.p_compute,
    "dense": Parser.p_named2,
    "bias_add": Parser.p_named2,
    "add": Parser.p_named2,
    "reshape_op": Parser.p_reshape_op,
    "flatten_op": Parser.p_flatten_op,
    "systolicArray": Parser.p_systolic,
    "vta-dense": Parser.p_vta_dense,
    "vta_dense": Parser.p_vta_dense,
    "hlscnn-conv2d": Parser.p_hlscnn,
    "hlscnn_conv2d": Parser.p_hlscnn,
}


def parse(text: str) -> tuple[Expr, dict[str, Dims]]:
    """Parse a program: (var ...) headers plus one expression.

    Returns the expression (vars carry their declared shapes) and the
    declared environment.
    """
    forms = _read_all(text)
    env: dict[str, Dims] = {}
    body = None
    body_span = None
    for form in forms:
        if isinstance(form, _Form) and form.items and isinstance(form.items[0], _Atom) \
                and form.items[0].text == "var":
            if len(form.items) != 3 or not isinstance(form.items[1], _Atom):
                raise ParseError("(var NAME (shape ...)) wants a name and a shape", form.span)
            name = form.items[1].text
            if name in env:
                raise ParseError(f"variable {name!r} declared twice", form.span)
            env[name] = _dims_form(form.items[2])
            continue
        if body is not None:
            raise ParseError("more than one program expression",
                             form.span if isinstance(form, (_Form, _Atom)) else None)
        body = form
        body_span = form.span if isinstance(form, (_Form, _Atom)) else None
    if body is None:
        raise ParseError("no program expression", SourceSpan(0, 0, 1, 1))
    expr = Parser(env).expr(body)
    del body_span
    return expr, env


def parse_expr(text: str, env: dict[str, Dims]) -> Expr:
    """Parse a bare expression against an existing environment."""
    forms = _read_all(text)
    if len(forms) != 1:
        raise ParseError("expected exactly one expression", SourceSpan(0, len(text), 1, 1))
    return Parser(env).expr(forms[0])


# ---------------------------------------------------------------------------
# Printer

def _sexpr(e: Expr):
    """Expression -> nested lists of atoms (strings)."""
    head, payload, kids = decompose(e)
    if head == "var":
        return payload[0]
    if head == "access":
        return ["access", _sexpr(kids[0]), str(payload[0])]
    if head == "transpose":
        return ["transpose", _sexpr(kids[0]), ["list", *map(str, payload[0])]]
    if head == "cartProd":
        return ["cartProd", _sexpr(kids[0]), _sexpr(kids[1])]
    if head == "windows":
        return ["windows", _sexpr(kids[0]),
                ["shape", *map(str, payload[0])], ["shape", *map(str, payload[1])]]
    if head == "slice":
        return ["slice", _sexpr(kids[0]), *map(str, payload)]
    if head == "squeeze":
        return ["squeeze", _sexpr(kids[0]), str(payload[0])]
    if head == "flatten":
        return ["flatten", _sexpr(kids[0])]
    if head == "reshape":
        return ["reshape", _sexpr(kids[0]),
                ["shape-pair", ["shape", *map(str, payload[0])], ["shape", *map(str, payload[1])]]]
    if head == "pair":
        return ["pair", _sexpr(kids[0]), _sexpr(kids[1])]
    if head == "concat":
        return ["concat", _sexpr(kids[0]), _sexpr(kids[1]), str(payload[0])]
    if head == "compute":
        return ["compute", payload[0], _sexpr(kids[0])]
    if head in ("dense", "bias_add", "add"):
        return [head, _sexpr(kids[0]), _sexpr(kids[1])]
    if head == "reshape_op":
        return ["reshape_op", _sexpr(kids[0]), ["shape", *map(str, payload[0])]]
    if head == "flatten_op":
        return ["flatten_op", _sexpr(kids[0])]
    if head == "systolicArray":
        rows, cols = payload[0]
        return ["systolicArray", str(rows), str(cols), _sexpr(kids[0]), _sexpr(kids[1])]
    if head == "vta_dense":
        return ["vta-dense", _sexpr(kids[0]), _sexpr(kids[1])]
    if head == "hlscnn_conv2d":
        group, sh, sw = payload[0]
        return ["hlscnn-conv2d", _sexpr(kids[0]), _sexpr(kids[1]),
                str(group), str(sh), str(sw)]
    raise ValueError(f"unknown node head {head!r}")


def _depth(sx) -> int:
    if isinstance(sx, str):
        return 1
    return 1 + max((_depth(item) for item in sx), default=0)


def _render(sx, indent: int) -> str:
    if isinstance(sx, str):
        return sx
    if _depth(sx) <= 3:
        return "(" + " ".join(_render(item, 0) for item in sx) + ")"
    pad = " " * (indent + 2)
    parts = [sx[0] if isinstance(sx[0], str) else _render(sx[0], indent + 2)]
    lines = ["(" + parts[0]]
    for item in sx[1:]:
        lines.append(pad + _render(item, indent + 2))
    return "\n".join(lines) + ")"


def to_text(e: Expr) -> str:
    """Canonical textual form of an expression; parse(to_text(e)) == e."""
    return _render(_sexpr(e), 0)


def program_text(e: Expr, env: dict[str, Dims] | None = None) -> str:
    """Full program text: var headers (declaration order) plus the expression."""
    if env is None:
        env = {name: shape for name, shape in ir.free_vars(e).items() if shape is not None}
    lines = [f"(var {name} (shape {' '.join(map(str, dims))}))" for name, dims in env.items()]
    lines.append(to_text(e))
    return "\n".join(lines) + "\n"
