"""Reference interpreter: dense row-major tensors, node denotations, oracles.

Everything here is exact when fed integers; the same code paths work on
floats for the error-metric demo. The oracles are independent nested loops
and never call eval — they are the ground truth the rewrites are checked
against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .ir import (
    DOT_PROD,
    REDUCE_MAX,
    REDUCE_SUM,
    Access,
    CartProd,
    Compute,
    Dims,
    Expr,
    NamedOp,
    ShapeMismatch,
    Transpose,
    Var,
    WindowTooLarge,
    decompose,
    node_shape,
    prod,
    shape_of_tensor,
    windows_output_dims,
)


@dataclass(frozen=True)
class Tensor:
    """Dense n-dimensional array, flat row-major data."""

    shape: Dims
    data: tuple

    def __post_init__(self):
        if len(self.data) != prod(self.shape):
            raise ShapeMismatch(
                f"data length {len(self.data)} does not match shape {self.shape}")

    @classmethod
    def from_flat(cls, shape, data) -> "Tensor":
        return cls(tuple(shape), tuple(data))

    @classmethod
    def filled(cls, shape, value) -> "Tensor":
        return cls(tuple(shape), (value,) * prod(tuple(shape)))

    @classmethod
    def from_nested(cls, nested) -> "Tensor":
        shape = []
        probe = nested
        while isinstance(probe, (list, tuple)):
            shape.append(len(probe))
            probe = probe[0]
        flat: list = []

        def walk(x, depth):
            if depth == len(shape):
                flat.append(x)
                return
            if len(x) != shape[depth]:
                raise ShapeMismatch("ragged nested input")
            for item in x:
                walk(item, depth + 1)

        walk(nested, 0)
        return cls(tuple(shape), tuple(flat))

    def to_nested(self):
        def build(dims, offset, count):
            if not dims:
                return self.data[offset]
            step = count // dims[0]
            return [build(dims[1:], offset + i * step, step) for i in range(dims[0])]

        return build(self.shape, 0, prod(self.shape))

    def strides(self) -> Dims:
        out = []
        acc = 1
        for d in reversed(self.shape):
            out.append(acc)
            acc *= d
        return tuple(reversed(out))

    def __getitem__(self, idx):
        return self.data[_ravel(idx, self.strides())]


def _ravel(idx, strides) -> int:
    return sum(i * s for i, s in zip(idx, strides))


def _indices(shape):
    if not shape:
        yield ()
        return
    head, rest = shape[0], shape[1:]
    for i in range(head):
        for tail in _indices(rest):
            yield (i,) + tail


# ---------------------------------------------------------------------------
# eval

def eval_expr(e: Expr, bindings: dict[str, Tensor]) -> Tensor:
    """Evaluate a well-formed expression under variable bindings.

    The result shape always equals the concatenated access-pattern shape of
    the expression. Pure: identical inputs give identical outputs.
    """
    memo: dict[int, Tensor] = {}
    shapes: dict[int, object] = {}

    def shp(node: Expr):
        key = id(node)
        if key in shapes:
            return shapes[key]
        head, payload, kids = decompose(node)
        if head == "var":
            name, declared = payload
            if name not in bindings:
                raise ShapeMismatch(f"no binding for variable {name!r}")
            t = bindings[name]
            if declared is not None and t.shape != tuple(declared):
                raise ShapeMismatch(
                    f"binding for {name!r} has shape {t.shape}, declared {tuple(declared)}")
            result = shape_of_tensor(t.shape)
        else:
            result = node_shape(head, payload, tuple(shp(k) for k in kids))
        shapes[key] = result
        return result

    def go(node: Expr) -> Tensor:
        key = id(node)
        if key in memo:
            return memo[key]
        result = _eval_node(node, bindings, go, shp)
        memo[key] = result
        return result

    return go(e)


def _eval_node(node: Expr, bindings, go, shp) -> Tensor:
    head, payload, kids = decompose(node)

    if head == "var":
        shp(node)  # validates the binding against the declared shape
        return bindings[payload[0]]

    if head in ("access", "squeeze", "flatten", "reshape", "reshape_op", "flatten_op"):
        t = go(kids[0])
        return Tensor(shp(node).concat, t.data)  # pure re-view: row-major data unchanged

    if head == "transpose":
        (perm,) = payload
        t = go(kids[0])
        out_shape = tuple(t.shape[p] for p in perm)
        in_strides = t.strides()
        out_strides = tuple(in_strides[p] for p in perm)
        data = [t.data[_ravel(idx, out_strides)] for idx in _indices(out_shape)]
        return Tensor(out_shape, tuple(data))

    if head == "cartProd":
        lt, rt = go(kids[0]), go(kids[1])
        ls, rs = shp(kids[0]), shp(kids[1])
        nc = prod(ls.compute)
        lrows = [lt.data[i * nc:(i + 1) * nc] for i in range(prod(ls.access))]
        rrows = [rt.data[i * nc:(i + 1) * nc] for i in range(prod(rs.access))]
        data: list = []
        for lrow in lrows:
            for rrow in rrows:
                data.extend(lrow)
                data.extend(rrow)
        return Tensor(ls.access + rs.access + (2,) + ls.compute, tuple(data))

    if head == "pair":
        lt, rt = go(kids[0]), go(kids[1])
        s = shp(kids[0])
        nc = prod(s.compute)
        data = []
        for i in range(prod(s.access)):
            data.extend(lt.data[i * nc:(i + 1) * nc])
            data.extend(rt.data[i * nc:(i + 1) * nc])
        return Tensor(s.access + (2,) + s.compute, tuple(data))

    if head == "windows":
        window, strides = payload
        t = go(kids[0])
        s = shp(kids[0])
        placed = windows_output_dims(s.compute, tuple(window), tuple(strides))
        in_strides = t.strides()
        na = len(s.access)
        base_strides = in_strides[:na]
        comp_strides = in_strides[na:]
        data = []
        for a_idx in _indices(s.access):
            a_off = _ravel(a_idx, base_strides)
            for j_idx in _indices(placed):
                j_off = a_off + sum(j * st * cs for j, st, cs in zip(j_idx, strides, comp_strides))
                for w_idx in _indices(tuple(window)):
                    data.append(t.data[j_off + _ravel(w_idx, comp_strides)])
        return Tensor(s.access + placed + tuple(window), tuple(data))

    if head == "slice":
        dim, lo, hi = payload
        t = go(kids[0])
        pre = prod(t.shape[:dim])
        post = prod(t.shape[dim + 1:])
        mid = t.shape[dim]
        data = []
        for p in range(pre):
            start = p * mid * post
            data.extend(t.data[start + lo * post:start + hi * post])
        return Tensor(t.shape[:dim] + (hi - lo,) + t.shape[dim + 1:], tuple(data))

    if head == "concat":
        (dim,) = payload
        lt, rt = go(kids[0]), go(kids[1])
        pre = prod(lt.shape[:dim])
        lpost = prod(lt.shape[dim:])
        rpost = prod(rt.shape[dim:])
        data = []
        for p in range(pre):
            data.extend(lt.data[p * lpost:(p + 1) * lpost])
            data.extend(rt.data[p * rpost:(p + 1) * rpost])
        out_shape = lt.shape[:dim] + (lt.shape[dim] + rt.shape[dim],) + lt.shape[dim + 1:]
        return Tensor(out_shape, tuple(data))

    if head == "compute":
        (op,) = payload
        t = go(kids[0])
        s = shp(kids[0])
        nc = prod(s.compute)
        data = []
        if op == REDUCE_SUM:
            for i in range(prod(s.access)):
                data.append(sum(t.data[i * nc:(i + 1) * nc]))
        elif op == REDUCE_MAX:
            for i in range(prod(s.access)):
                data.append(max(t.data[i * nc:(i + 1) * nc]))
        elif op == DOT_PROD:
            arity = s.compute[0]
            per = nc // arity
            for i in range(prod(s.access)):
                chunk = t.data[i * nc:(i + 1) * nc]
                slices = [chunk[j * per:(j + 1) * per] for j in range(arity)]
                acc = 0
                for vals in zip(*slices):
                    term = vals[0]
                    for v in vals[1:]:
                        term = term * v
                    acc += term
                data.append(acc)
        else:
            raise ShapeMismatch(f"unknown operator {op!r}")
        return Tensor(s.access, tuple(data))

    if head == "dense":
        return _dense(go(kids[0]), go(kids[1]))

    if head == "bias_add":
        x, c = go(kids[0]), go(kids[1])
        n = x.shape[-1]
        data = [x.data[i] + c.data[i % n] for i in range(len(x.data))]
        return Tensor(x.shape, tuple(data))

    if head == "add":
        x, y = go(kids[0]), go(kids[1])
        out_shape = shp(node).concat
        rank = len(out_shape)
        xpad = (0,) * (rank - len(x.shape)) + tuple(
            0 if d == 1 else s for d, s in zip(x.shape, x.strides()))
        ypad = (0,) * (rank - len(y.shape)) + tuple(
            0 if d == 1 else s for d, s in zip(y.shape, y.strides()))
        data = [x.data[_ravel(idx, xpad)] + y.data[_ravel(idx, ypad)]
                for idx in _indices(out_shape)]
        return Tensor(out_shape, tuple(data))

    if head in ("systolicArray", "vta_dense", "hlscnn_conv2d"):
        return _eval_accel(head, tuple(payload[0]), [go(k) for k in kids])

    raise ShapeMismatch(f"unknown node head {head!r}")


def _dense(a: Tensor, b: Tensor) -> Tensor:
    # weight-transposed convention: out[i, j] = sum_k a[i, k] * b[j, k]
    m, k = a.shape
    n, k2 = b.shape
    if k != k2:
        raise ShapeMismatch(f"dense wants (m, k) x (n, k), got {a.shape} x {b.shape}")
    arows = [a.data[i * k:(i + 1) * k] for i in range(m)]
    brows = [b.data[j * k:(j + 1) * k] for j in range(n)]
    data = []
    for ar in arows:
        for br in brows:
            data.append(sum(x * y for x, y in zip(ar, br)))
    return Tensor((m, n), tuple(data))


def _eval_accel(kind: str, params, args: list[Tensor]) -> Tensor:
    """Evaluate an accelerator call via its defining reference expression."""
    if kind == "systolicArray":
        t0, t1 = args  # activations (batch, rows); weights pre-transposed (rows, cols)
        ref = Compute(DOT_PROD, CartProd(
            Access(Var("a0", t0.shape), 1),
            Transpose(Access(Var("a1w", t1.shape), 1), (1, 0))))
        return eval_expr(ref, {"a0": t0, "a1w": t1})
    if kind == "vta_dense":
        t0, t1 = args
        ref = NamedOp("dense", (Var("x", t0.shape), Var("w", t1.shape)))
        return eval_expr(ref, {"x": t0, "w": t1})
    if kind == "hlscnn_conv2d":
        group, sh, sw = params
        if group != 1:
            raise ShapeMismatch(f"hlscnn_conv2d supports group=1 only, got {group}")
        act, wgt = args
        ref = conv2d_expr(act.shape, wgt.shape, (sh, sw))
        return eval_expr(ref, {"activations": act, "weights": wgt})
    raise ShapeMismatch(f"unknown accelerator kind {kind!r}")


# ---------------------------------------------------------------------------
# Canonical kernel encodings

def conv2d_expr(act_shape: Dims, wgt_shape: Dims, strides: tuple[int, int],
                act_name: str = "activations", wgt_name: str = "weights") -> Expr:
    """The canonical access-pattern encoding of a 2-d convolution."""
    from .ir import Squeeze, Windows

    _, c, _, _ = act_shape
    _, c2, kh, kw = wgt_shape
    if c != c2:
        raise ShapeMismatch(f"conv2d channel mismatch: {c} vs {c2}")
    sh, sw = strides
    return Transpose(
        Squeeze(
            Compute(DOT_PROD, CartProd(
                Windows(Access(Var(act_name, tuple(act_shape)), 1), (c, kh, kw), (1, sh, sw)),
                Access(Var(wgt_name, tuple(wgt_shape)), 1))),
            1),
        (0, 3, 1, 2))


def matmul_expr(p_shape: Dims, q_shape: Dims,
                p_name: str = "activations", q_name: str = "weights") -> Expr:
    """The canonical access-pattern encoding of P (m, n) times Q (n, o)."""
    return Compute(DOT_PROD, CartProd(
        Access(Var(p_name, tuple(p_shape)), 1),
        Transpose(Access(Var(q_name, tuple(q_shape)), 1), (1, 0))))


def maxpool_expr(act_shape: Dims, window: tuple[int, int], strides: tuple[int, int],
                 act_name: str = "activations") -> Expr:
    """The canonical access-pattern encoding of 2-d max pooling."""
    from .ir import Windows

    return Compute(REDUCE_MAX, Windows(
        Access(Var(act_name, tuple(act_shape)), 2), tuple(window), tuple(strides)))


# ---------------------------------------------------------------------------
# Independent oracles (nested loops, no eval)

def oracle_matmul(p: Tensor, q: Tensor) -> Tensor:
    """R[i, j] = sum_k P[i, k] * Q[k, j], by triple loop."""
    if len(p.shape) != 2 or len(q.shape) != 2 or p.shape[1] != q.shape[0]:
        raise ShapeMismatch(f"matmul wants (m, n) x (n, o), got {p.shape} x {q.shape}")
    m, n = p.shape
    _, o = q.shape
    data = []
    for i in range(m):
        for j in range(o):
            acc = 0
            for k in range(n):
                acc += p.data[i * n + k] * q.data[k * o + j]
            data.append(acc)
    return Tensor((m, o), tuple(data))


def oracle_conv2d(act: Tensor, wgt: Tensor, strides: tuple[int, int]) -> Tensor:
    """out[n, o, x, y] = sum_{dx, dy, c} act[n, c, sh*x+dx, sw*y+dy] * wgt[o, c, dx, dy]."""
    if len(act.shape) != 4 or len(wgt.shape) != 4:
        raise ShapeMismatch(f"conv2d wants 4-d act and wgt, got {act.shape}, {wgt.shape}")
    bn, c, h, w = act.shape
    o, c2, kh, kw = wgt.shape
    if c != c2:
        raise ShapeMismatch(f"conv2d channel mismatch: {c} vs {c2}")
    sh, sw = strides
    hp, wp = windows_output_dims((h, w), (kh, kw), (sh, sw))
    data = []
    for n in range(bn):
        for oo in range(o):
            for x in range(hp):
                for y in range(wp):
                    acc = 0
                    for cc in range(c):
                        for dx in range(kh):
                            for dy in range(kw):
                                acc += (act[(n, cc, sh * x + dx, sw * y + dy)]
                                        * wgt[(oo, cc, dx, dy)])
                    data.append(acc)
    return Tensor((bn, o, hp, wp), tuple(data))


def oracle_maxpool(act: Tensor, window: tuple[int, int], strides: tuple[int, int]) -> Tensor:
    """out[n, c, x, y] = max_{dx, dy} act[n, c, sh*x+dx, sw*y+dy]."""
    if len(act.shape) != 4:
        raise ShapeMismatch(f"maxpool wants a 4-d act, got {act.shape}")
    bn, c, h, w = act.shape
    kh, kw = window
    if kh > h or kw > w:
        raise WindowTooLarge(f"window {window} exceeds spatial dims {(h, w)}")
    sh, sw = strides
    hp, wp = windows_output_dims((h, w), (kh, kw), (sh, sw))
    data = []
    for n in range(bn):
        for cc in range(c):
            for x in range(hp):
                for y in range(wp):
                    best = None
                    for dx in range(kh):
                        for dy in range(kw):
                            v = act[(n, cc, sh * x + dx, sw * y + dy)]
                            best = v if best is None or v > best else best
                    data.append(best)
    return Tensor((bn, c, hp, wp), tuple(data))


def frobenius_relative_error(ref: Tensor, out: Tensor) -> float:
    """||ref - out||_F / ||ref||_F; raises ZeroDivisionError on an all-zero ref."""
    if ref.shape != out.shape:
        raise ShapeMismatch(f"shape mismatch: {ref.shape} vs {out.shape}")
    denom = math.sqrt(sum(v * v for v in ref.data))
    if denom == 0.0:
        raise ZeroDivisionError("reference tensor is all zeros")
    num = math.sqrt(sum((a - b) * (a - b) for a, b in zip(ref.data, out.data)))
    return num / denom


def random_tensor(rng, shape: Dims, lo: int = -9, hi: int = 9) -> Tensor:
    return Tensor(tuple(shape), tuple(rng.randint(lo, hi) for _ in range(prod(tuple(shape)))))
