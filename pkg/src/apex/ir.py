"""Access-pattern tensor IR: expression nodes, shape algebra, shape inference.

An access pattern views a dense tensor through a pair of dimension tuples
(access dims, compute dims): the access dims are iterated over, the compute
dims are what each element being computed on looks like. Transformers
rearrange the pair without touching values; `compute` is the only construct
that consumes compute dims.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

Dims = tuple[int, ...]

REDUCE_SUM = "reduceSum"
REDUCE_MAX = "reduceMax"
DOT_PROD = "dotProd"
OPERATORS = (REDUCE_SUM, REDUCE_MAX, DOT_PROD)

NAMED_OP_KINDS = ("dense", "bias_add", "add", "reshape_op", "flatten_op")
ACCEL_KINDS = ("systolicArray", "vta_dense", "hlscnn_conv2d")


class IRError(Exception):
    """Base class for shape and structure errors."""


class UnboundVariable(IRError):
    pass


class DimIndexOutOfRange(IRError):
    pass


class ShapeMismatch(IRError):
    pass


class ArityError(IRError):
    pass


class WindowTooLarge(IRError):
    pass


def prod(dims: Dims) -> int:
    return math.prod(dims)


def format_dims(dims: Dims) -> str:
    return "(" + ", ".join(str(d) for d in dims) + ")"


@dataclass(frozen=True)
class AccessPatternShape:
    """The (S_A, S_C) pair; concatenated it is the underlying tensor shape."""

    access: Dims
    compute: Dims

    def __post_init__(self):
        for d in self.access + self.compute:
            if not isinstance(d, int) or d < 1:
                raise ShapeMismatch(f"dimensions must be positive integers, got {d!r}")

    @property
    def concat(self) -> Dims:
        return self.access + self.compute

    @property
    def elements(self) -> int:
        return prod(self.access) * prod(self.compute)

    def __str__(self) -> str:
        return f"({format_dims(self.access)}, {format_dims(self.compute)})"


def shape_of_tensor(dims: Dims) -> AccessPatternShape:
    """Fully-computed view of a plain tensor: zero access dims."""
    return AccessPatternShape((), tuple(dims))


# ---------------------------------------------------------------------------
# Expression nodes

class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Var(Expr):
    name: str
    shape: Dims | None = None


@dataclass(frozen=True)
class Access(Expr):
    inner: Expr
    position: int


@dataclass(frozen=True)
class Transpose(Expr):
    inner: Expr
    perm: Dims


@dataclass(frozen=True)
class CartProd(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Windows(Expr):
    inner: Expr
    window: Dims
    strides: Dims


@dataclass(frozen=True)
class Slice(Expr):
    inner: Expr
    dim: int
    lo: int
    hi: int


@dataclass(frozen=True)
class Squeeze(Expr):
    inner: Expr
    dim: int


@dataclass(frozen=True)
class Flatten(Expr):
    inner: Expr


@dataclass(frozen=True)
class Reshape(Expr):
    inner: Expr
    target: AccessPatternShape


@dataclass(frozen=True)
class Pair(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Concat(Expr):
    left: Expr
    right: Expr
    dim: int


@dataclass(frozen=True)
class Compute(Expr):
    op: str
    inner: Expr


@dataclass(frozen=True)
class NamedOp(Expr):
    """Opaque tensor-level operator (dense, bias_add, add, reshape_op, flatten_op)."""

    kind: str
    args: tuple[Expr, ...]
    attr: Dims | None = None  # target shape for reshape_op


@dataclass(frozen=True)
class AccelCall(Expr):
    """Black-box accelerator invocation with integer params and expression args."""

    kind: str
    params: Dims | tuple[int, ...]
    args: tuple[Expr, ...]


# ---------------------------------------------------------------------------
# Uniform decomposition, used by the e-graph and the pattern matcher.

def decompose(e: Expr) -> tuple[str, tuple, tuple[Expr, ...]]:
    """Return (head, payload, children) for any node."""
    if isinstance(e, Var):
        return "var", (e.name, e.shape), ()
    if isinstance(e, Access):
        return "access", (e.position,), (e.inner,)
    if isinstance(e, Transpose):
        return "transpose", (e.perm,), (e.inner,)
    if isinstance(e, CartProd):
        return "cartProd", (), (e.left, e.right)
    if isinstance(e, Windows):
        return "windows", (e.window, e.strides), (e.inner,)
    if isinstance(e, Slice):
        return "slice", (e.dim, e.lo, e.hi), (e.inner,)
    if isinstance(e, Squeeze):
        return "squeeze", (e.dim,), (e.inner,)
    if isinstance(e, Flatten):
        return "flatten", (), (e.inner,)
    if isinstance(e, Reshape):
        return "reshape", (e.target.access, e.target.compute), (e.inner,)
    if isinstance(e, Pair):
        return "pair", (), (e.left, e.right)
    if isinstance(e, Concat):
        return "concat", (e.dim,), (e.left, e.right)
    if isinstance(e, Compute):
        return "compute", (e.op,), (e.inner,)
    if isinstance(e, NamedOp):
        return e.kind, (e.attr,), e.args
    if isinstance(e, AccelCall):
        return e.kind, (tuple(e.params),), e.args
    raise TypeError(f"not an Expr: {e!r}")


def make_node(head: str, payload: tuple, children: tuple[Expr, ...]) -> Expr:
    if head == "var":
        return Var(payload[0], payload[1])
    if head == "access":
        return Access(children[0], payload[0])
    if head == "transpose":
        return Transpose(children[0], tuple(payload[0]))
    if head == "cartProd":
        return CartProd(children[0], children[1])
    if head == "windows":
        return Windows(children[0], tuple(payload[0]), tuple(payload[1]))
    if head == "slice":
        return Slice(children[0], payload[0], payload[1], payload[2])
    if head == "squeeze":
        return Squeeze(children[0], payload[0])
    if head == "flatten":
        return Flatten(children[0])
    if head == "reshape":
        return Reshape(children[0], AccessPatternShape(tuple(payload[0]), tuple(payload[1])))
    if head == "pair":
        return Pair(children[0], children[1])
    if head == "concat":
        return Concat(children[0], children[1], payload[0])
    if head == "compute":
        return Compute(payload[0], children[0])
    if head in NAMED_OP_KINDS:
        return NamedOp(head, tuple(children), payload[0] if payload else None)
    if head in ACCEL_KINDS:
        return AccelCall(head, tuple(payload[0]), tuple(children))
    raise ValueError(f"unknown node head {head!r}")


def children_of(e: Expr) -> tuple[Expr, ...]:
    return decompose(e)[2]


# ---------------------------------------------------------------------------
# Shape inference

def windows_output_dims(b: Dims, w: Dims, s: Dims) -> Dims:
    """Count of window placements per dim: b'_i = ceil((b_i - (w_i - 1)) / s_i)."""
    if not (len(b) == len(w) == len(s)):
        raise ArityError(f"windows wants matching ranks, got {b}, {w}, {s}")
    out = []
    for bi, wi, si in zip(b, w, s):
        if wi < 1 or si < 1:
            raise ShapeMismatch(f"window and stride entries must be positive, got {wi}, {si}")
        if wi > bi:
            raise WindowTooLarge(f"window {wi} exceeds dimension {bi}")
        out.append(-((bi - (wi - 1)) // -si))
    return tuple(out)


def _broadcast(a: Dims, b: Dims) -> Dims:
    out = []
    for i in range(1, max(len(a), len(b)) + 1):
        da = a[-i] if i <= len(a) else 1
        db = b[-i] if i <= len(b) else 1
        if da != db and da != 1 and db != 1:
            raise ShapeMismatch(f"cannot broadcast {a} with {b}")
        out.append(max(da, db))
    return tuple(reversed(out))


def node_shape(head: str, payload: tuple, child_shapes: tuple[AccessPatternShape, ...]) -> AccessPatternShape:
    """Shape rule for a single node given its children's shapes.

    The single source of truth: tree inference and the e-graph's class
    analysis both go through here.
    """
    if head == "var":
        name, shape = payload
        if shape is None:
            raise UnboundVariable(f"variable {name!r} has no declared shape")
        return shape_of_tensor(shape)

    if head == "access":
        (pos,) = payload
        dims = child_shapes[0].concat
        if not (0 <= pos <= len(dims)):
            raise DimIndexOutOfRange(f"access position {pos} out of range for rank {len(dims)}")
        return AccessPatternShape(dims[:pos], dims[pos:])

    if head == "transpose":
        (perm,) = payload
        s = child_shapes[0]
        dims = s.concat
        if sorted(perm) != list(range(len(dims))):
            raise ShapeMismatch(f"transpose perm {perm} is not a permutation of 0..{len(dims) - 1}")
        moved = tuple(dims[p] for p in perm)
        k = len(s.access)
        return AccessPatternShape(moved[:k], moved[k:])

    if head == "cartProd":
        l, r = child_shapes
        if l.compute != r.compute:
            raise ShapeMismatch(f"cartProd compute dims differ: {l.compute} vs {r.compute}")
        return AccessPatternShape(l.access + r.access, (2,) + l.compute)

    if head == "windows":
        window, strides = payload
        s = child_shapes[0]
        placed = windows_output_dims(s.compute, tuple(window), tuple(strides))
        return AccessPatternShape(s.access + placed, tuple(window))

    if head == "slice":
        dim, lo, hi = payload
        s = child_shapes[0]
        dims = s.concat
        if not (0 <= dim < len(dims)):
            raise DimIndexOutOfRange(f"slice dim {dim} out of range for rank {len(dims)}")
        if not (0 <= lo < hi <= dims[dim]):
            raise ShapeMismatch(f"slice bounds [{lo}, {hi}) invalid for dim of size {dims[dim]}")
        new = dims[:dim] + (hi - lo,) + dims[dim + 1:]
        k = len(s.access)
        return AccessPatternShape(new[:k], new[k:])

    if head == "squeeze":
        (dim,) = payload
        s = child_shapes[0]
        dims = s.concat
        if not (0 <= dim < len(dims)):
            raise DimIndexOutOfRange(f"squeeze dim {dim} out of range for rank {len(dims)}")
        if dims[dim] != 1:
            raise ShapeMismatch(f"squeeze of non-1 dim (size {dims[dim]} at {dim})")
        new = dims[:dim] + dims[dim + 1:]
        k = len(s.access) - (1 if dim < len(s.access) else 0)
        return AccessPatternShape(new[:k], new[k:])

    if head == "flatten":
        s = child_shapes[0]
        a = (prod(s.access),) if s.access else ()
        c = (prod(s.compute),) if s.compute else ()
        return AccessPatternShape(a, c)

    if head == "reshape":
        s = child_shapes[0]
        target = AccessPatternShape(tuple(payload[0]), tuple(payload[1]))
        if prod(s.access) != prod(target.access) or prod(s.compute) != prod(target.compute):
            raise ShapeMismatch(f"reshape {s} to {target} does not preserve element counts")
        return target

    if head == "pair":
        l, r = child_shapes
        if l != r:
            raise ShapeMismatch(f"pair operands differ: {l} vs {r}")
        return AccessPatternShape(l.access, (2,) + l.compute)

    if head == "concat":
        (dim,) = payload
        l, r = child_shapes
        if len(l.access) != len(r.access) or len(l.compute) != len(r.compute):
            raise ShapeMismatch(f"concat operands split differently: {l} vs {r}")
        dl, dr = l.concat, r.concat
        if not (0 <= dim < len(dl)):
            raise DimIndexOutOfRange(f"concat dim {dim} out of range for rank {len(dl)}")
        for i, (a, b) in enumerate(zip(dl, dr)):
            if i != dim and a != b:
                raise ShapeMismatch(f"concat operands disagree off-axis at dim {i}: {dl} vs {dr}")
        new = dl[:dim] + (dl[dim] + dr[dim],) + dl[dim + 1:]
        k = len(l.access)
        return AccessPatternShape(new[:k], new[k:])

    if head == "compute":
        (op,) = payload
        s = child_shapes[0]
        if op not in OPERATORS:
            raise ArityError(f"unknown operator {op!r}")
        if op == DOT_PROD:
            if not s.compute or s.compute[0] < 2:
                raise ArityError(f"dotProd wants a tuple dim >= 2, got compute dims {s.compute}")
        return AccessPatternShape(s.access, ())

    if head == "dense":
        _need_args(head, payload, child_shapes, 2)
        a, b = (cs.concat for cs in child_shapes)
        if len(a) != 2 or len(b) != 2 or a[1] != b[1]:
            raise ShapeMismatch(f"dense wants (m, k) x (n, k), got {a} x {b}")
        return shape_of_tensor((a[0], b[0]))

    if head == "bias_add":
        _need_args(head, payload, child_shapes, 2)
        x, c = (cs.concat for cs in child_shapes)
        if not x or len(c) != 1 or c[0] != x[-1]:
            raise ShapeMismatch(f"bias_add wants a rank-1 bias matching the last dim, got {x} + {c}")
        return shape_of_tensor(x)

    if head == "add":
        _need_args(head, payload, child_shapes, 2)
        x, y = (cs.concat for cs in child_shapes)
        return shape_of_tensor(_broadcast(x, y))

    if head == "reshape_op":
        target = payload[0]
        if target is None:
            raise ArityError("reshape_op wants a target shape attribute")
        x = child_shapes[0].concat
        if prod(x) != prod(tuple(target)):
            raise ShapeMismatch(f"reshape_op {x} to {tuple(target)} changes element count")
        return shape_of_tensor(tuple(target))

    if head == "flatten_op":
        x = child_shapes[0].concat
        return shape_of_tensor((prod(x),))

    if head == "systolicArray":
        params = tuple(payload[0])
        if len(params) != 2:
            raise ArityError(f"systolicArray wants params (rows, cols), got {params}")
        rows, cols = params
        if len(child_shapes) != 2:
            raise ArityError("systolicArray wants (activations, weights) args")
        a0, a1 = child_shapes
        if len(a0.access) != 1 or len(a0.compute) != 1 or a0.compute[0] != rows:
            raise ShapeMismatch(f"systolicArray activations must be ((batch), ({rows})), got {a0}")
        if a1.access != () or a1.compute != (rows, cols):
            raise ShapeMismatch(f"systolicArray weights must be ((), ({rows}, {cols})), got {a1}")
        return AccessPatternShape((a0.access[0], cols), ())

    if head == "vta_dense":
        if len(child_shapes) != 2:
            raise ArityError("vta_dense wants 2 args")
        a, b = (cs.concat for cs in child_shapes)
        if len(a) != 2 or len(b) != 2 or a[1] != b[1]:
            raise ShapeMismatch(f"vta_dense wants (m, k) x (n, k), got {a} x {b}")
        return shape_of_tensor((a[0], b[0]))

    if head == "hlscnn_conv2d":
        params = tuple(payload[0])
        if len(params) != 3:
            raise ArityError(f"hlscnn_conv2d wants params (group, sh, sw), got {params}")
        group, sh, sw = params
        if group != 1:
            raise ShapeMismatch(f"hlscnn_conv2d supports group=1 only, got {group}")
        if len(child_shapes) != 2:
            raise ArityError("hlscnn_conv2d wants (activations, weights) args")
        act, wgt = (cs.concat for cs in child_shapes)
        if len(act) != 4 or len(wgt) != 4:
            raise ShapeMismatch(f"hlscnn_conv2d wants NCHW x OCKhKw, got {act} x {wgt}")
        n, c, h, w = act
        o, c2, kh, kw = wgt
        if c != c2:
            raise ShapeMismatch(f"hlscnn_conv2d channel mismatch: {c} vs {c2}")
        hp, wp = windows_output_dims((h, w), (kh, kw), (sh, sw))
        return AccessPatternShape((n, o, hp, wp), ())

    raise ValueError(f"unknown node head {head!r}")


def _need_args(head, payload, child_shapes, n):
    if len(child_shapes) != n:
        raise ArityError(f"{head} wants {n} args, got {len(child_shapes)}")


def infer_shape(e: Expr, env: dict[str, Dims] | None = None) -> AccessPatternShape:
    """Shape of `e`, resolving free variables through `env`.

    Total and deterministic on valid trees; raises the relevant IRError
    subclass otherwise.
    """
    memo: dict[int, AccessPatternShape] = {}

    def go(node: Expr) -> AccessPatternShape:
        key = id(node)
        if key in memo:
            return memo[key]
        head, payload, kids = decompose(node)
        if head == "var":
            name, shape = payload
            if shape is None:
                if env is None or name not in env:
                    raise UnboundVariable(f"variable {name!r} is not bound")
                shape = tuple(env[name])
            elif env is not None and name in env and tuple(env[name]) != tuple(shape):
                raise ShapeMismatch(
                    f"variable {name!r} declared as {shape} but bound as {tuple(env[name])}")
            result = shape_of_tensor(tuple(shape))
        else:
            result = node_shape(head, payload, tuple(go(k) for k in kids))
        memo[key] = result
        return result

    return go(e)


def bind_shapes(e: Expr, env: dict[str, Dims]) -> Expr:
    """Return `e` with every Var carrying its concrete shape."""
    head, payload, kids = decompose(e)
    if head == "var":
        name, shape = payload
        if shape is None:
            if name not in env:
                raise UnboundVariable(f"variable {name!r} is not bound")
            return Var(name, tuple(env[name]))
        return e
    new_kids = tuple(bind_shapes(k, env) for k in kids)
    if new_kids == kids:
        return e
    return make_node(head, payload, new_kids)


def free_vars(e: Expr) -> dict[str, Dims | None]:
    """Free variables in first-occurrence order, mapped to embedded shapes."""
    seen: dict[str, Dims | None] = {}

    def go(node):
        head, payload, kids = decompose(node)
        if head == "var":
            seen.setdefault(payload[0], payload[1])
        for k in kids:
            go(k)

    go(e)
    return seen


@dataclass(frozen=True)
class Diagnostic:
    path: tuple[int, ...]
    error: IRError

    def __str__(self) -> str:
        where = "root" if not self.path else "/".join(str(i) for i in self.path)
        return f"at {where}: {type(self.error).__name__}: {self.error}"


def check_well_formed(e: Expr, env: dict[str, Dims] | None = None) -> list[Diagnostic]:
    """Run shape inference over every subexpression; collect every failure.

    Returns an empty list when the whole tree is well-formed. A node whose
    own rule fails is reported once; its ancestors (which cannot be checked
    without a child shape) are not re-reported.
    """
    diags: list[Diagnostic] = []
    memo: dict[int, AccessPatternShape | None] = {}

    def go(node: Expr, path: tuple[int, ...]) -> AccessPatternShape | None:
        key = id(node)
        if key in memo:
            return memo[key]
        head, payload, kids = decompose(node)
        child_shapes = []
        ok = True
        for i, k in enumerate(kids):
            cs = go(k, path + (i,))
            if cs is None:
                ok = False
            child_shapes.append(cs)
        result: AccessPatternShape | None = None
        if ok:
            try:
                if head == "var":
                    result = infer_shape(node, env)
                else:
                    result = node_shape(head, payload, tuple(child_shapes))
            except IRError as err:
                diags.append(Diagnostic(path, err))
        memo[key] = result
        return result

    go(e, ())
    return diags


def assert_well_formed(e: Expr, env: dict[str, Dims] | None = None) -> None:
    diags = check_well_formed(e, env)
    if diags:
        raise type(diags[0].error)("; ".join(str(d) for d in diags))
