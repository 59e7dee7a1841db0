"""Shared test helpers: a shape-correct random program generator, plus a
terminal summary that prints one line per acceptance criterion."""
from __future__ import annotations

import random

import pytest

_ACCEPTANCE: list[tuple[str, str, float]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE.append((name, report.outcome.upper(), report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _ACCEPTANCE:
        terminalreporter.write_line(f"{name}: {outcome} in {duration:.2f}s")

from apex.ir import (
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
    infer_shape,
    prod,
)


def _factorization(rng, n: int, max_len: int = 3) -> Dims:
    if n == 1:
        return (1,)
    out = []
    rest = n
    while len(out) < max_len - 1 and rest > 1:
        divisors = [d for d in range(2, rest + 1) if rest % d == 0]
        d = rng.choice(divisors + [rest])
        if d > 1:
            out.append(min(d, rest))
            rest //= min(d, rest)
    if rest > 1 or not out:
        out.append(max(rest, 1))
    return tuple(out)


class ProgramGen:
    """Builds random well-formed expressions plus their variable environment."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.env: dict[str, Dims] = {}

    def fresh_leaf(self, shape: AccessPatternShape | None = None) -> Expr:
        rng = self.rng
        if shape is None:
            dims = tuple(rng.randint(1, 4) for _ in range(rng.randint(1, 3)))
            split = rng.randint(0, len(dims))
            shape = AccessPatternShape(dims[:split], dims[split:])
        name = f"t{len(self.env)}"
        self.env[name] = shape.concat
        return Access(Var(name, shape.concat), len(shape.access))

    def expr(self, budget: int) -> Expr:
        rng = self.rng
        if budget <= 0 or rng.random() < 0.2:
            return self.fresh_leaf()
        inner = self.expr(budget - 1)
        s = infer_shape(inner)
        dims = s.concat
        options = ["access", "transpose", "flatten", "reshape", "pair", "slice",
                   "concat", "cartprod", "compute", "named", "accel"]
        if 1 in dims:
            options.append("squeeze")
        if s.compute:
            options.append("windows")
        kind = rng.choice(options)

        if kind == "access":
            return Access(inner, rng.randint(0, len(dims)))
        if kind == "transpose":
            perm = list(range(len(dims)))
            rng.shuffle(perm)
            return Transpose(inner, tuple(perm))
        if kind == "flatten":
            return Flatten(inner)
        if kind == "reshape":
            na = _factorization(rng, prod(s.access)) if s.access else ()
            nc = _factorization(rng, prod(s.compute)) if s.compute else ()
            return Reshape(inner, AccessPatternShape(na, nc))
        if kind == "squeeze":
            return Squeeze(inner, dims.index(1))
        if kind == "pair":
            return Pair(inner, self.fresh_leaf(s))
        if kind == "slice":
            if not dims:
                return inner
            d = rng.randrange(len(dims))
            lo = rng.randrange(dims[d])
            hi = rng.randint(lo + 1, dims[d])
            return Slice(inner, d, lo, hi)
        if kind == "concat":
            if not dims:
                return inner
            d = rng.randrange(len(dims))
            other_dims = dims[:d] + (rng.randint(1, 4),) + dims[d + 1:]
            k = len(s.access)
            other = AccessPatternShape(other_dims[:k], other_dims[k:])
            return Concat(inner, self.fresh_leaf(other), d)
        if kind == "cartprod":
            other = AccessPatternShape(
                tuple(rng.randint(1, 3) for _ in range(rng.randint(0, 2))), s.compute)
            return CartProd(inner, self.fresh_leaf(other))
        if kind == "windows":
            window = tuple(rng.randint(1, d) for d in s.compute)
            strides = tuple(rng.randint(1, 2) for _ in s.compute)
            return Windows(inner, window, strides)
        if kind == "compute":
            if s.compute and s.compute[0] >= 2 and rng.random() < 0.5:
                return Compute("dotProd", inner)
            return Compute(rng.choice(("reduceSum", "reduceMax")), inner)
        if kind == "named":
            return self.named()
        return self.accel()

    def named(self) -> Expr:
        rng = self.rng
        kind = rng.choice(("dense", "bias_add", "add", "reshape_op", "flatten_op"))
        if kind == "dense":
            m, k, n = (rng.randint(1, 4) for _ in range(3))
            return NamedOp("dense", (self.fresh_leaf(AccessPatternShape((), (m, k))),
                                     self.fresh_leaf(AccessPatternShape((), (n, k)))))
        if kind == "bias_add":
            m, n = rng.randint(1, 4), rng.randint(1, 4)
            return NamedOp("bias_add", (self.fresh_leaf(AccessPatternShape((), (m, n))),
                                        self.fresh_leaf(AccessPatternShape((), (n,)))))
        if kind == "add":
            m, n = rng.randint(1, 4), rng.randint(1, 4)
            return NamedOp("add", (self.fresh_leaf(AccessPatternShape((), (m, n))),
                                   self.fresh_leaf(AccessPatternShape((), (n,)))))
        if kind == "reshape_op":
            m, n = rng.randint(1, 4), rng.randint(1, 4)
            x = self.fresh_leaf(AccessPatternShape((), (m, n)))
            return NamedOp("reshape_op", (x,), _factorization(rng, m * n))
        x = self.fresh_leaf(AccessPatternShape((), (rng.randint(1, 4), rng.randint(1, 4))))
        return NamedOp("flatten_op", (x,))

    def accel(self) -> Expr:
        rng = self.rng
        kind = rng.choice(("systolicArray", "vta_dense", "hlscnn_conv2d"))
        if kind == "systolicArray":
            b, r, c = (rng.randint(1, 4) for _ in range(3))
            a0 = self.fresh_leaf(AccessPatternShape((b,), (r,)))
            a1 = self.fresh_leaf(AccessPatternShape((), (r, c)))
            return AccelCall("systolicArray", (r, c), (a0, a1))
        if kind == "vta_dense":
            m, k, n = (rng.randint(1, 4) for _ in range(3))
            return AccelCall("vta_dense", (), (
                self.fresh_leaf(AccessPatternShape((), (m, k))),
                self.fresh_leaf(AccessPatternShape((), (n, k)))))
        n, c, o = rng.randint(1, 2), rng.randint(1, 2), rng.randint(1, 2)
        h, w = rng.randint(2, 4), rng.randint(2, 4)
        kh, kw = rng.randint(1, h), rng.randint(1, w)
        return AccelCall("hlscnn_conv2d", (1, 1, 1), (
            self.fresh_leaf(AccessPatternShape((), (n, c, h, w))),
            self.fresh_leaf(AccessPatternShape((), (o, c, kh, kw)))))


def random_program(seed: int, budget: int = 5):
    gen = ProgramGen(random.Random(seed))
    expr = gen.expr(budget)
    return expr, gen.env


@pytest.fixture
def gen_program():
    return random_program
