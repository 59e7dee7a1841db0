"""The rewrite rule library, its per-rule shape samplers, and the soundness fuzzer.

Rule groups:
  generic  — operator-reordering identities over named ops and access patterns
  im2col   — the exploratory flatten/reshape identity plus the two rewrites
             that bubble reshape out of cartProd and compute dotProd
  blocking — slice/concat splitting and the rewrites that bubble concat out
             of cartProd and compute dotProd
  mapping  — accelerator mappings (systolic array, vta_dense, hlscnn_conv2d)

Every rule must be semantics-preserving under the reference interpreter;
`check_rule_soundness` fuzzes that with randomized shapes and integer
tensors. Conditions live in each rule's `expand` hook, which also computes
right-hand-side metavariables (reshape targets, concat indices, array dims).
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from .interp import eval_expr, random_tensor
from .ir import (
    AccessPatternShape,
    Access,
    Dims,
    Expr,
    IRError,
    Var,
    free_vars,
    infer_shape,
    prod,
)
from .patterns import (
    IVar,
    Match,
    PNode,
    PVar,
    Pattern,
    Ref,
    SVar,
    TreeBuilder,
    instantiate,
    match_tree,
)


class UnknownGroup(Exception):
    pass


class NoSatisfyingShapes(Exception):
    pass


@dataclass
class RewriteRule:
    """Named LHS/RHS pattern pair with a condition/metavariable hook.

    `expand` receives a Match (bound environment + shape accessor) and
    returns one environment extension per way the rule applies; an empty
    list means the side condition failed. `sampler` draws concrete shapes
    for the soundness fuzzer.
    """

    name: str
    lhs: Pattern
    rhs: Pattern
    expand: Callable[[Match], list[dict]] = field(repr=False, default=lambda m: [{}])
    sampler: Callable[[random.Random], dict] = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# Sampler helpers

def _dims(rng, n_lo=0, n_hi=2, d_lo=1, d_hi=4) -> Dims:
    return tuple(rng.randint(d_lo, d_hi) for _ in range(rng.randint(n_lo, n_hi)))


def _factorization(rng, n: int, max_len: int = 3) -> Dims:
    if n == 1:
        return (1,)
    out = []
    rest = n
    while len(out) < max_len - 1 and rest > 1:
        divisors = [d for d in range(1, rest + 1) if rest % d == 0]
        d = rng.choice(divisors)
        if d > 1:
            out.append(d)
            rest //= d
        if rng.random() < 0.4:
            break
    if rest > 1 or not out:
        out.append(rest if rest > 1 else 1)
    return tuple(out)


def _split(rng, dims: Dims) -> AccessPatternShape:
    k = rng.randint(0, len(dims))
    return AccessPatternShape(dims[:k], dims[k:])


def _any_shape(rng) -> AccessPatternShape:
    return AccessPatternShape(_dims(rng, 0, 2), _dims(rng, 0, 2))


def _with(base: Dims, i: int, v: int) -> Dims:
    return base[:i] + (v,) + base[i + 1:]


# ---------------------------------------------------------------------------
# Generic rules

def _rule_reshape_out_of_dot_product() -> RewriteRule:
    # (compute dotProd (reshape ?a ?s)) -> (reshape (compute dotProd ?a) ?new)
    # Sound only when the reshape keeps the leading tuple dim: splitting or
    # merging the factor dimension changes which slices get multiplied.
    lhs = PNode("compute", ("dotProd",),
                (PNode("reshape", (SVar("ta"), SVar("tc")), (PVar("a"),)),))
    rhs = PNode("reshape", (Ref("na"), Ref("nc")),
                (PNode("compute", ("dotProd",), (PVar("a"),)),))

    def expand(m: Match):
        sa = m.shape("a")
        ta, tc = m.env["ta"], m.env["tc"]
        if not tc or not sa.compute or tc[0] != sa.compute[0]:
            return []
        return [{"na": tuple(ta), "nc": ()}]

    def sampler(rng):
        t = rng.randint(2, 4)
        s = _dims(rng, 0, 2, 1, 3)
        acc = _dims(rng, 0, 2, 1, 3)
        return {
            "a": AccessPatternShape(acc, (t,) + s),
            "ta": _factorization(rng, prod(acc)) if acc else (),
            "tc": (t,) + (_factorization(rng, prod(s)) if s else ()),
        }

    return RewriteRule("reshape-out-of-dot-product", lhs, rhs, expand, sampler)


def _rule_linear_layer_rearrange() -> RewriteRule:
    # (add (reshape_op (dense ?a ?b) ?s) ?c) -> (reshape_op (bias_add (dense ?a ?b) ?c) ?s)
    # Applicable when ?s is exactly the dense output shape and ?c is a vector
    # matching its last dim, so the broadcast in `add` is the bias broadcast.
    dense = PNode("dense", (None,), (PVar("a"), PVar("b")))
    lhs = PNode("add", (None,),
                (PNode("reshape_op", (SVar("s"),), (dense,)), PVar("c")))
    rhs = PNode("reshape_op", (Ref("s"),),
                (PNode("bias_add", (None,), (dense, PVar("c"))),))

    def expand(m: Match):
        sa, sb, sc = m.shape("a").concat, m.shape("b").concat, m.shape("c").concat
        if len(sa) != 2 or len(sb) != 2:
            return []
        out = (sa[0], sb[0])
        if tuple(m.env["s"]) != out or sc != (out[1],):
            return []
        return [{}]

    def sampler(rng):
        mm, k, n = (rng.randint(1, 5) for _ in range(3))
        return {
            "a": _split(rng, (mm, k)),
            "b": _split(rng, (n, k)),
            "c": _split(rng, (n,)),
            "s": (mm, n),
        }

    return RewriteRule("linear-layer-rearrange", lhs, rhs, expand, sampler)


def _rule_flatten_reshape_identity() -> RewriteRule:
    # ?x -> (reshape (flatten ?x) shape-of-?x); exploratory.
    lhs = PVar("x")
    rhs = PNode("reshape", (Ref("na"), Ref("nc")),
                (PNode("flatten", (), (PVar("x"),)),))

    def expand(m: Match):
        s = m.shape("x")
        return [{"na": s.access, "nc": s.compute}]

    def sampler(rng):
        return {"x": _any_shape(rng)}

    return RewriteRule("flatten-reshape-identity", lhs, rhs, expand, sampler)


def _rule_reshape_out_of_cart_prod() -> RewriteRule:
    # (cartProd (reshape ?a0 ?s0) (reshape ?a1 ?s1)) -> (reshape (cartProd ?a0 ?a1) ?new)
    lhs = PNode("cartProd", (), (
        PNode("reshape", (SVar("a0a"), SVar("a0c")), (PVar("a0"),)),
        PNode("reshape", (SVar("a1a"), SVar("a1c")), (PVar("a1"),)),
    ))
    rhs = PNode("reshape", (Ref("na"), Ref("nc")),
                (PNode("cartProd", (), (PVar("a0"), PVar("a1"))),))

    def expand(m: Match):
        if m.shape("a0").compute != m.shape("a1").compute:
            return []
        if tuple(m.env["a0c"]) != tuple(m.env["a1c"]):
            return []
        na = tuple(m.env["a0a"]) + tuple(m.env["a1a"])
        nc = (2,) + tuple(m.env["a0c"])
        return [{"na": na, "nc": nc}]

    def sampler(rng):
        c = _dims(rng, 1, 2, 1, 3)
        e = _factorization(rng, prod(c))
        acc0 = _dims(rng, 1, 2, 1, 3)
        acc1 = _dims(rng, 1, 2, 1, 3)
        return {
            "a0": AccessPatternShape(acc0, c),
            "a1": AccessPatternShape(acc1, c),
            "a0a": _factorization(rng, prod(acc0)),
            "a0c": e,
            "a1a": _factorization(rng, prod(acc1)),
            "a1c": e,
        }

    return RewriteRule("reshape-out-of-cart-prod", lhs, rhs, expand, sampler)


# ---------------------------------------------------------------------------
# Blocking rules

def _rule_split_dim_in_half() -> RewriteRule:
    # ?a -> (concat (slice ?a ?d 0 m) (slice ?a ?d m n) ?d), every even dim; exploratory.
    lhs = PVar("a")
    rhs = PNode("concat", (Ref("d"),), (
        PNode("slice", (Ref("d"), 0, Ref("m")), (PVar("a"),)),
        PNode("slice", (Ref("d"), Ref("m"), Ref("n")), (PVar("a"),)),
    ))

    def expand(m: Match):
        dims = m.shape("a").concat
        return [{"d": d, "m": n // 2, "n": n}
                for d, n in enumerate(dims) if n >= 2 and n % 2 == 0]

    def sampler(rng):
        dims = list(_dims(rng, 1, 3, 1, 6))
        dims[rng.randrange(len(dims))] = rng.choice((2, 4, 6))
        return {"a": _split(rng, tuple(dims))}

    return RewriteRule("split-dim-in-half", lhs, rhs, expand, sampler)


def _rule_concat_out_of_cart_prod(side: str) -> RewriteRule:
    # One-sided: bubble a concat on an access dim out of cartProd.
    concat = PNode("concat", (IVar("d"),), (PVar("b0"), PVar("b1")), bind="cc")
    if side == "right":
        lhs = PNode("cartProd", (), (PVar("a"), concat))
        rhs = PNode("concat", (Ref("nd"),), (
            PNode("cartProd", (), (PVar("a"), PVar("b0"))),
            PNode("cartProd", (), (PVar("a"), PVar("b1"))),
        ))
    else:
        lhs = PNode("cartProd", (), (concat, PVar("a")))
        rhs = PNode("concat", (Ref("nd"),), (
            PNode("cartProd", (), (PVar("b0"), PVar("a"))),
            PNode("cartProd", (), (PVar("b1"), PVar("a"))),
        ))

    def expand(m: Match):
        d = m.env["d"]
        if d >= len(m.shape("cc").access):
            return []
        nd = d if side == "left" else len(m.shape("a").access) + d
        return [{"nd": nd}]

    def sampler(rng):
        c = _dims(rng, 0, 2, 1, 3)
        a_acc = _dims(rng, 0, 2, 1, 3)
        b_acc = _dims(rng, 1, 2, 1, 3)
        d = rng.randrange(len(b_acc))
        b0 = tuple(b_acc)
        b1 = _with(b0, d, rng.randint(1, 3))
        return {
            "a": AccessPatternShape(a_acc, c),
            "b0": AccessPatternShape(b0, c),
            "b1": AccessPatternShape(b1, c),
            "d": d,
        }

    return RewriteRule(f"concat-out-of-cart-prod-{side}", lhs, rhs, expand, sampler)


def _rule_concat_out_of_cart_prod_both() -> RewriteRule:
    # Two-sided: both operands concatenated along the same shared compute dim.
    lhs = PNode("cartProd", (), (
        PNode("concat", (IVar("d0"),), (PVar("a0"), PVar("a1")), bind="lc"),
        PNode("concat", (IVar("d1"),), (PVar("a2"), PVar("a3")), bind="rc"),
    ))
    rhs = PNode("concat", (Ref("nd"),), (
        PNode("cartProd", (), (PVar("a0"), PVar("a2"))),
        PNode("cartProd", (), (PVar("a1"), PVar("a3"))),
    ))

    def expand(m: Match):
        nl, nr = len(m.shape("lc").access), len(m.shape("rc").access)
        d0, d1 = m.env["d0"], m.env["d1"]
        if d0 < nl or d1 < nr or d0 - nl != d1 - nr:
            return []
        if m.shape("a0").compute != m.shape("a2").compute:
            return []  # split points must agree or the sub-products are ragged
        return [{"nd": nl + nr + 1 + (d0 - nl)}]

    def sampler(rng):
        c = list(_dims(rng, 1, 2, 1, 3))
        j = rng.randrange(len(c))
        p, q = rng.randint(1, 3), rng.randint(1, 3)
        a_acc = _dims(rng, 0, 2, 1, 3)
        b_acc = _dims(rng, 0, 2, 1, 3)
        return {
            "a0": AccessPatternShape(a_acc, _with(tuple(c), j, p)),
            "a1": AccessPatternShape(a_acc, _with(tuple(c), j, q)),
            "a2": AccessPatternShape(b_acc, _with(tuple(c), j, p)),
            "a3": AccessPatternShape(b_acc, _with(tuple(c), j, q)),
            "d0": len(a_acc) + j,
            "d1": len(b_acc) + j,
        }

    return RewriteRule("concat-out-of-cart-prod-both", lhs, rhs, expand, sampler)


def _rule_concat_out_of_dot_product() -> RewriteRule:
    # Access-dim concat commutes with compute dotProd.
    lhs = PNode("compute", ("dotProd",),
                (PNode("concat", (IVar("d"),), (PVar("a0"), PVar("a1")), bind="cc"),))
    rhs = PNode("concat", (Ref("d"),), (
        PNode("compute", ("dotProd",), (PVar("a0"),)),
        PNode("compute", ("dotProd",), (PVar("a1"),)),
    ))

    def expand(m: Match):
        if m.env["d"] >= len(m.shape("cc").access):
            return []
        return [{}]

    def sampler(rng):
        t = rng.randint(2, 3)
        s = _dims(rng, 0, 2, 1, 3)
        acc = list(_dims(rng, 1, 2, 1, 3))
        d = rng.randrange(len(acc))
        a0 = tuple(acc)
        a1 = _with(a0, d, rng.randint(1, 3))
        return {
            "a0": AccessPatternShape(a0, (t,) + s),
            "a1": AccessPatternShape(a1, (t,) + s),
            "d": d,
        }

    return RewriteRule("concat-out-of-dot-product", lhs, rhs, expand, sampler)


def _rule_split_dot_product_reduction() -> RewriteRule:
    # Reduction-dim concat under dotProd becomes a reduceSum of partial dotProds.
    # The tuple dim itself (first compute dim) must stay intact.
    lhs = PNode("compute", ("dotProd",),
                (PNode("concat", (IVar("d"),), (PVar("a0"), PVar("a1")), bind="cc"),))
    rhs = PNode("compute", ("reduceSum",), (
        PNode("pair", (), (
            PNode("compute", ("dotProd",), (PVar("a0"),)),
            PNode("compute", ("dotProd",), (PVar("a1"),)),
        )),
    ))

    def expand(m: Match):
        if m.env["d"] < len(m.shape("cc").access) + 1:
            return []
        return [{}]

    def sampler(rng):
        t = rng.randint(2, 3)
        s = list(_dims(rng, 1, 2, 1, 3))
        j = rng.randrange(len(s))
        acc = _dims(rng, 0, 2, 1, 3)
        a0 = _with(tuple(s), j, rng.randint(1, 3))
        a1 = _with(tuple(s), j, rng.randint(1, 3))
        return {
            "a0": AccessPatternShape(acc, (t,) + a0),
            "a1": AccessPatternShape(acc, (t,) + a1),
            "d": len(acc) + 1 + j,
        }

    return RewriteRule("split-dot-product-reduction", lhs, rhs, expand, sampler)


# ---------------------------------------------------------------------------
# Mapping rules

def _rule_systolic_array(pe_limit: int, out_rows: int, out_cols: int) -> RewriteRule:
    # (compute dotProd (cartProd ?a0 ?a1)) -> systolicArray, when ?a0 is
    # ((batch), (rows)) and ?a1 is ((cols), (rows)) and the invocation fits
    # the modeled hardware: rows*cols weight entries in the PE array,
    # batch x cols partial sums in the accumulator.
    lhs = PNode("compute", ("dotProd",),
                (PNode("cartProd", (), (PVar("a0"), PVar("a1"))),))
    rhs = PNode("systolicArray", ((Ref("rows"), Ref("cols")),), (
        PVar("a0"),
        PNode("access", (0,), (PNode("transpose", ((1, 0),), (PVar("a1"),)),)),
    ))

    def expand(m: Match):
        s0, s1 = m.shape("a0"), m.shape("a1")
        if len(s0.access) != 1 or len(s0.compute) != 1:
            return []
        if len(s1.access) != 1 or len(s1.compute) != 1:
            return []
        if s0.compute != s1.compute:
            return []
        batch, rows, cols = s0.access[0], s0.compute[0], s1.access[0]
        if rows * cols > pe_limit or batch > out_rows or cols > out_cols:
            return []
        return [{"rows": rows, "cols": cols}]

    def sampler(rng):
        batch = rng.randint(1, min(6, out_rows))
        rows = rng.randint(1, 6)
        cols = rng.randint(1, min(6, out_cols, max(1, pe_limit // rows)))
        return {
            "a0": AccessPatternShape((batch,), (rows,)),
            "a1": AccessPatternShape((cols,), (rows,)),
        }

    return RewriteRule("systolic-array-matmul", lhs, rhs, expand, sampler)


def _rule_vta_dense() -> RewriteRule:
    # Tensor-level dense matmul maps straight onto the VTA GEMM core.
    lhs = PNode("dense", (None,), (PVar("x"), PVar("w")))
    rhs = PNode("vta_dense", ((),), (PVar("x"), PVar("w")))

    def sampler(rng):
        mm, k, n = (rng.randint(1, 6) for _ in range(3))
        return {"x": _split(rng, (mm, k)), "w": _split(rng, (n, k))}

    return RewriteRule("vta-dense", lhs, rhs, lambda m: [{}], sampler)


def _rule_hlscnn_conv2d() -> RewriteRule:
    # Kernel-level 2-d convolution (group=1) maps onto HLSCNN's conv engine.
    lhs = PNode("transpose", ((0, 3, 1, 2),), (
        PNode("squeeze", (1,), (
            PNode("compute", ("dotProd",), (
                PNode("cartProd", (), (
                    PNode("windows",
                          ((IVar("c"), IVar("kh"), IVar("kw")), (1, IVar("sh"), IVar("sw"))),
                          (PNode("access", (1,), (PVar("act"),)),)),
                    PNode("access", (1,), (PVar("wgt"),)),
                )),
            )),
        )),
    ))
    rhs = PNode("hlscnn_conv2d", ((1, Ref("sh"), Ref("sw")),), (PVar("act"), PVar("wgt")))

    def expand(m: Match):
        if len(m.shape("act").concat) != 4 or len(m.shape("wgt").concat) != 4:
            return []
        return [{}]

    def sampler(rng):
        n, c, o = rng.randint(1, 3), rng.randint(1, 3), rng.randint(1, 3)
        h, w = rng.randint(2, 5), rng.randint(2, 5)
        kh, kw = rng.randint(1, h), rng.randint(1, w)
        sh, sw = rng.randint(1, 2), rng.randint(1, 2)
        return {
            "act": _split(rng, (n, c, h, w)),
            "wgt": _split(rng, (o, c, kh, kw)),
            "c": c, "kh": kh, "kw": kw, "sh": sh, "sw": sw,
        }

    return RewriteRule("hlscnn-conv2d", lhs, rhs, expand, sampler)


# ---------------------------------------------------------------------------
# Library

def build_rule_library(groups, pe_limit: int = 256,
                       out_rows: int = 16, out_cols: int = 16) -> list[RewriteRule]:
    """The shipped rules for the selected groups, deduplicated by name.

    Raises UnknownGroup on an empty selection or an unrecognized group name.
    """
    g1 = _rule_reshape_out_of_dot_product()
    g2 = _rule_linear_layer_rearrange()
    g3 = _rule_flatten_reshape_identity()
    table = {
        "generic": [g1, g2, g3],
        "im2col": [g3, _rule_reshape_out_of_cart_prod(), g1],
        "blocking": [
            _rule_split_dim_in_half(),
            _rule_concat_out_of_cart_prod("right"),
            _rule_concat_out_of_cart_prod("left"),
            _rule_concat_out_of_cart_prod_both(),
            _rule_concat_out_of_dot_product(),
            _rule_split_dot_product_reduction(),
        ],
        "mapping": [
            _rule_systolic_array(pe_limit, out_rows, out_cols),
            _rule_vta_dense(),
            _rule_hlscnn_conv2d(),
        ],
    }
    wanted = list(groups)
    if not wanted:
        raise UnknownGroup("no rule groups selected")
    out: dict[str, RewriteRule] = {}
    for g in wanted:
        if g not in table:
            raise UnknownGroup(f"unknown rule group {g!r}")
        for rule in table[g]:
            out.setdefault(rule.name, rule)
    return list(out.values())


RULE_GROUPS = ("generic", "im2col", "blocking", "mapping")


def linear_layer_pattern() -> Pattern:
    """The single syntactic pattern an exact-matching baseline would use."""
    return PNode("bias_add", (None,),
                 (PNode("dense", (None,), (PVar("a"), PVar("b"))), PVar("c")))


# ---------------------------------------------------------------------------
# Soundness fuzzing

@dataclass
class SoundnessFailure:
    rule: str
    lhs_text: str
    rhs_text: str
    bindings: dict

    def __str__(self):
        return f"{self.rule}: eval mismatch between {self.lhs_text} and {self.rhs_text}"


@dataclass
class SoundnessReport:
    rule: str
    trials: int
    checked: int
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures and self.checked >= self.trials


def _stub(name: str, shape: AccessPatternShape) -> Expr:
    return Access(Var(name, shape.concat), len(shape.access))


def check_rule_soundness(rule: RewriteRule, trials: int = 100,
                         seed: int = 0, value_range: int = 9) -> SoundnessReport:
    """Fuzz one rule: random shapes satisfying its condition, random integer
    tensors, exact eval equality of both sides.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = random.Random(seed)
    builder = TreeBuilder()
    checked = 0
    failures: list[SoundnessFailure] = []
    attempts_left = trials * 60
    while checked < trials:
        if attempts_left <= 0:
            raise NoSatisfyingShapes(
                f"could not sample enough valid instances for {rule.name} "
                f"({checked}/{trials} after budget)")
        attempts_left -= 1
        raw = rule.sampler(rng)
        env = {}
        for key, val in raw.items():
            env[key] = _stub(key, val) if isinstance(val, AccessPatternShape) else val
        try:
            lhs_expr = instantiate(rule.lhs, env, builder)
        except IRError:
            continue
        matched = match_tree(rule.lhs, lhs_expr)
        if matched is None:
            continue
        matched.update({k: v for k, v in env.items() if k not in matched})
        m = Match(matched, infer_shape)
        extensions = rule.expand(m)
        if not extensions:
            continue
        rhs_exprs = []
        for ext in extensions:
            full = dict(matched)
            full.update(ext)
            try:
                rhs_exprs.append(instantiate(rule.rhs, full, builder))
            except IRError:
                continue
        if not rhs_exprs:
            continue
        bindings = {name: random_tensor(rng, shape, -value_range, value_range)
                    for name, shape in free_vars(lhs_expr).items()}
        want = eval_expr(lhs_expr, bindings)
        bad = False
        for rhs_expr in rhs_exprs:
            got = eval_expr(rhs_expr, bindings)
            if got != want:
                from .textio import to_text

                failures.append(SoundnessFailure(
                    rule.name, to_text(lhs_expr), to_text(rhs_expr),
                    {k: v.shape for k, v in bindings.items()}))
                bad = True
        checked += 1
        if bad and len(failures) >= 5:
            break
    return SoundnessReport(rule.name, trials, checked, failures)
