import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apex.interp import (
    Tensor,
    conv2d_expr,
    eval_expr,
    frobenius_relative_error,
    matmul_expr,
    maxpool_expr,
    oracle_conv2d,
    oracle_matmul,
    oracle_maxpool,
    random_tensor,
)
from apex.ir import (
    AccelCall,
    Access,
    CartProd,
    Compute,
    Concat,
    Flatten,
    NamedOp,
    Pair,
    Reshape,
    ShapeMismatch,
    Slice,
    Transpose,
    Var,
    Windows,
    infer_shape,
)

from conftest import random_program


class TestEvalDenotations:
    def test_matmul_hand_case(self):
        p = Tensor.from_nested([[1, 2], [3, 4]])
        q = Tensor.from_nested([[5, 6], [7, 8]])
        out = eval_expr(matmul_expr((2, 2), (2, 2), "P", "Q"), {"P": p, "Q": q})
        assert out.to_nested() == [[19, 22], [43, 50]]

    def test_reshape_flatten_identity_bit_for_bit(self):
        rng = random.Random(0)
        for _ in range(10):
            dims = tuple(rng.randint(1, 4) for _ in range(rng.randint(1, 3)))
            t = random_tensor(rng, dims)
            x = Access(Var("x", dims), min(1, len(dims)))
            s = infer_shape(x)
            back = Reshape(Flatten(x), s)
            assert eval_expr(back, {"x": t}) == t

    def test_maxpool_hand_case(self):
        act = Tensor.from_nested([[[[1, 2], [3, 4]]]])
        out = eval_expr(maxpool_expr((1, 1, 2, 2), (2, 2), (1, 1)), {"activations": act})
        assert out.to_nested() == [[[[4]]]]

    def test_cartprod_denotation(self):
        # out[a, b, t, c]: t=0 -> left[a, c]; t=1 -> right[b, c]
        left = Tensor.from_nested([[1, 2], [3, 4], [5, 6]])
        right = Tensor.from_nested([[7, 8]])
        e = CartProd(Access(Var("l", (3, 2)), 1), Access(Var("r", (1, 2)), 1))
        out = eval_expr(e, {"l": left, "r": right})
        assert out.shape == (3, 1, 2, 2)
        for a in range(3):
            for c in range(2):
                assert out[(a, 0, 0, c)] == left[(a, c)]
                assert out[(a, 0, 1, c)] == right[(0, c)]

    def test_windows_denotation(self):
        t = Tensor.from_nested([1, 2, 3, 4, 5])
        e = Windows(Access(Var("x", (5,)), 0), (3,), (2,))
        out = eval_expr(e, {"x": t})
        assert out.shape == (2, 3)
        assert out.to_nested() == [[1, 2, 3], [3, 4, 5]]

    def test_slice_half_open(self):
        t = Tensor.from_nested([10, 11, 12, 13])
        out = eval_expr(Slice(Access(Var("x", (4,)), 0), 0, 1, 3), {"x": t})
        assert out.to_nested() == [11, 12]

    def test_concat_then_slices_identity(self):
        rng = random.Random(1)
        t = random_tensor(rng, (4, 3))
        x = Access(Var("x", (4, 3)), 1)
        e = Concat(Slice(x, 0, 0, 2), Slice(x, 0, 2, 4), 0)
        assert eval_expr(e, {"x": t}) == t

    def test_pair_stacks_along_new_tuple_dim(self):
        a = Tensor.from_nested([1, 2])
        b = Tensor.from_nested([3, 4])
        e = Pair(Access(Var("a", (2,)), 0), Access(Var("b", (2,)), 0))
        assert eval_expr(e, {"a": a, "b": b}).to_nested() == [[1, 2], [3, 4]]

    def test_transpose(self):
        t = Tensor.from_nested([[1, 2, 3], [4, 5, 6]])
        e = Transpose(Access(Var("x", (2, 3)), 1), (1, 0))
        assert eval_expr(e, {"x": t}).to_nested() == [[1, 4], [2, 5], [3, 6]]

    def test_dotprod_general_arity(self):
        # three slices multiplied elementwise then summed
        t = Tensor.from_nested([[1, 2], [3, 4], [5, 6]])
        e = Compute("dotProd", Access(Var("x", (3, 2)), 0))
        out = eval_expr(e, {"x": t})
        assert out.to_nested() == 1 * 3 * 5 + 2 * 4 * 6

    def test_reduce_ops(self):
        t = Tensor.from_nested([[1, 5], [2, 4]])
        x = Access(Var("x", (2, 2)), 1)
        assert eval_expr(Compute("reduceSum", x), {"x": t}).to_nested() == [6, 6]
        assert eval_expr(Compute("reduceMax", x), {"x": t}).to_nested() == [5, 4]


class TestNamedOps:
    def test_dense_weight_transposed_convention(self):
        a = Tensor.from_nested([[1, 2], [3, 4]])  # (2, 2)
        b = Tensor.from_nested([[5, 6], [7, 8], [9, 10]])  # (3, 2)
        out = eval_expr(NamedOp("dense", (Var("a", (2, 2)), Var("b", (3, 2)))),
                        {"a": a, "b": b})
        assert out.shape == (2, 3)
        for i in range(2):
            for j in range(3):
                assert out[(i, j)] == sum(a[(i, k)] * b[(j, k)] for k in range(2))

    def test_bias_add_broadcasts_last_dim(self):
        x = Tensor.from_nested([[1, 2], [3, 4]])
        c = Tensor.from_nested([10, 20])
        out = eval_expr(NamedOp("bias_add", (Var("x", (2, 2)), Var("c", (2,)))),
                        {"x": x, "c": c})
        assert out.to_nested() == [[11, 22], [13, 24]]

    def test_add_standard_broadcast(self):
        x = Tensor.from_nested([[1, 2], [3, 4]])
        c = Tensor.from_nested([10, 20])
        out = eval_expr(NamedOp("add", (Var("x", (2, 2)), Var("c", (2,)))),
                        {"x": x, "c": c})
        assert out.to_nested() == [[11, 22], [13, 24]]

    def test_reshape_op_and_flatten_op(self):
        x = Tensor.from_nested([[1, 2, 3], [4, 5, 6]])
        out = eval_expr(NamedOp("reshape_op", (Var("x", (2, 3)),), (3, 2)), {"x": x})
        assert out.to_nested() == [[1, 2], [3, 4], [5, 6]]
        out = eval_expr(NamedOp("flatten_op", (Var("x", (2, 3)),)), {"x": x})
        assert out.to_nested() == [1, 2, 3, 4, 5, 6]

    def test_linear_layer_forms_agree(self):
        rng = random.Random(7)
        a, b, c = random_tensor(rng, (4, 3)), random_tensor(rng, (5, 3)), random_tensor(rng, (5,))
        dense = NamedOp("dense", (Var("a", (4, 3)), Var("b", (5, 3))))
        bias_form = NamedOp("bias_add", (dense, Var("c", (5,))))
        add_form = NamedOp("add", (NamedOp("reshape_op", (dense,), (4, 5)), Var("c", (5,))))
        bindings = {"a": a, "b": b, "c": c}
        assert eval_expr(bias_form, bindings) == eval_expr(add_form, bindings)


class TestAccelTransparency:
    def test_systolic_array_equals_its_reference(self):
        rng = random.Random(3)
        t0 = random_tensor(rng, (3, 4))   # (batch, rows)
        t1 = random_tensor(rng, (4, 2))   # (rows, cols), transposed layout
        call = AccelCall("systolicArray", (4, 2),
                         (Access(Var("a", (3, 4)), 1),
                          Access(Var("w", (4, 2)), 0)))
        out = eval_expr(call, {"a": t0, "w": t1})
        # reference is the plain matmul of activations against the stored weights
        q = Tensor(t1.shape, t1.data)
        assert out == oracle_matmul(t0, q)

    def test_vta_dense_equals_dense_and_access_pattern_form(self):
        rng = random.Random(4)
        x, w = random_tensor(rng, (3, 4)), random_tensor(rng, (2, 4))
        call = AccelCall("vta_dense", (), (Var("x", (3, 4)), Var("w", (2, 4))))
        bindings = {"x": x, "w": w}
        got = eval_expr(call, bindings)
        assert got == eval_expr(NamedOp("dense", (Var("x", (3, 4)), Var("w", (2, 4)))), bindings)
        ap_form = Compute("dotProd", CartProd(
            Access(Var("x", (3, 4)), 1), Access(Var("w", (2, 4)), 1)))
        assert got == eval_expr(ap_form, bindings)

    def test_hlscnn_equals_conv_oracle(self):
        rng = random.Random(5)
        act, wgt = random_tensor(rng, (1, 2, 5, 5)), random_tensor(rng, (3, 2, 3, 3))
        call = AccelCall("hlscnn_conv2d", (1, 2, 1),
                         (Var("act", (1, 2, 5, 5)), Var("wgt", (3, 2, 3, 3))))
        out = eval_expr(call, {"act": act, "wgt": wgt})
        assert out == oracle_conv2d(act, wgt, (2, 1))


class TestOracles:
    def test_identity_matrix(self):
        eye = Tensor.from_nested([[1, 0], [0, 1]])
        q = Tensor.from_nested([[3, 4], [5, 6]])
        assert oracle_matmul(eye, q) == q

    def test_one_by_one(self):
        assert oracle_matmul(Tensor.from_nested([[7]]),
                             Tensor.from_nested([[6]])).to_nested() == [[42]]

    def test_all_ones_conv(self):
        act = Tensor.filled((1, 1, 3, 3), 1)
        wgt = Tensor.filled((1, 1, 3, 3), 1)
        assert oracle_conv2d(act, wgt, (1, 1)).to_nested() == [[[[9]]]]

    def test_one_by_one_kernel_scales(self):
        rng = random.Random(8)
        act = random_tensor(rng, (1, 1, 3, 3))
        wgt = Tensor.from_nested([[[[5]]]])
        out = oracle_conv2d(act, wgt, (1, 1))
        assert out.data == tuple(5 * v for v in act.data)

    def test_constant_maxpool(self):
        act = Tensor.filled((1, 2, 3, 3), 4)
        out = oracle_maxpool(act, (2, 2), (1, 1))
        assert set(out.data) == {4}

    def test_unit_window_maxpool_is_identity(self):
        rng = random.Random(9)
        act = random_tensor(rng, (2, 1, 3, 4))
        assert oracle_maxpool(act, (1, 1), (1, 1)) == act

    def test_maxpool_hand_case(self):
        act = Tensor.from_nested([[[[1, 2], [3, 4]]]])
        assert oracle_maxpool(act, (2, 2), (1, 1)).to_nested() == [[[[4]]]]


class TestOracleEquivalence:
    """eval of the canonical kernel encodings equals the loop oracles."""

    def test_matmul_random(self):
        rng = random.Random(100)
        for _ in range(40):
            m, n, o = (rng.randint(1, 6) for _ in range(3))
            p, q = random_tensor(rng, (m, n)), random_tensor(rng, (n, o))
            got = eval_expr(matmul_expr((m, n), (n, o), "P", "Q"), {"P": p, "Q": q})
            assert got == oracle_matmul(p, q)

    def test_conv2d_random(self):
        rng = random.Random(101)
        for _ in range(25):
            bn, c, h, w, o = (rng.randint(1, 6) for _ in range(5))
            kh, kw = rng.randint(1, h), rng.randint(1, w)
            sh, sw = rng.randint(1, 2), rng.randint(1, 2)
            act, wgt = random_tensor(rng, (bn, c, h, w)), random_tensor(rng, (o, c, kh, kw))
            got = eval_expr(conv2d_expr((bn, c, h, w), (o, c, kh, kw), (sh, sw)),
                            {"activations": act, "weights": wgt})
            assert got == oracle_conv2d(act, wgt, (sh, sw))

    def test_maxpool_random(self):
        rng = random.Random(102)
        for _ in range(25):
            bn, c, h, w = (rng.randint(1, 6) for _ in range(4))
            kh, kw = rng.randint(1, h), rng.randint(1, w)
            sh, sw = rng.randint(1, 2), rng.randint(1, 2)
            act = random_tensor(rng, (bn, c, h, w))
            got = eval_expr(maxpool_expr((bn, c, h, w), (kh, kw), (sh, sw)),
                            {"activations": act})
            assert got == oracle_maxpool(act, (kh, kw), (sh, sw))


class TestFrobenius:
    def test_identical_is_zero(self):
        t = Tensor.from_nested([[1.5, 2.5], [3.5, 4.5]])
        assert frobenius_relative_error(t, t) == 0.0

    def test_unit_cases(self):
        ref = Tensor.from_nested([3.0, 4.0])
        out = Tensor.from_nested([0.0, 0.0])
        assert abs(frobenius_relative_error(ref, out) - 1.0) < 1e-12
        ref = Tensor.from_nested([1.0, 0.0])
        out = Tensor.from_nested([1.0, 1.0])
        assert abs(frobenius_relative_error(ref, out) - 1.0) < 1e-12

    def test_zero_reference_signals(self):
        zero = Tensor.from_nested([0.0, 0.0])
        with pytest.raises(ZeroDivisionError):
            frobenius_relative_error(zero, Tensor.from_nested([1.0, 1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            frobenius_relative_error(Tensor.from_nested([1.0]),
                                     Tensor.from_nested([1.0, 2.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_eval_shape_matches_inference(seed):
    expr, env = random_program(seed, budget=4)
    rng = random.Random(seed + 13)
    bindings = {name: random_tensor(rng, dims) for name, dims in env.items()}
    out = eval_expr(expr, bindings)
    assert out.shape == infer_shape(expr, env).concat


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_eval_is_pure(seed):
    expr, env = random_program(seed, budget=4)
    rng = random.Random(seed + 17)
    bindings = {name: random_tensor(rng, dims) for name, dims in env.items()}
    assert eval_expr(expr, bindings) == eval_expr(expr, bindings)


def test_binding_shape_mismatch_rejected():
    with pytest.raises(ShapeMismatch):
        eval_expr(Var("x", (2, 2)), {"x": Tensor.from_nested([1, 2])})


def test_float_mode_conv_against_oracle():
    # same code paths, double-precision scalars; identical evaluation order
    # on both sides keeps the relative error at zero
    rng = random.Random(11)
    act = Tensor((1, 2, 4, 4), tuple(rng.uniform(-1.0, 1.0) for _ in range(32)))
    wgt = Tensor((2, 2, 3, 3), tuple(rng.uniform(-1.0, 1.0) for _ in range(36)))
    got = eval_expr(conv2d_expr((1, 2, 4, 4), (2, 2, 3, 3), (1, 1)),
                    {"activations": act, "weights": wgt})
    ref = oracle_conv2d(act, wgt, (1, 1))
    assert frobenius_relative_error(ref, got) < 1e-12


def test_rank_zero_tensor():
    scalar = Tensor((), (7,))
    x = Var("x", ())
    assert eval_expr(x, {"x": scalar}) == scalar
    assert eval_expr(Flatten(Access(x, 0)), {"x": scalar}) == scalar
    assert infer_shape(Flatten(Access(x, 0))).concat == ()
