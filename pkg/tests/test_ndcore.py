import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from displab import ndcore
from displab.gradcheck import finite_difference_gradient, max_relative_error
from displab.ndcore import (
    ComputeGraph,
    DomainError,
    GraphError,
    ShapeError,
    Tensor,
    backward,
    evaluate_primitive,
)

RNG = np.random.default_rng(1234)


def _leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _check_scalar_fn(build, x0, h=1e-6, tol=1e-5):
    """Compare backward() against central differences on a scalar function."""
    def f(x):
        return build(Tensor(x, requires_grad=True))[0].item()

    leaf = Tensor(np.asarray(x0, dtype=np.float64), requires_grad=True)
    out, _ = build(leaf), None
    root = out[0]
    backward(root)
    fd = finite_difference_gradient(f, np.asarray(x0, dtype=np.float64), h=h)
    err = max_relative_error(leaf.grad, fd)
    assert err < tol, f"gradient mismatch {err:.3e}"


# ---------------------------------------------------------------------
# Worked examples
# ---------------------------------------------------------------------

def test_matmul_identity():
    a = RNG.normal(size=(2, 5))
    out = Tensor(np.eye(2)) @ Tensor(a)
    assert np.allclose(out.data, a, atol=1e-15)


def test_gelu_zero_fixed_point():
    assert ndcore.gelu(Tensor(0.0)).item() == 0.0


def test_layer_norm_constant_rows_are_zeroed():
    x = Tensor(np.full((4,), 3.7))
    out = ndcore.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.allclose(out.data, 0.0, atol=1e-12)


def test_square_gradient_at_three():
    x = _leaf(3.0)
    backward(x.square())
    assert abs(float(x.grad) - 6.0) < 1e-12


def test_logsumexp_values():
    assert abs(ndcore.logsumexp(Tensor([0.0, 0.0])).item() - np.log(2)) < 1e-12
    big = ndcore.logsumexp(Tensor([1000.0, 1000.0])).item()
    assert abs(big - (1000.0 + np.log(2))) < 1e-9
    assert ndcore.logsumexp(Tensor([0.0])).item() == 0.0


def test_logsumexp_gradient_is_softmax():
    v = _leaf(RNG.normal(size=7))
    backward(ndcore.logsumexp(v))
    expect = np.exp(v.data) / np.exp(v.data).sum()
    assert np.allclose(v.grad, expect, atol=1e-12)


def test_finite_difference_on_sum_is_ones():
    fd = finite_difference_gradient(lambda x: float(x.sum()), RNG.normal(size=(3, 4)))
    assert np.allclose(fd, 1.0, atol=1e-9)


def test_finite_difference_square():
    fd = finite_difference_gradient(lambda x: float((x * x).sum()), np.array([3.0]))
    assert abs(fd[0] - 6.0) < 1e-7


# ---------------------------------------------------------------------
# Finite-difference sweep over every differentiable primitive
# ---------------------------------------------------------------------

def _rand(shape, lo=-2.0, hi=2.0):
    return RNG.uniform(lo, hi, size=shape)


_C43 = Tensor(_rand((4, 3)))
_C3 = Tensor(_rand((3,)))
_C35 = Tensor(_rand((3, 5)))
_C235 = Tensor(_rand((2, 3, 5)))
_C254 = Tensor(_rand((2, 5, 4)))
_C42 = Tensor(_rand((4, 2)))
_C12 = Tensor(_rand((12,)))
_CPOS = Tensor(_rand((4, 3), 0.5, 2.0))

PRIMITIVE_CASES = [
    ("add", lambda x: (x + _C43,), (4, 3)),
    ("add_batch_broadcast", lambda x: (x + _C3,), (2, 4, 3)),
    ("sub", lambda x: (_C43 - x,), (4, 3)),
    ("mul", lambda x: (x * _C43,), (4, 3)),
    ("div", lambda x: (x / _CPOS,), (4, 3)),
    ("div_denominator", lambda x: (_C43 / (x * x + 0.5),), (4, 3)),
    ("matmul", lambda x: (x @ _C35,), (4, 3)),
    ("matmul_batched", lambda x: (x @ _C235,), (2, 4, 3)),
    ("matmul_shared_rhs", lambda x: (_C254 @ x,), (4, 3)),
    ("transpose", lambda x: (x.transpose((1, 0)) @ _C42,), (4, 3)),
    ("reshape", lambda x: (x.reshape((12,)) * _C12,), (4, 3)),
    ("exp", lambda x: (x.exp(),), (4, 3)),
    ("log", lambda x: ((x * x + 0.1).log(),), (4, 3)),
    ("sqrt", lambda x: ((x * x + 0.1).sqrt(),), (4, 3)),
    ("square", lambda x: (x.square(),), (4, 3)),
    ("arccos", lambda x: (x.arccos(),), (4, 3)),
    ("clamp", lambda x: (x.clamp(-0.5, 0.5).square(),), (4, 3)),
    ("maximum", lambda x: (x.maximum(0.25).square(),), (4, 3)),
    ("sum_axis", lambda x: (x.sum(axis=1).square(),), (4, 3)),
    ("mean_axis", lambda x: (x.mean(axis=0).square(),), (4, 3)),
    ("softmax", lambda x: (ndcore.softmax(x, axis=-1).square(),), (4, 3)),
    ("logsumexp_axis", lambda x: (ndcore.logsumexp(x, axis=1).square(),), (4, 3)),
    ("gelu", lambda x: (ndcore.gelu(x),), (4, 3)),
    ("take_last_axis", lambda x: (ndcore.take_last_axis(x, np.array([2, 0, 1, 2])).square(),), (4, 3)),
]


@pytest.mark.parametrize("name,build,shape", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, build, shape):
    if name == "arccos":
        x0 = RNG.uniform(-0.99, 0.99, size=shape)
    else:
        x0 = _rand(shape)

    def scalar(x):
        t = Tensor(x, requires_grad=True)
        return build(t)[0].sum(), t

    root, leaf = scalar(x0)
    backward(root)
    fd = finite_difference_gradient(lambda x: scalar(x)[0].item(), x0)
    err = max_relative_error(leaf.grad, fd)
    assert err < 1e-5, f"{name}: relative error {err:.3e}"


def test_gather_gradient():
    table0 = _rand((5, 3))
    ids = np.array([0, 2, 2, 4])

    def scalar(tbl):
        t = Tensor(tbl, requires_grad=True)
        return ndcore.gather(t, ids).square().sum(), t

    root, leaf = scalar(table0)
    backward(root)
    fd = finite_difference_gradient(lambda tbl: scalar(tbl)[0].item(), table0)
    assert max_relative_error(leaf.grad, fd) < 1e-5


def test_layer_norm_gradients():
    x0 = _rand((3, 6))
    g0 = _rand((6,), 0.5, 1.5)
    b0 = _rand((6,))

    def scalar(x, g, b):
        tx, tg, tb = (Tensor(v, requires_grad=True) for v in (x, g, b))
        return ndcore.layer_norm(tx, tg, tb).square().sum(), (tx, tg, tb)

    root, leaves = scalar(x0, g0, b0)
    backward(root)
    for i, (v0, leaf) in enumerate(zip((x0, g0, b0), leaves)):
        def f(v, i=i):
            args = [x0, g0, b0]
            args[i] = v
            return scalar(*args)[0].item()
        fd = finite_difference_gradient(f, v0)
        assert max_relative_error(leaf.grad, fd) < 1e-5


def test_concatenate_gradient():
    a0, b0 = _rand((2, 3)), _rand((4, 3))

    def scalar(a, b):
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        return ndcore.concatenate([ta, tb], axis=0).square().sum(), (ta, tb)

    root, (ta, tb) = scalar(a0, b0)
    backward(root)
    fd_a = finite_difference_gradient(lambda a: scalar(a, b0)[0].item(), a0)
    fd_b = finite_difference_gradient(lambda b: scalar(a0, b)[0].item(), b0)
    assert max_relative_error(ta.grad, fd_a) < 1e-5
    assert max_relative_error(tb.grad, fd_b) < 1e-5


# ---------------------------------------------------------------------
# Algebraic invariants
# ---------------------------------------------------------------------

@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
       st.floats(-100, 100))
@settings(max_examples=60, deadline=None)
def test_logsumexp_shift_invariance(values, c):
    v = np.array(values, dtype=np.float64)
    lhs = ndcore.logsumexp(Tensor(v + c)).item()
    rhs = ndcore.logsumexp(Tensor(v)).item() + c
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(rhs))


@given(st.integers(2, 6), st.integers(1, 5), st.floats(-30, 30))
@settings(max_examples=40, deadline=None)
def test_softmax_rows_normalized_and_shift_invariant(n, rows, c):
    x = RNG.normal(size=(rows, n)) * 3
    y = ndcore.softmax(Tensor(x), axis=-1).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) < 1e-12)
    y_shift = ndcore.softmax(Tensor(x + c), axis=-1).data
    assert np.all(np.abs(y - y_shift) < 1e-12)


def test_evaluation_is_deterministic():
    x = RNG.normal(size=(6, 6))
    def run():
        t = Tensor(x, requires_grad=True)
        out = ndcore.softmax(t @ t.transpose(), axis=-1).sum()
        backward(out)
        return out.data.copy(), t.grad.copy()
    v1, g1 = run()
    v2, g2 = run()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_gradient_accumulates_across_fanout():
    x = _leaf(2.0)
    y = x * 3.0 + x * x  # dy/dx = 3 + 2x = 7
    backward(y)
    assert abs(float(x.grad) - 7.0) < 1e-12


# ---------------------------------------------------------------------
# Error contracts
# ---------------------------------------------------------------------

def test_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(ShapeError) as exc:
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 3)))
    assert exc.value.primitive == "add"
    assert (2, 3) in exc.value.shapes and (4, 3) in exc.value.shapes


def test_no_interior_broadcasting():
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 1))) + Tensor(np.ones((1, 3)))


def test_arccos_domain_error():
    with pytest.raises(DomainError):
        Tensor(np.array([1.5])).arccos()


def test_backward_requires_scalar_root():
    x = _leaf(np.ones((2, 2)))
    with pytest.raises(GraphError):
        backward(x * 2.0)


def test_logsumexp_empty_axis_errors():
    with pytest.raises(DomainError):
        ndcore.logsumexp(Tensor(np.ones((3, 0))), axis=1)


def test_unknown_primitive_errors():
    with pytest.raises(GraphError):
        evaluate_primitive("definitely_not_registered", Tensor(1.0))


def test_detached_leaf_gets_no_gradient():
    x = _leaf(2.0)
    c = Tensor(5.0)  # requires_grad=False
    backward(x * c)
    assert c.grad is None
    assert float(x.grad) == 5.0


def test_gather_id_out_of_range():
    with pytest.raises(DomainError):
        ndcore.gather(Tensor(np.ones((3, 2))), np.array([3]))


# ---------------------------------------------------------------------
# Graph structure
# ---------------------------------------------------------------------

def test_compute_graph_topological_order():
    x = _leaf(np.ones(3))
    y = (x * 2.0 + x.square()).sum()
    graph = ComputeGraph.trace(y)
    pos = {id(n): i for i, n in enumerate(graph.nodes)}
    assert len(pos) == len(graph.nodes)  # each node visited exactly once
    for node in graph.nodes:
        for parent in node.inputs:
            assert pos[id(parent)] < pos[id(node)]
    assert graph.nodes[-1] is y
