import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semges.core import (
    Adam,
    AdamState,
    FrozenModelError,
    Linear,
    NonFiniteError,
    ShapeError,
    Tensor,
    adam_step,
    grad_check,
    graph_nodes,
    make_op,
    no_grad,
)
from semges.core import functional as F

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_matmul_values():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(F.matmul(eye, b).data, b.data)
    assert F.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    b = Tensor(rng.normal(size=(4, 2)))
    assert grad_check(lambda a: F.sum(F.matmul(a, b)), rng.normal(size=(3, 4))) < 1e-5


def test_softmax_examples():
    assert F.softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]
    big = F.softmax(Tensor([1e4, 1e4])).data
    assert big.tolist() == [0.5, 0.5]


def test_softmax_gradient(rng):
    w = Tensor(rng.normal(size=5))
    assert grad_check(lambda x: F.sum(F.softmax(x) * w), rng.normal(size=5)) < 1e-5


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = F.softmax(Tensor(x), axis=-1).data
    assert np.all(s > 0) and np.all(s < 1 + 1e-15)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12, rtol=0)


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    assert np.array_equal(F.layer_norm(Tensor([[4.0, 4.0]]), one, zero).data, [[0.0, 0.0]])
    assert np.allclose(F.layer_norm(Tensor([[1.0, 3.0]]), one, zero).data, [[-1.0, 1.0]], atol=1e-3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=finite))
def test_layer_norm_rows_centred(x):
    x = x + np.arange(5) * 0.5  # keep row variance above epsilon
    out = F.layer_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5))).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-10)


def test_layer_norm_gradient(rng):
    g, b = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    w = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda x: F.sum(F.layer_norm(x, g, b) * w), rng.normal(size=(3, 4))) < 1e-4


def test_attention_single_key_returns_value(rng):
    v = rng.normal(size=(1, 4))
    out = F.attention(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(1, 4))), Tensor(v))
    assert np.allclose(out.data, np.repeat(v, 3, axis=0), atol=1e-15)


def test_attention_identical_keys_average_values(rng):
    k = np.repeat(rng.normal(size=(1, 4)), 5, axis=0)
    v = rng.normal(size=(5, 4))
    out = F.attention(Tensor(rng.normal(size=(2, 4))), Tensor(k), Tensor(v))
    assert np.allclose(out.data, np.repeat(v.mean(axis=0, keepdims=True), 2, axis=0), atol=1e-12)


def test_attention_dimension_mismatch():
    with pytest.raises(ShapeError):
        F.attention(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 5))), Tensor(np.ones((3, 5))))


def test_backward_basics(rng):
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    F.sum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))
    y = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    F.sum(y * y).backward()
    assert np.array_equal(y.grad, 2 * y.data)


def test_backward_accumulates_without_zeroing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    F.sum(x * 3.0).backward()
    F.sum(x * 3.0).backward()
    assert x.grad.tolist() == [6.0, 6.0]


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_shared_subexpression_visited_once():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    z = F.sum(y + y)
    z.backward()
    assert x.grad.tolist() == [8.0]
    ids = [n.id for n in graph_nodes(z)]
    assert len(ids) == len(set(ids))


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        F.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.parents == ()


def test_tensors_are_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(5, 4))
    lin = Linear(4, 3, np.random.default_rng(0))
    a = F.softmax(lin(Tensor(x))).data
    b = F.softmax(lin(Tensor(x))).data
    assert np.array_equal(a, b)


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    (p,), _ = adam_step([np.array([1.5])], [np.array([0.0])], AdamState(lr=0.1))
    assert p.tolist() == [1.5]


def test_adam_first_step_moves_by_lr():
    (p,), state = adam_step([np.array([0.0])], [np.array([1.0])], AdamState(lr=0.1))
    assert abs(p[0] + 0.1) < 1e-6
    assert state.step == 1


def test_adam_matches_reference_recursion(rng):
    # independent scalar re-derivation of the bias-corrected update
    p, m, v = 0.7, 0.0, 0.0
    params, state = [np.array([p])], AdamState(lr=0.05)
    for t in range(1, 6):
        g = float(rng.normal())
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        params, state = adam_step(params, [np.array([g])], state)
    assert abs(params[0][0] - p) < 1e-14


def test_adam_converges_on_quadratic():
    p = Tensor([0.0], requires_grad=True)
    opt = Adam([p], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        F.sum(F.square(p - 3.0)).backward()
        opt.step()
    assert abs(p.data[0] - 3.0) < 0.05


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_adam_rejects_frozen_parameters():
    with pytest.raises(FrozenModelError):
        Adam([Tensor([1.0])])


# -- gradient oracle ----------------------------------------------------------

def test_grad_check_self_tests(rng):
    assert grad_check(F.sum, rng.normal(size=(3, 3))) < 1e-9
    assert grad_check(lambda x: F.sum(F.square(F.softmax(x))), rng.normal(size=6)) < 1e-5


def test_grad_check_flags_corrupted_backward(rng):
    def bad_square(x):
        return make_op(x.data**2, (x,), lambda g: (g * 3.0 * x.data,), "bad_square")

    assert grad_check(lambda x: F.sum(bad_square(x)), rng.normal(size=4) + 2.0) > 1e-2


def test_grad_check_eps_range():
    with pytest.raises(ValueError):
        grad_check(F.sum, np.ones(2), eps=0.1)


def test_grad_check_non_finite():
    with pytest.raises(NonFiniteError):
        grad_check(lambda x: F.sum(F.log(x)), np.array([0.0, 1.0]))
