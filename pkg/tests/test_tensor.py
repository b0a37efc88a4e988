import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmtnet.errors import ContractError, ShapeError
from hmtnet.gradcheck import gradient_check, gradient_check_report
from hmtnet.tensor import Parameter, Tensor, concat, gate_mode, no_grad


def t64(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def test_backward_reaches_every_leaf():
    rng = np.random.default_rng(0)
    a, b, c = t64(rng, 3, 4), t64(rng, 4, 2), t64(rng, 2)
    loss = ((a @ b + c).relu() * 2.0 - 1.0).sum()
    loss.backward()
    for t in (a, b, c):
        assert t.grad is not None and t.grad.shape == t.shape


def test_shared_node_accumulates():
    x = Tensor(np.array([2.0, -3.0]), requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


@pytest.mark.parametrize(
    "build",
    [
        lambda a, b: (a + b).sum(),
        lambda a, b: (a - b * 3.0).sum(),
        lambda a, b: (a * b).sum(),
        lambda a, b: (a / (b * b + 1.0)).sum(),
        lambda a, b: ((a * a + 1.0) ** 1.5).sum(),
        lambda a, b: (a @ b.reshape(4, 3)).mean(),
        lambda a, b: (a[1:, ::2] * b[0, :2]).sum(),
        lambda a, b: a.sum(axis=0).relu().sum() + b.mean(axis=1, keepdims=True).sum(),
        lambda a, b: concat([a, b], axis=0).flatten().sum(),
    ],
)
def test_elementary_ops_gradcheck(build):
    rng = np.random.default_rng(1)
    a, b = t64(rng, 3, 4), t64(rng, 3, 4)
    assert gradient_check(build, [a, b]) < 1e-6


def test_broadcast_gradient_reduces_to_operand_shape():
    rng = np.random.default_rng(2)
    a, bias = t64(rng, 5, 3), t64(rng, 3)
    assert gradient_check(lambda a, b: ((a + b) * (a - b)).sum(), [a, bias]) < 1e-6
    a.zero_grad()
    bias.zero_grad()
    (a + bias).sum().backward()
    np.testing.assert_allclose(bias.grad, np.full(3, 5.0))


def test_gradient_check_linear_and_constant():
    rng = np.random.default_rng(3)
    x = t64(rng, 6)
    w = rng.standard_normal(6)
    assert gradient_check(lambda x: (x * w).sum() + 4.0, [x]) < 1e-9
    c = t64(rng, 4)
    assert gradient_check(lambda c: (c * 0.0).sum() + 2.0, [c]) == 0.0


def test_gradient_check_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        gradient_check(lambda x: x * 2.0, [x])


def test_backward_seed_shape_checked():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()
    with pytest.raises(ShapeError):
        (x * 2.0).backward(np.ones(2))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()
    assert (x * 2.0).requires_grad


def test_parameter_flags():
    p = Parameter(np.zeros(2), "layer.bias", regularize=False)
    assert p.requires_grad and p.name == "layer.bias" and not p.regularize


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_matmul_gradient_property(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = t64(rng, n, m), t64(rng, m, 2)
    assert gradient_check(lambda a, b: ((a @ b) ** 2).sum(), [a, b]) < 1e-4


def test_gradient_check_resolves_kink_crossings():
    # 1e-7 sits inside the +-1e-5 window, so the plain difference sees half a slope
    x = Tensor(np.array([1e-7, 0.5, -0.3]), requires_grad=True, dtype=np.float64)
    rep = gradient_check_report(lambda x: (x.relu() * 3.0).sum(), [x], eps=1e-5)
    assert rep.kink_coords == 1 and rep.coords == 3
    assert rep.worst_raw == pytest.approx(1 - (1e-5 + 1e-7) / 2e-5, rel=1e-6)
    assert rep.worst < 1e-9


def test_gate_replay_freezes_decisions():
    x = Tensor(np.array([-1.0, 2.0]))
    with gate_mode("record") as gates:
        x.relu()
    y = Tensor(np.array([1.0, -2.0]))
    with gate_mode("replay", gates):
        np.testing.assert_array_equal(y.relu().data, [0.0, -2.0])
        with pytest.raises(ContractError):
            y.relu()
    np.testing.assert_array_equal(y.relu().data, [1.0, 0.0])
