import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from promptlab import autograd as ag
from promptlab.autograd import ComputationRecord, Tensor, backward, finite_diff_check
from promptlab.errors import DegenerateVectorError, InvalidParameterError

finite = st.floats(-50, 50, allow_nan=False)


def test_softmax_examples():
    np.testing.assert_allclose(ag.softmax(Tensor([1.0, 1.0])).data, [0.5, 0.5])
    # independent scalar oracle
    e = [np.exp(2.0), np.exp(0.0)]
    expected = [e[0] / sum(e), e[1] / sum(e)]
    np.testing.assert_allclose(ag.softmax(Tensor([2.0, 0.0])).data, expected, atol=1e-15)
    np.testing.assert_allclose(expected, [0.8808, 0.1192], atol=1e-4)


def test_softmax_rejects_bad_temperature():
    for tau in (0.0, -1.0):
        with pytest.raises(InvalidParameterError):
            ag.softmax(Tensor([1.0, 2.0]), temperature=tau)


@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-20, 20))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    p = ag.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ag.softmax(Tensor(x + c)).data, p, atol=1e-12)


def test_log_softmax_matches_log_of_softmax(rng):
    x = rng.normal(size=(4, 6)) * 3
    np.testing.assert_allclose(ag.log_softmax(Tensor(x)).data, np.log(ag.softmax(Tensor(x)).data), atol=1e-12)


def test_cosine_sim_examples():
    assert ag.cosine_sim(Tensor([1.0, 2.0]), Tensor([2.0, 1.0])).item() == 0.8
    assert ag.cosine_sim(Tensor([3.0, -1.0]), Tensor([3.0, -1.0])).item() == pytest.approx(1.0)
    assert ag.cosine_sim(Tensor([1.0, 0.0]), Tensor([0.0, 2.0])).item() == 0.0
    with pytest.raises(DegenerateVectorError):
        ag.cosine_sim(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))
    with pytest.raises(DegenerateVectorError):
        ag.cosine_sim(Tensor([1e-200, 0.0]), Tensor([1.0, 0.0]))


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)), st.floats(-10, 10))
def test_cosine_sim_bounded(a, scale):
    assume(np.sum(a * a) > 0 and abs(scale) > 1e-3)
    assert -1.0 <= ag.cosine_sim(a, scale * a).item() <= 1.0


def test_backward_simple_derivatives():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == pytest.approx(6.0)
    v = Tensor(np.arange(5.0), requires_grad=True)
    backward(v.sum())
    np.testing.assert_array_equal(v.grad, np.ones(5))


def test_backward_rejects_non_scalar():
    v = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(InvalidParameterError):
        backward(v * 2.0)


def test_backward_accumulates_through_shared_nodes():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    backward(y + y * x)  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad == pytest.approx(16.0)


def test_mlp_gradients_match_finite_differences(rng):
    w1, w2, w3 = rng.normal(size=(5, 8)), rng.normal(size=(8, 8)), rng.normal(size=(8, 1))
    x = rng.normal(size=(4, 5))

    def loss(t):
        h = ag.tanh(t @ w1)
        h = ag.gelu(h @ w2)
        return ag.mean((h @ w3) ** 2.0)

    assert finite_diff_check(loss, x) < 1e-4

    def loss_w(t):
        return ag.mean(ag.tanh(x @ t) @ w2 @ w3)

    assert finite_diff_check(loss_w, w1) < 1e-4


def test_finite_diff_check_examples(rng):
    assert finite_diff_check(lambda t: t * t, np.array(3.0)) < 1e-8
    assert finite_diff_check(lambda t: ag.tsum(t * 0.0) + 4.0, rng.normal(size=3)) == 0.0
    logits = rng.normal(size=(3, 5))
    y = np.array([0, 3, 4])
    assert finite_diff_check(lambda t: -ag.mean(ag.log_softmax(t)[np.arange(3), y]), logits) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_core_ops_gradcheck_random(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 8))
    w = rng.normal(size=(8, 8))
    g, b = rng.normal(size=8), rng.normal(size=8)
    checks = [
        lambda t: ag.tsum(ag.softmax(t, 0.7) * w[:6]),
        lambda t: ag.tsum(ag.layer_norm(t, g, b) * w[:6]),
        lambda t: ag.tsum((t @ w) * x),
        lambda t: ag.tsum(ag.norm(t, axis=1)),
        lambda t: ag.tsum(ag.attention(t[:, :4], t[:, 4:], t)[0] * x),
        lambda t: ag.tsum(ag.exp(t * 0.3) * ag.tanh(t) - ag.sqrt(t * t + 1.0)),
    ]
    for f in checks:
        assert finite_diff_check(f, x) < 1e-4


def test_backward_is_deterministic(rng):
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(4, 4))
    grads = []
    for _ in range(2):
        t = Tensor(x, requires_grad=True)
        backward(ag.tsum(ag.softmax(ag.gelu(t @ w)) * x))
        grads.append(t.grad.copy())
    assert grads[0].tobytes() == grads[1].tobytes()


def test_computation_record_topological_order():
    a = Tensor(1.0, requires_grad=True)
    b = Tensor(2.0, requires_grad=True)
    out = (a * b + a).sum()
    record = ComputationRecord.trace(out)
    seen = set()
    for entry in record.entries:
        assert all(i in seen for i in entry.inputs)  # parents come first
        seen.add(entry.output)
    assert record.entries[-1].output == out.node_id
    assert {id(t) for t in record.leaves()} == {id(a), id(b)}


def test_broadcast_gradient_shapes(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    backward(ag.tsum(a * b + b))
    assert a.grad.shape == (3, 4) and b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0) + 3)


def test_fancy_index_gradient_accumulates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward(ag.tsum(x[np.array([0, 0, 2])]))
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0, 0.0])


def test_norm_gradient_finite_at_zero():
    x = Tensor(np.zeros(3), requires_grad=True)
    backward(ag.norm(x))
    assert np.all(np.isfinite(x.grad))
