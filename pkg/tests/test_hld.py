import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptlab import autograd as ag
from promptlab.autograd import Tensor, finite_diff_check
from promptlab.errors import InvalidInputError
from promptlab.hld import ckd_loss, class_relation, hld_total, ikd_loss


def random_probs(rng, b, c):
    return rng.dirichlet(np.ones(c) * 0.7, size=b)


def test_ikd_examples(rng):
    p = random_probs(rng, 4, 3)
    assert ikd_loss(p, p).item() == 0.0
    assert ikd_loss([1.0, 0.0], [0.5, 0.5]).item() == pytest.approx(np.log(2), abs=1e-15)
    assert np.isfinite(ikd_loss([[0.5, 0.5]], [[1.0, 0.0]]).item())  # floored, not infinite
    with pytest.raises(InvalidInputError):
        ikd_loss(p, p[:, :2])


def test_ikd_matches_scalar_kl(rng):
    p, q = random_probs(rng, 3, 4), random_probs(rng, 3, 4)
    oracle = 0.0
    for i in range(3):
        for j in range(4):
            oracle += p[i, j] * (np.log(p[i, j]) - np.log(q[i, j]))
    assert abs(ikd_loss(p, q).item() - oracle / 3) <= 1e-12


def test_class_relation_examples(rng):
    np.testing.assert_array_equal(class_relation(np.array([[1.0, 0.0], [0.0, 1.0]])).data, np.diag([0.5, 0.5]))
    np.testing.assert_allclose(class_relation(np.full((5, 4), 0.25)).data, np.full((4, 4), 1 / 16), atol=1e-15)
    p = random_probs(rng, 4, 3)
    oracle = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            for n in range(4):
                oracle[a, b] += p[n, a] * p[n, b]
    np.testing.assert_allclose(class_relation(p).data, oracle / 4, atol=1e-12, rtol=0)


def test_ckd_examples(rng):
    m = class_relation(random_probs(rng, 4, 4)).data
    assert ckd_loss(m, m).item() == 0.0
    assert ckd_loss(m, m + np.eye(4)).item() == pytest.approx(0.5, abs=1e-15)
    other = class_relation(random_probs(rng, 4, 4)).data
    oracle = 0.0
    for i in range(4):
        for j in range(4):
            oracle += (m[i, j] - other[i, j]) ** 2
    assert abs(ckd_loss(m, other).item() - np.sqrt(oracle) / 4) <= 1e-12
    with pytest.raises(InvalidInputError):
        ckd_loss(m, m[:3, :3])


def test_hld_total_examples(rng):
    assert hld_total(Tensor(0.0), Tensor(0.0)).item() == 0.0
    assert hld_total(Tensor(0.69), Tensor(0.5)).item() == pytest.approx(1.19)
    p, q = random_probs(rng, 4, 3), random_probs(rng, 4, 3)
    i, c = ikd_loss(p, q), ckd_loss(class_relation(p), class_relation(q))
    assert abs(hld_total(i, c).item() - (i.item() + c.item())) <= 1e-15


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(2, 6))
def test_relation_symmetric_psd_and_ikd_nonnegative(seed, b, c):
    rng = np.random.default_rng(seed)
    p, q = random_probs(rng, b, c), random_probs(rng, b, c)
    m = class_relation(p).data
    np.testing.assert_array_equal(m, m.T)
    assert np.linalg.eigvalsh(m).min() >= -1e-10
    assert np.all((m >= 0) & (m <= 1))
    assert ikd_loss(p, q).item() >= 0.0
    assert ikd_loss(p, p).item() == 0.0
    mq = class_relation(q).data
    assert ckd_loss(m, mq).item() == pytest.approx(ckd_loss(mq, m).item(), abs=1e-15)


def test_hld_gradient_wrt_student_logits(rng):
    tp = random_probs(rng, 5, 4)

    def f(t):
        sp = ag.softmax(t)
        return hld_total(ikd_loss(tp, sp), ckd_loss(class_relation(tp), class_relation(sp)))

    for _ in range(5):
        assert finite_diff_check(f, rng.normal(size=(5, 4))) < 1e-4


def test_teacher_side_is_constant(rng):
    t = Tensor(random_probs(rng, 3, 3), requires_grad=True)
    s = Tensor(random_probs(rng, 3, 3), requires_grad=True)
    ag.backward(ikd_loss(t, s) + ckd_loss(class_relation(t), class_relation(s)))
    assert t.grad is None and s.grad is not None
