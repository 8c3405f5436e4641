"""
Reverse-mode autograd on numpy arrays
=====================================

Every loss in promptlab is built from a small set of differentiable numpy
ops. This walk-through builds a few expressions by hand, back-propagates
through them and compares the result against central finite differences.
"""
import numpy as np

from promptlab import autograd as ag
from promptlab.autograd import Tensor, backward, finite_diff_check
from promptlab.gradcheck import main_check

rng = np.random.default_rng(0)

# a leaf tensor that wants a gradient
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

# softmax, then a weighted sum to get a scalar
w = rng.normal(size=(3, 4))
loss = ag.tsum(ag.softmax(x) * w)
backward(loss)
print("loss", loss.item())
print("d loss / d x\n", np.round(x.grad, 4))

# the same gradient, estimated numerically; the error is relative
err = finite_diff_check(lambda t: ag.tsum(ag.softmax(t) * w), x.data)
print(f"softmax: max relative error {err:.2e}")

# at a low temperature some probabilities underflow to ~1e-12, where the
# numeric estimate is pure rounding noise and the relative error looks large
err = finite_diff_check(lambda t: ag.tsum(ag.softmax(t, 0.07) * w), x.data)
print(f"saturated softmax: max relative error {err:.2e}")

# cosine similarity of two small vectors (0.8 up to rounding)
print("cos([1,2],[2,1]) =", ag.cosine_sim(np.array([1.0, 2.0]), np.array([2.0, 1.0])).item())

# layer norm with learnable gain and bias, checked through the input
gain, bias = np.ones(4), np.zeros(4)
err = finite_diff_check(lambda t: ag.tsum(ag.layer_norm(t, gain, bias) ** 3), x.data)
print(f"layer_norm: max relative error {err:.2e}")

# the registry behind `python3 -m promptlab gradcheck` covers every op and loss
code, text = main_check("hld", seeds=3)
print(text)
print("exit code", code)
