"""
The three training signals on toy inputs
========================================

Prompt tuning here combines a classification loss with three extras:

* attention filtering (FIF): the teacher's most attended patches are zeroed
  before the batch is seen, so the prompts must use the rest of the image;
* structural topology preservation (STP): the angles formed by triples of
  student features should match those of the teacher;
* hierarchical logit distillation (HLD): per-sample KL plus a match of the
  class-by-class co-activation matrix.

Each piece is a plain function of numpy arrays and can be inspected alone.
"""
import numpy as np

from promptlab import apply_mask, build_mask, class_relation, ckd_loss, ikd_loss
from promptlab.stp import angle_relation, sample_layer_weights, stp_text_loss, stp_vision_loss

rng = np.random.default_rng(0)

# ---------------------------------------------------------------- filtering
# an 4x4 attention map over patches; q=25 removes the 4 most attended
attn = np.arange(16, dtype=float).reshape(4, 4)
mask = build_mask(attn, 25)
print("mask grid (0 = removed)\n", mask.grid)

# masks are applied per patch; a 16x16 image has 4x4 pixel patches here
image = rng.uniform(size=(3, 16, 16))
masked = apply_mask(mask, image)
print("zeroed pixel fraction", (masked == 0).mean(), "expected", mask.zero_fraction)

# ---------------------------------------------------------------- topology
# the angle at j between i and k; a right angle gives 0
z = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
print("right angle relation", angle_relation(z, 0, 1, 2).item())

# rotating, scaling and shifting a batch leaves every angle unchanged
teacher = rng.normal(size=(5, 8))
q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
student = 3.0 * teacher @ q + 1.0
print("vision loss under a similarity transform", stp_vision_loss(teacher, student).item())
print("vision loss for unrelated features", stp_vision_loss(teacher, rng.normal(size=(5, 8))).item())

# layer weights peak at the last layer by default
print("layer weights", np.round(sample_layer_weights(4, 4.0, 1.0), 3))

# the text term is a mean absolute difference
print("text loss for a 0.5 offset", stp_text_loss(teacher, teacher + 0.5).item())

# ---------------------------------------------------------------- distillation
p_teacher = rng.dirichlet(np.ones(4), size=6)
p_student = rng.dirichlet(np.ones(4), size=6)
m_teacher, m_student = class_relation(p_teacher), class_relation(p_student)
print("class relation matrix (symmetric, PSD)\n", np.round(m_teacher.data, 3))
print("instance KL", ikd_loss(p_teacher, p_student).item())
print("class relation distance", ckd_loss(m_teacher, m_student).item())
print("KL of [1, 0] from [0.5, 0.5] = ln 2:", ikd_loss([1.0, 0.0], [0.5, 0.5]).item())
