"""Hierarchical logit distillation: per-sample KL plus class co-activation matching."""
from __future__ import annotations

import logging

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidInputError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def ikd_loss(teacher_probs, student_probs) -> Tensor:
    """Batch-mean KL(teacher || student); student probabilities are floored at 1e-12."""
    p = ag.as_tensor(teacher_probs).detach()
    q = ag.as_tensor(student_probs)
    if p.shape != q.shape:
        raise InvalidInputError(f"probability batches differ in shape: {p.shape} vs {q.shape}")
    if p.ndim == 1:
        p, q = ag.reshape(p, (1, -1)), ag.reshape(q, (1, -1))
    support = p.data > 0
    if np.any(support & (q.data <= PROB_FLOOR)):
        log.debug("student probability floored at %g", PROB_FLOOR)
    # 0 * log 0 terms are dropped; the teacher side is constant
    log_p = np.where(support, np.log(np.where(support, p.data, 1.0)), 0.0)
    log_q = ag.log(ag.clip_min(q, PROB_FLOOR))
    per_sample = ag.tsum(Tensor(p.data * log_p) - p.data * log_q, axis=1)
    return ag.mean(per_sample)


def class_relation(probs) -> Tensor:
    """C x C co-activation matrix ``P^T P / B``."""
    p = ag.as_tensor(probs)
    if p.ndim != 2:
        raise InvalidInputError("class_relation expects a (B, C) batch")
    return (ag.transpose(p) @ p) * (1.0 / p.shape[0])


def ckd_loss(teacher_rel, student_rel) -> Tensor:
    """Frobenius distance between relation matrices, divided by the class count."""
    m = ag.as_tensor(teacher_rel).detach()
    mt = ag.as_tensor(student_rel)
    if m.shape != mt.shape or m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"relation matrices must be equal square shapes, got {m.shape} and {mt.shape}")
    return ag.norm(m - mt) * (1.0 / m.shape[0])


def hld_total(ikd, ckd):
    return ikd + ckd
