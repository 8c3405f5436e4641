"""Structural topology preservation: angle-wise relational matching.

Features from all transformer layers are fused with Gaussian weights; the
student is then asked to reproduce the teacher's angle at vertex ``j`` for
triples of samples ``(i, j, k)``. Text features are tied to the teacher's by
a plain L1 distance.
"""
from __future__ import annotations

import itertools
import logging

import numpy as np

from . import autograd as ag
from .autograd import NORM_EPS, Tensor
from .encoder import FeatureStack
from .errors import InvalidInputError, InvalidParameterError

log = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-8
MAX_EXHAUSTIVE_BATCH = 8
DEFAULT_TRIPLET_SAMPLES = 256


def sample_layer_weights(n_layers: int, center: float, width: float, rng=None, jitter: float = 0.0) -> np.ndarray:
    """Gaussian kernel over layer indices 1..H, normalised to sum to one.

    ``center`` is perturbed by N(0, jitter^2) drawn from ``rng`` when jitter > 0.
    """
    if n_layers < 1:
        raise InvalidParameterError("need at least one layer")
    if width <= 0:
        raise InvalidParameterError("kernel width must be positive")
    mu = center
    if jitter > 0:
        if rng is None:
            raise InvalidParameterError("jitter needs an rng")
        mu = center + rng.normal(0.0, jitter)
    idx = np.arange(1, n_layers + 1, dtype=np.float64)
    logw = -((idx - mu) ** 2) / (2.0 * width**2)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def fuse_layers(stack: FeatureStack | list, weights) -> Tensor:
    """Weighted sum of the per-layer features."""
    feats = stack.layer_features if isinstance(stack, FeatureStack) else list(stack)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(feats),):
        raise InvalidInputError(f"{len(feats)} layers but {weights.shape} weights")
    out = None
    for w, z in zip(weights, feats):
        term = ag.as_tensor(z) * w
        out = term if out is None else out + term
    return out


def make_triplets(batch: int, rng=None, n_samples: int = DEFAULT_TRIPLET_SAMPLES) -> np.ndarray:
    """All ordered distinct triples for small batches, otherwise a uniform sample."""
    if batch < 3:
        return np.zeros((0, 3), dtype=np.int64)
    if batch <= MAX_EXHAUSTIVE_BATCH:
        return np.array(list(itertools.permutations(range(batch), 3)), dtype=np.int64)
    rng = rng if rng is not None else np.random.default_rng(0)
    out = np.empty((n_samples, 3), dtype=np.int64)
    for row in range(n_samples):
        out[row] = rng.choice(batch, size=3, replace=False)
    return out


def angle_relation(z, i: int, j: int, k: int) -> Tensor:
    """Cosine of the angle at ``z[j]`` formed with ``z[i]`` and ``z[k]``."""
    z = ag.as_tensor(z)
    if len({i, j, k}) < 3:
        raise InvalidParameterError("triple indices must be distinct")
    e_ij = z[i] - z[j]
    e_kj = z[k] - z[j]
    return ag.tsum(e_ij * e_kj) / (ag.norm(e_ij) * ag.norm(e_kj) + NORM_EPS)


def _angles(z: Tensor, triplets: np.ndarray) -> Tensor:
    e_ij = z[triplets[:, 0]] - z[triplets[:, 1]]
    e_kj = z[triplets[:, 2]] - z[triplets[:, 1]]
    num = ag.tsum(e_ij * e_kj, axis=1)
    return num / (ag.norm(e_ij, axis=1) * ag.norm(e_kj, axis=1) + NORM_EPS)


def _valid(z: np.ndarray, triplets: np.ndarray) -> np.ndarray:
    a = np.linalg.norm(z[triplets[:, 0]] - z[triplets[:, 1]], axis=1)
    b = np.linalg.norm(z[triplets[:, 2]] - z[triplets[:, 1]], axis=1)
    return (a > DEGENERATE_EPS) & (b > DEGENERATE_EPS)


def stp_vision_loss(teacher_fused, student_fused, triplets=None) -> Tensor:
    """Mean |A_student - A_teacher| over the non-degenerate triples.

    The teacher side is treated as a constant.
    """
    t = ag.as_tensor(teacher_fused).detach()
    s = ag.as_tensor(student_fused)
    if t.shape != s.shape or s.ndim != 2:
        raise InvalidInputError(f"fused batches must share a (B, d) shape, got {t.shape} and {s.shape}")
    if triplets is None:
        triplets = make_triplets(s.shape[0])
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if len(triplets) == 0:
        log.warning("batch of %d has no triplets; vision topology loss is 0", s.shape[0])
        return Tensor(0.0)
    if triplets.max() >= s.shape[0] or np.any(triplets[:, 0] == triplets[:, 1]) or np.any(
        triplets[:, 1] == triplets[:, 2]) or np.any(triplets[:, 0] == triplets[:, 2]):
        raise InvalidInputError("triplets must hold distinct in-range indices")
    keep = _valid(t.data, triplets) & _valid(s.data, triplets)
    skipped = int((~keep).sum())
    if skipped:
        log.debug("skipped %d degenerate triplets", skipped)
    if not keep.any():
        return Tensor(0.0)
    triplets = triplets[keep]
    diff = _angles(s, triplets) - _angles(t, triplets)
    return ag.mean(ag.absolute(diff))


def stp_text_loss(teacher_text, student_text) -> Tensor:
    """Mean absolute difference between the two (N, d) text embedding matrices."""
    t = ag.as_tensor(teacher_text).detach()
    s = ag.as_tensor(student_text)
    if t.shape != s.shape:
        raise InvalidInputError(f"text embeddings differ in shape: {t.shape} vs {s.shape}")
    return ag.mean(ag.absolute(s - t))


def stp_total(vision_loss, text_loss):
    return vision_loss + text_loss
