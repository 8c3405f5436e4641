"""Manufacture the frozen teacher by contrastive image/text training from scratch."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .encoder import DualEncoder, ModelConfig, predict
from .errors import TrainingFailedError
from .fif import apply_mask, build_mask, cls_attention
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class PretrainResult:
    model: DualEncoder
    train_accuracy: float
    epochs: int
    history: list[float] = field(default_factory=list)


def contrastive_loss(image_emb, text_emb, labels, temperature: float):
    """Symmetric image<->text InfoNCE where every class text is a candidate.

    The image->text side is a cross-entropy over all class texts; the
    text->image side spreads each present class's target uniformly over the
    images of that class in the batch.
    """
    labels = np.asarray(labels)
    zi = ag.normalize(image_emb)
    zt = ag.normalize(text_emb)
    logits = zi @ ag.transpose(zt) * (1.0 / temperature)  # (B, C)
    i2t = -ag.mean(ag.log_softmax(logits, axis=1)[np.arange(len(labels)), labels])
    present = np.unique(labels)
    target = (labels[None, :] == present[:, None]).astype(np.float64)
    target /= target.sum(axis=1, keepdims=True)
    t_logp = ag.log_softmax(ag.transpose(logits)[present], axis=1)  # (P, B)
    t2i = -ag.mean(ag.tsum(t_logp * target, axis=1))
    return (i2t + t2i) * 0.5


def accuracy(model: DualEncoder, images, labels, class_tokens, prompts=None, batch: int = 128) -> float:
    text = model.encode_text(class_tokens, prompts)
    hits = 0
    for start in range(0, len(labels), batch):
        z = model.encode_image(images[start:start + batch], prompts).embedding
        p = predict(z, text, model.config.temperature)
        hits += int((p.data.argmax(axis=1) == labels[start:start + batch]).sum())
    return hits / len(labels)


def erase_salient(model: DualEncoder, images, rng: np.random.Generator, prob: float = 0.5,
                  max_q: float = 40.0) -> np.ndarray:
    """Zero the model's own most-attended patches in a random subset of images.

    Each image is hit with probability ``prob`` and loses its top ``q`` percent
    of patches, ``q`` uniform in ``[0, max_q]``. Training on these teaches the
    encoder to recognise a class from its less salient evidence as well.
    """
    images = np.asarray(images, dtype=np.float64)
    hit = np.flatnonzero(rng.random(len(images)) < prob)
    if len(hit) == 0:
        return images
    out = images.copy()
    attn = cls_attention(model, images[hit])
    for i, a in zip(hit, attn):
        out[i] = apply_mask(build_mask(a, rng.uniform(0, max_q)), images[i])
    return out


def pretrain_teacher(data, class_tokens, config: ModelConfig, seed: int = 0, *, lr: float = 1e-3,
                     batch_size: int = 32, max_epochs: int = 40, target_accuracy: float = 0.8,
                     min_epochs: int = 0, erase_prob: float = 0.5) -> PretrainResult:
    """Train every weight of a fresh dual encoder, then freeze it.

    ``data`` is a :class:`~promptlab.bench.data.LabeledImages` covering all
    classes with confounds independent of the labels. With probability
    ``erase_prob`` a training image has its most-attended patches zeroed (see
    :func:`erase_salient`). Raises :class:`TrainingFailedError`
    if the train accuracy never reaches ``target_accuracy``.
    """
    rng = np.random.default_rng([seed, 3])
    model = DualEncoder(config, rng)
    opt = Adam(model.parameters(), lr=lr)
    n = len(data.labels)
    history = []
    acc = 0.0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x = data.images[idx]
            if erase_prob > 0:
                x = erase_salient(model, x, rng, erase_prob)
            z = model.encode_image(x).embedding
            v = model.encode_text(class_tokens)
            loss = contrastive_loss(z, v, data.labels[idx], config.temperature)
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
        acc = accuracy(model, data.images, data.labels, class_tokens)
        history.append(acc)
        log.info("pretrain epoch %d: loss %.4f train acc %.3f", epoch, loss.item(), acc)
        if acc >= target_accuracy and epoch >= min_epochs:
            model.freeze()
            return PretrainResult(model, acc, epoch, history)
    raise TrainingFailedError(f"teacher reached only {acc:.3f} train accuracy after {max_epochs} epochs")
