"""Prompt tuning with the combined classification / distillation / topology objective."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import autograd as ag
from ..encoder import DualEncoder, PromptSet, cross_entropy_loss, predict
from ..errors import FrozenModelError, InvalidInputError, InvalidParameterError, TrainingFailedError
from ..fif import filter_images
from ..hld import ckd_loss, class_relation, hld_total, ikd_loss
from ..optim import make_optimizer
from ..stp import fuse_layers, make_triplets, sample_layer_weights, stp_text_loss, stp_total, stp_vision_loss
from .data import B2NDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0  # weight of the logit-distillation term
    gamma: float = 3.0  # weight of the topology term

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidParameterError("lambda must be >= 0")
        if self.gamma < 0:
            raise InvalidParameterError("gamma must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 2.5e-3
    optimizer: str = "adam"
    lam: float = 1.0
    gamma: float = 3.0
    mask_threshold: float = 30.0
    fif: bool = True
    stp: bool = True
    hld: bool = True
    fif_prob: float = 1.0
    layer_center: float = 0.0  # <= 0 means "last layer"
    layer_width: float = 1.0
    layer_jitter: float = 0.5
    triplet_samples: int = 256
    prompt_std: float = 0.02

    def __post_init__(self):
        LossWeights(self.lam, self.gamma)
        if not 0 <= self.mask_threshold <= 100:
            raise InvalidParameterError("mask_threshold must be in [0, 100]")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidParameterError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.fif_prob <= 1:
            raise InvalidParameterError("fif_prob must be in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidParameterError(f"unknown optimizer {self.optimizer!r}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lam, self.gamma)

    def with_components(self, fif: bool, stp: bool, hld: bool) -> TrainConfig:
        return TrainConfig(**{**asdict(self), "fif": fif, "stp": stp, "hld": hld})


@dataclass
class MetricsRecord:
    base_acc: float
    novel_acc: float
    hm: float
    seed: int
    config_hash: str
    epoch_losses: list[dict] = field(default_factory=list)
    teacher_hash: str = ""
    wall_ms: float = 0.0
    error: str = ""


def harmonic_mean(a: float, b: float) -> float:
    """2ab / (a + b); zero when either accuracy is zero."""
    if a < 0 or b < 0:
        raise InvalidParameterError("accuracies must be non-negative")
    if a == 0 or b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def config_hash(*parts) -> str:
    blob = json.dumps([asdict(p) if hasattr(p, "__dataclass_fields__") else p for p in parts], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def evaluate(model: DualEncoder, prompts: PromptSet | None, class_tokens, images, labels, batch: int = 128) -> float:
    """Top-1 accuracy; ``labels`` index rows of ``class_tokens``. Never masks the input."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise InvalidInputError("cannot evaluate on an empty sample set")
    text = model.encode_text(class_tokens, prompts)
    hits = 0
    for start in range(0, len(labels), batch):
        z = model.encode_image(images[start:start + batch], prompts).embedding
        p = predict(z, text, model.config.temperature)
        hits += int((p.data.argmax(axis=1) == labels[start:start + batch]).sum())
    return hits / len(labels)


def evaluate_split(model, prompts, dataset: B2NDataset, split: str) -> float:
    classes = dataset.base_classes if split == "base" else dataset.novel_classes
    data = dataset.test_base if split == "base" else dataset.test_novel
    position = {int(c): i for i, c in enumerate(classes)}
    labels = np.array([position[int(c)] for c in data.labels])
    return evaluate(model, prompts, dataset.tokens_for(classes), data.images, labels)


def probe_hash(model: DualEncoder, images) -> str:
    """Hash of the model's embeddings on a fixed probe batch."""
    z = model.encode_image(images).embedding.data
    return hashlib.sha256(np.ascontiguousarray(z).tobytes()).hexdigest()


def _streams(seed: int):
    order, prompt, fif, stp = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(s) for s in (order, prompt, fif, stp))


def train_prompts(teacher: DualEncoder, dataset: B2NDataset, config: TrainConfig, seed: int = 0,
                  prompts: PromptSet | None = None, dump_dir=None):
    """Tune a fresh prompt set on the base split against the frozen teacher.

    The student is the teacher's (shared, frozen) weights plus the prompts.
    Returns ``(prompts, epoch_losses)``; each entry of ``epoch_losses`` holds
    the epoch means of ``cls``, ``hld``, ``stp`` and ``total``.
    """
    if not teacher.frozen:
        raise FrozenModelError("the teacher must be frozen before prompt tuning")
    mc = teacher.config
    rng_order, rng_prompt, rng_fif, rng_stp = _streams(seed)
    if prompts is None:
        prompts = PromptSet.init(mc, rng_prompt, std=config.prompt_std)
    params = prompts.parameters()
    opt = make_optimizer(config.optimizer, params, config.lr) if params else None
    center = config.layer_center if config.layer_center > 0 else float(mc.layers)

    base = dataset.base_classes
    position = {int(c): i for i, c in enumerate(base)}
    train = dataset.train
    labels = np.array([position[int(c)] for c in train.labels])
    tokens = dataset.tokens_for(base)
    teacher_text = teacher.encode_text(tokens)

    history = []
    n = len(labels)
    for epoch in range(config.epochs):
        sums = {"cls": 0.0, "hld": 0.0, "stp": 0.0, "total": 0.0}
        steps = 0
        order = rng_order.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = train.images[idx], labels[idx]
            if config.fif and rng_fif.random() < config.fif_prob:
                x = filter_images(teacher, x, config.mask_threshold)

            w = triplets = None
            if config.stp:
                w = sample_layer_weights(mc.layers, center, config.layer_width, rng_stp, config.layer_jitter)
                triplets = make_triplets(len(idx), rng_stp, config.triplet_samples)
            total, parts = objective(teacher, prompts, x, y, tokens, config, teacher_text, w, triplets)

            value = total.item()
            if not np.isfinite(value):
                where = _dump_batch(dump_dir, x, y, idx, parts)
                raise TrainingFailedError(f"non-finite loss at epoch {epoch} (batch {idx.tolist()}, parts {parts}){where}")
            if opt is not None:
                opt.zero_grad()
                ag.backward(total)
                opt.step()
            for k, v in parts.items():
                sums[k] += v
            sums["total"] += value
            steps += 1
        history.append({k: v / max(steps, 1) for k, v in sums.items()} | {"epoch": epoch + 1})
        log.debug("epoch %d %s", epoch + 1, history[-1])
    return prompts, history


def objective(teacher: DualEncoder, prompts: PromptSet, x, y, tokens, config: TrainConfig,
              teacher_text=None, layer_weights=None, triplets=None):
    """Total loss cls + lambda * HLD + gamma * STP on one (already masked) batch.

    Returns ``(total, parts)`` where ``parts`` holds the float value of each
    enabled component (disabled ones are 0). ``layer_weights`` and
    ``triplets`` are required when STP is on; ``teacher_text`` is recomputed
    when omitted.
    """
    mc = teacher.config
    if teacher_text is None:
        teacher_text = teacher.encode_text(tokens)
    s_stack = teacher.encode_image(x, prompts)
    s_text = teacher.encode_text(tokens, prompts)
    s_prob = predict(s_stack.embedding, s_text, mc.temperature)
    loss_cls = cross_entropy_loss(s_prob, y)
    total = loss_cls
    parts = {"cls": loss_cls.item(), "hld": 0.0, "stp": 0.0}
    if config.hld or config.stp:
        t_stack = teacher.encode_image(x)
    if config.hld:
        t_prob = predict(t_stack.embedding, teacher_text, mc.temperature)
        loss_hld = hld_total(ikd_loss(t_prob, s_prob), ckd_loss(class_relation(t_prob), class_relation(s_prob)))
        total = total + config.lam * loss_hld
        parts["hld"] = loss_hld.item()
    if config.stp:
        if layer_weights is None:
            raise InvalidParameterError("STP needs layer weights")
        loss_stp = stp_total(
            stp_vision_loss(fuse_layers(t_stack, layer_weights), fuse_layers(s_stack, layer_weights), triplets),
            stp_text_loss(teacher_text, s_text),
        )
        total = total + config.gamma * loss_stp
        parts["stp"] = loss_stp.item()
    return total, parts


def _dump_batch(dump_dir, x, y, idx, parts) -> str:
    if dump_dir is None:
        return ""
    path = Path(dump_dir) / "nan_batch.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, images=x, labels=y, indices=idx, parts=json.dumps(parts))
    return f"; batch written to {path}"


def run_experiment(teacher: DualEncoder, dataset: B2NDataset, config: TrainConfig, seed: int,
                   extra_hash_parts=()) -> tuple[PromptSet, MetricsRecord]:
    """Train, then measure base/novel accuracy and the teacher probe hash."""
    start = time.perf_counter()
    probe = dataset.test_base.images[:8]
    before = probe_hash(teacher, probe)
    prompts, history = train_prompts(teacher, dataset, config, seed)
    after = probe_hash(teacher, probe)
    if before != after:
        raise FrozenModelError("teacher outputs changed during prompt tuning")
    base_acc = evaluate_split(teacher, prompts, dataset, "base")
    novel_acc = evaluate_split(teacher, prompts, dataset, "novel")
    record = MetricsRecord(
        base_acc=base_acc,
        novel_acc=novel_acc,
        hm=harmonic_mean(base_acc, novel_acc),
        seed=seed,
        config_hash=config_hash(teacher.config, config, *extra_hash_parts),
        epoch_losses=history,
        teacher_hash=after[:16],
        wall_ms=(time.perf_counter() - start) * 1e3,
    )
    return prompts, record
