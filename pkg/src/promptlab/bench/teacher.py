"""Build (or load from a cache) the frozen teacher for a benchmark configuration."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..encoder import DualEncoder, ModelConfig, load_checkpoint, save_checkpoint
from ..errors import InvalidParameterError
from ..pretrain import accuracy, pretrain_teacher
from .data import DataConfig, class_tokens, generate_pretraining_set
from .train import config_hash

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 40
    target_accuracy: float = 0.8
    erase_prob: float = 0.5
    heldout_per_class: int = 50

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidParameterError("pretraining needs lr > 0, batch_size >= 1 and max_epochs >= 1")
        if not 0 <= self.erase_prob <= 1 or not 0 < self.target_accuracy <= 1:
            raise InvalidParameterError("erase_prob must be in [0, 1] and target_accuracy in (0, 1]")


def teacher_key(model: ModelConfig, data: DataConfig, pre: PretrainConfig) -> str:
    return config_hash("teacher", model, data, pre)


def heldout_accuracy(teacher: DualEncoder, data: DataConfig, pre: PretrainConfig) -> dict:
    """Zero-shot accuracy on fresh confound-free images, overall and per half."""
    held = generate_pretraining_set(data, pre.seed + 10_000, pre.heldout_per_class)
    tokens = class_tokens(data.n_classes)
    half = data.n_classes // 2
    out = {"all": accuracy(teacher, held.images, held.labels, tokens)}
    for name, classes in (("base", np.arange(half)), ("novel", np.arange(half, data.n_classes))):
        pick = np.isin(held.labels, classes)
        out[name] = accuracy(teacher, held.images[pick], held.labels[pick] - classes[0], tokens[classes])
    return out


def build_teacher(model: ModelConfig, data: DataConfig, pre: PretrainConfig | None = None,
                  cache_dir=None) -> tuple[DualEncoder, dict]:
    """Pretrain a teacher on confound-free images of every class and freeze it.

    With ``cache_dir`` the checkpoint is stored as ``teacher-<key>.npz`` and
    reused when the same configuration is requested again.
    """
    pre = pre or PretrainConfig()
    key = teacher_key(model, data, pre)
    path = Path(cache_dir) / f"teacher-{key}.npz" if cache_dir is not None else None
    if path is not None and path.exists():
        teacher, _, info = load_checkpoint(path)
        if teacher.frozen and info.get("key") == key:
            log.info("loaded cached teacher %s", path)
            return teacher, info
        log.warning("ignoring stale teacher cache %s", path)
    result = pretrain_teacher(
        generate_pretraining_set(data, pre.seed), class_tokens(data.n_classes), model, pre.seed,
        lr=pre.lr, batch_size=pre.batch_size, max_epochs=pre.max_epochs,
        target_accuracy=pre.target_accuracy, erase_prob=pre.erase_prob,
    )
    info = {
        "key": key,
        "train_accuracy": result.train_accuracy,
        "epochs": result.epochs,
        "heldout": heldout_accuracy(result.model, data, pre),
        "pretrain": asdict(pre),
    }
    log.info("teacher %s: %d epochs, train acc %.3f, held-out %s", key, result.epochs,
             result.train_accuracy, info["heldout"])
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, result.model, extra=info)
    return result.model, info
