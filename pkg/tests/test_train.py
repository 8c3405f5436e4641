import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptlab.bench.data import DataConfig, generate_b2n
from promptlab.bench.train import (
    TrainConfig,
    config_hash,
    evaluate,
    evaluate_split,
    harmonic_mean,
    probe_hash,
    run_experiment,
    train_prompts,
)
from promptlab.encoder import DualEncoder, PromptSet
from promptlab.errors import FrozenModelError, InvalidInputError, InvalidParameterError, TrainingFailedError

from conftest import SMALL

QUICK = TrainConfig(epochs=2, batch_size=4, lr=1e-2, mask_threshold=25, triplet_samples=16)


def test_zero_epochs_leaves_prompts_unchanged(small_teacher, small_dataset):
    start = PromptSet.init(SMALL, np.random.default_rng(5))
    before = [p.data.copy() for p in start.parameters()]
    cfg = TrainConfig(epochs=0, fif=False, stp=False, hld=False)
    out, history = train_prompts(small_teacher, small_dataset, cfg, 0, prompts=start)
    assert history == []
    for b, p in zip(before, out.parameters()):
        np.testing.assert_array_equal(b, p.data)


def test_zero_weights_match_disabled_paths(small_teacher, small_dataset):
    zero = dataclasses.replace(QUICK, lam=0.0, gamma=0.0, fif=False)
    off = dataclasses.replace(QUICK, fif=False, stp=False, hld=False)
    p1, h1 = train_prompts(small_teacher, small_dataset, zero, 0)
    p2, h2 = train_prompts(small_teacher, small_dataset, off, 0)
    for a, b in zip(p1.parameters(), p2.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    assert [h["cls"] for h in h1] == [h["cls"] for h in h2]


def test_loss_decomposition(small_teacher, small_dataset):
    cfg = dataclasses.replace(QUICK, lam=0.7, gamma=2.0)
    _, history = train_prompts(small_teacher, small_dataset, cfg, 1)
    assert len(history) == 2
    for h in history:
        assert h["hld"] > 0 and h["stp"] > 0
        assert abs(h["total"] - (h["cls"] + 0.7 * h["hld"] + 2.0 * h["stp"])) <= 1e-10


def test_training_reduces_classification_loss(small_teacher, small_dataset):
    cfg = dataclasses.replace(QUICK, epochs=6, fif=False, stp=False, hld=False, lr=3e-2)
    _, history = train_prompts(small_teacher, small_dataset, cfg, 0)
    assert history[-1]["cls"] < history[0]["cls"]


def test_run_experiment_record_and_teacher_unchanged(small_teacher, small_dataset):
    probe = small_dataset.test_base.images[:8]
    before = probe_hash(small_teacher, probe)
    _, rec = run_experiment(small_teacher, small_dataset, QUICK, 0)
    assert probe_hash(small_teacher, probe) == before
    assert rec.teacher_hash == before[:16]
    assert 0 <= rec.base_acc <= 1 and 0 <= rec.novel_acc <= 1
    assert rec.hm == harmonic_mean(rec.base_acc, rec.novel_acc)
    assert rec.config_hash == config_hash(SMALL, QUICK)
    assert len(rec.epoch_losses) == 2


def test_run_is_deterministic(small_teacher, small_dataset):
    _, a = run_experiment(small_teacher, small_dataset, QUICK, 3)
    _, b = run_experiment(small_teacher, small_dataset, QUICK, 3)
    assert (a.base_acc, a.novel_acc, a.epoch_losses) == (b.base_acc, b.novel_acc, b.epoch_losses)


def test_unfrozen_teacher_rejected(small_dataset):
    with pytest.raises(FrozenModelError):
        train_prompts(DualEncoder(SMALL, 0), small_dataset, QUICK, 0)


def test_nan_loss_aborts_with_dump(small_teacher, small_dataset, tmp_path):
    images = small_dataset.train.images.copy()
    images[:] = np.nan
    bad = dataclasses.replace(small_dataset, train=dataclasses.replace(small_dataset.train, images=images))
    cfg = dataclasses.replace(QUICK, fif=False)
    with pytest.raises(TrainingFailedError, match="non-finite"):
        train_prompts(small_teacher, bad, cfg, 0, dump_dir=tmp_path)
    dump = np.load(tmp_path / "nan_batch.npz")
    assert dump["images"].shape[0] == cfg.batch_size


def test_config_validation():
    for bad in (dict(lam=-1), dict(gamma=-0.5), dict(mask_threshold=120), dict(optimizer="rmsprop"), dict(batch_size=0)):
        with pytest.raises(InvalidParameterError):
            TrainConfig(**bad)
    with pytest.raises(InvalidParameterError, match="lambda"):
        TrainConfig(lam=-1)


def test_evaluate_examples(small_teacher, small_dataset):
    with pytest.raises(InvalidInputError):
        evaluate(small_teacher, None, small_dataset.tokens_for([0, 1]), np.zeros((0, 3, 16, 16)), [])
    x = small_dataset.test_base.images[:1]
    tokens = small_dataset.tokens_for(small_dataset.base_classes)
    scores = small_teacher.encode_image(x).embedding.data @ small_teacher.encode_text(tokens).data.T
    assert evaluate(small_teacher, None, tokens, x, [int(scores.argmax())]) == 1.0


def test_random_model_near_chance():
    cfg = DataConfig(n_classes=4, image_size=16, shots=1, n_test=100)
    ds = generate_b2n(cfg, 0)
    model = DualEncoder(SMALL, np.random.default_rng(7)).freeze()
    n, c = len(ds.test_base), 2
    sigma = np.sqrt((1 / c) * (1 - 1 / c) / n)
    assert abs(evaluate_split(model, None, ds, "base") - 1 / c) <= 3 * sigma


def test_harmonic_mean_examples():
    assert harmonic_mean(0.5, 0.5) == 0.5
    assert harmonic_mean(0.0, 0.8) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0
    assert harmonic_mean(1.0, 0.5) == pytest.approx(2 / 3)
    assert abs(100 * harmonic_mean(0.6934, 0.7422) - 71.70) <= 0.02
    with pytest.raises(InvalidParameterError):
        harmonic_mean(-0.1, 0.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_harmonic_mean_bounds(a, b):
    hm = harmonic_mean(a, b)
    assert hm <= (a + b) / 2 + 1e-15
    assert hm <= 2 * min(a, b) + 1e-15
    assert hm <= max(a, b) + 1e-15
    if a == b:
        assert hm == pytest.approx(a)
    elif a > 0 and b > 0:
        assert hm < (a + b) / 2
